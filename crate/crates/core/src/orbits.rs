//! Differential correction of resonant periodic orbits, monodromy
//! computation, eigensystem analysis, and oscillatory-mode selection.
//!
//! CR3BP members are generated from a Richardson third-order seed, corrected
//! with a symmetric single-shooting pass, then continued in z-amplitude until
//! the family member with the resonant period is bracketed. ER3BP and BCR4BP
//! orbits are seeded from the frequency-matching CR3BP solution and continued
//! in eccentricity (resp. Sun mass) while holding the resonant period fixed.

use crate::constants::{Model, ModelParams};
use crate::dynamics::{collinear_l2, eom_rhs, propagate, SynodicState, Trajectory};
use crate::error::{Error, Result};
use crate::integrate::{self, Options};
use crate::ltc;
use crate::relmotion::{flow_and_stm_absolute, propagate_stm};
use crate::{Mat6, Vec6};
use nalgebra::{Complex, DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

/// Orbit/month resonance label, e.g. 9:2 synodic = nine revolutions per two
/// synodic months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resonance {
    pub orbits: u32,
    pub months: u32,
    pub kind: ResonanceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResonanceKind {
    #[serde(rename = "synodic")]
    Synodic,
    #[serde(rename = "sidereal")]
    Sidereal,
}

impl Resonance {
    /// Parse labels like "9:2-synodic" or "4:1 sidereal".
    pub fn parse(label: &str) -> Result<Resonance> {
        let norm = label.trim().to_ascii_lowercase().replace(' ', "-");
        let (ratio, kind) = norm
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("unknown resonance label '{label}'")))?;
        let kind = match kind {
            "synodic" => ResonanceKind::Synodic,
            "sidereal" => ResonanceKind::Sidereal,
            other => return Err(Error::Config(format!("unknown resonance kind '{other}'"))),
        };
        let (p, q) = ratio
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad resonance ratio in '{label}'")))?;
        let orbits: u32 = p
            .parse()
            .map_err(|_| Error::Config(format!("bad resonance ratio in '{label}'")))?;
        let months: u32 = q
            .parse()
            .map_err(|_| Error::Config(format!("bad resonance ratio in '{label}'")))?;
        if orbits == 0 || months == 0 {
            return Err(Error::Config(format!("bad resonance ratio in '{label}'")));
        }
        Ok(Resonance {
            orbits,
            months,
            kind,
        })
    }

    pub fn label(&self) -> String {
        let kind = match self.kind {
            ResonanceKind::Synodic => "synodic",
            ResonanceKind::Sidereal => "sidereal",
        };
        format!("{}:{}-{kind}", self.orbits, self.months)
    }

    fn month_period(&self, params: &ModelParams) -> f64 {
        match self.kind {
            ResonanceKind::Synodic => params.synodic_period(),
            ResonanceKind::Sidereal => 2.0 * std::f64::consts::PI,
        }
    }

    /// Period of one orbital revolution, nondim.
    pub fn rev_period(&self, params: &ModelParams) -> f64 {
        self.months as f64 * self.month_period(params) / self.orbits as f64
    }

    /// Full periodicity interval of the periodic solution in the given
    /// model, and the revolution count within it.
    pub fn full_period(&self, model: Model, params: &ModelParams) -> (f64, u32) {
        match model {
            // the CR3BP is autonomous: one revolution already closes
            Model::Cr3bp => (self.rev_period(params), 1),
            _ => (self.months as f64 * self.month_period(params), self.orbits),
        }
    }
}

/// Corrected periodic solution with its dense trajectory and monodromy.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub model: Model,
    pub params: ModelParams,
    pub resonance: Resonance,
    /// Full periodicity interval, nondim.
    pub period: f64,
    /// Revolutions within one period.
    pub revs: u32,
    /// Multiple-shooting node epochs and barycentric states.
    pub nodes: Vec<(f64, Vec6)>,
    /// Dense chief trajectory over [0, period + margin].
    pub dense: Trajectory,
    /// Monodromy of the VNB relative dynamics anchored at `t0_anchor`.
    pub monodromy: Mat6,
    /// Apolune epoch within the first revolution (the LTC anchor).
    pub t0_anchor: f64,
    /// Final multiple-shooting residual (max-norm).
    pub residual: f64,
    pub id: String,
}

impl PeriodicOrbit {
    pub fn rev_period(&self) -> f64 {
        self.period / self.revs as f64
    }

    /// Periodicity defect of the dense trajectory over one full period.
    pub fn periodicity_defect(&self) -> f64 {
        let s0 = self.dense.state_bary(0.0).as_vec6();
        let s1 = self.dense.state_bary(self.period).as_vec6();
        (s1 - s0).norm()
    }
}

/// Complex unimodular monodromy eigenpair hosting quasi-periodic relative
/// motion. The canonical representative has a negative imaginary part, so
/// the rotation number is arg(lambda) in (-pi, 0).
#[derive(Debug, Clone)]
pub struct OscillatoryMode {
    pub eigenvalue: Complex<f64>,
    /// Normalized eigenvector at the fixed point (position parts orthogonal,
    /// real position part unimodular).
    pub w0: Vector6<Complex<f64>>,
    /// Per-period phase advance on the invariant circle, rad.
    pub rotation_number: f64,
    pub fixed_point_t: f64,
}

// ---------------------------------------------------------------------------
// Richardson third-order seed
// ---------------------------------------------------------------------------

/// Third-order analytic halo seed about L2 at z-amplitude `az` (nondim),
/// evaluated at the symmetric crossing. Returns the barycentric state and a
/// period estimate.
pub fn richardson_seed(params: &ModelParams, az: f64, southern: bool) -> (Vec6, f64) {
    let mu = params.mu;
    let x_l2 = collinear_l2(params);
    let gamma = x_l2 - (1.0 - mu);
    let c = |n: i32| -> f64 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        (sign * mu + sign * (1.0 - mu) * gamma.powi(n + 1) / (1.0 + gamma).powi(n + 1))
            / gamma.powi(3)
    };
    let (c2, c3, c4) = (c(2), c(3), c(4));
    // in-plane frequency: positive root of l^4 + (c2-2) l^2 - (c2-1)(1+2 c2)
    let poly = |l: f64| l.powi(4) + (c2 - 2.0) * l * l - (c2 - 1.0) * (1.0 + 2.0 * c2);
    let (mut lo, mut hi) = (1e-6, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poly(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    let k = 2.0 * lam / (lam * lam + 1.0 - c2);
    let del = lam * lam - c2;

    let d1 = 3.0 * lam * lam / k * (k * (6.0 * lam * lam - 1.0) - 2.0 * lam);
    let d2 = 8.0 * lam * lam / k * (k * (11.0 * lam * lam - 1.0) - 2.0 * lam);
    let a21 = 3.0 * c3 * (k * k - 2.0) / (4.0 * (1.0 + 2.0 * c2));
    let a22 = 3.0 * c3 / (4.0 * (1.0 + 2.0 * c2));
    let a23 = -3.0 * c3 * lam / (4.0 * k * d1) * (3.0 * k.powi(3) * lam - 6.0 * k * (k - lam) + 4.0);
    let a24 = -3.0 * c3 * lam / (4.0 * k * d1) * (2.0 + 3.0 * k * lam);
    let b21 = -3.0 * c3 * lam / (2.0 * d1) * (3.0 * k * lam - 4.0);
    let b22 = 3.0 * c3 * lam / d1;
    let d21 = -c3 / (2.0 * lam * lam);
    let a31 = -9.0 * lam / (4.0 * d2) * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k))
        + (9.0 * lam * lam + 1.0 - c2) / (2.0 * d2)
            * (3.0 * c3 * (2.0 * a23 - k * b21) + c4 * (2.0 + 3.0 * k * k));
    let a32 = -1.0 / d2
        * (9.0 * lam / 4.0 * (4.0 * c3 * (k * a24 - b22) + k * c4)
            + 1.5 * (9.0 * lam * lam + 1.0 - c2) * (c3 * (k * b22 + d21 - 2.0 * a24) - c4));
    let b31 = 3.0 / (8.0 * d2)
        * (8.0 * lam * (3.0 * c3 * (k * b21 - 2.0 * a23) - c4 * (2.0 + 3.0 * k * k))
            + (9.0 * lam * lam + 1.0 + 2.0 * c2)
                * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k)));
    let b32 = 1.0 / d2
        * (9.0 * lam * (c3 * (k * b22 + d21 - 2.0 * a24) - c4)
            + 3.0 / 8.0
                * (9.0 * lam * lam + 1.0 + 2.0 * c2)
                * (4.0 * c3 * (k * a24 - b22) + k * c4));
    let d31 = 3.0 / (64.0 * lam * lam) * (4.0 * c3 * a24 + c4);
    let d32 = 3.0 / (64.0 * lam * lam) * (4.0 * c3 * (a23 - d21) + c4 * (4.0 + k * k));
    let denom = 2.0 * lam * (lam * (1.0 + k * k) - 2.0 * k);
    let s1 = (1.5 * c3 * (2.0 * a21 * (k * k - 2.0) - a23 * (k * k + 2.0) - 2.0 * k * b21)
        - 3.0 / 8.0 * c4 * (3.0 * k.powi(4) - 8.0 * k * k + 8.0))
        / denom;
    let s2 = (1.5 * c3 * (2.0 * a22 * (k * k - 2.0) + a24 * (k * k + 2.0) + 2.0 * k * b22 + 5.0 * d21)
        + 3.0 / 8.0 * c4 * (12.0 - k * k))
        / denom;
    let l1 = -1.5 * c3 * (2.0 * a21 + a23 + 5.0 * d21) - 3.0 / 8.0 * c4 * (12.0 - k * k)
        + 2.0 * lam * lam * s1;
    let l2 = 1.5 * c3 * (a24 - 2.0 * a22) + 9.0 / 8.0 * c4 + 2.0 * lam * lam * s2;

    let az_n = az / gamma; // normalized by the L-point distance
    let ax2 = (-del - l2 * az_n * az_n) / l1;
    let ax = ax2.max(1e-8).sqrt();
    let dn = if southern { -1.0 } else { 1.0 };
    // tau1 = 0 at the symmetric crossing
    let x = a21 * ax * ax + a22 * az_n * az_n - ax + (a23 * ax * ax - a24 * az_n * az_n)
        + (a31 * ax.powi(3) - a32 * ax * az_n * az_n);
    let z = dn * (az_n - 2.0 * d21 * ax * az_n + (d32 * az_n * ax * ax - d31 * az_n.powi(3)));
    let freq = lam * (1.0 + s1 * ax * ax + s2 * az_n * az_n);
    let ydot = freq
        * (k * ax + 2.0 * (b21 * ax * ax - b22 * az_n * az_n)
            + 3.0 * (b31 * ax.powi(3) - b32 * ax * az_n * az_n));
    let period = 2.0 * std::f64::consts::PI / freq;
    let state = Vec6::new(x_l2 + gamma * x, 0.0, gamma * z, 0.0, gamma * ydot, 0.0);
    (state, period)
}

// ---------------------------------------------------------------------------
// Symmetric single-shooting corrector and the CR3BP family scan
// ---------------------------------------------------------------------------

/// Symmetric corrector unknowns: (x0, z0, vy0) at a perpendicular x-z plane
/// crossing.
type SymMember = nalgebra::Vector3<f64>;

fn sym_state(m: &SymMember) -> Vec6 {
    Vec6::new(m[0], 0.0, m[1], 0.0, m[2], 0.0)
}

/// Residual (vx, vz at the next plane crossing) and its Jacobian with
/// respect to (x0, z0, vy0), including the event-time correction. Also
/// returns the half period.
fn sym_residual(
    params: &ModelParams,
    m: &SymMember,
    half_t_hint: f64,
    tol: f64,
) -> Result<(nalgebra::Vector2<f64>, nalgebra::Matrix2x3<f64>, f64)> {
    let y0 = sym_state(m);
    let t_guess = if half_t_hint > 0.0 {
        3.0 * half_t_hint
    } else {
        4.0
    };
    let (hit, _) = integrate::solve_to_event(
        |t, y: &Vec6| eom_rhs(Model::Cr3bp, params, t, y),
        0.0,
        y0,
        t_guess,
        &Options::tol(tol).no_dense(),
        |_, y| y[1],
        0,
        1e-3,
    )?;
    let hit = hit.ok_or_else(|| Error::NewtonDivergence("no plane crossing found".into()))?;
    let half_t = hit.t;
    let (yf, phi) = flow_and_stm_absolute(Model::Cr3bp, params, &y0, 0.0, half_t, tol)?;
    let f = nalgebra::Vector2::new(yf[3], yf[5]);
    let acc = eom_rhs(Model::Cr3bp, params, half_t, &yf);
    let (ax, az, vy) = (acc[3], acc[5], yf[4]);
    let mut jac = nalgebra::Matrix2x3::zeros();
    for (col, idx) in [(0usize, 0usize), (1, 2), (2, 4)] {
        jac[(0, col)] = phi[(3, idx)] - ax / vy * phi[(1, idx)];
        jac[(1, col)] = phi[(5, idx)] - az / vy * phi[(1, idx)];
    }
    Ok((f, jac, half_t))
}

/// Correct a symmetric halo member. With `tangent` present, a
/// pseudo-arclength constraint `tangent . (m - anchor) = 0` closes the
/// system; otherwise z0 is held fixed.
fn correct_symmetric_constrained(
    params: &ModelParams,
    guess: &SymMember,
    tangent: Option<(&SymMember, &SymMember)>, // (tangent, anchor)
    tol: f64,
) -> Result<(SymMember, f64)> {
    let mut m = *guess;
    let mut half_t = 0.0;
    for _ in 0..40 {
        let (f2, j23, ht) = sym_residual(params, &m, half_t, tol)?;
        half_t = ht;
        let (fnorm, dx) = match tangent {
            Some((tan, anchor)) => {
                let f3 = nalgebra::Vector3::new(f2[0], f2[1], tan.dot(&(m - anchor)));
                let mut j = nalgebra::Matrix3::zeros();
                j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j23);
                j.fixed_view_mut::<1, 3>(2, 0).copy_from(&tan.transpose());
                let dx = j.lu().solve(&f3).ok_or(Error::RankDeficient(0.0))?;
                (f3.norm(), dx)
            }
            None => {
                let j = nalgebra::Matrix2::new(j23[(0, 0)], j23[(0, 2)], j23[(1, 0)], j23[(1, 2)]);
                let dx2 = j.lu().solve(&f2).ok_or(Error::RankDeficient(0.0))?;
                (f2.norm(), nalgebra::Vector3::new(dx2[0], 0.0, dx2[1]))
            }
        };
        if fnorm < 1e-12 {
            return Ok((m, half_t));
        }
        m -= dx;
    }
    Err(Error::NewtonDivergence(
        "symmetric corrector exceeded 40 iterations".into(),
    ))
}

/// Correct a symmetric halo state [x, 0, z, 0, vy, 0] (z held fixed) so the
/// next x-z plane crossing is perpendicular. Returns the corrected state and
/// the half period.
pub fn correct_symmetric(params: &ModelParams, state0: &Vec6, tol: f64) -> Result<(Vec6, f64)> {
    let guess = SymMember::new(state0[0], state0[2], state0[4]);
    let (m, half_t) = correct_symmetric_constrained(params, &guess, None, tol)?;
    Ok((sym_state(&m), half_t))
}

/// Lunar radius with margin: family members whose perilune dips below this
/// are rejected during the scan.
const MIN_PERILUNE: f64 = 4.8e-3;

fn perilune_radius(params: &ModelParams, m: &SymMember, half_t: f64, tol: f64) -> Result<f64> {
    let s0 = SynodicState::new_bary(Model::Cr3bp, 0.0, &sym_state(m));
    let traj = propagate(Model::Cr3bp, &s0, 0.0, 2.0 * half_t, tol, params)?;
    let mut rmin = f64::MAX;
    for i in 0..=400 {
        let t = 2.0 * half_t * i as f64 / 400.0;
        rmin = rmin.min(traj.r_moon(t));
    }
    Ok(rmin)
}

/// Scan the L2 southern halo family by pseudo-arclength continuation until
/// the member with the requested revolution period is bracketed, then refine
/// along the family. Returns the symmetric member state and its period.
pub fn cr3bp_period_member(
    params: &ModelParams,
    target_rev_period: f64,
    tol: f64,
) -> Result<(Vec6, f64)> {
    let (seed, _) = richardson_seed(params, 0.04, true);
    let g0 = SymMember::new(seed[0], seed[2], seed[4]);
    let (m0, ht0) = correct_symmetric_constrained(params, &g0, None, tol)?;
    if 2.0 * ht0 < target_rev_period {
        return Err(Error::NewtonDivergence(format!(
            "family scan started below the target period ({} < {target_rev_period})",
            2.0 * ht0
        )));
    }
    // second member a small z step away fixes the initial family tangent
    let mut g1 = m0;
    g1[1] -= 0.004;
    let (m1, ht1) = correct_symmetric_constrained(params, &g1, None, tol)?;

    let mut prev = (m0, 2.0 * ht0);
    let mut cur = (m1, 2.0 * ht1);
    let mut step = 0.01;
    let mut bracket: Option<((SymMember, f64), (SymMember, f64))> = None;
    for _ in 0..600 {
        let tan = (cur.0 - prev.0).normalize();
        let anchor = cur.0 + tan * step;
        let guess = anchor;
        match correct_symmetric_constrained(params, &guess, Some((&tan, &anchor)), tol) {
            Ok((m, ht)) => {
                let p = 2.0 * ht;
                if (p - target_rev_period) * (cur.1 - target_rev_period) <= 0.0 {
                    bracket = Some((cur, (m, p)));
                    break;
                }
                if perilune_radius(params, &m, ht, 1e-10)? < MIN_PERILUNE {
                    return Err(Error::NewtonDivergence(
                        "family scan reached the lunar surface before the target period".into(),
                    ));
                }
                prev = cur;
                cur = (m, p);
                step = (step * 1.3).min(0.02);
            }
            Err(_) => {
                step *= 0.5;
                if step < 1e-5 {
                    return Err(Error::NewtonDivergence("family continuation stalled".into()));
                }
            }
        }
    }
    let ((ma0, pa0), (mb0, pb0)) =
        bracket.ok_or_else(|| Error::NewtonDivergence("period target not bracketed".into()))?;
    // refine along the bracketing chord with a secant on the period
    let dir = (mb0 - ma0).normalize();
    let eval = |m_guess: SymMember| -> Result<(SymMember, f64)> {
        let (m, ht) = correct_symmetric_constrained(params, &m_guess, Some((&dir, &m_guess)), tol)?;
        Ok((m, 2.0 * ht))
    };
    let (mut ma, mut pa) = (ma0, pa0);
    let (mb, mut pb) = (mb0, pb0);
    let mut sa = 0.0f64;
    let mut sb = (mb - ma0).dot(&dir);
    let _ = mb;
    for _ in 0..80 {
        if (pa - target_rev_period).abs() < 1e-11 {
            return Ok((sym_state(&ma), pa));
        }
        let sc = sa + (target_rev_period - pa) * (sb - sa) / (pb - pa);
        let (mc, pc) = eval(ma0 + dir * sc)?;
        if (pc - target_rev_period) * (pa - target_rev_period) > 0.0 {
            sa = sc;
            pa = pc;
            ma = mc;
        } else {
            sb = sc;
            pb = pc;
        }
    }
    Err(Error::NewtonDivergence("period refinement did not converge".into()))
}

// ---------------------------------------------------------------------------
// Multiple shooting
// ---------------------------------------------------------------------------

/// Damped-Newton multiple shooting over equal-time segments.
///
/// `free_period` adds the period as an unknown with an apsis phase condition
/// (y(0) = 0); time-dependent models correct at fixed period. Returns the
/// corrected node states, the period, the final residual (max-norm), and the
/// number of Newton iterations taken.
pub fn correct_orbit(
    model: Model,
    params: &ModelParams,
    nodes0: &[Vec6],
    period0: f64,
    free_period: bool,
    tol: f64,
) -> Result<(Vec<Vec6>, f64, f64, usize)> {
    let s = nodes0.len();
    if s < 2 {
        return Err(Error::Config("multiple shooting needs at least 2 nodes".into()));
    }
    let n_unknown = 6 * s + usize::from(free_period);
    let mut x: DVector<f64> = DVector::zeros(n_unknown);
    for (i, node) in nodes0.iter().enumerate() {
        x.rows_mut(6 * i, 6).copy_from(node);
    }
    if free_period {
        x[6 * s] = period0;
    }
    // segment flows one decade tighter than requested keeps the Newton
    // residual floor safely under the 1e-10 convergence gate
    let tol = (0.1 * tol).max(1e-14);

    let residual_and_jac =
        |x: &DVector<f64>, with_jac: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
            let period = if free_period { x[6 * s] } else { period0 };
            let dt = period / s as f64;
            let mut f = DVector::zeros(n_unknown);
            let mut jac = with_jac.then(|| DMatrix::zeros(n_unknown, n_unknown));
            for i in 0..s {
                let xi = Vec6::from_iterator(x.rows(6 * i, 6).iter().copied());
                let t0 = i as f64 * dt;
                let (xf, phi) = flow_and_stm_absolute(model, params, &xi, t0, t0 + dt, tol)?;
                let j_next = (i + 1) % s;
                let xnext = Vec6::from_iterator(x.rows(6 * j_next, 6).iter().copied());
                f.rows_mut(6 * i, 6).copy_from(&(xf - xnext));
                if let Some(jm) = jac.as_mut() {
                    jm.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&phi);
                    for d in 0..6 {
                        jm[(6 * i + d, 6 * j_next + d)] -= 1.0;
                    }
                    if free_period {
                        // segment boundary epochs scale with the period:
                        // t_i = i T / S, so dc_i/dT = f(end) (i+1)/S - Phi f(start) i/S
                        let fend = eom_rhs(model, params, t0 + dt, &xf);
                        let fstart = eom_rhs(model, params, t0, &xi);
                        let dcol = fend * ((i + 1) as f64 / s as f64)
                            - phi * fstart * (i as f64 / s as f64);
                        jm.view_mut((6 * i, 6 * s), (6, 1)).copy_from(&dcol);
                    }
                }
            }
            if free_period {
                // apsis phase condition pins the time-translation freedom
                f[6 * s] = x[1];
                if let Some(jm) = jac.as_mut() {
                    jm[(6 * s, 1)] = 1.0;
                }
            }
            Ok((f, jac))
        };

    let (f0, _) = residual_and_jac(&x, false)?;
    let mut fnorm = f0.amax();
    let mut iterations = 0usize;
    if fnorm < 1e-10 {
        let period = if free_period { x[6 * s] } else { period0 };
        let nodes = (0..s)
            .map(|i| Vec6::from_iterator(x.rows(6 * i, 6).iter().copied()))
            .collect();
        return Ok((nodes, period, fnorm, 0));
    }
    let trace = std::env::var_os("LTCSWARM_TRACE").is_some();
    for iter in 0..30 {
        iterations = iter + 1;
        let (fi, jac) = residual_and_jac(&x, true)?;
        let jac = jac.unwrap();
        // truncated-SVD solve: near the autonomous limit the fixed-period
        // system is singular along the time-translation family, and a plain
        // LU step explodes along it
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.amax();
        let dx = svd
            .solve(&fi, smax * 1e-10)
            .map_err(|_| Error::RankDeficient(0.0))?;
        // damped step: halve until the residual decreases
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let x_try = &x - &dx * alpha;
            let (f_try, _) = residual_and_jac(&x_try, false)?;
            let n_try = f_try.amax();
            if trace {
                eprintln!(
                    "  shoot iter {iterations} alpha {alpha:.3} |F| {fnorm:.3e} -> {n_try:.3e} |dx| {:.3e}",
                    dx.amax()
                );
            }
            if n_try < fnorm {
                x = x_try;
                fnorm = n_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence(format!(
                "no residual decrease at iteration {iterations} (|F| = {fnorm:.3e})"
            )));
        }
        if fnorm < 1e-11 {
            break;
        }
    }
    if fnorm > 1e-10 {
        return Err(Error::NewtonDivergence(format!(
            "multiple shooting stalled at |F| = {fnorm:.3e}"
        )));
    }
    let period = if free_period { x[6 * s] } else { period0 };
    let nodes = (0..s)
        .map(|i| Vec6::from_iterator(x.rows(6 * i, 6).iter().copied()))
        .collect();
    Ok((nodes, period, fnorm, iterations))
}

fn resample_nodes(
    model: Model,
    params: &ModelParams,
    node0: &Vec6,
    period: f64,
    segments: usize,
    tol: f64,
) -> Result<Vec<Vec6>> {
    let s0 = SynodicState::new_bary(model, 0.0, node0);
    let traj = propagate(model, &s0, 0.0, period, tol, params)?;
    Ok((0..segments)
        .map(|i| traj.state_bary(i as f64 * period / segments as f64).as_vec6())
        .collect())
}

/// Shooting residual of a fixed-period node stack (continuity plus
/// periodicity) on an arbitrary epoch grid (epochs.len() = s + 1, last
/// entry the period), and optionally its Jacobian with respect to the
/// nodes.
fn stack_residual(
    model: Model,
    params: &ModelParams,
    x: &DVector<f64>,
    epochs: &[f64],
    tol: f64,
    with_jac: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let s = epochs.len() - 1;
    let mut f = DVector::zeros(6 * s);
    let mut jac = with_jac.then(|| DMatrix::zeros(6 * s, 6 * s));
    for i in 0..s {
        let xi = Vec6::from_iterator(x.rows(6 * i, 6).iter().copied());
        let (xf, phi) = flow_and_stm_absolute(model, params, &xi, epochs[i], epochs[i + 1], tol)?;
        let j_next = (i + 1) % s;
        let xnext = Vec6::from_iterator(x.rows(6 * j_next, 6).iter().copied());
        f.rows_mut(6 * i, 6).copy_from(&(xf - xnext));
        if let Some(jm) = jac.as_mut() {
            jm.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&phi);
            for d in 0..6 {
                jm[(6 * i + d, 6 * j_next + d)] -= 1.0;
            }
        }
    }
    Ok((f, jac))
}

/// Damped-Newton multiple shooting at fixed period on an arbitrary epoch
/// grid (the last epoch is the period). Converges to `target` or to the
/// integration noise floor, whichever comes first; fails only when the
/// residual stalls above `floor_gate`. Returns corrected nodes, the final
/// residual, and the Newton iteration count.
pub fn correct_orbit_epochs(
    model: Model,
    params: &ModelParams,
    nodes0: &[Vec6],
    epochs: &[f64],
    tol: f64,
    target: f64,
) -> Result<(Vec<Vec6>, f64, usize)> {
    let s = nodes0.len();
    if epochs.len() != s + 1 {
        return Err(Error::Config("epoch grid must have one more entry than nodes".into()));
    }
    let shoot_tol = (0.1 * tol).max(1e-14);
    let floor_gate = (100.0 * target).max(3e-8);
    let mut x: DVector<f64> = DVector::zeros(6 * s);
    for (i, node) in nodes0.iter().enumerate() {
        x.rows_mut(6 * i, 6).copy_from(node);
    }
    let (f0, _) = stack_residual(model, params, &x, epochs, shoot_tol, false)?;
    let mut fnorm = f0.amax();
    let mut iterations = 0usize;
    if fnorm < target {
        let nodes = (0..s)
            .map(|i| Vec6::from_iterator(x.rows(6 * i, 6).iter().copied()))
            .collect();
        return Ok((nodes, fnorm, 0));
    }
    for iter in 0..30 {
        iterations = iter + 1;
        let (fi, jac) = stack_residual(model, params, &x, epochs, shoot_tol, true)?;
        let jac = jac.unwrap();
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.amax();
        let dx = svd
            .solve(&fi, smax * 1e-10)
            .map_err(|_| Error::RankDeficient(0.0))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let x_try = &x - &dx * alpha;
            let (f_try, _) = stack_residual(model, params, &x_try, epochs, shoot_tol, false)?;
            let n_try = f_try.amax();
            if n_try < fnorm {
                x = x_try;
                fnorm = n_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no direction improves: either the integration noise floor
            // (acceptable when already tiny) or true stagnation
            if fnorm < floor_gate {
                break;
            }
            return Err(Error::NewtonDivergence(format!(
                "no residual decrease at iteration {iterations} (|F| = {fnorm:.3e})"
            )));
        }
        if fnorm < target {
            break;
        }
    }
    if fnorm > floor_gate {
        return Err(Error::NewtonDivergence(format!(
            "multiple shooting stalled at |F| = {fnorm:.3e}"
        )));
    }
    let nodes = (0..s)
        .map(|i| Vec6::from_iterator(x.rows(6 * i, 6).iter().copied()))
        .collect();
    Ok((nodes, fnorm, iterations))
}

/// Pseudo-arclength continuation of a fixed-period node stack in a model
/// parameter (eccentricity or Sun mass), following the solution branch
/// through folds. `kappa` in [0, 1] scales the parameter toward the target.
/// Fails with a fold diagnostic if the branch turns back before kappa = 1.
fn continue_in_parameter(
    model: Model,
    params: &ModelParams,
    set_param: &dyn Fn(&mut ModelParams, f64),
    nodes0: &[Vec6],
    epochs0: &[f64],
    tol: f64,
) -> Result<(Vec<Vec6>, Vec<f64>, f64)> {
    let s = nodes0.len();
    let n = 6 * s + 1; // nodes + kappa
    let period = *epochs0.last().expect("nonempty epochs");
    let shoot_tol = (0.1 * tol).max(1e-14);
    let trace = std::env::var_os("LTCSWARM_TRACE").is_some();
    let pack = |nodes: &[Vec6], kappa: f64| -> DVector<f64> {
        let mut x = DVector::zeros(n);
        for (i, node) in nodes.iter().enumerate() {
            x.rows_mut(6 * i, 6).copy_from(node);
        }
        x[6 * s] = kappa;
        x
    };
    let unpack_nodes = |x: &DVector<f64>| -> Vec<Vec6> {
        (0..s)
            .map(|i| Vec6::from_iterator(x.rows(6 * i, 6).iter().copied()))
            .collect()
    };
    let params_at = |kappa: f64| -> ModelParams {
        let mut p = *params;
        set_param(&mut p, kappa);
        p
    };
    let residual = |x: &DVector<f64>,
                    epochs: &[f64],
                    with_jac: bool|
     -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let kappa = x[6 * s];
        let p = params_at(kappa);
        let nodes_part = x.rows(0, 6 * s).clone_owned();
        let (f, jac) = stack_residual(model, &p, &nodes_part, epochs, shoot_tol, with_jac)?;
        let jac_full = match jac {
            Some(jn) => {
                // parameter column by forward difference
                let dk = 1e-7;
                let p2 = params_at(kappa + dk);
                let (f2, _) = stack_residual(model, &p2, &nodes_part, epochs, shoot_tol, false)?;
                let mut jf = DMatrix::zeros(6 * s, n);
                jf.view_mut((0, 0), (6 * s, 6 * s)).copy_from(&jn);
                jf.view_mut((0, 6 * s), (6 * s, 1))
                    .copy_from(&((&f2 - &f) / dk));
                Some(jf)
            }
            None => None,
        };
        Ok((f, jac_full))
    };
    // Damped Newton corrector with an arclength hyperplane through x_pred
    let eval_g = |x: &DVector<f64>,
                  epochs: &[f64],
                  x_pred: &DVector<f64>,
                  tangent: &DVector<f64>,
                  with_jac: bool|
     -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let (f, jac) = residual(x, epochs, with_jac)?;
        let mut g = DVector::zeros(n);
        g.rows_mut(0, 6 * s).copy_from(&f);
        g[6 * s] = tangent.dot(&(x - x_pred));
        let jfull = jac.map(|j| {
            let mut jf = DMatrix::zeros(n, n);
            jf.view_mut((0, 0), (6 * s, n)).copy_from(&j);
            jf.view_mut((6 * s, 0), (1, n)).copy_from(&tangent.transpose());
            jf
        });
        Ok((g, jfull))
    };
    let correct = |x_pred: &DVector<f64>,
                   epochs: &[f64],
                   tangent: &DVector<f64>|
     -> Result<DVector<f64>> {
        let mut x = x_pred.clone();
        let (g0, _) = eval_g(&x, epochs, x_pred, tangent, false)?;
        let mut gnorm = g0.amax();
        for it in 0..25 {
            if gnorm < 1e-9 {
                return Ok(x);
            }
            let (g, jac) = eval_g(&x, epochs, x_pred, tangent, true)?;
            let jac = jac.unwrap();
            let svd = jac.svd(true, true);
            let smax = svd.singular_values.amax();
            let dx = svd
                .solve(&g, smax * 1e-12)
                .map_err(|_| Error::RankDeficient(0.0))?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let x_try = &x - &dx * alpha;
                let (g_try, _) = eval_g(&x_try, epochs, x_pred, tangent, false)?;
                let n_try = g_try.amax();
                if trace {
                    eprintln!(
                        "    arc iter {it} kappa {:.4} alpha {alpha:.3} |g| {gnorm:.3e} -> {n_try:.3e}",
                        x[x.len() - 1]
                    );
                }
                if n_try < gnorm {
                    x = x_try;
                    gnorm = n_try;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        // converged, or parked on the integration noise floor
        if gnorm < 3e-8 {
            Ok(x)
        } else {
            Err(Error::NewtonDivergence("arclength corrector stalled".into()))
        }
    };
    // Rebuild the Sundman grid around the current member and re-establish
    // the continuation pair on it: as the parameter grows, perilune timing
    // drifts and the original grid loses its regularization.
    let regrid = |x: &DVector<f64>,
                  dk: f64|
     -> Result<(Vec<f64>, DVector<f64>, DVector<f64>)> {
        let kappa = x[6 * s];
        let p = params_at(kappa);
        let nodes = unpack_nodes(x);
        let s0 = SynodicState::new_bary(model, 0.0, &nodes[0]);
        let traj = propagate(model, &s0, 0.0, period, tol, &p)?;
        let new_epochs =
            crate::ocp::sundman_nodes(|t| traj.r_moon(t), s, 1.0, 0.0, period)?;
        let resampled: Vec<Vec6> = new_epochs[..s]
            .iter()
            .map(|&t| traj.state_bary(t).as_vec6())
            .collect();
        let (nodes_a, ..) =
            correct_orbit_epochs(model, &p, &resampled, &new_epochs, tol, 1e-9)?;
        // second member a short parameter step ahead fixes the tangent
        let mut step = dk.max(5e-3).min(1.0 - kappa);
        for _ in 0..8 {
            let p2 = params_at(kappa + step);
            match correct_orbit_epochs(model, &p2, &nodes_a, &new_epochs, tol, 1e-9) {
                Ok((nodes_b, ..)) => {
                    return Ok((
                        new_epochs.clone(),
                        pack(&nodes_a, kappa),
                        pack(&nodes_b, kappa + step),
                    ));
                }
                Err(_) => step *= 0.5,
            }
        }
        Err(Error::NewtonDivergence("regrid tangent step failed".into()))
    };

    // first member: small natural step in kappa
    let x0 = pack(nodes0, 0.0);
    let mut kappa1 = 0.05;
    let x1 = loop {
        let p1 = params_at(kappa1);
        match correct_orbit_epochs(model, &p1, nodes0, epochs0, tol, 1e-9) {
            Ok((nodes1, ..)) => break pack(&nodes1, kappa1),
            Err(_) => {
                kappa1 *= 0.5;
                if kappa1 < 1e-5 {
                    return Err(Error::NewtonDivergence(
                        "homotopy could not leave the autonomous limit".into(),
                    ));
                }
            }
        }
    };

    let mut epochs = epochs0.to_vec();
    let mut prev = x0;
    let mut cur = x1.clone();
    let mut step: f64 = 0.1;
    let mut kappa_best: f64 = kappa1;
    let mut x_best = x1;
    let mut stagnation = 0usize;
    let mut kappa_regrid: f64 = 0.0;
    for _ in 0..1200 {
        let kappa_cur = cur[6 * s];
        if kappa_cur >= 1.0 - 1e-9 {
            // final landing: a tighter flow tolerance pushes the noise
            // floor as close to the 1e-10 residual goal as f64 allows
            let nodes = unpack_nodes(&cur);
            let (nodes, residual, _) =
                correct_orbit_epochs(model, &params_at(1.0), &nodes, &epochs, 1e-13, 1e-10)?;
            return Ok((nodes, epochs, residual));
        }
        if (kappa_cur - kappa_regrid).abs() > 0.04 {
            match regrid(&cur, step * cur[6 * s].max(0.01)) {
                Ok((e_new, p_new, c_new)) => {
                    if trace {
                        eprintln!("  regrid at kappa {kappa_cur:.4}");
                    }
                    epochs = e_new;
                    prev = p_new;
                    cur = c_new;
                    kappa_regrid = kappa_cur;
                    continue;
                }
                Err(_) => {
                    // keep walking on the old grid
                    kappa_regrid = kappa_cur;
                }
            }
        }
        let mut tangent = &cur - &prev;
        let tn = tangent.norm();
        if tn < 1e-14 {
            return Err(Error::NewtonDivergence("degenerate continuation tangent".into()));
        }
        tangent /= tn;
        let mut x_pred = &cur + &tangent * step;
        // never overshoot kappa = 1
        if x_pred[6 * s] > 1.0 {
            let scale = (1.0 - cur[6 * s]) / (tangent[6 * s] * step);
            x_pred = &cur + &tangent * (step * scale.clamp(0.05, 1.0));
        }
        match correct(&x_pred, &epochs, &tangent) {
            Ok(x_new) => {
                let kappa_new = x_new[6 * s];
                if kappa_new > kappa_best + 0.003 {
                    kappa_best = kappa_new;
                    x_best = x_new.clone();
                    stagnation = 0;
                } else {
                    stagnation += 1;
                }
                prev = cur;
                cur = x_new;
                step = (step * 1.4).min(0.35);
                if trace {
                    eprintln!("  homotopy kappa {kappa_new:.4} step {step:.3e}");
                }
            }
            Err(_) => {
                step *= 0.4;
                stagnation += 1;
            }
        }
        if stagnation > 30 || (step < 1e-4 && stagnation > 0) {
            // the branch is snaking through a resonance tongue: try to
            // jump clean over it with direct fixed-parameter corrections
            // of growing reach, seeded from the farthest member reached
            let mut jumped = false;
            let nodes_best = unpack_nodes(&x_best);
            for jump in [0.02, 0.04, 0.07, 0.12, 0.2, 0.3] {
                let kappa_try = (kappa_best + jump).min(1.0);
                let p_try = params_at(kappa_try);
                if let Ok((nodes_j, ..)) =
                    correct_orbit_epochs(model, &p_try, &nodes_best, &epochs, tol, 1e-9)
                {
                    if trace {
                        eprintln!("  tongue jump to kappa {kappa_try:.4}");
                    }
                    prev = x_best.clone();
                    cur = pack(&nodes_j, kappa_try);
                    kappa_best = kappa_try;
                    x_best = cur.clone();
                    stagnation = 0;
                    step = 0.05;
                    jumped = true;
                    break;
                }
            }
            if !jumped && step < 1e-5 {
                return Err(Error::NewtonDivergence(format!(
                    "homotopy stalled at parameter fraction {kappa_cur:.4}"
                )));
            }
        }
    }
    Err(Error::NewtonDivergence("homotopy exceeded step budget".into()))
}

// ---------------------------------------------------------------------------
// Orbit assembly
// ---------------------------------------------------------------------------

/// Build the corrected periodic orbit for a model/resonance pair: family
/// scan in the CR3BP, then (for time-dependent models) homotopy continuation
/// from the frequency-matching CR3BP member at fixed resonant period.
pub fn build_orbit(
    model: Model,
    params: &ModelParams,
    resonance: Resonance,
    margin_revs: f64,
    tol: f64,
) -> Result<PeriodicOrbit> {
    params.validate(model)?;
    let rev_period = resonance.rev_period(params);
    let (full_period, revs) = resonance.full_period(model, params);
    let segments = if model == Model::Cr3bp { 8 } else { 16 * revs as usize };

    // CR3BP member with the resonant revolution period
    let (member, scan_period) = cr3bp_period_member(params, rev_period, tol)?;

    let (nodes, epochs, period, residual) = match model {
        Model::Cr3bp => {
            let nodes0 = resample_nodes(Model::Cr3bp, params, &member, scan_period, segments, tol)?;
            let (n, p, r, _) = correct_orbit(Model::Cr3bp, params, &nodes0, scan_period, true, tol)?;
            let epochs: Vec<f64> = (0..=segments).map(|i| i as f64 * p / segments as f64).collect();
            (n, epochs, p, r)
        }
        Model::Er3bp | Model::Bcr4bp => {
            // multi-revolution stack seeded from the CR3BP member, continued
            // to the target eccentricity (resp. Sun mass) at fixed period.
            // Nodes are regularized toward perilune, where equal-time
            // segments would leave the Newton basin too small. If the branch
            // at this apsis phasing folds back, retry with the seed shifted
            // by half a revolution.
            let target = match model {
                Model::Er3bp => params.e,
                _ => params.mu_s,
            };
            let set_param: Box<dyn Fn(&mut ModelParams, f64)> = match model {
                Model::Er3bp => Box::new(move |p: &mut ModelParams, k: f64| p.e = k * target),
                _ => Box::new(move |p: &mut ModelParams, k: f64| p.mu_s = k * target),
            };
            let mut cr3bp_params = *params;
            set_param(&mut cr3bp_params, 0.0);
            let mut result = None;
            let mut last_err = None;
            for shift_halves in 0..2 {
                let shift = shift_halves as f64 * 0.5 * rev_period;
                let seed0 = if shift == 0.0 {
                    member
                } else {
                    let s0 = SynodicState::new_bary(Model::Cr3bp, 0.0, &member);
                    propagate(Model::Cr3bp, &s0, 0.0, shift, tol, &cr3bp_params)?
                        .state_bary(shift)
                        .as_vec6()
                };
                let s0 = SynodicState::new_bary(Model::Cr3bp, 0.0, &seed0);
                let seed_traj =
                    propagate(Model::Cr3bp, &s0, 0.0, full_period, tol, &cr3bp_params)?;
                let epochs = crate::ocp::sundman_nodes(
                    |t| seed_traj.r_moon(t),
                    segments,
                    1.0,
                    0.0,
                    full_period,
                )?;
                let nodes0: Vec<Vec6> = epochs[..segments]
                    .iter()
                    .map(|&t| seed_traj.state_bary(t).as_vec6())
                    .collect();
                match continue_in_parameter(model, params, &set_param, &nodes0, &epochs, tol) {
                    Ok((nodes, final_epochs, residual)) => {
                        result = Some((nodes, final_epochs, full_period, residual));
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match result {
                Some(r) => r,
                None => return Err(last_err.expect("at least one attempt")),
            }
        }
    };

    // dense trajectory over the period plus a working margin
    let span = period + margin_revs * rev_period;
    let s0 = SynodicState::new_bary(model, 0.0, &nodes[0]);
    let dense = propagate(model, &s0, 0.0, span, tol, params)?;

    // apolune anchor: max chief-Moon distance within the first revolution
    let t0_anchor = argmax_r_moon(&dense, 0.0, rev_period);

    let monodromy = propagate_stm(&dense, t0_anchor, t0_anchor + period, tol)?.phi;

    let node_epochs: Vec<(f64, Vec6)> = epochs
        .iter()
        .zip(nodes.iter())
        .map(|(&t, n)| (t, *n))
        .collect();

    let id = format!("{}-{}", model, resonance.label());
    Ok(PeriodicOrbit {
        model,
        params: *params,
        resonance,
        period,
        revs,
        nodes: node_epochs,
        dense,
        monodromy,
        t0_anchor,
        residual,
        id,
    })
}

fn argmax_r_moon(dense: &Trajectory, t0: f64, t1: f64) -> f64 {
    let mut best_t = t0;
    let mut best = f64::MIN;
    let n = 2000;
    for i in 0..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let r = dense.r_moon(t);
        if r > best {
            best = r;
            best_t = t;
        }
    }
    // golden-section polish
    let (mut a, mut b) = (
        (best_t - (t1 - t0) / n as f64).max(t0),
        (best_t + (t1 - t0) / n as f64).min(t1),
    );
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    for _ in 0..80 {
        let c = a + phi * (b - a);
        let d = b - phi * (b - a);
        if dense.r_moon(c) > dense.r_moon(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

// ---------------------------------------------------------------------------
// Monodromy eigensystem
// ---------------------------------------------------------------------------

/// Monodromy matrix of the VNB relative dynamics over one full period,
/// anchored at the orbit's fixed point.
pub fn monodromy(orbit: &PeriodicOrbit, tol: f64) -> Result<Mat6> {
    Ok(propagate_stm(&orbit.dense, orbit.t0_anchor, orbit.t0_anchor + orbit.period, tol)?.phi)
}

/// Extract oscillatory modes: complex unimodular eigenpairs of the monodromy
/// matrix, one canonical member (negative imaginary part) per conjugate pair.
pub fn oscillatory_modes(
    m: &Mat6,
    tol_unimodular: f64,
    fixed_point_t: f64,
) -> Result<Vec<OscillatoryMode>> {
    let eigs = m.complex_eigenvalues();
    let mut modes = Vec::new();
    for lam in eigs.iter() {
        // canonical member of each conjugate pair; the 1e-3 floor rejects
        // the defective unit pair, whose spurious imaginary part scales as
        // sqrt(periodicity defect)
        if lam.im >= -1e-3 {
            continue;
        }
        if (lam.norm() - 1.0).abs() > tol_unimodular {
            continue;
        }
        let w = eigenvector_for(m, *lam)?;
        let w0 = ltc::normalize_fixed_point(&w)?;
        modes.push(OscillatoryMode {
            eigenvalue: *lam,
            w0,
            rotation_number: lam.arg(),
            fixed_point_t,
        });
    }
    Ok(modes)
}

/// Null vector of (M - lambda I) via complex SVD.
fn eigenvector_for(m: &Mat6, lam: Complex<f64>) -> Result<Vector6<Complex<f64>>> {
    let mut a = Matrix6::<Complex<f64>>::zeros();
    for r in 0..6 {
        for c in 0..6 {
            a[(r, c)] = Complex::new(m[(r, c)], 0.0);
        }
        a[(r, r)] -= lam;
    }
    let svd = a.svd(true, true);
    let v_t = svd.v_t.as_ref().expect("requested");
    // smallest singular value is last in nalgebra's sorted SVD
    let idx = svd.singular_values.len() - 1;
    let w: Vector6<Complex<f64>> = v_t.row(idx).adjoint();
    let resid = (a * w).norm();
    if resid > 1e-6 {
        return Err(Error::NoOscillatoryMode);
    }
    Ok(w)
}

/// Pick the oscillatory mode whose unit invariant circle has the smallest
/// maximum extent along the chief velocity axis over one period.
pub fn select_mode(
    modes: &[OscillatoryMode],
    orbit: &PeriodicOrbit,
    tol: f64,
) -> Result<OscillatoryMode> {
    if modes.is_empty() {
        return Err(Error::NoOscillatoryMode);
    }
    if modes.len() == 1 {
        return Ok(modes[0].clone());
    }
    let grid: Vec<f64> = (0..=200)
        .map(|i| orbit.t0_anchor + orbit.period * i as f64 / 200.0)
        .collect();
    let mut best: Option<(f64, &OscillatoryMode)> = None;
    for mode in modes {
        let hist = ltc::propagate_basis(&mode.w0, &orbit.dense, &grid, tol)?;
        let extent = hist
            .bases
            .iter()
            .map(|b| (b.r_r.x * b.r_r.x + b.r_i.x * b.r_i.x).sqrt())
            .fold(f64::MIN, f64::max);
        if best.map_or(true, |(e, _)| extent < e) {
            best = Some((extent, mode));
        }
    }
    Ok(best.expect("nonempty modes").1.clone())
}

// ---------------------------------------------------------------------------
// Orbit catalog persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct OrbitCatalogEntry {
    pub schema_version: u32,
    pub id: String,
    pub model: Model,
    pub resonance: Resonance,
    pub period: f64,
    pub revs: u32,
    pub t0_anchor: f64,
    pub residual: f64,
    pub params: ModelParams,
    pub node_epochs: Vec<f64>,
    pub node_states: Vec<[f64; 6]>,
    pub monodromy: Vec<[f64; 6]>,
    pub modes: Vec<CatalogMode>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CatalogMode {
    pub eigenvalue_re: f64,
    pub eigenvalue_im: f64,
    pub rotation_number_deg: f64,
}

impl OrbitCatalogEntry {
    pub fn from_orbit(orbit: &PeriodicOrbit, modes: &[OscillatoryMode]) -> Self {
        OrbitCatalogEntry {
            schema_version: CATALOG_SCHEMA_VERSION,
            id: orbit.id.clone(),
            model: orbit.model,
            resonance: orbit.resonance,
            period: orbit.period,
            revs: orbit.revs,
            t0_anchor: orbit.t0_anchor,
            residual: orbit.residual,
            params: orbit.params,
            node_epochs: orbit.nodes.iter().map(|(t, _)| *t).collect(),
            node_states: orbit
                .nodes
                .iter()
                .map(|(_, s)| [s[0], s[1], s[2], s[3], s[4], s[5]])
                .collect(),
            monodromy: (0..6)
                .map(|r| {
                    let mut row = [0.0; 6];
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = orbit.monodromy[(r, c)];
                    }
                    row
                })
                .collect(),
            modes: modes
                .iter()
                .map(|m| CatalogMode {
                    eigenvalue_re: m.eigenvalue.re,
                    eigenvalue_im: m.eigenvalue.im,
                    rotation_number_deg: m.rotation_number.to_degrees(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let entry: OrbitCatalogEntry = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if entry.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "catalog schema version {} unsupported",
                entry.schema_version
            )));
        }
        Ok(entry)
    }

    /// Rehydrate the full orbit; the dense trajectory and monodromy are
    /// recomputed from the stored nodes.
    pub fn to_orbit(&self, margin_revs: f64, tol: f64) -> Result<PeriodicOrbit> {
        let node0 = Vec6::from_row_slice(&self.node_states[0]);
        let s0 = SynodicState::new_bary(self.model, 0.0, &node0);
        let span = self.period + margin_revs * self.period / self.revs as f64;
        let dense = propagate(self.model, &s0, 0.0, span, tol, &self.params)?;
        let monodromy =
            propagate_stm(&dense, self.t0_anchor, self.t0_anchor + self.period, tol)?.phi;
        Ok(PeriodicOrbit {
            model: self.model,
            params: self.params,
            resonance: self.resonance,
            period: self.period,
            revs: self.revs,
            nodes: self
                .node_epochs
                .iter()
                .zip(&self.node_states)
                .map(|(t, s)| (*t, Vec6::from_row_slice(s)))
                .collect(),
            dense,
            monodromy,
            t0_anchor: self.t0_anchor,
            residual: self.residual,
            id: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resonance_parsing() {
        let r = Resonance::parse("9:2-synodic").unwrap();
        assert_eq!(r.orbits, 9);
        assert_eq!(r.months, 2);
        assert_eq!(r.kind, ResonanceKind::Synodic);
        assert_eq!(r.label(), "9:2-synodic");
        let r = Resonance::parse("4:1 sidereal").unwrap();
        assert_eq!(r.kind, ResonanceKind::Sidereal);
        assert!(Resonance::parse("bogus").is_err());
        assert!(Resonance::parse("0:1-synodic").is_err());
    }

    #[test]
    fn resonant_periods() {
        let p = ModelParams::default();
        let r = Resonance::parse("9:2-synodic").unwrap();
        let rev = r.rev_period(&p);
        // about 6.56 days
        assert!((p.nd_to_days(rev) - 6.56).abs() < 0.05, "{}", p.nd_to_days(rev));
        let (full, revs) = r.full_period(Model::Bcr4bp, &p);
        assert_eq!(revs, 9);
        assert!((full - 2.0 * p.synodic_period()).abs() < 1e-12);
        let r41 = Resonance::parse("4:1-sidereal").unwrap();
        let (full, revs) = r41.full_period(Model::Er3bp, &p);
        assert_eq!(revs, 4);
        assert!((full - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn richardson_seed_corrects_to_halo() {
        let p = ModelParams::default();
        let (seed, t_est) = richardson_seed(&p, 0.04, true);
        assert!(seed[2] < 0.0); // southern
        let (member, half_t) = correct_symmetric(&p, &seed, 1e-12).unwrap();
        assert!((2.0 * half_t - t_est).abs() / t_est < 0.2);
        // perpendicular crossing achieved: re-run returns the same member
        let (member2, _) = correct_symmetric(&p, &member, 1e-12).unwrap();
        assert!((member2 - member).norm() < 1e-10);
    }

    #[test]
    fn symmetric_member_is_periodic() {
        let p = ModelParams::default();
        let (seed, _) = richardson_seed(&p, 0.04, true);
        let (member, half_t) = correct_symmetric(&p, &seed, 1e-12).unwrap();
        let s0 = SynodicState::new_bary(Model::Cr3bp, 0.0, &member);
        let traj = propagate(Model::Cr3bp, &s0, 0.0, 2.0 * half_t, 1e-12, &p).unwrap();
        let defect = (traj.state_bary(2.0 * half_t).as_vec6() - member).norm();
        assert!(defect < 1e-9, "defect {defect:.3e}");
    }
}
