//! Discrete fuel-optimal impulsive reconfiguration in nonsingular LTC:
//! Sundman node regularization, LTC-space transition/control matrices,
//! convex bootstrap problems, drift and torus-adherence safety constraint
//! families with their convexifications, and the sequential convex
//! programming loop over a conic subproblem.
//!
//! Internally the optimizer works in scaled coordinates: LTC positions in
//! kilometer equivalents, LTC rates and impulses in millimeter-per-second
//! equivalents, so costs read directly in mm/s.

use crate::constants::ModelParams;
use crate::error::{Error, Result};
use crate::integrate;
use crate::ltc::{self, BasisHistory, GeoLtcState, LtcState};
use crate::orbits::{OscillatoryMode, PeriodicOrbit};
use crate::relmotion;
use crate::{Mat6, Vec3, Vec6};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::Matrix6x3;
use serde::{Deserialize, Serialize};

/// Passive-safety constraint family applied during the transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyMode {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "DRIFT")]
    Drift,
    #[serde(rename = "QPRIT")]
    Qprit,
}

/// Per-deputy boundary condition on the invariant circle: radius in km,
/// phase in rad (h and all rates zero).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CircleBc {
    pub eps_km: f64,
    pub theta_rad: f64,
}

/// Transfer problem definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferSpec {
    pub orbit_id: String,
    pub n_deputies: usize,
    pub bc_initial: Vec<CircleBc>,
    pub bc_terminal: Vec<CircleBc>,
    /// Transfer duration in revolutions of the reference orbit.
    pub tf_revs: f64,
    /// Number of control intervals (nodes are 0..=N).
    pub n_nodes: usize,
    /// Inclusive node-index ranges with controls forced to zero.
    pub no_control_windows: Vec<(usize, usize)>,
    pub safety_mode: SafetyMode,
    pub sundman_alpha: f64,
}

impl TransferSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::Config("need at least 2 control intervals".into()));
        }
        if self.bc_initial.len() != self.n_deputies || self.bc_terminal.len() != self.n_deputies {
            return Err(Error::Config(
                "boundary condition count does not match deputy count".into(),
            ));
        }
        for &(lo, hi) in &self.no_control_windows {
            if lo > hi || hi > self.n_nodes {
                return Err(Error::Config(format!(
                    "no-control window [{lo}, {hi}] outside node range"
                )));
            }
        }
        if self.sundman_alpha < 0.0 {
            return Err(Error::Config("sundman_alpha must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn window_contains(&self, k: usize) -> bool {
        self.no_control_windows.iter().any(|&(lo, hi)| k >= lo && k <= hi)
    }
}

/// Ellipsoidal keep-out zone around the chief in VNB axes, with the drift
/// horizon of the exclusion constraint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KozSpec {
    /// Semi-axes along V, N, B in meters.
    pub semi_axes_m: [f64; 3],
    /// Drift steps per horizon.
    pub n_safe: usize,
    /// Drift horizon in revolutions.
    pub t_safe_revs: f64,
}

impl KozSpec {
    pub fn validate(&self) -> Result<()> {
        if self.semi_axes_m.iter().any(|&a| a <= 0.0) {
            return Err(Error::Config("KOZ semi-axes must be positive".into()));
        }
        Ok(())
    }

    /// Quadratic form matrix in nondimensional units: positions only.
    pub fn p_matrix(&self, params: &ModelParams) -> Mat6 {
        let mut p = Mat6::zeros();
        for i in 0..3 {
            let a = params.m_to_nd(self.semi_axes_m[i]);
            p[(i, i)] = 1.0 / (a * a);
        }
        p
    }
}

/// Torus-adherence safety bounds (all positive).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpritSafetySpec {
    pub delta_h_m: f64,
    pub delta_alpha_dot_mmps: f64,
    pub delta_beta_dot_mmps: f64,
    pub delta_h_dot_mmps: f64,
    /// Exclusion radius per deputy, km (the terminal circle radius).
    pub eps_floor_km: Vec<f64>,
}

impl QpritSafetySpec {
    pub fn validate(&self, n_deputies: usize) -> Result<()> {
        if self.delta_h_m <= 0.0
            || self.delta_alpha_dot_mmps <= 0.0
            || self.delta_beta_dot_mmps <= 0.0
            || self.delta_h_dot_mmps <= 0.0
        {
            return Err(Error::Config("QPRIT deltas must be positive".into()));
        }
        if self.eps_floor_km.len() != n_deputies {
            return Err(Error::Config("eps_floor count does not match deputies".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sundman node regularization
// ---------------------------------------------------------------------------

/// Distribute N+1 epochs over [t0, tf] so uniform pseudo-time steps satisfy
/// dt/dtau = r(t)^alpha. alpha = 0 recovers a uniform grid; larger alpha
/// concentrates nodes where the chief is close to the Moon.
pub fn sundman_nodes(
    r_of_t: impl Fn(f64) -> f64,
    n: usize,
    alpha: f64,
    t0: f64,
    tf: f64,
) -> Result<Vec<f64>> {
    if alpha < 0.0 {
        return Err(Error::Config("sundman alpha must be nonnegative".into()));
    }
    if n == 0 {
        return Err(Error::Config("need at least one interval".into()));
    }
    if alpha == 0.0 {
        return Ok((0..=n)
            .map(|k| t0 + (tf - t0) * k as f64 / n as f64)
            .collect());
    }
    // pseudo-time as a function of time: tau(t) = int r^-alpha dt
    let sol = integrate::solve(
        |t, _y: &nalgebra::Vector1<f64>| nalgebra::Vector1::new(r_of_t(t).powf(-alpha)),
        t0,
        nalgebra::Vector1::new(0.0),
        tf,
        &integrate::Options::tol(1e-12),
    )?;
    let dense = sol.dense.as_ref().expect("dense enabled");
    let tau_f = sol.y_end[0];
    let mut epochs = Vec::with_capacity(n + 1);
    epochs.push(t0);
    for k in 1..n {
        let target = tau_f * k as f64 / n as f64;
        // tau(t) is strictly increasing: bisect
        let (mut lo, mut hi) = (t0, tf);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dense.eval(mid)[0] < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        epochs.push(0.5 * (lo + hi));
    }
    epochs.push(tf);
    Ok(epochs)
}

// ---------------------------------------------------------------------------
// LTC discretization
// ---------------------------------------------------------------------------

/// Scaled LTC transition and control-injection matrices over a node grid,
/// with the toroidal bases and maps retained for post-processing.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub epochs: Vec<f64>,
    /// Scaled transition matrices, one per interval.
    pub a_mats: Vec<Mat6>,
    /// Scaled control-injection matrices, one per node (impulses in mm/s).
    pub b_mats: Vec<Matrix6x3<f64>>,
    /// T(t_k) and its inverse (unscaled, nondim).
    pub t_maps: Vec<(Mat6, Mat6)>,
    pub bases: BasisHistory,
    pub params: ModelParams,
}

impl Discretization {
    pub fn n_intervals(&self) -> usize {
        self.epochs.len() - 1
    }

    /// Diagonal state scale: positions 1 km, rates 1 mm/s, in nondim units.
    pub fn state_scale(params: &ModelParams) -> Vec6 {
        let sp = params.m_to_nd(1e3);
        let sv = params.mps_to_nd(1e-3);
        Vec6::new(sp, sp, sp, sv, sv, sv)
    }

    /// Scaled LTC state from an unscaled one.
    pub fn scale_state(&self, z: &Vec6) -> Vec6 {
        let s = Self::state_scale(&self.params);
        Vec6::from_fn(|i, _| z[i] / s[i])
    }

    /// Unscaled LTC state from a scaled one.
    pub fn unscale_state(&self, z: &Vec6) -> Vec6 {
        let s = Self::state_scale(&self.params);
        Vec6::from_fn(|i, _| z[i] * s[i])
    }
}

/// Assemble the discrete LTC model over the epochs: A_k maps the scaled
/// state across interval k; B_k injects a VNB impulse (mm/s) at node k.
pub fn discretize(
    orbit: &PeriodicOrbit,
    mode: &OscillatoryMode,
    epochs: &[f64],
    tol: f64,
) -> Result<Discretization> {
    if epochs.len() < 2 {
        return Err(Error::Config("need at least two epochs".into()));
    }
    let bases = ltc::propagate_basis(&mode.w0, &orbit.dense, epochs, tol)?;
    let stms = relmotion::stm_history(&orbit.dense, epochs, tol)?;
    let t_maps: Vec<(Mat6, Mat6)> = bases
        .bases
        .iter()
        .map(ltc::t_matrix)
        .collect::<Result<_>>()?;
    let s = Discretization::state_scale(&orbit.params);
    let s_mat = Mat6::from_diagonal(&s);
    let s_inv = Mat6::from_diagonal(&Vec6::from_fn(|i, _| 1.0 / s[i]));
    let mut a_mats = Vec::with_capacity(epochs.len() - 1);
    for (k, stm) in stms.iter().enumerate() {
        let a = t_maps[k + 1].1 * stm.phi * t_maps[k].0;
        a_mats.push(s_inv * a * s_mat);
    }
    // B_k = [0; R_k^-1] maps a VNB delta-v into LTC rates; in scaled units
    // (rates in mm/s) the block carries over unchanged
    let mut b_mats = Vec::with_capacity(epochs.len());
    for basis in &bases.bases {
        let r = crate::Mat3::from_columns(&[basis.r_r, basis.r_i, basis.n_hat]);
        let r_inv = r.try_inverse().ok_or(Error::SingularBasis(f64::INFINITY))?;
        let mut b = Matrix6x3::zeros();
        b.fixed_view_mut::<3, 3>(3, 0).copy_from(&r_inv);
        b_mats.push(b);
    }
    Ok(Discretization {
        epochs: epochs.to_vec(),
        a_mats,
        b_mats,
        t_maps,
        bases,
        params: orbit.params,
    })
}

/// Scaled LTC boundary state from a circle boundary condition.
pub fn bc_to_scaled(bc: &CircleBc, t: f64, params: &ModelParams) -> Result<Vec6> {
    let geo = GeoLtcState {
        eps: params.m_to_nd(bc.eps_km * 1e3),
        theta: bc.theta_rad,
        h: 0.0,
        eps_dot: 0.0,
        theta_dot: 0.0,
        h_dot: 0.0,
        t,
    };
    let ns = ltc::geo_to_ns(&geo)?;
    let s = Discretization::state_scale(params);
    let z = ns.as_vec6();
    Ok(Vec6::from_fn(|i, _| z[i] / s[i]))
}

// ---------------------------------------------------------------------------
// Conic subproblem
// ---------------------------------------------------------------------------

/// Affine inequality coeffs . z_k <= rhs, optionally softened by a
/// penalized slack.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub node: usize,
    /// Coefficients on the scaled node state.
    pub coeffs: Vec6,
    pub rhs: f64,
    pub soft: bool,
}

/// Subproblem outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStatus {
    Optimal,
    Infeasible,
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub status: SubproblemStatus,
    /// Scaled node states, 0..=N.
    pub states: Vec<Vec6>,
    /// Impulses in mm/s (VNB axes), 0..=N.
    pub impulses: Vec<Vec3>,
    pub cost: f64,
    pub slack_total: f64,
}

/// Hard box bounds |state[i]| <= bound applied at every node; `None` means
/// unbounded.
pub type BoxBounds = [Option<f64>; 6];

pub struct SubproblemInputs<'a> {
    pub disc: &'a Discretization,
    pub bc0: Vec6,
    pub bcf: Vec6,
    pub windows: &'a [(usize, usize)],
    pub boxes: BoxBounds,
    pub constraints: &'a [LinearConstraint],
    /// Trust-region half-width around the reference (scaled units);
    /// requires `reference`.
    pub trust_region: Option<f64>,
    pub reference: Option<&'a [Vec6]>,
    pub penalty_weight: f64,
}

/// Solve the convex node-state/impulse subproblem with a second-order-cone
/// objective on the impulse norms.
pub fn conic_subproblem(inp: &SubproblemInputs) -> Result<SubproblemSolution> {
    let n = inp.disc.n_intervals();
    let n_nodes = n + 1;
    let n_soft = inp.constraints.iter().filter(|c| c.soft).count();
    // variable layout: states (6 per node), impulses (3 per node),
    // epigraph t (1 per node), slacks
    let iz = |k: usize, i: usize| 6 * k + i;
    let iu = |k: usize, i: usize| 6 * n_nodes + 3 * k + i;
    let it = |k: usize| 9 * n_nodes + k;
    let is_ = |j: usize| 10 * n_nodes + j;
    let n_vars = 10 * n_nodes + n_soft;

    let mut obj = vec![0.0; n_vars];
    for k in 0..n_nodes {
        obj[it(k)] = 1.0;
    }
    for j in 0..n_soft {
        obj[is_(j)] = inp.penalty_weight;
    }

    // rows: (entries, rhs) per cone class
    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ineq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();

    // initial condition
    for i in 0..6 {
        eq_rows.push((vec![(iz(0, i), 1.0)], inp.bc0[i]));
    }
    // dynamics: z_{k+1} = A_k (z_k + B_k u_k)
    for k in 0..n {
        let ab = inp.disc.a_mats[k] * inp.disc.b_mats[k];
        for i in 0..6 {
            let mut row = vec![(iz(k + 1, i), 1.0)];
            for j in 0..6 {
                row.push((iz(k, j), -inp.disc.a_mats[k][(i, j)]));
            }
            for j in 0..3 {
                row.push((iu(k, j), -ab[(i, j)]));
            }
            eq_rows.push((row, 0.0));
        }
    }
    // terminal condition: z_N + B_N u_N = bcf
    for i in 0..6 {
        let mut row = vec![(iz(n, i), 1.0)];
        for j in 0..3 {
            row.push((iu(n, j), inp.disc.b_mats[n][(i, j)]));
        }
        eq_rows.push((row, inp.bcf[i]));
    }
    // no-control windows
    for k in 0..n_nodes {
        if inp.windows.iter().any(|&(lo, hi)| k >= lo && k <= hi) {
            for j in 0..3 {
                eq_rows.push((vec![(iu(k, j), 1.0)], 0.0));
            }
        }
    }
    // state boxes (applied at every node)
    for k in 0..n_nodes {
        for i in 0..6 {
            if let Some(bound) = inp.boxes[i] {
                ineq_rows.push((vec![(iz(k, i), 1.0)], bound));
                ineq_rows.push((vec![(iz(k, i), -1.0)], bound));
            }
        }
    }
    // trust region around the reference
    if let Some(radius) = inp.trust_region {
        let reference = inp
            .reference
            .ok_or_else(|| Error::Config("trust region needs a reference".into()))?;
        for k in 0..n_nodes {
            for i in 0..6 {
                ineq_rows.push((vec![(iz(k, i), 1.0)], reference[k][i] + radius));
                ineq_rows.push((vec![(iz(k, i), -1.0)], radius - reference[k][i]));
            }
        }
    }
    // linearized safety constraints
    let mut soft_idx = 0usize;
    for c in inp.constraints {
        let mut row: Vec<(usize, f64)> = (0..6)
            .filter(|&i| c.coeffs[i] != 0.0)
            .map(|i| (iz(c.node, i), c.coeffs[i]))
            .collect();
        if c.soft {
            row.push((is_(soft_idx), -1.0));
            soft_idx += 1;
        }
        ineq_rows.push((row, c.rhs));
    }
    // slack nonnegativity
    for j in 0..n_soft {
        ineq_rows.push((vec![(is_(j), -1.0)], 0.0));
    }

    // assemble in Clarabel row order: zero cone, nonnegative cone, SOCs
    let n_eq = eq_rows.len();
    let n_ineq = ineq_rows.len();
    let n_soc_rows = 4 * n_nodes;
    let m = n_eq + n_ineq + n_soc_rows;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = vec![0.0; m];
    for (r, (row, rhs)) in eq_rows.iter().enumerate() {
        for &(c, v) in row {
            triplets.push((r, c, v));
        }
        b[r] = *rhs;
    }
    for (j, (row, rhs)) in ineq_rows.iter().enumerate() {
        let r = n_eq + j;
        for &(c, v) in row {
            triplets.push((r, c, v));
        }
        b[r] = *rhs;
    }
    for k in 0..n_nodes {
        let base = n_eq + n_ineq + 4 * k;
        triplets.push((base, it(k), -1.0));
        for j in 0..3 {
            triplets.push((base + 1 + j, iu(k, j), -1.0));
        }
    }
    let mut cones: Vec<SupportedConeT<f64>> = vec![
        SupportedConeT::ZeroConeT(n_eq),
        SupportedConeT::NonnegativeConeT(n_ineq),
    ];
    for _ in 0..n_nodes {
        cones.push(SupportedConeT::SecondOrderConeT(4));
    }

    let a_mat = csc_from_triplets(m, n_vars, &triplets);
    let p_mat = CscMatrix::<f64>::zeros((n_vars, n_vars));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .build()
        .map_err(|e| Error::SolverFailure(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p_mat, &obj, &a_mat, &b, &cones, settings)
        .map_err(|e| Error::SolverFailure(format!("setup: {e:?}")))?;
    solver.solve();
    let status = match solver.solution.status {
        SolverStatus::Solved => SubproblemStatus::Optimal,
        SolverStatus::AlmostSolved => SubproblemStatus::Inaccurate,
        SolverStatus::PrimalInfeasible
        | SolverStatus::DualInfeasible
        | SolverStatus::AlmostPrimalInfeasible
        | SolverStatus::AlmostDualInfeasible => SubproblemStatus::Infeasible,
        other => {
            return Err(Error::SolverFailure(format!("conic solver status {other:?}")));
        }
    };
    if status == SubproblemStatus::Infeasible {
        return Ok(SubproblemSolution {
            status,
            states: Vec::new(),
            impulses: Vec::new(),
            cost: f64::INFINITY,
            slack_total: f64::INFINITY,
        });
    }
    let x = &solver.solution.x;
    let states: Vec<Vec6> = (0..n_nodes)
        .map(|k| Vec6::from_fn(|i, _| x[iz(k, i)]))
        .collect();
    // controls pinned by a window are zero by constraint; snap away the
    // solver's terminal tolerance
    let impulses: Vec<Vec3> = (0..n_nodes)
        .map(|k| {
            if inp.windows.iter().any(|&(lo, hi)| k >= lo && k <= hi) {
                Vec3::zeros()
            } else {
                Vec3::new(x[iu(k, 0)], x[iu(k, 1)], x[iu(k, 2)])
            }
        })
        .collect();
    let cost = impulses.iter().map(|u| u.norm()).sum();
    let slack_total = (0..n_soft).map(|j| x[is_(j)].max(0.0)).sum();
    Ok(SubproblemSolution {
        status,
        states,
        impulses,
        cost,
        slack_total,
    })
}

fn csc_from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(r, c, v) in triplets {
        by_col[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval = Vec::with_capacity(triplets.len());
    colptr.push(0);
    for col in by_col.iter_mut() {
        col.sort_by_key(|&(r, _)| r);
        // accumulate duplicates
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
        for &(r, v) in col.iter() {
            if let Some(last) = merged.last_mut() {
                if last.0 == r {
                    last.1 += v;
                    continue;
                }
            }
            merged.push((r, v));
        }
        for (r, v) in merged {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

// ---------------------------------------------------------------------------
// Safety constraint generation
// ---------------------------------------------------------------------------

/// Cartesian VNB drift transition matrices from each node over its safety
/// horizon, discretized on per-node Sundman grids.
#[derive(Debug, Clone)]
pub struct DriftData {
    /// stms[k][m] = Phi(t_km, t_k), with m = 0 the identity.
    pub stms: Vec<Vec<Mat6>>,
}

pub fn drift_data(
    orbit: &PeriodicOrbit,
    epochs: &[f64],
    koz: &KozSpec,
    alpha: f64,
    tol: f64,
) -> Result<DriftData> {
    let horizon = koz.t_safe_revs * orbit.rev_period();
    let mut stms = Vec::with_capacity(epochs.len());
    for &t_k in epochs {
        let grid = sundman_nodes(
            |t| orbit.dense.r_moon(t),
            koz.n_safe.max(1),
            alpha,
            t_k,
            t_k + horizon,
        )?;
        let mut per_node = Vec::with_capacity(grid.len());
        per_node.push(Mat6::identity());
        let mut acc = Mat6::identity();
        for w in grid.windows(2) {
            let stm = relmotion::propagate_stm(&orbit.dense, w[0], w[1], tol)?;
            acc = stm.phi * acc;
            per_node.push(acc);
        }
        stms.push(per_node);
    }
    Ok(DriftData { stms })
}

/// Drift-exclusion violation sqrt(x'Px) - x'Px of a single drift state.
fn koz_violation(x: &Vec6, p: &Mat6) -> f64 {
    let q = (p * x).dot(x);
    q.sqrt() - q
}

/// Worst drift-exclusion violation over the horizon for a node state
/// (linear drift model), and the index attaining it (earliest maximizer).
pub fn drift_worst_violation(x_node: &Vec6, stms_k: &[Mat6], p: &Mat6) -> (f64, usize) {
    let mut worst = f64::MIN;
    let mut m_star = 0;
    for (m, phi) in stms_k.iter().enumerate() {
        let g = koz_violation(&(phi * x_node), p);
        if g > worst {
            worst = g;
            m_star = m;
        }
    }
    (worst, m_star)
}

/// Supporting halfspaces of the drift-exclusion constraint, linearized about
/// the reference plan at the worst drift index of each node.
pub fn drift_safety_linearized(
    ref_states_scaled: &[Vec6],
    disc: &Discretization,
    drift: &DriftData,
    koz: &KozSpec,
) -> Result<Vec<LinearConstraint>> {
    let p = koz.p_matrix(&disc.params);
    let mut out = Vec::with_capacity(ref_states_scaled.len());
    for (k, zs) in ref_states_scaled.iter().enumerate() {
        let z = disc.unscale_state(zs);
        let x_bar = disc.t_maps[k].0 * z;
        let (_, m_star) = drift_worst_violation(&x_bar, &drift.stms[k], &p);
        let phi = &drift.stms[k][m_star];
        let x_bar_m = phi * x_bar;
        let q = (p * x_bar_m).dot(&x_bar_m);
        // halfspace: sqrt(q_bar) - x_bar_m' P Phi T_k zeta <= 0
        let a_row = (x_bar_m.transpose() * p * phi * disc.t_maps[k].0).transpose();
        // fold the state scale into the coefficients
        let s = Discretization::state_scale(&disc.params);
        let coeffs = Vec6::from_fn(|i, _| -a_row[i] * s[i]);
        out.push(LinearConstraint {
            node: k,
            coeffs,
            rhs: -q.sqrt(),
            soft: true,
        });
    }
    Ok(out)
}

/// Convex torus-adherence boxes plus the linearized circle-exclusion
/// constraint about the reference phase.
pub fn qprit_safety(
    spec: &QpritSafetySpec,
    deputy: usize,
    ref_states_scaled: &[Vec6],
) -> Result<(BoxBounds, Vec<LinearConstraint>)> {
    let boxes: BoxBounds = [
        None,
        None,
        Some(spec.delta_h_m * 1e-3), // scaled positions are km
        Some(spec.delta_alpha_dot_mmps),
        Some(spec.delta_beta_dot_mmps),
        Some(spec.delta_h_dot_mmps),
    ];
    let eps_f = spec.eps_floor_km[deputy];
    let mut cons = Vec::with_capacity(ref_states_scaled.len());
    for (k, z) in ref_states_scaled.iter().enumerate() {
        let (ab, bb) = (z[0], z[1]);
        let norm = (ab * ab + bb * bb).sqrt();
        if norm < 1e-12 {
            return Err(Error::Config(format!(
                "degenerate reference phase at node {k}: cannot linearize the circle floor"
            )));
        }
        // eps_f - (ab*alpha + bb*beta)/norm <= 0
        let mut coeffs = Vec6::zeros();
        coeffs[0] = -ab / norm;
        coeffs[1] = -bb / norm;
        cons.push(LinearConstraint {
            node: k,
            coeffs,
            rhs: -eps_f,
            soft: true,
        });
    }
    Ok((boxes, cons))
}

// ---------------------------------------------------------------------------
// Plans and the SCP loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScpReport {
    pub iterations: usize,
    pub statuses: Vec<String>,
    pub trust_trace: Vec<f64>,
    pub violation_trace: Vec<f64>,
    pub cost_trace: Vec<f64>,
    pub penalty_final: f64,
    pub relaxations: u32,
    pub converged: bool,
}

/// One deputy's impulsive transfer plan.
#[derive(Debug, Clone)]
pub struct DeputyPlan {
    pub epochs: Vec<f64>,
    /// Impulses in VNB axes, mm/s.
    pub impulses_mmps: Vec<Vec3>,
    /// Pre-impulse node states, unscaled nondim LTC.
    pub zeta: Vec<LtcState>,
    pub cost_mmps: f64,
    pub report: ScpReport,
}

impl DeputyPlan {
    fn from_solution(disc: &Discretization, sol: &SubproblemSolution, report: ScpReport) -> Self {
        let zeta = sol
            .states
            .iter()
            .zip(&disc.epochs)
            .map(|(z, &t)| LtcState::from_vec6(t, &disc.unscale_state(z)))
            .collect();
        DeputyPlan {
            epochs: disc.epochs.clone(),
            impulses_mmps: sol.impulses.clone(),
            zeta,
            cost_mmps: sol.cost,
            report,
        }
    }

    /// Max dynamics defect of the stored plan under the discrete model
    /// (scaled units).
    pub fn dynamics_defect(&self, disc: &Discretization) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..disc.n_intervals() {
            let zk = disc.scale_state(&self.zeta[k].as_vec6());
            let zk1 = disc.scale_state(&self.zeta[k + 1].as_vec6());
            let pred = disc.a_mats[k] * (zk + disc.b_mats[k] * self.impulses_mmps[k]);
            worst = worst.max((zk1 - pred).amax());
        }
        worst
    }
}

/// Safety configuration handed to the SCP loop.
pub enum SafetyConfig<'a> {
    None,
    Drift {
        koz: &'a KozSpec,
        drift: &'a DriftData,
    },
    Qprit {
        spec: &'a QpritSafetySpec,
        deputy: usize,
    },
}

/// Convex bootstrap: boundary conditions and dynamics only (optionally the
/// convex torus-adherence boxes). Global optimum of the relaxed problem;
/// serves as the SCP initial guess.
pub fn solve_cvx(
    disc: &Discretization,
    bc0: &Vec6,
    bcf: &Vec6,
    windows: &[(usize, usize)],
    boxes: BoxBounds,
) -> Result<SubproblemSolution> {
    let sol = conic_subproblem(&SubproblemInputs {
        disc,
        bc0: *bc0,
        bcf: *bcf,
        windows,
        boxes,
        constraints: &[],
        trust_region: None,
        reference: None,
        penalty_weight: 0.0,
    })?;
    if sol.status == SubproblemStatus::Infeasible {
        return Err(Error::Infeasible(
            "boundary conditions unreachable under the no-control windows".into(),
        ));
    }
    Ok(sol)
}

/// SCP loop parameters (trust region, acceptance, penalty escalation).
#[derive(Debug, Clone, Copy)]
pub struct ScpParams {
    pub trust_initial: f64,
    pub trust_shrink: f64,
    pub trust_grow: f64,
    pub accept_ratio: f64,
    pub good_ratio: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub max_iterations: usize,
    pub violation_tol: f64,
    pub cost_stationarity: f64,
}

impl Default for ScpParams {
    fn default() -> Self {
        ScpParams {
            trust_initial: 1e-2,
            trust_shrink: 0.5,
            trust_grow: 2.0,
            accept_ratio: 0.1,
            good_ratio: 0.7,
            penalty_initial: 1e2,
            penalty_growth: 5.0,
            max_iterations: 30,
            violation_tol: 1e-6,
            cost_stationarity: 1e-3,
        }
    }
}

/// True (nonconvex) safety violation of a candidate, in scaled units.
fn true_violation(states_scaled: &[Vec6], disc: &Discretization, safety: &SafetyConfig) -> f64 {
    match safety {
        SafetyConfig::None => 0.0,
        SafetyConfig::Qprit { spec, deputy } => {
            let eps_f = spec.eps_floor_km[*deputy];
            states_scaled
                .iter()
                .map(|z| (eps_f - (z[0] * z[0] + z[1] * z[1]).sqrt()).max(0.0))
                .sum()
        }
        SafetyConfig::Drift { koz, drift } => {
            let p = koz.p_matrix(&disc.params);
            states_scaled
                .iter()
                .enumerate()
                .map(|(k, zs)| {
                    let z = disc.unscale_state(zs);
                    let x = disc.t_maps[k].0 * z;
                    let (worst, _) = drift_worst_violation(&x, &drift.stms[k], &p);
                    worst.max(0.0)
                })
                .sum()
        }
    }
}

fn linearized_constraints(
    states_scaled: &[Vec6],
    disc: &Discretization,
    safety: &SafetyConfig,
) -> Result<(BoxBounds, Vec<LinearConstraint>)> {
    match safety {
        SafetyConfig::None => Ok(([None; 6], Vec::new())),
        SafetyConfig::Qprit { spec, deputy } => qprit_safety(spec, *deputy, states_scaled),
        SafetyConfig::Drift { koz, drift } => Ok((
            [None; 6],
            drift_safety_linearized(states_scaled, disc, drift, koz)?,
        )),
    }
}

/// Sequential convex programming with trust region and penalty escalation.
pub fn scp_solve(
    disc: &Discretization,
    bc0: &Vec6,
    bcf: &Vec6,
    windows: &[(usize, usize)],
    safety: &SafetyConfig,
    params: &ScpParams,
) -> Result<DeputyPlan> {
    let (boxes, relaxations, mut reference) = bootstrap(disc, bc0, bcf, windows, safety)?;
    let mut report = ScpReport {
        iterations: 0,
        statuses: Vec::new(),
        trust_trace: Vec::new(),
        violation_trace: Vec::new(),
        cost_trace: Vec::new(),
        penalty_final: params.penalty_initial,
        relaxations,
        converged: false,
    };
    if matches!(safety, SafetyConfig::None) {
        report.converged = true;
        report.statuses.push("optimal".into());
        report.cost_trace.push(reference.cost);
        report.violation_trace.push(0.0);
        return Ok(DeputyPlan::from_solution(disc, &reference, report));
    }

    let mut trust = params.trust_initial;
    let mut weight = params.penalty_initial;
    let mut ref_violation = true_violation(&reference.states, disc, safety);
    let mut last_accepted_cost = reference.cost;
    let mut stationary_count = 0usize;

    for iter in 0..params.max_iterations {
        report.iterations = iter + 1;
        let (bx, cons) = linearized_constraints(&reference.states, disc, safety)?;
        let merged_boxes = merge_boxes(boxes, bx);
        let sol = conic_subproblem(&SubproblemInputs {
            disc,
            bc0: *bc0,
            bcf: *bcf,
            windows,
            boxes: merged_boxes,
            constraints: &cons,
            trust_region: Some(trust),
            reference: Some(&reference.states),
            penalty_weight: weight,
        })?;
        report.trust_trace.push(trust);
        match sol.status {
            SubproblemStatus::Infeasible => {
                report.statuses.push("infeasible".into());
                weight *= params.penalty_growth;
                trust *= params.trust_shrink;
                if trust < 1e-7 {
                    return Err(Error::Infeasible(
                        "subproblem infeasible after trust-region collapse".into(),
                    ));
                }
                continue;
            }
            SubproblemStatus::Inaccurate => report.statuses.push("inaccurate".into()),
            SubproblemStatus::Optimal => report.statuses.push("optimal".into()),
        }
        let cand_violation = true_violation(&sol.states, disc, safety);
        let merit_ref = reference.cost + weight * ref_violation;
        let merit_cand = sol.cost + weight * cand_violation;
        let merit_lin = sol.cost + weight * sol.slack_total;
        let predicted = merit_ref - merit_lin;
        let actual = merit_ref - merit_cand;
        report.cost_trace.push(sol.cost);
        report.violation_trace.push(cand_violation);

        let ratio = if predicted.abs() < 1e-12 {
            1.0
        } else {
            actual / predicted
        };
        if ratio >= params.accept_ratio {
            let cost_change =
                (sol.cost - last_accepted_cost).abs() / last_accepted_cost.abs().max(1e-9);
            last_accepted_cost = sol.cost;
            reference = sol;
            ref_violation = cand_violation;
            if ratio > params.good_ratio {
                trust = (trust * params.trust_grow).min(10.0);
            }
            if ref_violation < params.violation_tol {
                if cost_change < params.cost_stationarity {
                    stationary_count += 1;
                } else {
                    stationary_count = 0;
                }
                if stationary_count >= 1 {
                    report.converged = true;
                    break;
                }
            } else if predicted.abs() < 1e-10 {
                // the linearization cannot see the remaining violation:
                // escalate the penalty
                weight = (weight * params.penalty_growth).min(1e9);
            }
        } else {
            trust *= params.trust_shrink;
            if trust < 1e-7 {
                break;
            }
        }
        // stagnating violation also escalates the penalty
        let n = report.violation_trace.len();
        if ref_violation > params.violation_tol
            && n >= 2
            && report.violation_trace[n - 1] >= 0.99 * report.violation_trace[n - 2]
        {
            weight = (weight * params.penalty_growth).min(1e9);
        }
    }
    report.penalty_final = weight;
    if ref_violation > params.violation_tol {
        return Err(Error::Infeasible(format!(
            "SCP did not converge: violation {ref_violation:.3e} after {} iterations",
            report.iterations
        )));
    }
    report.converged = true;
    Ok(DeputyPlan::from_solution(disc, &reference, report))
}

fn merge_boxes(a: BoxBounds, b: BoxBounds) -> BoxBounds {
    let mut out = [None; 6];
    for i in 0..6 {
        out[i] = match (a[i], b[i]) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
    }
    out
}

/// Build the SCP initial guess; for torus-adherence safety the rate boxes
/// are relaxed by up to x8 when the windows make the bootstrap infeasible.
fn bootstrap(
    disc: &Discretization,
    bc0: &Vec6,
    bcf: &Vec6,
    windows: &[(usize, usize)],
    safety: &SafetyConfig,
) -> Result<(BoxBounds, u32, SubproblemSolution)> {
    match safety {
        SafetyConfig::None | SafetyConfig::Drift { .. } => {
            let sol = solve_cvx(disc, bc0, bcf, windows, [None; 6])?;
            Ok(([None; 6], 0, sol))
        }
        SafetyConfig::Qprit { spec, .. } => {
            let mut relax = 1.0;
            let mut relaxations = 0u32;
            loop {
                let boxes: BoxBounds = [
                    None,
                    None,
                    Some(spec.delta_h_m * 1e-3),
                    Some(spec.delta_alpha_dot_mmps * relax),
                    Some(spec.delta_beta_dot_mmps * relax),
                    Some(spec.delta_h_dot_mmps * relax),
                ];
                match solve_cvx(disc, bc0, bcf, windows, boxes) {
                    Ok(sol) => return Ok((boxes, relaxations, sol)),
                    Err(Error::Infeasible(_)) if relax < 8.0 => {
                        relax *= 2.0;
                        relaxations += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
}
