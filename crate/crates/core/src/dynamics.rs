//! Nondimensional equations of motion of the CR3BP / ER3BP / BCR4BP in the
//! barycenter and Moon synodic frames, chief acceleration and jerk, and
//! dense-output propagation.
//!
//! Conventions: the Earth sits at [-mu*r_em, 0, 0] and the Moon at
//! [(1-mu)*r_em, 0, 0] in the barycenter synodic frame (r_em = 1 except in
//! the ER3BP). The synodic frames rotate about +z at rate omega_z (unity
//! except in the ER3BP, where it is the true-anomaly rate of the primaries).

use crate::constants::{Frame, Model, ModelParams};
use crate::error::{Error, Result};
use crate::integrate::{self, DenseOutput, Options};
use crate::{Mat3, Mat6, Vec3, Vec6};

/// Reject states closer than this to any primary (~384 m): both the
/// linearization and the integrator degrade there.
pub const MIN_PRIMARY_DISTANCE: f64 = 1e-6;

/// Chief state in a rotating frame.
#[derive(Debug, Clone, Copy)]
pub struct SynodicState {
    pub r: Vec3,
    pub v: Vec3,
    pub t: f64,
    pub frame: Frame,
    pub model: Model,
}

impl SynodicState {
    pub fn new_bary(model: Model, t: f64, y: &Vec6) -> Self {
        SynodicState {
            r: Vec3::new(y[0], y[1], y[2]),
            v: Vec3::new(y[3], y[4], y[5]),
            t,
            frame: Frame::BarycenterSynodic,
            model,
        }
    }

    pub fn as_vec6(&self) -> Vec6 {
        Vec6::new(self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z)
    }
}

/// Chief position, velocity, acceleration, and jerk in the Moon synodic frame.
#[derive(Debug, Clone, Copy)]
pub struct KinState {
    pub r: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub j: Vec3,
    pub t: f64,
}

/// Kepler solution of the primaries' elliptic motion (ER3BP).
#[derive(Debug, Clone, Copy)]
pub struct ErKepler {
    /// Eccentric anomaly, rad.
    pub e_anom: f64,
    /// Mean anomaly, rad.
    pub mtilde: f64,
    /// Earth-Moon distance, nondim.
    pub r_em: f64,
    /// Synodic-frame angular rate (true-anomaly rate), nondim.
    pub omega_z: f64,
    /// Angular acceleration, nondim.
    pub omega_z_dot: f64,
    /// Angular jerk, nondim.
    pub omega_z_ddot: f64,
    /// d(r_em)/dt, nondim.
    pub r_em_dot: f64,
    /// d^2(r_em)/dt^2, nondim.
    pub r_em_ddot: f64,
}

/// Solve Kepler's equation for the primaries' phase at epoch `t`, with
/// mean anomaly advancing at unit rate from `mtilde0` at t = 0.
pub fn er3bp_kepler(t: f64, e: f64, mtilde0: f64) -> Result<ErKepler> {
    if !(0.0..1.0).contains(&e) {
        return Err(Error::Config(format!("eccentricity {e} outside [0, 1)")));
    }
    let mtilde = mtilde0 + t;
    let m_red = mtilde.rem_euclid(2.0 * std::f64::consts::PI);
    let mut ecc = m_red + e * m_red.sin();
    let mut converged = false;
    // iterate to machine precision: a residual tolerance near the last bit
    // keeps E a smooth function of t, which downstream Newton correctors
    // need (a looser stop leaves a noise floor in the vector field)
    for _ in 0..50 {
        let f = ecc - e * ecc.sin() - m_red;
        if f.abs() < 4.0 * f64::EPSILON * (1.0 + m_red) {
            converged = true;
            break;
        }
        ecc -= f / (1.0 - e * ecc.cos());
    }
    if !converged {
        // bisection fallback: E - m_red = e sin E brackets within [m-e, m+e]
        let (mut lo, mut hi) = (m_red - e, m_red + e);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = mid - e * mid.sin() - m_red;
            if f > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        ecc = 0.5 * (lo + hi);
        if (ecc - e * ecc.sin() - m_red).abs() > 1e-13 {
            return Err(Error::KeplerNonConvergence(250));
        }
    }
    // restore the revolution count so E tracks mtilde continuously
    let ecc = ecc + (mtilde - m_red);
    let u = 1.0 - e * ecc.cos();
    let se = ecc.sin();
    let sqrt1me2 = (1.0 - e * e).sqrt();
    Ok(ErKepler {
        e_anom: ecc,
        mtilde,
        r_em: u,
        omega_z: sqrt1me2 / (u * u),
        omega_z_dot: -2.0 * e * sqrt1me2 * se / u.powi(4),
        omega_z_ddot: -2.0 * e * sqrt1me2 * (ecc.cos() * u - 4.0 * e * se * se) / u.powi(6),
        r_em_dot: e * se / u,
        r_em_ddot: e * (ecc.cos() - e) / u.powi(3),
    })
}

/// Sun position in the barycenter synodic frame (BCR4BP).
pub fn sun_position(t: f64, params: &ModelParams) -> Vec3 {
    let theta = params.theta_s0 + params.omega_s * t;
    Vec3::new(
        params.r_b1s * theta.cos(),
        params.r_b1s * theta.sin(),
        0.0,
    )
}

/// Sun velocity in the synodic frame (BCR4BP).
pub fn sun_velocity(t: f64, params: &ModelParams) -> Vec3 {
    let theta = params.theta_s0 + params.omega_s * t;
    Vec3::new(
        -params.r_b1s * params.omega_s * theta.sin(),
        params.r_b1s * params.omega_s * theta.cos(),
        0.0,
    )
}

/// Sun-to-Moon vector and its synodic-frame derivative (BCR4BP).
pub fn sun_to_moon(t: f64, params: &ModelParams) -> (Vec3, Vec3) {
    let r_sm = Vec3::new(1.0 - params.mu, 0.0, 0.0) - sun_position(t, params);
    (r_sm, -sun_velocity(t, params))
}

/// Synodic-frame rotation state: omega_z, its first two derivatives, and the
/// Earth-Moon separation with its first two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct FrameRotation {
    pub omega_z: f64,
    pub omega_z_dot: f64,
    pub omega_z_ddot: f64,
    pub r_em: f64,
    pub r_em_dot: f64,
    pub r_em_ddot: f64,
}

pub fn frame_rotation(model: Model, t: f64, params: &ModelParams) -> Result<FrameRotation> {
    match model {
        Model::Cr3bp | Model::Bcr4bp => Ok(FrameRotation {
            omega_z: 1.0,
            omega_z_dot: 0.0,
            omega_z_ddot: 0.0,
            r_em: 1.0,
            r_em_dot: 0.0,
            r_em_ddot: 0.0,
        }),
        Model::Er3bp => {
            let k = er3bp_kepler(t, params.e, params.mtilde0)?;
            Ok(FrameRotation {
                omega_z: k.omega_z,
                omega_z_dot: k.omega_z_dot,
                omega_z_ddot: k.omega_z_ddot,
                r_em: k.r_em,
                r_em_dot: k.r_em_dot,
                r_em_ddot: k.r_em_ddot,
            })
        }
    }
}

/// Gravity-gradient tensor d/dzeta [zeta / zeta^3] = (I - 3 zeta zeta^T / zeta^2) / zeta^3.
pub fn grav_gradient(zeta: &Vec3) -> Mat3 {
    let n2 = zeta.norm_squared();
    let n = n2.sqrt();
    (Mat3::identity() - zeta * zeta.transpose() * (3.0 / n2)) / (n2 * n)
}

fn check_distance(d: f64) -> Result<()> {
    if d < MIN_PRIMARY_DISTANCE {
        Err(Error::SingularPrimaryDistance(d))
    } else {
        Ok(())
    }
}

/// Pseudo-potential of the tagged model at a barycenter-synodic state.
pub fn pseudo_potential(model: Model, state: &SynodicState, params: &ModelParams) -> Result<f64> {
    if state.frame != Frame::BarycenterSynodic {
        return Err(Error::ModelMismatch {
            expected: "barycenter-synodic frame".into(),
            got: state.frame.to_string(),
        });
    }
    if !state.t.is_finite() {
        return Err(Error::Config("state epoch must be finite".into()));
    }
    let rot = frame_rotation(model, state.t, params)?;
    let mu = params.mu;
    let r = state.r;
    let r_e = Vec3::new(-mu * rot.r_em, 0.0, 0.0);
    let r_m = Vec3::new((1.0 - mu) * rot.r_em, 0.0, 0.0);
    let d_e = (r - r_e).norm();
    let d_m = (r - r_m).norm();
    check_distance(d_e)?;
    check_distance(d_m)?;
    let mut ups = 0.5 * rot.omega_z * rot.omega_z * (r.x * r.x + r.y * r.y)
        + (1.0 - mu) / d_e
        + mu / d_m;
    if model == Model::Bcr4bp {
        let r_s = sun_position(state.t, params);
        let d_s = (r - r_s).norm();
        check_distance(d_s)?;
        ups += params.mu_s / d_s - params.mu_s / params.r_b1s.powi(3) * r_s.dot(&r);
    }
    Ok(ups)
}

/// Gradient of the pseudo-potential with respect to the barycentric position.
pub fn pseudo_potential_gradient(
    model: Model,
    state: &SynodicState,
    params: &ModelParams,
) -> Result<Vec3> {
    let rot = frame_rotation(model, state.t, params)?;
    let mu = params.mu;
    let r = state.r;
    let r_e = Vec3::new(-mu * rot.r_em, 0.0, 0.0);
    let r_m = Vec3::new((1.0 - mu) * rot.r_em, 0.0, 0.0);
    let de = r - r_e;
    let dm = r - r_m;
    check_distance(de.norm())?;
    check_distance(dm.norm())?;
    let w2 = rot.omega_z * rot.omega_z;
    let mut g = Vec3::new(w2 * r.x, w2 * r.y, 0.0) - de * ((1.0 - mu) / de.norm().powi(3))
        - dm * (mu / dm.norm().powi(3));
    if model == Model::Bcr4bp {
        let r_s = sun_position(state.t, params);
        let ds = r - r_s;
        check_distance(ds.norm())?;
        g += -ds * (params.mu_s / ds.norm().powi(3)) - r_s * (params.mu_s / params.r_b1s.powi(3));
    }
    Ok(g)
}

/// Equations of motion in the barycenter synodic frame:
/// r'' = -2 w x r' - w' x r + grad(Upsilon).
pub fn eom_barycentric(model: Model, state: &SynodicState, params: &ModelParams) -> Result<Vec3> {
    let rot = frame_rotation(model, state.t, params)?;
    let omega = Vec3::new(0.0, 0.0, rot.omega_z);
    let omega_dot = Vec3::new(0.0, 0.0, rot.omega_z_dot);
    let grad = pseudo_potential_gradient(model, state, params)?;
    Ok(-2.0 * omega.cross(&state.v) - omega_dot.cross(&state.r) + grad)
}

/// Unchecked RHS for integration; singular states produce NaN, which the
/// adaptive controller rejects until the step size underflows.
pub fn eom_rhs(model: Model, params: &ModelParams, t: f64, y: &Vec6) -> Vec6 {
    let state = SynodicState::new_bary(model, t, y);
    match eom_barycentric(model, &state, params) {
        Ok(a) => Vec6::new(y[3], y[4], y[5], a.x, a.y, a.z),
        Err(_) => Vec6::repeat(f64::NAN),
    }
}

/// State Jacobian of the barycentric equations of motion,
/// [[0, I], [dA/dr, dA/dv]], for variational propagation.
pub fn a_matrix_absolute(model: Model, t: f64, y: &Vec6, params: &ModelParams) -> Result<Mat6> {
    let rot = frame_rotation(model, t, params)?;
    let mu = params.mu;
    let r = Vec3::new(y[0], y[1], y[2]);
    let r_e = Vec3::new(-mu * rot.r_em, 0.0, 0.0);
    let r_m = Vec3::new((1.0 - mu) * rot.r_em, 0.0, 0.0);
    let de = r - r_e;
    let dm = r - r_m;
    check_distance(de.norm())?;
    check_distance(dm.norm())?;
    let w2 = rot.omega_z * rot.omega_z;
    let mut dadr = Mat3::from_diagonal(&Vec3::new(w2, w2, 0.0))
        - grav_gradient(&de) * (1.0 - mu)
        - grav_gradient(&dm) * mu;
    if model == Model::Bcr4bp {
        let ds = r - sun_position(t, params);
        check_distance(ds.norm())?;
        dadr -= grav_gradient(&ds) * params.mu_s;
    }
    // -[w_dot]x contribution from the -w' x r term
    let wd = rot.omega_z_dot;
    dadr += Mat3::new(0.0, wd, 0.0, -wd, 0.0, 0.0, 0.0, 0.0, 0.0);
    let wz = rot.omega_z;
    let dadv = Mat3::new(0.0, 2.0 * wz, 0.0, -2.0 * wz, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&dadr);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&dadv);
    Ok(a)
}

/// Moon barycentric position and velocity (on the rotating x-axis).
pub fn moon_state_bary(model: Model, t: f64, params: &ModelParams) -> Result<(Vec3, Vec3)> {
    let rot = frame_rotation(model, t, params)?;
    Ok((
        Vec3::new((1.0 - params.mu) * rot.r_em, 0.0, 0.0),
        Vec3::new((1.0 - params.mu) * rot.r_em_dot, 0.0, 0.0),
    ))
}

/// Convert a barycentric synodic state to the Moon synodic frame.
pub fn bary_to_moon(state: &SynodicState, params: &ModelParams) -> Result<SynodicState> {
    let (rm, vm) = moon_state_bary(state.model, state.t, params)?;
    Ok(SynodicState {
        r: state.r - rm,
        v: state.v - vm,
        t: state.t,
        frame: Frame::MoonSynodic,
        model: state.model,
    })
}

/// Convert a Moon synodic state to the barycenter synodic frame.
pub fn moon_to_bary(state: &SynodicState, params: &ModelParams) -> Result<SynodicState> {
    let (rm, vm) = moon_state_bary(state.model, state.t, params)?;
    Ok(SynodicState {
        r: state.r + rm,
        v: state.v + vm,
        t: state.t,
        frame: Frame::BarycenterSynodic,
        model: state.model,
    })
}

/// Acceleration and jerk of the chief in the Moon synodic frame.
pub fn chief_accel_jerk(
    model: Model,
    t: f64,
    r: Vec3,
    v: Vec3,
    params: &ModelParams,
) -> Result<KinState> {
    let rot = frame_rotation(model, t, params)?;
    let mu = params.mu;
    let omega = Vec3::new(0.0, 0.0, rot.omega_z);
    let r_em = Vec3::new(rot.r_em, 0.0, 0.0);
    let r_em_dot = Vec3::new(rot.r_em_dot, 0.0, 0.0);
    let rn = r.norm();
    check_distance(rn)?;
    let re_c = r_em + r; // Earth -> chief
    check_distance(re_c.norm())?;

    let mut a = -2.0 * omega.cross(&v) - omega.cross(&omega.cross(&r)) - r * (mu / rn.powi(3))
        - (1.0 - mu) * (re_c / re_c.norm().powi(3) - r_em / rot.r_em.powi(3));
    let mut j = -omega.cross(&omega.cross(&v))
        - grav_gradient(&r) * v * mu
        - grav_gradient(&re_c) * v * (1.0 - mu);

    match model {
        Model::Cr3bp => {}
        Model::Er3bp => {
            let omega_dot = Vec3::new(0.0, 0.0, rot.omega_z_dot);
            let omega_ddot = Vec3::new(0.0, 0.0, rot.omega_z_ddot);
            a += -omega_dot.cross(&r);
            // extra rate terms from the time-varying frame and geometry
            j += -3.0 * omega_dot.cross(&v)
                - omega_ddot.cross(&r)
                - omega_dot.cross(&omega.cross(&r))
                - omega.cross(&omega_dot.cross(&r))
                - grav_gradient(&re_c) * r_em_dot * (1.0 - mu)
                + grav_gradient(&r_em) * r_em_dot * (1.0 - mu);
        }
        Model::Bcr4bp => {
            let r_b1s = sun_position(t, params);
            let v_b1s = sun_velocity(t, params);
            let r_sm = Vec3::new(1.0 - mu, 0.0, 0.0) - r_b1s; // Sun -> Moon
            let r_sm_dot = -v_b1s;
            let r_sb1 = -r_b1s; // Sun -> barycenter
            let r_sb1_dot = -v_b1s;
            let rs_c = r_sm + r; // Sun -> chief
            check_distance(rs_c.norm())?;
            a += -params.mu_s * (rs_c / rs_c.norm().powi(3) - r_sb1 / r_sb1.norm().powi(3));
            j += -params.mu_s
                * (grav_gradient(&rs_c) * (v + r_sm_dot) - grav_gradient(&r_sb1) * r_sb1_dot);
        }
    }
    j += -2.0 * omega.cross(&a);
    Ok(KinState { r, v, a, j, t })
}

/// Dense chief trajectory in the barycenter synodic frame. Immutable after
/// construction; shareable across threads.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: Model,
    pub params: ModelParams,
    dense: DenseOutput<6>,
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.dense.t0()
    }

    pub fn tf(&self) -> f64 {
        self.dense.tf()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.dense.contains(t)
    }

    pub fn state_bary(&self, t: f64) -> SynodicState {
        SynodicState::new_bary(self.model, t, &self.dense.eval(t))
    }

    pub fn state_moon(&self, t: f64) -> SynodicState {
        let s = self.state_bary(t);
        bary_to_moon(&s, &self.params).expect("frame rotation valid on stored span")
    }

    /// Chief kinematics (position through jerk) in the Moon synodic frame.
    pub fn kin(&self, t: f64) -> Result<KinState> {
        let m = self.state_moon(t);
        chief_accel_jerk(self.model, t, m.r, m.v, &self.params)
    }

    /// Chief-Moon distance, nondim.
    pub fn r_moon(&self, t: f64) -> f64 {
        self.state_moon(t).r.norm()
    }
}

/// Adaptive-step propagation in the barycenter synodic frame with dense
/// output queryable at arbitrary epochs in `[t0, tf]`.
pub fn propagate(
    model: Model,
    state0: &SynodicState,
    t0: f64,
    tf: f64,
    tol: f64,
    params: &ModelParams,
) -> Result<Trajectory> {
    if !(1e-14..=1e-8).contains(&tol) {
        return Err(Error::Config(format!("tol {tol:.3e} outside [1e-14, 1e-8]")));
    }
    params.validate(model)?;
    if state0.frame != Frame::BarycenterSynodic {
        return Err(Error::ModelMismatch {
            expected: "barycenter-synodic frame".into(),
            got: state0.frame.to_string(),
        });
    }
    let sol = integrate::solve(
        |t, y| eom_rhs(model, params, t, y),
        t0,
        state0.as_vec6(),
        tf,
        &Options::tol(tol),
    )?;
    Ok(Trajectory {
        model,
        params: *params,
        dense: sol.dense.expect("dense enabled"),
    })
}

/// Jacobi constant C = 2 Upsilon - v^2 (CR3BP first integral).
pub fn jacobi_constant(state: &SynodicState, params: &ModelParams) -> Result<f64> {
    if state.model != Model::Cr3bp {
        return Err(Error::ModelMismatch {
            expected: "CR3BP".into(),
            got: state.model.to_string(),
        });
    }
    let ups = pseudo_potential(Model::Cr3bp, state, params)?;
    Ok(2.0 * ups - state.v.norm_squared())
}

/// Collinear equilibrium beyond the Moon (L2-like) on the x-axis, solved
/// from the force balance by bisection.
pub fn collinear_l2(params: &ModelParams) -> f64 {
    let mu = params.mu;
    let f = |x: f64| x - (1.0 - mu) * (x + mu) / (x + mu).abs().powi(3)
        - mu * (x - 1.0 + mu) / (x - 1.0 + mu).abs().powi(3);
    let (mut lo, mut hi) = (1.0 - mu + 1e-6, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn bary(model: Model, t: f64, r: Vec3, v: Vec3) -> SynodicState {
        SynodicState {
            r,
            v,
            t,
            frame: Frame::BarycenterSynodic,
            model,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, model: Model) -> SynodicState {
        // states in a shell around the Moon where gravity dominates, away
        // from singularities
        let dir = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let d = rng.gen_range(0.02..0.1);
        let r = Vec3::new(1.0 - 0.012150584, 0.0, 0.0) + dir * d;
        let v = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        bary(model, rng.gen_range(0.0..6.0), r, v)
    }

    #[test]
    fn potential_singular_at_earth() {
        let p = params();
        let s = bary(Model::Cr3bp, 0.0, Vec3::new(-p.mu, 0.0, 0.0), Vec3::zeros());
        assert!(matches!(
            pseudo_potential(Model::Cr3bp, &s, &p),
            Err(Error::SingularPrimaryDistance(_))
        ));
    }

    #[test]
    fn potential_term_by_term_on_moon_line() {
        let p = params();
        let x = 1.0 - p.mu + 1e-2;
        let s = bary(Model::Cr3bp, 0.0, Vec3::new(x, 0.0, 0.0), Vec3::zeros());
        let got = pseudo_potential(Model::Cr3bp, &s, &p).unwrap();
        // independent term-by-term summation on the collinear line
        let centrifugal = 0.5 * x * x;
        let earth = (1.0 - p.mu) / (x + p.mu);
        let moon = p.mu / (x - (1.0 - p.mu));
        assert!((got - (centrifugal + earth + moon)).abs() < 1e-14);
    }

    #[test]
    fn bcr4bp_degenerates_to_cr3bp() {
        let mut p = params();
        p.mu_s = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s4 = random_state(&mut rng, Model::Bcr4bp);
            let s3 = SynodicState {
                model: Model::Cr3bp,
                ..s4
            };
            let u4 = pseudo_potential(Model::Bcr4bp, &s4, &p).unwrap();
            let u3 = pseudo_potential(Model::Cr3bp, &s3, &p).unwrap();
            assert!((u4 - u3).abs() < 1e-12);
            let a4 = eom_barycentric(Model::Bcr4bp, &s4, &p).unwrap();
            let a3 = eom_barycentric(Model::Cr3bp, &s3, &p).unwrap();
            assert!((a4 - a3).norm() < 1e-12);
            let m4 = bary_to_moon(&s4, &p).unwrap();
            let k4 = chief_accel_jerk(Model::Bcr4bp, s4.t, m4.r, m4.v, &p).unwrap();
            let k3 = chief_accel_jerk(Model::Cr3bp, s4.t, m4.r, m4.v, &p).unwrap();
            assert!((k4.a - k3.a).norm() < 1e-12);
            assert!((k4.j - k3.j).norm() < 1e-12);
        }
    }

    #[test]
    fn er3bp_degenerates_to_cr3bp() {
        let mut p = params();
        p.e = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = random_state(&mut rng, Model::Er3bp);
            let m = bary_to_moon(&s, &p).unwrap();
            let ke = chief_accel_jerk(Model::Er3bp, s.t, m.r, m.v, &p).unwrap();
            let kc = chief_accel_jerk(Model::Cr3bp, s.t, m.r, m.v, &p).unwrap();
            assert!((ke.a - kc.a).norm() < 1e-12);
            assert!((ke.j - kc.j).norm() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            for _ in 0..100 {
                let s = random_state(&mut rng, model);
                let g = pseudo_potential_gradient(model, &s, &p).unwrap();
                let hstep = 1e-7;
                let mut fd = Vec3::zeros();
                for i in 0..3 {
                    let mut sp = s;
                    let mut sm = s;
                    sp.r[i] += hstep;
                    sm.r[i] -= hstep;
                    fd[i] = (pseudo_potential(model, &sp, &p).unwrap()
                        - pseudo_potential(model, &sm, &p).unwrap())
                        / (2.0 * hstep);
                }
                let rel = (g - fd).norm() / g.norm().max(1e-30);
                assert!(rel < 1e-6, "{model}: rel = {rel:.3e}");
            }
        }
    }

    #[test]
    fn acceleration_vanishes_at_collinear_equilibrium() {
        let p = params();
        let x = collinear_l2(&p);
        let s = bary(Model::Cr3bp, 0.0, Vec3::new(x, 0.0, 0.0), Vec3::zeros());
        let a = eom_barycentric(Model::Cr3bp, &s, &p).unwrap();
        assert!(a.norm() < 1e-9, "|a| = {:.3e}", a.norm());
        // sanity: L2 is beyond the Moon
        assert!(x > 1.0 - p.mu && x < 1.3);
    }

    #[test]
    fn moon_and_bary_accelerations_agree() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            for _ in 0..20 {
                let s = random_state(&mut rng, model);
                let a_bary = eom_barycentric(model, &s, &p).unwrap();
                let m = bary_to_moon(&s, &p).unwrap();
                let k = chief_accel_jerk(model, s.t, m.r, m.v, &p).unwrap();
                // [r..]_M = [r..]_B - (1-mu) r_em_ddot x_hat
                let rot = frame_rotation(model, s.t, &p).unwrap();
                let offset = Vec3::new((1.0 - p.mu) * rot.r_em_ddot, 0.0, 0.0);
                let err = (k.a - (a_bary - offset)).norm();
                assert!(err < 1e-11, "{model}: err = {err:.3e}");
            }
        }
    }

    #[test]
    fn jerk_is_time_derivative_of_acceleration() {
        let p = params();
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            // bounded-ish arc near the Moon
            let s0 = bary(
                model,
                0.0,
                Vec3::new(1.05, 0.02, 0.05),
                Vec3::new(0.01, -0.25, 0.05),
            );
            let traj = propagate(model, &s0, 0.0, 0.6, 1e-13, &p).unwrap();
            // five-point stencil, step scaled to the local gravitational time
            // scale; stencil states come from short exact propagations so the
            // oracle is not limited by the dense-interpolant accuracy
            let accel = |t0: f64, y0: Vec6, t1: f64| -> Vec3 {
                let sol = crate::integrate::solve(
                    |t, y| eom_rhs(model, &p, t, y),
                    t0,
                    y0,
                    t1,
                    &crate::integrate::Options::tol(1e-13).no_dense(),
                )
                .unwrap();
                let s = SynodicState::new_bary(model, t1, &sol.y_end);
                let m = bary_to_moon(&s, &p).unwrap();
                chief_accel_jerk(model, t1, m.r, m.v, &p).unwrap().a
            };
            let mut worst: f64 = 0.0;
            for i in 1..60 {
                let t = 0.01 * i as f64;
                let k = traj.kin(t).unwrap();
                let tau = (traj.r_moon(t).powi(3) / p.mu).sqrt();
                let dt = (0.005 * tau).clamp(1e-5, 5e-4);
                let y = traj.state_bary(t).as_vec6();
                let fd = (-accel(t, y, t + 2.0 * dt) + 8.0 * accel(t, y, t + dt)
                    - 8.0 * accel(t, y, t - dt)
                    + accel(t, y, t - 2.0 * dt))
                    / (12.0 * dt);
                let rel = (k.j - fd).norm() / k.j.norm().max(1e-12);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-6, "{model}: worst rel = {worst:.3e}");
        }
    }

    #[test]
    fn kepler_circular_case() {
        let k = er3bp_kepler(1.7, 0.0, 0.0).unwrap();
        assert!((k.e_anom - 1.7).abs() < 1e-15);
        assert!((k.omega_z - 1.0).abs() < 1e-15);
        assert_eq!(k.omega_z_dot, 0.0);
        assert!((k.r_em - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kepler_matches_bisection_oracle() {
        let e = 0.0549;
        let m = std::f64::consts::PI / 3.0;
        let k = er3bp_kepler(m, e, 0.0).unwrap();
        // bisection oracle on E - e sin E = M
        let (mut lo, mut hi) = (m - e, m + e);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid - e * mid.sin() - m > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let e_oracle = 0.5 * (lo + hi);
        assert!((k.e_anom - e_oracle).abs() < 1e-12);
        assert!((k.mtilde - (k.e_anom - e * k.e_anom.sin())).abs() < 1e-12);
        assert!((k.r_em - (1.0 - e * k.e_anom.cos())).abs() < 1e-15);
    }

    #[test]
    fn kepler_symmetry_at_pi() {
        let k = er3bp_kepler(std::f64::consts::PI, 0.0549, 0.0).unwrap();
        assert!((k.e_anom - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn kepler_rate_derivatives_consistent() {
        // omega_z_dot and r_em_dot vs finite differences of the solution
        let e = 0.0549;
        let dt = 1e-6;
        for t in [0.3, 1.1, 2.9, 4.4] {
            let k = er3bp_kepler(t, e, 0.0).unwrap();
            let kp = er3bp_kepler(t + dt, e, 0.0).unwrap();
            let km = er3bp_kepler(t - dt, e, 0.0).unwrap();
            assert!(((kp.omega_z - km.omega_z) / (2.0 * dt) - k.omega_z_dot).abs() < 1e-7);
            assert!(((kp.r_em - km.r_em) / (2.0 * dt) - k.r_em_dot).abs() < 1e-8);
            assert!(((kp.omega_z_dot - km.omega_z_dot) / (2.0 * dt) - k.omega_z_ddot).abs() < 1e-6);
            assert!(((kp.r_em_dot - km.r_em_dot) / (2.0 * dt) - k.r_em_ddot).abs() < 1e-8);
        }
    }

    #[test]
    fn sun_position_cases() {
        let p = params();
        assert!((sun_position(0.0, &p) - Vec3::new(p.r_b1s, 0.0, 0.0)).norm() < 1e-12);
        let period = 2.0 * std::f64::consts::PI / p.omega_s;
        assert!((sun_position(period, &p) - sun_position(0.0, &p)).norm() < 1e-9);
        // rotation-matrix oracle at an arbitrary epoch
        let t = 1.234;
        let th = p.omega_s * t;
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), th);
        let oracle = rot * Vec3::new(p.r_b1s, 0.0, 0.0);
        assert!((sun_position(t, &p) - oracle).norm() < 1e-9);
        // velocity consistent with finite difference
        let dt = 1e-6;
        let fd = (sun_position(t + dt, &p) - sun_position(t - dt, &p)) / (2.0 * dt);
        assert!((sun_velocity(t, &p) - fd).norm() < 1e-5);
    }

    #[test]
    fn jacobi_conserved_on_generic_arc() {
        let p = params();
        let s0 = bary(
            Model::Cr3bp,
            0.0,
            Vec3::new(1.05, 0.02, 0.05),
            Vec3::new(0.01, -0.25, 0.05),
        );
        let c0 = jacobi_constant(&s0, &p).unwrap();
        let traj = propagate(Model::Cr3bp, &s0, 0.0, 2.0, 1e-12, &p).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=200 {
            let t = 2.0 * i as f64 / 200.0;
            let c = jacobi_constant(&traj.state_bary(t), &p).unwrap();
            worst = worst.max((c - c0).abs());
        }
        assert!(worst < 1e-10, "Jacobi drift {worst:.3e}");
    }

    #[test]
    fn jacobi_requires_cr3bp() {
        let p = params();
        let s = bary(Model::Er3bp, 0.0, Vec3::new(1.1, 0.0, 0.0), Vec3::zeros());
        assert!(jacobi_constant(&s, &p).is_err());
        // v = 0 gives C = 2 Upsilon
        let s = bary(Model::Cr3bp, 0.0, Vec3::new(1.1, 0.0, 0.0), Vec3::zeros());
        let c = jacobi_constant(&s, &p).unwrap();
        let u = pseudo_potential(Model::Cr3bp, &s, &p).unwrap();
        assert_eq!(c, 2.0 * u);
    }

    #[test]
    fn propagate_reversibility() {
        let p = params();
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            let s0 = bary(
                model,
                0.0,
                Vec3::new(1.05, 0.02, 0.05),
                Vec3::new(0.01, -0.25, 0.05),
            );
            let fwd = propagate(model, &s0, 0.0, 1.5, 1e-12, &p).unwrap();
            let end = fwd.state_bary(1.5);
            let back = propagate(model, &end, 1.5, 0.0, 1e-12, &p).unwrap();
            let rec = back.state_bary(0.0);
            let err = (rec.r - s0.r).norm().max((rec.v - s0.v).norm());
            assert!(err < 1e-9, "{model}: reversibility err = {err:.3e}");
        }
    }

    #[test]
    fn propagate_zero_interval() {
        let p = params();
        let s0 = bary(Model::Cr3bp, 0.3, Vec3::new(1.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0));
        let traj = propagate(Model::Cr3bp, &s0, 0.3, 0.3, 1e-12, &p).unwrap();
        let s = traj.state_bary(0.3);
        assert_eq!(s.r, s0.r);
        assert_eq!(s.v, s0.v);
    }

    #[test]
    fn propagate_rejects_bad_tolerance() {
        let p = params();
        let s0 = bary(Model::Cr3bp, 0.0, Vec3::new(1.1, 0.0, 0.0), Vec3::zeros());
        assert!(propagate(Model::Cr3bp, &s0, 0.0, 1.0, 1e-6, &p).is_err());
    }
}
