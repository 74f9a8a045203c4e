//! Nonlinear and linearized relative dynamics about the chief in the VNB
//! frame, and state-transition-matrix propagation along the chief orbit.

use crate::constants::{Model, ModelParams};
use crate::dynamics::{
    self, a_matrix_absolute, eom_rhs, frame_rotation, grav_gradient, KinState, SynodicState,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::frames::{vnb_basis, LocalFrame};
use crate::integrate::{self, Options};
use crate::{Mat3, Mat6, Vec3, Vec6};
use nalgebra::SVector;

/// Deputies beyond this relative distance (~384 km) are outside the
/// linearization envelope the optimizer assumes.
pub const LINEAR_ENVELOPE: f64 = 1e-3;

/// Relative state in VNB axes.
#[derive(Debug, Clone, Copy)]
pub struct RelState {
    pub rho: Vec3,
    pub rho_dot: Vec3,
    pub t: f64,
}

impl RelState {
    pub fn as_vec6(&self) -> Vec6 {
        Vec6::new(
            self.rho.x,
            self.rho.y,
            self.rho.z,
            self.rho_dot.x,
            self.rho_dot.y,
            self.rho_dot.z,
        )
    }

    pub fn from_vec6(t: f64, y: &Vec6) -> Self {
        RelState {
            rho: Vec3::new(y[0], y[1], y[2]),
            rho_dot: Vec3::new(y[3], y[4], y[5]),
            t,
        }
    }

    pub fn within_linear_envelope(&self) -> bool {
        self.rho.norm() < LINEAR_ENVELOPE
    }
}

/// State transition matrix between two epochs of a chief trajectory.
#[derive(Debug, Clone)]
pub struct Stm {
    pub phi: Mat6,
    pub t0: f64,
    pub t1: f64,
    /// Provenance of the underlying chief trajectory.
    pub chief_id: String,
}

/// Angular velocity and acceleration of the VNB frame with respect to the
/// inertial frame, resolved in VNB axes.
pub fn omega_vnb_inertial(
    frame: &LocalFrame,
    model: Model,
    t: f64,
    params: &ModelParams,
) -> Result<(Vec3, Vec3)> {
    let rot = frame_rotation(model, t, params)?;
    let bt = frame.basis.transpose();
    let w_mi = bt * Vec3::new(0.0, 0.0, rot.omega_z);
    let w_mi_dot = bt * Vec3::new(0.0, 0.0, rot.omega_z_dot);
    let w_vi = frame.omega + w_mi;
    let w_vi_dot = frame.omega_dot + w_mi_dot - frame.omega.cross(&w_mi);
    Ok((w_vi, w_vi_dot))
}

/// Differential-gravity vectors used by the nonlinear relative dynamics:
/// per attractor, the chief-side and deputy-side position vectors resolved
/// in VNB axes, scaled by the attractor's mass parameter.
fn gravity_sources(
    chief: &KinState,
    frame: &LocalFrame,
    model: Model,
    params: &ModelParams,
) -> Result<Vec<(f64, Vec3)>> {
    let rot = frame_rotation(model, chief.t, params)?;
    let bt = frame.basis.transpose();
    let r_v = bt * chief.r;
    let mut sources = vec![(params.mu, r_v)];
    let r_em_v = bt * Vec3::new(rot.r_em, 0.0, 0.0);
    sources.push((1.0 - params.mu, r_em_v + r_v));
    if model == Model::Bcr4bp {
        let (r_sm, _) = dynamics::sun_to_moon(chief.t, params);
        sources.push((params.mu_s, bt * r_sm + r_v));
    }
    Ok(sources)
}

/// Nonlinear relative acceleration in the VNB frame.
pub fn rel_accel_nonlinear(
    chief: &KinState,
    rel: &RelState,
    params: &ModelParams,
    model: Model,
) -> Result<Vec3> {
    let frame = vnb_basis(chief)?;
    let (w_vi, w_vi_dot) = omega_vnb_inertial(&frame, model, chief.t, params)?;
    let rho = rel.rho;
    let mut acc = -2.0 * w_vi.cross(&rel.rho_dot)
        - w_vi_dot.cross(&rho)
        - w_vi.cross(&w_vi.cross(&rho));
    for (mass, r_chief) in gravity_sources(chief, &frame, model, params)? {
        let r_dep = r_chief + rho;
        let dn = r_dep.norm();
        if dn < dynamics::MIN_PRIMARY_DISTANCE {
            return Err(Error::SingularPrimaryDistance(dn));
        }
        acc += mass * (r_chief / r_chief.norm().powi(3) - r_dep / dn.powi(3));
    }
    Ok(acc)
}

/// Linearized relative dynamics in VNB: x_dot = A(t) x with
/// x = [rho; rho_dot].
pub fn plant_matrix(chief: &KinState, params: &ModelParams, model: Model) -> Result<Mat6> {
    let frame = vnb_basis(chief)?;
    let (w_vi, w_vi_dot) = omega_vnb_inertial(&frame, model, chief.t, params)?;
    let wx = skew(&w_vi);
    let mut a_rr = -skew(&w_vi_dot) - wx * wx;
    for (mass, r_chief) in gravity_sources(chief, &frame, model, params)? {
        a_rr -= grav_gradient(&r_chief) * mass;
    }
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&a_rr);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-2.0 * wx));
    Ok(a)
}

pub(crate) fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Plant matrix evaluated from a dense chief trajectory at epoch `t`.
pub fn plant_at(chief_traj: &Trajectory, t: f64) -> Result<Mat6> {
    let kin = chief_traj.kin(t)?;
    plant_matrix(&kin, &chief_traj.params, chief_traj.model)
}

fn span_check(traj: &Trajectory, t: f64) -> Result<()> {
    if !traj.contains(t) {
        return Err(Error::GridMismatch(format!(
            "epoch {t} outside chief trajectory span [{}, {}]",
            traj.t0(),
            traj.tf()
        )));
    }
    Ok(())
}

/// Propagate the VNB relative STM from `t0` to `t1` along a chief
/// trajectory: the chief state and the 36 variational states are integrated
/// jointly as a 42-dimensional system.
pub fn propagate_stm(chief_traj: &Trajectory, t0: f64, t1: f64, tol: f64) -> Result<Stm> {
    span_check(chief_traj, t0)?;
    span_check(chief_traj, t1)?;
    let model = chief_traj.model;
    let params = chief_traj.params;
    let y0 = pack42(&chief_traj.state_bary(t0).as_vec6(), &Mat6::identity());
    let rhs = move |t: f64, y: &SVector<f64, 42>| -> SVector<f64, 42> {
        let chief = Vec6::from_iterator(y.iter().take(6).copied());
        let dchief = eom_rhs(model, &params, t, &chief);
        let s = SynodicState::new_bary(model, t, &chief);
        let a = match dynamics::bary_to_moon(&s, &params)
            .and_then(|m| dynamics::chief_accel_jerk(model, t, m.r, m.v, &params))
            .and_then(|kin| plant_matrix(&kin, &params, model))
        {
            Ok(a) => a,
            Err(_) => return SVector::repeat(f64::NAN),
        };
        let phi = unpack_phi(y);
        pack42_rates(&dchief, &(a * phi))
    };
    let sol = integrate::solve(rhs, t0, y0, t1, &Options::tol(tol).no_dense())?;
    Ok(Stm {
        phi: unpack_phi(&sol.y_end),
        t0,
        t1,
        chief_id: String::new(),
    })
}

/// VNB relative STMs for each consecutive interval of an epoch grid.
pub fn stm_history(chief_traj: &Trajectory, epochs: &[f64], tol: f64) -> Result<Vec<Stm>> {
    epochs
        .windows(2)
        .map(|w| propagate_stm(chief_traj, w[0], w[1], tol))
        .collect()
}

/// Flow map and absolute-dynamics STM of the synodic equations of motion,
/// integrated jointly (42-dimensional variational system).
pub fn flow_and_stm_absolute(
    model: Model,
    params: &ModelParams,
    y0: &Vec6,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<(Vec6, Mat6)> {
    let params = *params;
    let y = pack42(y0, &Mat6::identity());
    let rhs = move |t: f64, y: &SVector<f64, 42>| -> SVector<f64, 42> {
        let chief = Vec6::from_iterator(y.iter().take(6).copied());
        let dchief = eom_rhs(model, &params, t, &chief);
        let a = match a_matrix_absolute(model, t, &chief, &params) {
            Ok(a) => a,
            Err(_) => return SVector::repeat(f64::NAN),
        };
        let phi = unpack_phi(y);
        pack42_rates(&dchief, &(a * phi))
    };
    let sol = integrate::solve(rhs, t0, y, t1, &Options::tol(tol).no_dense())?;
    let yf = Vec6::from_iterator(sol.y_end.iter().take(6).copied());
    Ok((yf, unpack_phi(&sol.y_end)))
}

/// Nonlinear relative trajectory in VNB axes along a dense chief.
pub fn propagate_relative(
    chief_traj: &Trajectory,
    rel0: &RelState,
    t1: f64,
    tol: f64,
) -> Result<RelState> {
    span_check(chief_traj, rel0.t)?;
    span_check(chief_traj, t1)?;
    let model = chief_traj.model;
    let params = chief_traj.params;
    let traj = chief_traj.clone();
    let rhs = move |t: f64, y: &Vec6| -> Vec6 {
        let kin = match traj.kin(t) {
            Ok(k) => k,
            Err(_) => return Vec6::repeat(f64::NAN),
        };
        let rel = RelState::from_vec6(t, y);
        match rel_accel_nonlinear(&kin, &rel, &params, model) {
            Ok(a) => Vec6::new(y[3], y[4], y[5], a.x, a.y, a.z),
            Err(_) => Vec6::repeat(f64::NAN),
        }
    };
    let sol = integrate::solve(rhs, rel0.t, rel0.as_vec6(), t1, &Options::tol(tol).no_dense())?;
    Ok(RelState::from_vec6(t1, &sol.y_end))
}

fn pack42(state: &Vec6, phi: &Mat6) -> SVector<f64, 42> {
    let mut y = SVector::<f64, 42>::zeros();
    for i in 0..6 {
        y[i] = state[i];
    }
    for c in 0..6 {
        for r in 0..6 {
            y[6 + c * 6 + r] = phi[(r, c)];
        }
    }
    y
}

fn pack42_rates(dstate: &Vec6, dphi: &Mat6) -> SVector<f64, 42> {
    pack42(dstate, dphi)
}

fn unpack_phi(y: &SVector<f64, 42>) -> Mat6 {
    let mut phi = Mat6::zeros();
    for c in 0..6 {
        for r in 0..6 {
            phi[(r, c)] = y[6 + c * 6 + r];
        }
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::Frame;
    use crate::dynamics::propagate;
    use crate::frames::{from_local, to_local};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chief_arc(model: Model) -> Trajectory {
        let p = ModelParams::default();
        let s0 = SynodicState {
            r: Vec3::new(1.05, 0.02, 0.05),
            v: Vec3::new(0.01, -0.25, 0.05),
            t: 0.0,
            frame: Frame::BarycenterSynodic,
            model,
        };
        propagate(model, &s0, 0.0, 0.6, 1e-12, &p).unwrap()
    }

    #[test]
    fn zero_offset_gives_zero_acceleration() {
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            let traj = chief_arc(model);
            let kin = traj.kin(0.2).unwrap();
            let rel = RelState {
                rho: Vec3::zeros(),
                rho_dot: Vec3::zeros(),
                t: 0.2,
            };
            let a = rel_accel_nonlinear(&kin, &rel, &traj.params, model).unwrap();
            assert_eq!(a, Vec3::zeros());
        }
    }

    #[test]
    fn plant_structure() {
        let traj = chief_arc(Model::Cr3bp);
        let a = plant_at(&traj, 0.3).unwrap();
        assert_eq!(a.fixed_view::<3, 3>(0, 0).norm(), 0.0);
        assert_eq!(a.fixed_view::<3, 3>(0, 3) - Mat3::identity(), Mat3::zeros());
    }

    #[test]
    fn bcr4bp_plant_degenerates_to_cr3bp() {
        let mut p = ModelParams::default();
        p.mu_s = 0.0;
        let s0 = SynodicState {
            r: Vec3::new(1.05, 0.02, 0.05),
            v: Vec3::new(0.01, -0.25, 0.05),
            t: 0.0,
            frame: Frame::BarycenterSynodic,
            model: Model::Bcr4bp,
        };
        let t4 = propagate(Model::Bcr4bp, &s0, 0.0, 0.5, 1e-12, &p).unwrap();
        let kin = t4.kin(0.25).unwrap();
        let a4 = plant_matrix(&kin, &p, Model::Bcr4bp).unwrap();
        let a3 = plant_matrix(&kin, &p, Model::Cr3bp).unwrap();
        assert!((a4 - a3).norm() < 1e-12);
    }

    #[test]
    fn plant_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            let traj = chief_arc(model);
            for _ in 0..20 {
                let t = rng.gen_range(0.05..0.55);
                let kin = traj.kin(t).unwrap();
                let a = plant_matrix(&kin, &traj.params, model).unwrap();
                let lower = a.fixed_view::<3, 6>(3, 0).clone_owned();
                let mut fd = nalgebra::SMatrix::<f64, 3, 6>::zeros();
                let step = 1e-7;
                for col in 0..6 {
                    let mut xp = Vec6::zeros();
                    xp[col] = step;
                    let rp = RelState::from_vec6(t, &xp);
                    let rm = RelState::from_vec6(t, &(-xp));
                    let ap = rel_accel_nonlinear(&kin, &rp, &traj.params, model).unwrap();
                    let am = rel_accel_nonlinear(&kin, &rm, &traj.params, model).unwrap();
                    fd.set_column(col, &((ap - am) / (2.0 * step)));
                }
                let rel = (lower - fd).norm() / lower.norm();
                assert!(rel < 1e-6, "{model}: rel = {rel:.3e}");
            }
        }
    }

    #[test]
    fn richardson_defect_scaling() {
        // || f(x) - A x || scales as O(||x||^2): halving rho quarters it
        let traj = chief_arc(Model::Cr3bp);
        let t = 0.2;
        let kin = traj.kin(t).unwrap();
        let a = plant_at(&traj, t).unwrap();
        let dir = Vec6::new(0.6, -0.3, 0.4, 0.2, 0.5, -0.1).normalize();
        let mut prev_defect = None;
        for scale in [1e-5, 5e-6, 2.5e-6] {
            let x = dir * scale;
            let rel = RelState::from_vec6(t, &x);
            let f = rel_accel_nonlinear(&kin, &rel, &traj.params, Model::Cr3bp).unwrap();
            let lin = a * x;
            let defect = (f - Vec3::new(lin[3], lin[4], lin[5])).norm();
            if let Some(prev) = prev_defect {
                let ratio: f64 = prev / defect;
                assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
            }
            prev_defect = Some(defect);
        }
    }

    #[test]
    fn stm_identity_and_composition() {
        let traj = chief_arc(Model::Cr3bp);
        let stm = propagate_stm(&traj, 0.2, 0.2, 1e-12).unwrap();
        assert!((stm.phi - Mat6::identity()).norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let t0 = rng.gen_range(0.0..0.2);
            let tm = rng.gen_range(0.2..0.4);
            let t1 = rng.gen_range(0.4..0.6);
            let full = propagate_stm(&traj, t0, t1, 1e-12).unwrap();
            let first = propagate_stm(&traj, t0, tm, 1e-12).unwrap();
            let second = propagate_stm(&traj, tm, t1, 1e-12).unwrap();
            let resid = (second.phi * first.phi - full.phi).norm() / full.phi.norm();
            assert!(resid < 1e-8, "composition residual {resid:.3e}");
        }
    }

    #[test]
    fn stm_predicts_nonlinear_perturbation() {
        let traj = chief_arc(Model::Cr3bp);
        let (t0, t1) = (0.1, 0.5);
        let stm = propagate_stm(&traj, t0, t1, 1e-12).unwrap();
        let dx0 = Vec6::new(1.0, -0.4, 0.7, 0.3, -0.2, 0.5) * 1e-8;
        let rel0 = RelState::from_vec6(t0, &dx0);
        let rel1 = propagate_relative(&traj, &rel0, t1, 1e-12).unwrap();
        let pred = stm.phi * dx0;
        let err = (rel1.as_vec6() - pred).norm() / pred.norm();
        assert!(err < 1e-4, "perturbation err {err:.3e}");
    }

    #[test]
    fn stm_determinant_near_unity() {
        let traj = chief_arc(Model::Cr3bp);
        let stm = propagate_stm(&traj, 0.0, 0.6, 1e-12).unwrap();
        assert!((stm.phi.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dual_propagation_oracle() {
        // deputy propagated as an absolute synodic state minus the chief
        // matches the relative dynamics integration
        for model in [Model::Cr3bp, Model::Er3bp, Model::Bcr4bp] {
            let traj = chief_arc(model);
            let p = traj.params;
            let (t0, t1) = (0.05, 0.2); // ~0.1 period of an NRHO-like arc
            let kin0 = traj.kin(t0).unwrap();
            let frame0 = vnb_basis(&kin0).unwrap();
            let rel0 = RelState {
                rho: Vec3::new(2e-6, -1e-6, 1.5e-6),
                rho_dot: Vec3::new(-1e-6, 5e-7, 8e-7),
                t: t0,
            };
            // route A: nonlinear relative dynamics
            let rel1 = propagate_relative(&traj, &rel0, t1, 1e-12).unwrap();
            // route B: absolute deputy propagation, then frame mapping
            let dep_moon = from_local(&kin0, &rel0.rho, &rel0.rho_dot, &frame0, model);
            let dep_bary = dynamics::moon_to_bary(&dep_moon, &p).unwrap();
            let dep_traj = propagate(model, &dep_bary, t0, t1, 1e-12, &p).unwrap();
            let dep1 = dep_traj.state_moon(t1);
            let kin1 = traj.kin(t1).unwrap();
            let frame1 = vnb_basis(&kin1).unwrap();
            let (rho_b, rho_dot_b) = to_local(&kin1, &dep1, &frame1).unwrap();
            let err = (rel1.rho - rho_b).norm().max((rel1.rho_dot - rho_dot_b).norm());
            assert!(err < 1e-9, "{model}: dual-propagation err = {err:.3e}");
        }
    }
}
