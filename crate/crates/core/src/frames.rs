//! LVLH and VNB co-moving frames: construction from the chief's kinematics,
//! angular velocity and acceleration relative to the Moon synodic frame, and
//! state transformations between the synodic and local frames.

use crate::constants::{Frame, Model};
use crate::dynamics::{KinState, SynodicState};
use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

/// Velocities below this magnitude make the VNB frame ill-defined.
pub const MIN_SPEED: f64 = 1e-9;
/// Angular-momentum magnitudes below this make either frame ill-defined.
pub const MIN_ANGULAR_MOMENTUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Lvlh,
    Vnb,
}

/// A co-moving frame at one epoch: `basis` columns are the local axes
/// resolved in the Moon synodic frame; `omega` and `omega_dot` are the
/// angular velocity and acceleration of the frame with respect to the Moon
/// synodic frame, resolved in the local axes.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    pub basis: Mat3,
    pub omega: Vec3,
    pub omega_dot: Vec3,
    pub kind: FrameKind,
    pub t: f64,
}

fn vnb_axes(chief: &KinState) -> Result<(Vec3, Vec3, Vec3, Vec3, f64, f64)> {
    let h_vec = chief.r.cross(&chief.v);
    let h = h_vec.norm();
    let v = chief.v.norm();
    if v < MIN_SPEED {
        return Err(Error::DegenerateFrame(format!("speed {v:.3e} below threshold")));
    }
    if h < MIN_ANGULAR_MOMENTUM {
        return Err(Error::DegenerateFrame(format!(
            "angular momentum {h:.3e} below threshold (radial velocity)"
        )));
    }
    let i_hat = chief.v / v;
    let j_hat = h_vec / h;
    let k_hat = i_hat.cross(&j_hat);
    Ok((i_hat, j_hat, k_hat, h_vec, h, v))
}

/// VNB frame: i = v/v, j = (r x v)/|r x v|, k = i x j.
pub fn vnb_basis(chief: &KinState) -> Result<LocalFrame> {
    let (i_hat, j_hat, k_hat, ..) = vnb_axes(chief)?;
    let basis = Mat3::from_columns(&[i_hat, j_hat, k_hat]);
    Ok(LocalFrame {
        basis,
        omega: vnb_angular_velocity(chief)?,
        omega_dot: vnb_angular_acceleration(chief)?,
        kind: FrameKind::Vnb,
        t: chief.t,
    })
}

/// Angular velocity of the VNB frame with respect to the Moon synodic frame,
/// resolved in VNB axes.
pub fn vnb_angular_velocity(chief: &KinState) -> Result<Vec3> {
    let (_, _, k_hat, h_vec, h, v) = vnb_axes(chief)?;
    let a = chief.a;
    let r = chief.r;
    let wx = r.cross(&a).dot(&k_hat) / h;
    let wy = -a.dot(&k_hat) / v;
    let wz = a.dot(&h_vec) / (h * v);
    Ok(Vec3::new(wx, wy, wz))
}

/// Angular acceleration of the VNB frame, resolved in VNB axes, by
/// component-wise differentiation of the angular velocity.
pub fn vnb_angular_acceleration(chief: &KinState) -> Result<Vec3> {
    let (i_hat, j_hat, k_hat, h_vec, h, v) = vnb_axes(chief)?;
    let (r, vel, a, j) = (chief.r, chief.v, chief.a, chief.j);
    let h_vec_dot = r.cross(&a);
    let h_dot = h_vec_dot.dot(&j_hat);
    let v_dot = a.dot(&i_hat);
    // [dk/dt]_M from the frame definition
    let k_hat_dot = -i_hat * (a.dot(&k_hat) / v) - j_hat * (h_vec_dot.dot(&k_hat) / h);
    let wx_dot = -h_dot / (h * h) * h_vec_dot.dot(&k_hat)
        + (vel.cross(&a).dot(&k_hat) + r.cross(&j).dot(&k_hat) + h_vec_dot.dot(&k_hat_dot)) / h;
    let wy_dot = v_dot / (v * v) * a.dot(&k_hat) - (j.dot(&k_hat) + a.dot(&k_hat_dot)) / v;
    let wz_dot = (-h_dot * v - h * v_dot) / (h * h * v * v) * a.dot(&h_vec)
        + (j.dot(&h_vec) + a.dot(&h_vec_dot)) / (h * v);
    Ok(Vec3::new(wx_dot, wy_dot, wz_dot))
}

/// LVLH frame: j = -(r x v)/|r x v|, k = -r/r, i = j x k.
pub fn lvlh_basis(chief: &KinState) -> Result<LocalFrame> {
    let r = chief.r.norm();
    if r <= 0.0 {
        return Err(Error::DegenerateFrame("zero position".into()));
    }
    let h_vec = chief.r.cross(&chief.v);
    if h_vec.norm() < MIN_ANGULAR_MOMENTUM {
        return Err(Error::DegenerateFrame(format!(
            "angular momentum {:.3e} below threshold",
            h_vec.norm()
        )));
    }
    // unit-vector derivatives through second order give omega and omega_dot
    let h_vec_dot = chief.r.cross(&chief.a);
    let h_vec_ddot = chief.v.cross(&chief.a) + chief.r.cross(&chief.j);
    let (j_hat, j_d, j_dd) = unit_deriv2(-h_vec, -h_vec_dot, -h_vec_ddot);
    let (k_hat, k_d, k_dd) = unit_deriv2(-chief.r, -chief.v, -chief.a);
    let i_hat = j_hat.cross(&k_hat);
    let i_d = j_d.cross(&k_hat) + j_hat.cross(&k_d);
    let i_dd = j_dd.cross(&k_hat) + 2.0 * j_d.cross(&k_d) + j_hat.cross(&k_dd);
    let omega_m = 0.5 * (i_hat.cross(&i_d) + j_hat.cross(&j_d) + k_hat.cross(&k_d));
    let omega_dot_m = 0.5 * (i_hat.cross(&i_dd) + j_hat.cross(&j_dd) + k_hat.cross(&k_dd));
    let basis = Mat3::from_columns(&[i_hat, j_hat, k_hat]);
    Ok(LocalFrame {
        basis,
        omega: basis.transpose() * omega_m,
        omega_dot: basis.transpose() * omega_dot_m,
        kind: FrameKind::Lvlh,
        t: chief.t,
    })
}

/// First and second derivatives of u/|u| given u and its derivatives.
pub(crate) fn unit_deriv2(u: Vec3, du: Vec3, ddu: Vec3) -> (Vec3, Vec3, Vec3) {
    let n = u.norm();
    let u_hat = u / n;
    let n_dot = u_hat.dot(&du);
    let u_hat_dot = (du - u_hat * n_dot) / n;
    let n_ddot = u_hat_dot.dot(&du) + u_hat.dot(&ddu);
    let u_hat_ddot = (ddu - 2.0 * u_hat_dot * n_dot - u_hat * n_ddot) / n;
    (u_hat, u_hat_dot, u_hat_ddot)
}

fn check_epochs(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-9 {
        return Err(Error::EpochMismatch(a, b));
    }
    Ok(())
}

/// Map a deputy Moon-synodic state into the local frame:
/// rho = B^T (r_d - r), [rho_dot]_local = B^T (v_d - v) - omega x rho.
pub fn to_local(
    chief: &KinState,
    deputy: &SynodicState,
    frame: &LocalFrame,
) -> Result<(Vec3, Vec3)> {
    if deputy.frame != Frame::MoonSynodic {
        return Err(Error::ModelMismatch {
            expected: "moon-synodic deputy".into(),
            got: deputy.frame.to_string(),
        });
    }
    check_epochs(chief.t, deputy.t)?;
    check_epochs(chief.t, frame.t)?;
    let bt = frame.basis.transpose();
    let rho = bt * (deputy.r - chief.r);
    let rho_dot = bt * (deputy.v - chief.v) - frame.omega.cross(&rho);
    Ok((rho, rho_dot))
}

/// Inverse of [`to_local`].
pub fn from_local(
    chief: &KinState,
    rho: &Vec3,
    rho_dot: &Vec3,
    frame: &LocalFrame,
    model: Model,
) -> SynodicState {
    let b = frame.basis;
    SynodicState {
        r: chief.r + b * rho,
        v: chief.v + b * (rho_dot + frame.omega.cross(rho)),
        t: chief.t,
        frame: Frame::MoonSynodic,
        model,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ModelParams;
    use crate::dynamics::{propagate, Trajectory};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kin(r: Vec3, v: Vec3, a: Vec3, j: Vec3) -> KinState {
        KinState { r, v, a, j, t: 0.0 }
    }

    fn random_kin(rng: &mut ChaCha8Rng) -> KinState {
        let mut vec = || {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        };
        kin(vec(), vec(), vec(), vec())
    }

    #[test]
    fn vnb_hand_case() {
        let c = kin(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        let f = vnb_basis(&c).unwrap();
        assert!((f.basis.column(0) - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((f.basis.column(1) - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!((f.basis.column(2) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn lvlh_hand_case() {
        let c = kin(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        let f = lvlh_basis(&c).unwrap();
        assert!((f.basis.column(0) - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((f.basis.column(1) - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((f.basis.column(2) - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn orthonormality_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = random_kin(&mut rng);
            for f in [vnb_basis(&c), lvlh_basis(&c)] {
                let f = f.unwrap();
                let gram = f.basis.transpose() * f.basis;
                let defect = (gram - Mat3::identity()).norm();
                assert!(defect < 1e-14, "defect {defect:.3e}");
                assert!((f.basis.determinant() - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn basis_depends_on_direction_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_kin(&mut rng);
        let mut c10 = c;
        c10.v *= 10.0;
        assert!((vnb_basis(&c).unwrap().basis - vnb_basis(&c10).unwrap().basis).norm() < 1e-13);
        let mut cr = c;
        cr.r *= 10.0;
        assert!((lvlh_basis(&c).unwrap().basis - lvlh_basis(&cr).unwrap().basis).norm() < 1e-13);
    }

    #[test]
    fn degenerate_velocity_rejected() {
        let c = kin(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1e-12, 0.0, 0.0),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        assert!(matches!(vnb_basis(&c), Err(Error::DegenerateFrame(_))));
        // radial velocity: nonzero speed but zero angular momentum
        let c = kin(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        assert!(matches!(vnb_basis(&c), Err(Error::DegenerateFrame(_))));
    }

    #[test]
    fn omega_circular_motion_oracle() {
        // planar circular-like state: a perpendicular to v, in-plane
        let (d, s) = (2.0, 0.7);
        let c = kin(
            Vec3::new(d, 0.0, 0.0),
            Vec3::new(0.0, s, 0.0),
            Vec3::new(-s * s / d, 0.0, 0.0),
            Vec3::zeros(),
        );
        let w = vnb_angular_velocity(&c).unwrap();
        assert!(w.x.abs() < 1e-15);
        assert!((w.y - s / d).abs() < 1e-14);
        assert!(w.z.abs() < 1e-15);
    }

    #[test]
    fn omega_vanishes_for_acceleration_along_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = random_kin(&mut rng);
        c.a = 1.7 * c.v;
        let w = vnb_angular_velocity(&c).unwrap();
        assert!(w.norm() < 1e-14);
    }

    #[test]
    fn omega_dot_planar_reduction() {
        // planar state with zero jerk along the co-normal: the wy_dot
        // expression collapses to 2 (a.i)(a.k) / v^2
        let c = kin(
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(-1.0, 0.6, 0.0),
            Vec3::new(0.0, -0.2, 0.0),
        );
        let f = vnb_basis(&c).unwrap();
        let i_hat: Vec3 = f.basis.column(0).into();
        let k_hat: Vec3 = f.basis.column(2).into();
        assert!(c.j.dot(&k_hat).abs() < 1e-15);
        let wd = vnb_angular_acceleration(&c).unwrap();
        let expected = 2.0 * c.a.dot(&i_hat) * c.a.dot(&k_hat) / c.v.norm_squared();
        assert!((wd.y - expected).abs() < 1e-13);
    }

    #[test]
    fn omega_dot_time_rescaling() {
        // scaling time by c scales omega by c and omega_dot by c^2
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c0 = random_kin(&mut rng);
        let s = 3.0;
        let cs = kin(c0.r, s * c0.v, s * s * c0.a, s * s * s * c0.j);
        let w0 = vnb_angular_velocity(&c0).unwrap();
        let ws = vnb_angular_velocity(&cs).unwrap();
        assert!((ws - s * w0).norm() < 1e-12 * ws.norm().max(1.0));
        let wd0 = vnb_angular_acceleration(&c0).unwrap();
        let wds = vnb_angular_acceleration(&cs).unwrap();
        assert!((wds - s * s * wd0).norm() < 1e-12 * wds.norm().max(1.0));
    }

    fn nrho_like_arc() -> (Trajectory, ModelParams) {
        let p = ModelParams::default();
        let s0 = SynodicState {
            r: Vec3::new(1.05, 0.02, 0.05),
            v: Vec3::new(0.01, -0.25, 0.05),
            t: 0.0,
            frame: Frame::BarycenterSynodic,
            model: Model::Cr3bp,
        };
        (propagate(Model::Cr3bp, &s0, 0.0, 0.6, 1e-13, &p).unwrap(), p)
    }

    /// Five-point derivative stencil for a vector-valued function of time.
    fn five_point(f: impl Fn(f64) -> Vec3, t: f64, dt: f64) -> Vec3 {
        (-f(t + 2.0 * dt) + 8.0 * f(t + dt) - 8.0 * f(t - dt) + f(t - 2.0 * dt)) / (12.0 * dt)
    }

    #[test]
    fn basis_derivative_identity_along_arc() {
        // d(e_i)/dt == omega x e_i for both frames, finite-difference check
        let (traj, p) = nrho_like_arc();
        let mut worst: f64 = 0.0;
        for i in 1..1000 {
            let t = 0.6 * i as f64 / 1001.0;
            let k = traj.kin(t).unwrap();
            let tau = (traj.r_moon(t).powi(3) / p.mu).sqrt();
            let dt = (0.005 * tau).clamp(1e-6, 3e-4);
            for build in [vnb_basis, lvlh_basis] {
                let f = build(&k).unwrap();
                let omega_m = f.basis * f.omega;
                for col in 0..3 {
                    let e: Vec3 = f.basis.column(col).into();
                    let fd = five_point(
                        |tt| build(&traj.kin(tt).unwrap()).unwrap().basis.column(col).into(),
                        t,
                        dt,
                    );
                    let analytic = omega_m.cross(&e);
                    let err = (fd - analytic).norm() / analytic.norm().max(1.0);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-6, "worst basis-derivative error {worst:.3e}");
    }

    #[test]
    fn omega_dot_matches_finite_difference_along_arc() {
        let (traj, p) = nrho_like_arc();
        let mut worst: f64 = 0.0;
        for i in 1..200 {
            let t = 0.6 * i as f64 / 201.0;
            let k = traj.kin(t).unwrap();
            let tau = (traj.r_moon(t).powi(3) / p.mu).sqrt();
            let dt = (0.005 * tau).clamp(1e-6, 3e-4);
            let f = vnb_basis(&k).unwrap();
            let fd = five_point(
                |tt| vnb_angular_velocity(&traj.kin(tt).unwrap()).unwrap(),
                t,
                dt,
            );
            let err = (fd - f.omega_dot).norm() / f.omega_dot.norm().max(1.0);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "worst omega_dot error {worst:.3e}");
    }

    #[test]
    fn lvlh_omega_dot_matches_finite_difference_along_arc() {
        let (traj, p) = nrho_like_arc();
        let mut worst: f64 = 0.0;
        for i in 1..200 {
            let t = 0.6 * i as f64 / 201.0;
            let k = traj.kin(t).unwrap();
            let tau = (traj.r_moon(t).powi(3) / p.mu).sqrt();
            let dt = (0.005 * tau).clamp(1e-6, 3e-4);
            let f = lvlh_basis(&k).unwrap();
            // compare resolved in M axes (component derivative of omega)
            let fd = five_point(
                |tt| {
                    let ft = lvlh_basis(&traj.kin(tt).unwrap()).unwrap();
                    ft.basis * ft.omega
                },
                t,
                dt,
            );
            let analytic = f.basis * f.omega_dot;
            let err = (fd - analytic).norm() / analytic.norm().max(1.0);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "worst LVLH omega_dot error {worst:.3e}");
    }

    #[test]
    fn vnb_appendix_formulas_match_generic_route() {
        // the same omega/omega_dot through unit-vector differentiation
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let c = random_kin(&mut rng);
            let f = vnb_basis(&c).unwrap();
            let h_vec = c.r.cross(&c.v);
            let h_vec_dot = c.r.cross(&c.a);
            let h_vec_ddot = c.v.cross(&c.a) + c.r.cross(&c.j);
            let (i_hat, i_d, i_dd) = unit_deriv2(c.v, c.a, c.j);
            let (j_hat, j_d, j_dd) = unit_deriv2(h_vec, h_vec_dot, h_vec_ddot);
            let k_hat = i_hat.cross(&j_hat);
            let k_d = i_d.cross(&j_hat) + i_hat.cross(&j_d);
            let k_dd = i_dd.cross(&j_hat) + 2.0 * i_d.cross(&j_d) + i_hat.cross(&j_dd);
            let omega_m = 0.5 * (i_hat.cross(&i_d) + j_hat.cross(&j_d) + k_hat.cross(&k_d));
            let omega_dot_m = 0.5 * (i_hat.cross(&i_dd) + j_hat.cross(&j_dd) + k_hat.cross(&k_dd));
            let w_generic = f.basis.transpose() * omega_m;
            let wd_generic = f.basis.transpose() * omega_dot_m;
            assert!((f.omega - w_generic).norm() < 1e-11 * f.omega.norm().max(1.0));
            assert!(
                (f.omega_dot - wd_generic).norm() < 1e-10 * f.omega_dot.norm().max(1.0),
                "diff {:.3e}",
                (f.omega_dot - wd_generic).norm()
            );
        }
    }

    #[test]
    fn local_roundtrip_and_special_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let c = random_kin(&mut rng);
            let f = vnb_basis(&c).unwrap();
            // deputy = chief maps to zero
            let dep = SynodicState {
                r: c.r,
                v: c.v,
                t: c.t,
                frame: Frame::MoonSynodic,
                model: Model::Cr3bp,
            };
            let (rho, rho_dot) = to_local(&c, &dep, &f).unwrap();
            assert!(rho.norm() < 1e-15 && rho_dot.norm() < 1e-15);
            // roundtrip
            let rho = Vec3::new(
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
            );
            let rho_dot = Vec3::new(
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
            );
            let dep = from_local(&c, &rho, &rho_dot, &f, Model::Cr3bp);
            let (rho2, rho_dot2) = to_local(&c, &dep, &f).unwrap();
            assert!((rho2 - rho).norm() < 1e-13);
            assert!((rho_dot2 - rho_dot).norm() < 1e-13);
            // along-velocity offset lands on the i axis; eps*i maps to r + eps*v_hat
            let eps = 1e-4;
            let dep = SynodicState {
                r: c.r + eps * c.v / c.v.norm(),
                v: c.v,
                t: c.t,
                frame: Frame::MoonSynodic,
                model: Model::Cr3bp,
            };
            let (rho, _) = to_local(&c, &dep, &f).unwrap();
            assert!((rho - Vec3::new(eps, 0.0, 0.0)).norm() < 1e-15);
            let back = from_local(&c, &Vec3::new(eps, 0.0, 0.0), &Vec3::zeros(), &f, Model::Cr3bp);
            assert!((back.r - (c.r + eps * c.v / c.v.norm())).norm() < 1e-15);
        }
    }

    #[test]
    fn epoch_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_kin(&mut rng);
        let f = vnb_basis(&c).unwrap();
        let dep = SynodicState {
            r: c.r,
            v: c.v,
            t: c.t + 0.5,
            frame: Frame::MoonSynodic,
            model: Model::Cr3bp,
        };
        assert!(matches!(to_local(&c, &dep, &f), Err(Error::EpochMismatch(_, _))));
    }
}
