//! Local Toroidal Coordinates: eigenvector normalization and propagation,
//! the T(t) map and its inverse, nonsingular/geometric conversions,
//! invariant-circle and torus sampling, and minimum-planar-separation
//! analysis.
//!
//! The toroidal frame triad {r_r(t), r_i(t), n_hat(t)} comes from the
//! position parts of the oscillatory eigenvector resolved in VNB axes. It is
//! orthonormalized only at the fixed point; elsewhere the triad is neither
//! orthogonal nor unimodular and the T(t) map carries the skew.

use crate::dynamics::{KinState, Trajectory};
use crate::error::{Error, Result};
use crate::frames::{lvlh_basis, vnb_basis};
use crate::relmotion::{plant_at, RelState};
use crate::{Mat3, Mat6, Vec3, Vec6};
use nalgebra::{Complex, SVector, Vector6};

/// Condition-number guard on the toroidal triad before inversion.
pub const MAX_BASIS_CONDITION: f64 = 1e8;

/// Toroidal basis at one epoch, resolved in VNB axes.
#[derive(Debug, Clone, Copy)]
pub struct EigenBasis {
    pub t: f64,
    pub r_r: Vec3,
    pub r_i: Vec3,
    pub rdot_r: Vec3,
    pub rdot_i: Vec3,
    pub n_hat: Vec3,
    pub n_hat_dot: Vec3,
}

impl EigenBasis {
    /// Build from the real/imaginary parts of the eigenvector solution
    /// w(t) = [rho parts; rho-rate parts].
    pub fn from_w(t: f64, w_re: &Vec6, w_im: &Vec6) -> Result<EigenBasis> {
        let r_r = Vec3::new(w_re[0], w_re[1], w_re[2]);
        let r_i = Vec3::new(w_im[0], w_im[1], w_im[2]);
        let rdot_r = Vec3::new(w_re[3], w_re[4], w_re[5]);
        let rdot_i = Vec3::new(w_im[3], w_im[4], w_im[5]);
        let m = r_r.cross(&r_i);
        let mn = m.norm();
        if mn < 1e-14 {
            return Err(Error::SingularBasis(f64::INFINITY));
        }
        let n_hat = m / mn;
        // exact derivative of the unit normal: project out the radial part
        // and divide by the cross-product magnitude
        let m_dot = rdot_r.cross(&r_i) + r_r.cross(&rdot_i);
        let n_hat_dot = (m_dot - n_hat * n_hat.dot(&m_dot)) / mn;
        Ok(EigenBasis {
            t,
            r_r,
            r_i,
            rdot_r,
            rdot_i,
            n_hat,
            n_hat_dot,
        })
    }
}

/// Orthogonalize and scale an oscillatory eigenvector at the fixed point: a
/// complex phase rotation diagonalizes the Gram matrix of the position
/// parts, then a uniform scaling makes the real position part unimodular.
/// The sign convention makes the largest component of r_r positive.
pub fn normalize_fixed_point(w: &Vector6<Complex<f64>>) -> Result<Vector6<Complex<f64>>> {
    let p_r = Vec3::new(w[0].re, w[1].re, w[2].re);
    let p_i = Vec3::new(w[0].im, w[1].im, w[2].im);
    if p_r.cross(&p_i).norm() < 1e-14 * p_r.norm().max(p_i.norm()).max(1e-300) {
        return Err(Error::SingularBasis(f64::INFINITY));
    }
    let a = p_r.norm_squared();
    let b = p_i.norm_squared();
    let c = p_r.dot(&p_i);
    let two_phi = (2.0 * c).atan2(b - a);
    let mut phi = 0.5 * two_phi;
    // choose the rotation that makes r_r the major axis
    let major = |phi: f64| {
        let pr = p_r * phi.cos() - p_i * phi.sin();
        pr.norm_squared()
    };
    if major(phi) < major(phi + std::f64::consts::FRAC_PI_2) {
        phi += std::f64::consts::FRAC_PI_2;
    }
    let rot = Complex::new(phi.cos(), phi.sin());
    let mut out: Vector6<Complex<f64>> = w * rot;
    let pr = Vec3::new(out[0].re, out[1].re, out[2].re);
    let scale = pr.norm();
    if scale < 1e-300 {
        return Err(Error::SingularBasis(f64::INFINITY));
    }
    out /= Complex::new(scale, 0.0);
    // deterministic sign
    let pr = Vec3::new(out[0].re, out[1].re, out[2].re);
    let k = pr.iamax();
    if pr[k] < 0.0 {
        out = -out;
    }
    Ok(out)
}

/// Eigenbasis history along a chief trajectory: the eigenvector solution is
/// re-integrated through the grid (never interpolated).
#[derive(Debug, Clone)]
pub struct BasisHistory {
    pub epochs: Vec<f64>,
    pub bases: Vec<EigenBasis>,
    pub w_re: Vec<Vec6>,
    pub w_im: Vec<Vec6>,
    pub chief_id: String,
}

impl BasisHistory {
    pub fn basis_at(&self, t: f64) -> Result<&EigenBasis> {
        let idx = self
            .epochs
            .iter()
            .position(|&e| (e - t).abs() < 1e-9)
            .ok_or_else(|| Error::GridMismatch(format!("epoch {t} not in basis history")))?;
        Ok(&self.bases[idx])
    }
}

/// Propagate the eigenvector by the linear dynamics w_dot = A(t) w through
/// the grid epochs, storing the toroidal basis at each.
pub fn propagate_basis(
    w0: &Vector6<Complex<f64>>,
    chief: &Trajectory,
    grid: &[f64],
    tol: f64,
) -> Result<BasisHistory> {
    if grid.is_empty() {
        return Err(Error::Config("empty basis grid".into()));
    }
    let mut y = SVector::<f64, 12>::zeros();
    for i in 0..6 {
        y[i] = w0[i].re;
        y[6 + i] = w0[i].im;
    }
    let chief_cl = chief.clone();
    let rhs = move |t: f64, y: &SVector<f64, 12>| -> SVector<f64, 12> {
        let a = match plant_at(&chief_cl, t) {
            Ok(a) => a,
            Err(_) => return SVector::repeat(f64::NAN),
        };
        let wr = Vec6::from_iterator(y.iter().take(6).copied());
        let wi = Vec6::from_iterator(y.iter().skip(6).copied());
        let dwr = a * wr;
        let dwi = a * wi;
        let mut dy = SVector::<f64, 12>::zeros();
        for i in 0..6 {
            dy[i] = dwr[i];
            dy[6 + i] = dwi[i];
        }
        dy
    };
    let mut epochs = Vec::with_capacity(grid.len());
    let mut bases = Vec::with_capacity(grid.len());
    let mut w_re = Vec::with_capacity(grid.len());
    let mut w_im = Vec::with_capacity(grid.len());
    let mut t_cur = grid[0];
    let mut push = |t: f64, y: &SVector<f64, 12>| -> Result<()> {
        let wr = Vec6::from_iterator(y.iter().take(6).copied());
        let wi = Vec6::from_iterator(y.iter().skip(6).copied());
        bases.push(EigenBasis::from_w(t, &wr, &wi)?);
        epochs.push(t);
        w_re.push(wr);
        w_im.push(wi);
        Ok(())
    };
    push(t_cur, &y)?;
    for &t_next in &grid[1..] {
        let sol = crate::integrate::solve(
            &rhs,
            t_cur,
            y,
            t_next,
            &crate::integrate::Options::tol(tol).no_dense(),
        )?;
        y = sol.y_end;
        t_cur = t_next;
        push(t_cur, &y)?;
    }
    Ok(BasisHistory {
        epochs,
        bases,
        w_re,
        w_im,
        chief_id: String::new(),
    })
}

/// The T(t) map from nonsingular LTC to Cartesian VNB relative coordinates,
/// and its closed-form inverse.
pub fn t_matrix(basis: &EigenBasis) -> Result<(Mat6, Mat6)> {
    let r = Mat3::from_columns(&[basis.r_r, basis.r_i, basis.n_hat]);
    let rp = Mat3::from_columns(&[basis.rdot_r, basis.rdot_i, basis.n_hat_dot]);
    let svd = r.svd(false, false);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[2];
    if smin <= 0.0 || smax / smin > MAX_BASIS_CONDITION {
        return Err(Error::SingularBasis(if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        }));
    }
    let r_inv = r.try_inverse().ok_or(Error::SingularBasis(f64::INFINITY))?;
    let mut t = Mat6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    t.fixed_view_mut::<3, 3>(3, 0).copy_from(&rp);
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    let mut t_inv = Mat6::zeros();
    t_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_inv);
    t_inv
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-r_inv * rp * r_inv));
    t_inv.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_inv);
    Ok((t, t_inv))
}

/// Nonsingular local toroidal coordinates [alpha, beta, h, rates].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtcState {
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub h_dot: f64,
    pub t: f64,
}

impl LtcState {
    pub fn as_vec6(&self) -> Vec6 {
        Vec6::new(
            self.alpha,
            self.beta,
            self.h,
            self.alpha_dot,
            self.beta_dot,
            self.h_dot,
        )
    }

    pub fn from_vec6(t: f64, z: &Vec6) -> Self {
        LtcState {
            alpha: z[0],
            beta: z[1],
            h: z[2],
            alpha_dot: z[3],
            beta_dot: z[4],
            h_dot: z[5],
            t,
        }
    }
}

/// Geometric local toroidal coordinates [eps, theta, h, rates]; theta = 0
/// points along +r_r at the anchor epoch, measured by atan2(beta, alpha).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoLtcState {
    pub eps: f64,
    pub theta: f64,
    pub h: f64,
    pub eps_dot: f64,
    pub theta_dot: f64,
    pub h_dot: f64,
    pub t: f64,
}

/// Map a Cartesian VNB relative state into nonsingular LTC.
pub fn cart_to_ltc(x: &RelState, basis: &EigenBasis) -> Result<LtcState> {
    let (_, t_inv) = t_matrix(basis)?;
    Ok(LtcState::from_vec6(x.t, &(t_inv * x.as_vec6())))
}

/// Map nonsingular LTC back to a Cartesian VNB relative state.
pub fn ltc_to_cart(z: &LtcState, basis: &EigenBasis) -> Result<RelState> {
    let (t, _) = t_matrix(basis)?;
    Ok(RelState::from_vec6(z.t, &(t * z.as_vec6())))
}

/// Polar form of the eigenspace components with chain-rule rates.
pub fn ns_to_geo(z: &LtcState) -> Result<GeoLtcState> {
    let eps = (z.alpha * z.alpha + z.beta * z.beta).sqrt();
    if eps < 1e-12 {
        return Err(Error::PhaseUndefined);
    }
    Ok(GeoLtcState {
        eps,
        theta: z.beta.atan2(z.alpha),
        h: z.h,
        eps_dot: (z.alpha * z.alpha_dot + z.beta * z.beta_dot) / eps,
        theta_dot: (z.alpha * z.beta_dot - z.beta * z.alpha_dot) / (eps * eps),
        h_dot: z.h_dot,
        t: z.t,
    })
}

/// Inverse of [`ns_to_geo`].
pub fn geo_to_ns(g: &GeoLtcState) -> Result<LtcState> {
    if g.eps < 0.0 {
        return Err(Error::Config(format!("negative circle radius {}", g.eps)));
    }
    let (s, c) = g.theta.sin_cos();
    Ok(LtcState {
        alpha: g.eps * c,
        beta: g.eps * s,
        h: g.h,
        alpha_dot: g.eps_dot * c - g.eps * g.theta_dot * s,
        beta_dot: g.eps_dot * s + g.eps * g.theta_dot * c,
        h_dot: g.h_dot,
        t: g.t,
    })
}

/// Per-axis amplitude and phase of the osculating invariant circle's
/// position trace: the x component is amp.x * sin(theta + phase.x) for a
/// unit circle, and similarly for y and z.
#[derive(Debug, Clone, Copy)]
pub struct AxisAmplitudes {
    pub amp: Vec3,
    pub phase: Vec3,
}

pub fn axis_amplitudes(basis: &EigenBasis) -> AxisAmplitudes {
    let mut amp = Vec3::zeros();
    let mut phase = Vec3::zeros();
    for k in 0..3 {
        let c_cos = basis.r_r[k]; // multiplies cos(theta)
        let c_sin = basis.r_i[k]; // multiplies sin(theta)
        amp[k] = (c_cos * c_cos + c_sin * c_sin).sqrt();
        phase[k] = c_cos.atan2(c_sin);
    }
    AxisAmplitudes { amp, phase }
}

/// Sample the osculating invariant circle of radius `eps` at `n` phases.
pub fn invariant_circle(basis: &EigenBasis, eps: f64, n: usize) -> Result<Vec<RelState>> {
    if n < 3 {
        return Err(Error::Config("need at least 3 circle samples".into()));
    }
    let wr = Vec6::new(
        basis.r_r.x,
        basis.r_r.y,
        basis.r_r.z,
        basis.rdot_r.x,
        basis.rdot_r.y,
        basis.rdot_r.z,
    );
    let wi = Vec6::new(
        basis.r_i.x,
        basis.r_i.y,
        basis.r_i.z,
        basis.rdot_i.x,
        basis.rdot_i.y,
        basis.rdot_i.z,
    );
    Ok((0..n)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let psi = (wr * theta.cos() + wi * theta.sin()) * eps;
            RelState::from_vec6(basis.t, &psi)
        })
        .collect())
}

/// Torus surface mesh: invariant circles continued along the orbit period.
#[derive(Debug, Clone)]
pub struct QpritMesh {
    pub epochs: Vec<f64>,
    pub n_theta: usize,
    pub eps: f64,
    /// Ring-major positions (VNB axes, nondim).
    pub points: Vec<Vec3>,
}

/// Generate the torus mesh over one orbit period from the fixed-point
/// eigenvector: `n_t` rings of `n_theta` samples each.
pub fn qprit_mesh(
    orbit: &crate::orbits::PeriodicOrbit,
    mode: &crate::orbits::OscillatoryMode,
    eps: f64,
    n_t: usize,
    n_theta: usize,
    tol: f64,
) -> Result<QpritMesh> {
    let grid: Vec<f64> = (0..n_t)
        .map(|i| orbit.t0_anchor + orbit.period * i as f64 / n_t as f64)
        .collect();
    let hist = propagate_basis(&mode.w0, &orbit.dense, &grid, tol)?;
    let mut points = Vec::with_capacity(n_t * n_theta);
    for basis in &hist.bases {
        for s in invariant_circle(basis, eps, n_theta)? {
            points.push(s.rho);
        }
    }
    Ok(QpritMesh {
        epochs: grid,
        n_theta,
        eps,
        points,
    })
}

/// Two-dimensional projection planes of the co-moving frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Vn,
    Nb,
    Bv,
    Xy,
    Yz,
    Zx,
}

impl Plane {
    pub fn parse(s: &str) -> Result<Plane> {
        match s.to_ascii_uppercase().as_str() {
            "VN" => Ok(Plane::Vn),
            "NB" => Ok(Plane::Nb),
            "BV" => Ok(Plane::Bv),
            "XY" => Ok(Plane::Xy),
            "YZ" => Ok(Plane::Yz),
            "ZX" => Ok(Plane::Zx),
            other => Err(Error::Config(format!("unknown plane '{other}'"))),
        }
    }

    fn axes(self) -> (usize, usize) {
        match self {
            Plane::Vn | Plane::Xy => (0, 1),
            Plane::Nb | Plane::Yz => (1, 2),
            Plane::Bv | Plane::Zx => (2, 0),
        }
    }

    pub fn is_lvlh(self) -> bool {
        matches!(self, Plane::Xy | Plane::Yz | Plane::Zx)
    }
}

/// Minimum planar separation of the unit invariant circle: the smallest
/// singular value of the basis position parts projected onto the plane.
/// LVLH planes need the chief kinematics to rotate the (VNB-resolved)
/// basis into LVLH axes. Scales linearly with the circle radius.
pub fn min_planar_separation(
    basis: &EigenBasis,
    plane: Plane,
    chief: Option<&KinState>,
) -> Result<f64> {
    let (mut pr, mut pi) = (basis.r_r, basis.r_i);
    if plane.is_lvlh() {
        let chief = chief.ok_or_else(|| {
            Error::Config("LVLH-plane separation needs the chief kinematics".into())
        })?;
        let rot = lvlh_basis(chief)?.basis.transpose() * vnb_basis(chief)?.basis;
        pr = rot * pr;
        pi = rot * pi;
    }
    let (a, b) = plane.axes();
    let m = nalgebra::Matrix2::new(pr[a], pi[a], pr[b], pi[b]);
    let svd = m.svd(false, false);
    Ok(svd.singular_values[1].min(svd.singular_values[0]))
}

/// STM of the nonsingular LTC over [t, t + dt]:
/// Phi_ltc = T^-1(t+dt) Phi(t+dt, t) T(t).
pub fn ltc_stm(
    t: f64,
    dt: f64,
    stm: impl Fn(f64, f64) -> Result<Mat6>,
    basis: impl Fn(f64) -> Result<EigenBasis>,
) -> Result<Mat6> {
    let (t_mat0, _) = t_matrix(&basis(t)?)?;
    let (_, t_inv1) = t_matrix(&basis(t + dt)?)?;
    Ok(t_inv1 * stm(t, t + dt)? * t_mat0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_w(rng: &mut ChaCha8Rng) -> Vector6<Complex<f64>> {
        Vector6::from_fn(|_, _| {
            Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn gram_offdiag(w: &Vector6<Complex<f64>>) -> f64 {
        let pr = Vec3::new(w[0].re, w[1].re, w[2].re);
        let pi = Vec3::new(w[0].im, w[1].im, w[2].im);
        pr.dot(&pi).abs()
    }

    #[test]
    fn normalize_gram_diagonal_and_unit_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let w = random_w(&mut rng);
            let n = normalize_fixed_point(&w).unwrap();
            assert!(gram_offdiag(&n) < 1e-12);
            let pr = Vec3::new(n[0].re, n[1].re, n[2].re);
            let pi = Vec3::new(n[0].im, n[1].im, n[2].im);
            assert!((pr.norm() - 1.0).abs() < 1e-12);
            assert!(pi.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn normalize_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random_w(&mut rng);
        let n1 = normalize_fixed_point(&w).unwrap();
        let n2 = normalize_fixed_point(&n1).unwrap();
        assert!((n2 - n1).norm() < 1e-12);
    }

    #[test]
    fn normalize_invariant_to_complex_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let w = random_w(&mut rng);
            let n1 = normalize_fixed_point(&w).unwrap();
            let c = Complex::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            if c.norm() < 0.1 {
                continue;
            }
            let n2 = normalize_fixed_point(&(w * c)).unwrap();
            // equal up to the sign of the imaginary part
            let pr1 = Vec3::new(n1[0].re, n1[1].re, n1[2].re);
            let pr2 = Vec3::new(n2[0].re, n2[1].re, n2[2].re);
            assert!((pr1 - pr2).norm() < 1e-10, "r_r differs");
            let pi1 = Vec3::new(n1[0].im, n1[1].im, n1[2].im);
            let pi2 = Vec3::new(n2[0].im, n2[1].im, n2[2].im);
            assert!(
                (pi1 - pi2).norm() < 1e-10 || (pi1 + pi2).norm() < 1e-10,
                "r_i differs beyond sign"
            );
        }
    }

    #[test]
    fn normalize_rejects_rank_deficient() {
        // collinear position parts
        let mut w = Vector6::from_element(Complex::new(0.0, 0.0));
        w[0] = Complex::new(1.0, 2.0);
        w[1] = Complex::new(2.0, 4.0);
        w[2] = Complex::new(-1.0, -2.0);
        assert!(normalize_fixed_point(&w).is_err());
    }

    fn synthetic_basis(rng: &mut ChaCha8Rng) -> EigenBasis {
        let w = random_w(rng);
        let n = normalize_fixed_point(&w).unwrap();
        let w_re = Vec6::from_fn(|i, _| n[i].re);
        let w_im = Vec6::from_fn(|i, _| n[i].im);
        EigenBasis::from_w(0.0, &w_re, &w_im).unwrap()
    }

    #[test]
    fn n_hat_unimodular_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let b = synthetic_basis(&mut rng);
            assert!((b.n_hat.norm() - 1.0).abs() < 1e-13);
            assert!(b.n_hat.dot(&b.r_r).abs() < 1e-13);
            assert!(b.n_hat.dot(&b.r_i).abs() < 1e-13);
            // derivative orthogonal to n_hat preserves the norm
            assert!(b.n_hat.dot(&b.n_hat_dot).abs() < 1e-13);
        }
    }

    #[test]
    fn t_matrix_structure_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..50 {
            let b = synthetic_basis(&mut rng);
            let (t, t_inv) = t_matrix(&b).unwrap();
            // upper-right block exactly zero
            assert_eq!(t.fixed_view::<3, 3>(0, 3).norm(), 0.0);
            let prod = t * t_inv;
            assert!((prod - Mat6::identity()).norm() < 1e-12);
            // closed form matches the generic inverse
            let generic = t.try_inverse().unwrap();
            assert!((t_inv - generic).norm() < 1e-10 * generic.norm());
        }
    }

    #[test]
    fn cart_ltc_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..100 {
            let b = synthetic_basis(&mut rng);
            let x = RelState::from_vec6(
                0.0,
                &Vec6::from_fn(|_, _| rng.gen_range(-1e-3..1e-3)),
            );
            let z = cart_to_ltc(&x, &b).unwrap();
            let back = ltc_to_cart(&z, &b).unwrap();
            assert!((back.as_vec6() - x.as_vec6()).norm() < 1e-12);
            // zero maps to zero
            let z0 = cart_to_ltc(&RelState::from_vec6(0.0, &Vec6::zeros()), &b).unwrap();
            assert_eq!(z0.as_vec6(), Vec6::zeros());
        }
    }

    #[test]
    fn on_circle_state_has_pure_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let b = synthetic_basis(&mut rng);
        let eps = 0.3;
        let x = RelState {
            rho: b.r_r * eps,
            rho_dot: b.rdot_r * eps,
            t: 0.0,
        };
        let z = cart_to_ltc(&x, &b).unwrap();
        let expect = Vec6::new(eps, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((z.as_vec6() - expect).norm() < 1e-12);
    }

    #[test]
    fn geo_roundtrip_and_phase_error() {
        let g = GeoLtcState {
            eps: 0.5,
            theta: 4.2,
            h: 0.01,
            eps_dot: -0.2,
            theta_dot: 0.7,
            h_dot: 0.05,
            t: 1.0,
        };
        let z = geo_to_ns(&g).unwrap();
        let g2 = ns_to_geo(&z).unwrap();
        assert!((g2.eps - g.eps).abs() < 1e-14);
        let dtheta = (g2.theta - g.theta + std::f64::consts::PI)
            .rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        assert!(dtheta.abs() < 1e-14);
        assert!((g2.eps_dot - g.eps_dot).abs() < 1e-14);
        assert!((g2.theta_dot - g.theta_dot).abs() < 1e-14);
        // unit alpha maps to (eps, theta) = (1, 0)
        let z = LtcState {
            alpha: 1.0,
            beta: 0.0,
            h: 0.0,
            alpha_dot: 0.0,
            beta_dot: 0.0,
            h_dot: 0.0,
            t: 0.0,
        };
        let g = ns_to_geo(&z).unwrap();
        assert_eq!((g.eps, g.theta), (1.0, 0.0));
        // undefined phase at the origin
        let z = LtcState {
            alpha: 0.0,
            beta: 0.0,
            h: 0.1,
            alpha_dot: 0.3,
            beta_dot: 0.0,
            h_dot: 0.0,
            t: 0.0,
        };
        assert!(matches!(ns_to_geo(&z), Err(Error::PhaseUndefined)));
    }

    #[test]
    fn invariant_circle_amplitudes_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let b = synthetic_basis(&mut rng);
        let eps = 2.5e-4;
        let n = 64;
        let samples = invariant_circle(&b, eps, n).unwrap();
        let amps = axis_amplitudes(&b);
        for (j, s) in samples.iter().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            for k in 0..3 {
                let expect = eps * amps.amp[k] * (theta + amps.phase[k]).sin();
                assert!((s.rho[k] - expect).abs() < 1e-12, "axis {k}");
            }
        }
        // zero radius collapses to the origin
        for s in invariant_circle(&b, 0.0, 8).unwrap() {
            assert_eq!(s.rho, Vec3::zeros());
            assert_eq!(s.rho_dot, Vec3::zeros());
        }
        // doubling eps doubles every sample
        let twice = invariant_circle(&b, 2.0 * eps, n).unwrap();
        for (s1, s2) in samples.iter().zip(&twice) {
            assert!((s2.rho - 2.0 * s1.rho).norm() < 1e-15);
        }
    }

    #[test]
    fn planar_separation_svd_vs_dense_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..10 {
            let b = synthetic_basis(&mut rng);
            for plane in [Plane::Vn, Plane::Nb, Plane::Bv] {
                let sep = min_planar_separation(&b, plane, None).unwrap();
                // brute-force sweep over the circle phase
                let (ai, bi) = plane.axes();
                let mut brute = f64::MAX;
                let n = 100_000;
                for j in 0..n {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    let p = b.r_r * theta.cos() + b.r_i * theta.sin();
                    brute = brute.min((p[ai] * p[ai] + p[bi] * p[bi]).sqrt());
                }
                assert!((sep - brute).abs() < 1e-6, "plane {plane:?}: {sep} vs {brute}");
            }
        }
    }

    #[test]
    fn planar_separation_full_circle_in_plane() {
        // orthonormal r_r, r_i spanning the VN plane: separation is exactly 1
        let w_re = Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let w_im = Vec6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let b = EigenBasis::from_w(0.0, &w_re, &w_im).unwrap();
        let sep = min_planar_separation(&b, Plane::Vn, None).unwrap();
        assert!((sep - 1.0).abs() < 1e-14);
        // homogeneity in the circle radius
        let b2 = EigenBasis::from_w(0.0, &(w_re * 3.0), &(w_im * 3.0)).unwrap();
        let sep2 = min_planar_separation(&b2, Plane::Vn, None).unwrap();
        assert!((sep2 - 3.0).abs() < 1e-13);
    }

    #[test]
    fn ltc_stm_identity_at_zero_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let b = synthetic_basis(&mut rng);
        let phi = ltc_stm(
            0.0,
            0.0,
            |_, _| Ok(Mat6::identity()),
            |_| Ok(b),
        )
        .unwrap();
        assert!((phi - Mat6::identity()).norm() < 1e-12);
    }
}
