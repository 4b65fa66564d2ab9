//! Outer-loop design: discrete LQR by Riccati iteration, extended-model
//! assembly and the acceleration-to-attitude map.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::sysmodel::spectral_radius;

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITERS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unstabilizable or ill-conditioned pair (Riccati iteration did not converge in {0} iterations)")]
    NoConvergence(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("R is not positive definite")]
    IndefiniteR,
}

/// Infinite-horizon LQR solution with control law `u = −K ξ̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub spectral_radius: f64,
    pub iterations: usize,
}

impl LqrDesign {
    /// Max-entry residual of the algebraic Riccati equation at `P`.
    pub fn riccati_residual(&self) -> f64 {
        riccati_map(&self.a, &self.b, &self.q, &self.r, &self.p)
            .map(|next| (next - &self.p).amax())
            .unwrap_or(f64::INFINITY)
    }

    pub fn control(&self, error: &DVector<f64>) -> DVector<f64> {
        -(&self.k * error)
    }
}

/// `Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let at_p = a.transpose() * p;
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let gain = s.cholesky()?.solve(&(&bt_p * a));
    Some(q + &at_p * a - (&at_p * b) * gain)
}

pub fn lqr_design(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrDesign, ControlError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(ControlError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if r.clone().cholesky().is_none() {
        return Err(ControlError::IndefiniteR);
    }
    let mut p = q.clone();
    for it in 1..=RICCATI_MAX_ITERS {
        let next = riccati_map(a, b, q, r, &p).ok_or(ControlError::NoConvergence(it))?;
        let change = (&next - &p).amax();
        let scale = next.amax().max(1.0);
        p = (&next + next.transpose()) * 0.5;
        if !change.is_finite() {
            return Err(ControlError::NoConvergence(it));
        }
        if change <= RICCATI_TOL * scale {
            let bt_p = b.transpose() * &p;
            let s = r + &bt_p * b;
            let k = s
                .cholesky()
                .ok_or(ControlError::IndefiniteR)?
                .solve(&(&bt_p * a));
            let closed = a - b * &k;
            return Ok(LqrDesign {
                a: a.clone(),
                b: b.clone(),
                q: q.clone(),
                r: r.clone(),
                p,
                k,
                spectral_radius: spectral_radius(&closed),
                iterations: it,
            });
        }
    }
    Err(ControlError::NoConvergence(RICCATI_MAX_ITERS))
}

/// Local linear model `x⁺ ≈ A x + B u` of a step map.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Central-difference Jacobians of `step(x, u)` at `(x0, u0)`.
pub fn linearize<F>(step: F, x0: &DVector<f64>, u0: &DVector<f64>, probe: f64) -> Linearization
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let n = x0.len();
    let m = u0.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += probe;
        xm[j] -= probe;
        a.set_column(j, &((step(&xp, u0) - step(&xm, u0)) / (2.0 * probe)));
    }
    for j in 0..m {
        let mut up = u0.clone();
        let mut um = u0.clone();
        up[j] += probe;
        um[j] -= probe;
        b.set_column(j, &((step(x0, &up) - step(x0, &um)) / (2.0 * probe)));
    }
    Linearization { a, b }
}

/// Mechanical states stacked with the reference acceleration model:
///
/// ```text
/// [x⁺]   [F  G ] [x]   [0  ]
/// [a⁺] = [0  Aₘ] [a] + [Bₘ] u
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub plant_dim: usize,
    pub accel_dim: usize,
}

pub fn build_extended_model(
    plant: &Linearization,
    ref_a: &DMatrix<f64>,
    ref_b: &DMatrix<f64>,
) -> Result<ExtendedModel, ControlError> {
    let n = plant.a.nrows();
    let m = ref_a.nrows();
    if plant.a.ncols() != n || plant.b.shape() != (n, m) || ref_a.ncols() != m || ref_b.nrows() != m {
        return Err(ControlError::Dimension(format!(
            "plant A {:?}, coupling {:?}, Aₘ {:?}, Bₘ {:?}",
            plant.a.shape(),
            plant.b.shape(),
            ref_a.shape(),
            ref_b.shape()
        )));
    }
    let p = ref_b.ncols();
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    a.view_mut((0, n), (n, m)).copy_from(&plant.b);
    a.view_mut((n, n), (m, m)).copy_from(ref_a);
    let mut b = DMatrix::zeros(n + m, p);
    b.view_mut((n, 0), (m, p)).copy_from(ref_b);
    Ok(ExtendedModel { a, b, plant_dim: n, accel_dim: m })
}

/// Commanded pitch and roll `(θ_c, φ_c)` for a horizontal acceleration
/// command at constant height.
pub fn attitude_from_accel(ux: f64, uy: f64, g: f64) -> (f64, f64) {
    let pitch = (ux / g).atan();
    let roll = (-uy / (ux * ux + g * g).sqrt()).atan();
    (pitch, roll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn scalar_riccati() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let d = lqr_design(&DMatrix::from_element(1, 1, 0.5), &one, &one, &one).unwrap();
        let p = d.p[(0, 0)];
        // P = 0.25 P − 0.25 P² / (1 + P) + 1
        assert_relative_eq!(p, 0.25 * p - 0.25 * p * p / (1.0 + p) + 1.0, epsilon = 1e-12);
        // closed form of P² = 0.25 P + 1
        assert_relative_eq!(p, 1.1327822185373186, epsilon = 1e-10);
        assert_relative_eq!(d.k[(0, 0)], 0.2655644370746374, epsilon = 1e-10);
        assert!(d.riccati_residual() < 1e-8);
    }

    #[test]
    fn unactuated_stable_system_gives_lyapunov_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::zeros(2, 1);
        let q = DMatrix::identity(2, 2);
        let d = lqr_design(&a, &b, &q, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(d.k, DMatrix::zeros(1, 2));
        let lyap = a.transpose() * &d.p * &a + &q;
        assert!((lyap - &d.p).amax() < 1e-10);
    }

    #[test]
    fn double_integrator_is_stabilized() {
        let t = 0.1;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5 * t * t, t]);
        let d = lqr_design(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert!(d.spectral_radius < 1.0);
        assert!(d.riccati_residual() < 1e-8);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::zeros(1, 1);
        let one = DMatrix::identity(1, 1);
        assert!(matches!(lqr_design(&a, &b, &one, &one), Err(ControlError::NoConvergence(_))));
        assert_eq!(lqr_design(&a, &one, &one, &DMatrix::from_element(1, 1, -1.0)), Err(ControlError::IndefiniteR));
    }

    #[test]
    fn extended_model_blocks() {
        let lin = Linearization { a: DMatrix::identity(2, 2) * 0.9, b: DMatrix::zeros(2, 2) };
        let am = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.65, 0.65]));
        let bm = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.35, 0.35]));
        let ext = build_extended_model(&lin, &am, &bm).unwrap();
        assert_eq!(ext.a.view((2, 2), (2, 2)).clone_owned(), am);
        assert_eq!(ext.b.view((2, 0), (2, 2)).clone_owned(), bm);
        assert_eq!(ext.b.view((0, 0), (2, 2)).clone_owned(), DMatrix::zeros(2, 2));
        // block-triangular: spectrum is the union of the diagonal blocks
        let mut eig: Vec<f64> = ext.a.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(f64::total_cmp);
        for (e, want) in eig.iter().zip([0.65, 0.65, 0.9, 0.9]) {
            assert_relative_eq!(*e, want, epsilon = 1e-12);
        }
        let bad = Linearization { a: DMatrix::identity(2, 2), b: DMatrix::zeros(2, 1) };
        assert!(build_extended_model(&bad, &am, &bm).is_err());
    }

    #[test]
    fn linearize_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.7]);
        let lin = linearize(|x, u| &a * x + &b * u, &DVector::from_row_slice(&[0.2, 0.1]), &DVector::zeros(1), 1e-6);
        assert!((lin.a - &a).amax() < 1e-9);
        assert!((lin.b - &b).amax() < 1e-9);
    }

    #[test]
    fn attitude_examples() {
        assert_eq!(attitude_from_accel(0.0, 0.0, 9.81), (0.0, 0.0));
        let (p, r) = attitude_from_accel(9.81, 0.0, 9.81);
        assert_relative_eq!(p, FRAC_PI_4, epsilon = 1e-15);
        assert_eq!(r, 0.0);
        let (p, r) = attitude_from_accel(1.0, 1.0, 9.81);
        assert_relative_eq!(p, 0.10158590543965393, epsilon = 1e-12);
        assert_relative_eq!(r, -0.10106575632340062, epsilon = 1e-12);
    }

    #[test]
    fn attitude_is_odd() {
        for (ux, uy) in [(0.3, -1.2), (2.0, 0.5), (-4.0, 3.0)] {
            let (p, r) = attitude_from_accel(ux, uy, 9.81);
            let (pn, _) = attitude_from_accel(-ux, uy, 9.81);
            let (_, rn) = attitude_from_accel(ux, -uy, 9.81);
            assert_eq!(pn, -p);
            assert_eq!(rn, -r);
        }
    }
}
