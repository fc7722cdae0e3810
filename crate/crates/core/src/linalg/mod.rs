//! Small dense linear-algebra kernels shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices and targets the
//! desk-scale regime (total dimension `Nd` up to a few hundred). Tolerances
//! are relative to input norms.

mod banded;
mod expm;

pub use banded::BandedSystem;
pub use expm::matrix_exponential;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tolerances::SPD_RELATIVE;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetric eigendecomposition with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vector,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: Mat,
}

/// Polish an approximate eigenbasis to working precision: re-orthogonalize,
/// then run cyclic Jacobi rotations on the nearly diagonal `VᵀMV`.
fn refine_eigen(m: &Mat, v: Mat) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let n = m.nrows();
    let mut v = v.qr().q();
    let mut b = symmetrize(&(v.transpose() * m * &v));
    let scale = b.norm().max(1e-300);
    for _ in 0..20 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| b[(p, q)] * b[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = b[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (b[(q, q)] - b[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (bkp, bkq) = (b[(k, p)], b[(k, q)]);
                    b[(k, p)] = c * bkp - s * bkq;
                    b[(k, q)] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let (bpk, bqk) = (b[(p, k)], b[(q, k)]);
                    b[(p, k)] = c * bpk - s * bqk;
                    b[(q, k)] = s * bpk + c * bqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    nalgebra::SymmetricEigen {
        eigenvalues: b.diagonal(),
        eigenvectors: v,
    }
}

impl SymEig {
    pub fn new(m: &Mat) -> Self {
        let sym = symmetrize(m);
        let eig = refine_eigen(&sym, sym.clone().symmetric_eigen().eigenvectors);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut eigenvectors = Mat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self {
            eigenvalues,
            eigenvectors,
        }
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Rebuild `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let v = &self.eigenvectors;
        let scaled = Mat::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * f(self.eigenvalues[c]));
        &scaled * v.transpose()
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry `‖M − Mᵀ‖_F / max(‖M‖_F, 1e-300)`.
pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1e-300)
}

/// Scale-invariant SPD test: symmetric and `λ_min > 10⁻¹² λ_max`.
pub fn is_spd(m: &Mat) -> bool {
    if !m.is_square() || m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if asymmetry(m) > crate::tolerances::SYMMETRY_RELATIVE.max(1e-10) {
        return false;
    }
    let eig = SymEig::new(m);
    eig.max() > 0.0 && eig.min() > SPD_RELATIVE * eig.max()
}

/// Scale-invariant PSD test with the same relative slack as [`is_spd`].
pub fn is_psd(m: &Mat) -> bool {
    let eig = SymEig::new(m);
    eig.min() >= -SPD_RELATIVE * eig.max().abs().max(1.0)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymEig::new(m).min()
}

pub fn require_spd(m: &Mat, what: &str) -> Result<()> {
    if is_spd(m) {
        Ok(())
    } else {
        Err(Error::NotSpd(what.to_string()))
    }
}

/// Symmetric positive definite square root.
pub fn spd_sqrt(m: &Mat) -> Result<Mat> {
    require_spd(m, "spd_sqrt input")?;
    let s = SymEig::new(m).map(f64::sqrt);
    Ok(symmetrize(&s))
}

/// Inverse of the SPD square root.
pub fn spd_inv_sqrt(m: &Mat) -> Result<Mat> {
    require_spd(m, "spd_inv_sqrt input")?;
    let s = SymEig::new(m).map(|x| 1.0 / x.sqrt());
    Ok(symmetrize(&s))
}

/// Inverse of an SPD matrix, symmetrized.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    require_spd(m, "spd_inverse input")?;
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("spd_inverse: singular".into()))?;
    Ok(symmetrize(&inv))
}

/// General inverse via LU.
pub fn inverse(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("inverse of {}x{}", m.nrows(), m.ncols())));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
}

/// Smallest singular value.
pub fn min_singular_value(m: &Mat) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `A x = b` with LU and certify the residual.
pub fn solve_linear(a: &Mat, b: &Vector) -> Result<Vector> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "solve_linear: A is {}x{}, b has {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("solve_linear".into()))?;
    let scale = a.norm() * x.norm() + b.norm();
    let res = (a * &x - b).norm();
    if !x.iter().all(|v| v.is_finite()) || res > 1e-8 * scale.max(1e-300) {
        return Err(Error::Singular(format!(
            "solve_linear residual {res:.3e} (scale {scale:.3e})"
        )));
    }
    Ok(x)
}

/// Solve `Fᵀ X + X F = −W` for symmetric `W` and Hurwitz `F`.
///
/// Kronecker-vectorized dense solve; intended for `d ≤ 16`.
pub fn solve_lyapunov(f: &Mat, w: &Mat) -> Result<Mat> {
    let n = f.nrows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension("solve_lyapunov shapes".into()));
    }
    let abscissa = spectral_abscissa(f);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    // vec(FᵀX) = (I ⊗ Fᵀ) vec X ; vec(XF) = (Fᵀ ⊗ I) vec X  (column-major vec)
    let ft = f.transpose();
    let eye = Mat::identity(n, n);
    let op = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = Vector::from_iterator(n * n, w.iter().map(|v| -v));
    let sol = solve_linear(&op, &rhs)?;
    let x = Mat::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Stable invariant subspace of a `2n × 2n` matrix with exactly `n` stable
/// eigenvalues, returned as an orthonormal `2n × n` basis.
///
/// Uses the Newton iteration for the matrix sign function with determinant
/// scaling; `½(I − sign(H))` is the spectral projector onto the stable part.
pub fn stable_invariant_subspace(h: &Mat, dim: usize) -> Result<Mat> {
    let n = h.nrows();
    let mut z = h.clone();
    let mut converged = false;
    for _ in 0..100 {
        let inv = z.clone().try_inverse().ok_or_else(|| Error::NoStableSubspace {
            expected: dim,
            detail: "eigenvalue on the imaginary axis".into(),
        })?;
        let det = z.clone().lu().determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        z = next;
        if change <= 1e-14 * z.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        // One more unscaled pass usually settles the last digits.
        let inv = z.clone().try_inverse();
        match inv {
            Some(inv) if ((&z + &inv) * 0.5 - &z).norm() <= 1e-10 * z.norm() => {}
            _ => {
                return Err(Error::NoStableSubspace {
                    expected: dim,
                    detail: "sign iteration did not converge".into(),
                })
            }
        }
    }
    let projector = (Mat::identity(n, n) - z) * 0.5;
    let svd = projector.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::NoStableSubspace {
        expected: dim,
        detail: "SVD failed".into(),
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let kept = svd.singular_values[order[dim - 1]];
    let dropped = if dim < n {
        svd.singular_values[order[dim]]
    } else {
        0.0
    };
    if kept < 0.5 || dropped > 1e-6 {
        return Err(Error::NoStableSubspace {
            expected: dim,
            detail: format!("projector rank test failed (σ_{dim} = {kept:.3e}, σ_{} = {dropped:.3e})", dim + 1),
        });
    }
    let mut basis = Mat::zeros(n, dim);
    for (dst, &src) in order.iter().take(dim).enumerate() {
        basis.set_column(dst, &u.column(src));
    }
    Ok(basis)
}

/// Gaussian draw helper: lower Cholesky factor of an SPD covariance.
pub fn cholesky_lower(m: &Mat) -> Result<Mat> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::NotSpd("cholesky of covariance".into()))?;
    Ok(chol.l())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: &[f64]) -> Mat {
        let a = Mat::from_fn(n, n, |r, c| seed[(r * n + c) % seed.len()] + 0.1 * (r as f64 - c as f64));
        &a * a.transpose() + Mat::identity(n, n) * 0.5
    }

    #[test]
    fn spd_sqrt_examples() {
        let eye = Mat::identity(3, 3);
        assert_relative_eq!(spd_sqrt(&eye).unwrap(), eye, epsilon = 1e-15);

        let diag = Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let expect = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!(spd_sqrt(&diag).unwrap(), expect, epsilon = 1e-14);

        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = spd_sqrt(&m).unwrap();
        assert!((&s * &s - &m).norm() <= 1e-12 * m.norm());
        assert!(is_spd(&s));
    }

    #[test]
    fn spd_sqrt_rejects_indefinite() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_sqrt(&m), Err(Error::NotSpd(_))));
    }

    #[test]
    fn lyapunov_scalar() {
        let f = Mat::from_element(1, 1, -1.0);
        let w = Mat::from_element(1, 1, 1.0);
        assert_relative_eq!(solve_lyapunov(&f, &w).unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let f = Mat::from_element(1, 1, 0.5);
        let w = Mat::from_element(1, 1, 1.0);
        assert!(matches!(solve_lyapunov(&f, &w), Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn lyapunov_residual_2x2() {
        let f = Mat::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let w = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = solve_lyapunov(&f, &w).unwrap();
        let res = f.transpose() * &x + &x * &f + &w;
        assert!(res.norm() <= 1e-10 * w.norm());
        assert!(asymmetry(&x) <= 1e-12);
    }

    #[test]
    fn abscissa_and_solve() {
        let m = Mat::from_element(1, 1, -2f64.sqrt());
        assert_relative_eq!(spectral_abscissa(&m), -2f64.sqrt());
        let m2 = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -2.0]);
        assert_relative_eq!(spectral_abscissa(&m2), -1.0, epsilon = 1e-12);

        let b = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(solve_linear(&Mat::identity(3, 3), &b).unwrap(), b);
        let singular = Mat::zeros(2, 2);
        assert!(solve_linear(&singular, &Vector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn stable_subspace_of_diagonal() {
        let h = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, 2.0, -3.0, 4.0]));
        let basis = stable_invariant_subspace(&h, 2).unwrap();
        // Columns span e0 and e2.
        let proj = &basis * basis.transpose();
        assert_relative_eq!(proj[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(proj[(2, 2)], 1.0, epsilon = 1e-12);
        assert!(proj[(1, 1)].abs() < 1e-12 && proj[(3, 3)].abs() < 1e-12);
    }

    #[test]
    fn stable_subspace_needs_dichotomy() {
        let h = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(stable_invariant_subspace(&h, 1).is_err());
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(n in 1usize..=8, seed in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let m = random_spd(n, &seed);
            let s = spd_sqrt(&m).unwrap();
            prop_assert!((&s * &s - &m).norm() <= 1e-12 * m.norm());
        }

        #[test]
        fn sym_eig_reconstructs(n in 1usize..=12, seed in proptest::collection::vec(-1.0f64..1.0, 144)) {
            let a = Mat::from_fn(n, n, |r, c| seed[r * 12 + c]);
            let m = symmetrize(&a);
            let eig = SymEig::new(&m);
            let back = eig.map(|x| x);
            let err = (back - &m).norm();
            prop_assert!(err <= 1e-13 * m.norm().max(1e-300), "err {err:e} norm {:e}", m.norm());
            for k in 1..n {
                prop_assert!(eig.eigenvalues[k - 1] <= eig.eigenvalues[k]);
            }
        }

        #[test]
        fn lyapunov_solution_symmetric(seed in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let a = Mat::from_row_slice(4, 4, &seed);
            let f = &a - Mat::identity(4, 4) * (spectral_norm(&a) + 0.5);
            let w = random_spd(4, &seed);
            let x = solve_lyapunov(&f, &w).unwrap();
            let res = f.transpose() * &x + &x * &f + &w;
            prop_assert!(res.norm() <= 1e-10 * w.norm());
        }
    }
}
