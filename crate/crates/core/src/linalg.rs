//! Dense complex linear algebra shared by every module.
//!
//! Matrices are `nalgebra` dynamic matrices of `Complex64`. Dimensions are
//! small (d ≤ 16 for the system, d·2ⁿ for dilated meter states), so
//! everything is dense and allocation-happy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square complex matrix acting on the system space (or an extension of it).
pub type Operator = DMatrix<Complex64>;

/// Complex column vector.
pub type StateVector = DVector<Complex64>;

/// Absolute tolerance (spectral norm) for Hermiticity checks.
pub const TOL_HERM: f64 = 1e-10;

/// Eigenvalue floor below which a matrix is not treated as PSD.
pub const TOL_PSD: f64 = 1e-10;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn identity(d: usize) -> Operator {
    Operator::identity(d, d)
}

/// Real diagonal matrix.
pub fn diag(values: &[f64]) -> Operator {
    Operator::from_diagonal(&StateVector::from_iterator(
        values.len(),
        values.iter().map(|&x| re(x)),
    ))
}

/// Builds a matrix from row-major `(re, im)` pairs.
pub fn from_rows(rows: &[&[(f64, f64)]]) -> Operator {
    let d = rows.len();
    Operator::from_fn(d, rows[0].len(), |i, j| c64(rows[i][j].0, rows[i][j].1))
}

pub fn state(amplitudes: &[(f64, f64)]) -> StateVector {
    StateVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|&(a, b)| c64(a, b)))
}

pub fn basis(d: usize, k: usize) -> StateVector {
    let mut v = StateVector::zeros(d);
    v[k] = re(1.0);
    v
}

pub fn sigma_z() -> Operator {
    diag(&[1.0, -1.0])
}

pub fn outer(v: &StateVector) -> Operator {
    v * v.adjoint()
}

pub fn is_finite(a: &Operator) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn trace(a: &Operator) -> Complex64 {
    a.diagonal().iter().sum()
}

pub fn hermitian_part(a: &Operator) -> Operator {
    (a + a.adjoint()).scale(0.5)
}

/// Spectral norm ‖A‖₂ = sqrt(λ_max(A†A)).
pub fn spectral_norm(a: &Operator) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    let eig = SymmetricEigen::new(hermitian_part(&gram));
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

/// ‖A − A†‖₂
pub fn hermiticity_residual(a: &Operator) -> f64 {
    spectral_norm(&(a - a.adjoint()))
}

/// Eigendecomposition of the Hermitian part of `a`: eigenvalues ascending.
pub fn hermitian_eig(a: &Operator) -> (DVector<f64>, Operator) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Operator::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(a: &Operator) -> f64 {
    let (values, _) = hermitian_eig(a);
    values.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn check_hermitian(a: &Operator, what: &str) -> Result<()> {
    let residual = hermiticity_residual(a);
    if residual > TOL_HERM {
        return Err(Error::NotHermitian { what: what.to_string(), residual });
    }
    Ok(())
}

/// Positive square root of a Hermitian PSD matrix.
///
/// Eigenvalues in `[-TOL_PSD, 0)` are clipped to zero before rooting.
pub fn psd_sqrt(a: &Operator) -> Result<Operator> {
    check_hermitian(a, "matrix")?;
    let (values, vectors) = hermitian_eig(a);
    let min_eig = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -TOL_PSD {
        return Err(Error::TooNegative { min_eig });
    }
    let roots = DVector::from_iterator(values.len(), values.iter().map(|&x| re(x.max(0.0).sqrt())));
    Ok(&vectors * Operator::from_diagonal(&roots) * vectors.adjoint())
}

/// Matrix exponential (scaling and squaring with a Padé kernel).
pub fn expm(a: &Operator) -> Operator {
    a.exp()
}

/// Trace distance ½‖A − B‖₁ between Hermitian matrices.
pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    let (values, _) = hermitian_eig(&(a - b));
    0.5 * values.iter().map(|x| x.abs()).sum::<f64>()
}

/// Free evolution e^{−iHτ} computed from a cached eigendecomposition of H.
#[derive(Debug, Clone)]
pub struct UnitaryGroup {
    energies: DVector<f64>,
    vectors: Operator,
    vectors_adj: Operator,
}

impl UnitaryGroup {
    pub fn new(h: &Operator) -> Self {
        let (energies, vectors) = hermitian_eig(h);
        let vectors_adj = vectors.adjoint();
        Self { energies, vectors, vectors_adj }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// e^{−iHτ}
    pub fn at(&self, tau: f64) -> Operator {
        let phases = DVector::from_iterator(
            self.energies.len(),
            self.energies.iter().map(|&e| Complex64::from_polar(1.0, -e * tau)),
        );
        &self.vectors * Operator::from_diagonal(&phases) * &self.vectors_adj
    }

    /// e^{−iHτ} v without forming the full matrix.
    pub fn apply(&self, tau: f64, v: &StateVector) -> StateVector {
        if tau == 0.0 {
            return v.clone();
        }
        let mut w = &self.vectors_adj * v;
        for (k, z) in w.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, -self.energies[k] * tau);
        }
        &self.vectors * w
    }
}

/// Vectorised linear map ρ ↦ L(ρ) in column-major order, so that
/// `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.
pub fn superop_left_right(a: &Operator, b: &Operator) -> Operator {
    b.transpose().kronecker(a)
}

pub fn vectorize(rho: &Operator) -> StateVector {
    StateVector::from_column_slice(rho.as_slice())
}

pub fn unvectorize(v: &StateVector, d: usize) -> Operator {
    Operator::from_column_slice(d, d, v.as_slice())
}

/// Single classical RK4 step matrix for the autonomous linear ODE x' = A x:
/// I + hA + (hA)²/2 + (hA)³/6 + (hA)⁴/24.
pub fn rk4_step_matrix(a: &Operator, h: f64) -> Operator {
    let n = a.nrows();
    let ha = a.scale(h);
    let mut term = identity(n);
    let mut sum = identity(n);
    for k in 1..=4 {
        term = &term * &ha / re(k as f64);
        sum += &term;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_matrix(d: usize, seed: u64) -> Operator {
        // small LCG, test-only
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
        };
        Operator::from_fn(d, d, |_, _| c64(next(), next()))
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let id = identity(3);
        assert_abs_diff_eq!(spectral_norm(&(psd_sqrt(&id).unwrap() - &id)), 0.0, epsilon = 1e-14);
        let b = psd_sqrt(&diag(&[4.0, 1.0])).unwrap();
        assert_abs_diff_eq!(spectral_norm(&(b - diag(&[2.0, 1.0]))), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sqrt_rejects_non_hermitian_and_negative() {
        let a = from_rows(&[&[(0.0, 0.0), (1.0, 0.0)], &[(0.0, 0.0), (0.0, 0.0)]]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotHermitian { .. })));
        assert!(matches!(psd_sqrt(&diag(&[1.0, -1e-3])), Err(Error::TooNegative { .. })));
        // slightly negative eigenvalue is clipped
        let b = psd_sqrt(&diag(&[1.0, -1e-12])).unwrap();
        assert_eq!(b[(1, 1)], re(0.0));
    }

    #[test]
    fn sqrt_squares_back_on_random_psd() {
        for seed in 0..20 {
            let m = random_matrix(4, seed);
            let a = &m * m.adjoint();
            let b = psd_sqrt(&a).unwrap();
            assert!(spectral_norm(&(&b * &b - &a)) <= 1e-10);
            assert!(hermiticity_residual(&b) <= 1e-12);
            assert!(min_eigenvalue(&b) >= -1e-12);
            assert!(spectral_norm(&(&b * &a - &a * &b)) <= 1e-10);
        }
    }

    #[test]
    fn expm_basics() {
        assert_abs_diff_eq!(spectral_norm(&(expm(&Operator::zeros(3, 3)) - identity(3))), 0.0);
        let a = Operator::from_diagonal(&state(&[(0.0, PI), (0.0, -PI)]));
        let e = expm(&a);
        assert_abs_diff_eq!(spectral_norm(&(e + identity(2))), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_inverse_pair() {
        for seed in 0..20 {
            let a = random_matrix(3, 100 + seed);
            let residual = spectral_norm(&(expm(&a) * expm(&(-&a)) - identity(3)));
            assert!(residual <= 1e-11, "residual {residual}");
        }
    }

    #[test]
    fn expm_matches_eigen_route_for_large_hermitian_generators() {
        // relative accuracy on ‖A‖ up to 10 against the unitary-group route
        for seed in 0..10 {
            let m = random_matrix(4, 200 + seed);
            let h = hermitian_part(&m).scale(10.0 / spectral_norm(&m).max(1.0));
            let lhs = expm(&(-(h.clone() * I)));
            let rhs = UnitaryGroup::new(&h).at(1.0);
            assert!(spectral_norm(&(lhs - rhs)) <= 1e-12);
        }
    }

    #[test]
    fn rk4_step_matrix_is_truncated_taylor() {
        let a = diag(&[-1.0]);
        let p = rk4_step_matrix(&a, 0.1);
        let x: f64 = -0.1;
        let expect = 1.0 + x + x * x / 2.0 + x.powi(3) / 6.0 + x.powi(4) / 24.0;
        assert_abs_diff_eq!(p[(0, 0)].re, expect, epsilon = 1e-15);
    }

    #[test]
    fn superop_vectorisation() {
        let a = random_matrix(2, 7);
        let b = random_matrix(2, 8);
        let rho = random_matrix(2, 9);
        let lhs = unvectorize(&(superop_left_right(&a, &b) * vectorize(&rho)), 2);
        assert!(spectral_norm(&(lhs - &a * &rho * &b)) <= 1e-13);
    }

    proptest! {
        #[test]
        fn expm_of_commuting_sum_factorizes(x in prop::collection::vec(-3.0f64..3.0, 6)) {
            let a = Operator::from_diagonal(&state(&[(x[0], x[1]), (x[2], x[3])]));
            let b = Operator::from_diagonal(&state(&[(x[4], x[5]), (x[1], x[0])]));
            let lhs = expm(&(&a + &b));
            let rhs = expm(&a) * expm(&b);
            prop_assert!(spectral_norm(&(&lhs - &rhs)) <= 1e-11 * spectral_norm(&lhs).max(1.0));
        }

        #[test]
        fn trace_distance_is_symmetric_and_bounded(p in 0.0f64..1.0, q in 0.0f64..1.0) {
            let a = diag(&[p, 1.0 - p]);
            let b = diag(&[q, 1.0 - q]);
            let d = trace_distance(&a, &b);
            prop_assert!((d - (p - q).abs()).abs() < 1e-12);
            prop_assert!((d - trace_distance(&b, &a)).abs() < 1e-15);
        }
    }
}
