//! Dense matrix utilities shared by every other module.
//!
//! Matrices are `nalgebra` dynamic matrices. Symmetric cost matrices are
//! wrapped in [`SymMatrix`], which symmetrizes on construction so that
//! `entries[i][j] == entries[j][i]` holds bit-for-bit.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances used across the crate.
pub mod tol {
    /// Slack allowed on the minimum eigenvalue in PSD-order tests, relative
    /// to `max(1, ‖K1 − K2‖)`.
    pub const PSD: f64 = 1e-9;
    /// A matrix is stable when its spectral radius is below `1 - STABILITY`.
    pub const STABILITY: f64 = 1e-9;
    /// Relative residual accepted from [`super::solve_dlyap`].
    pub const DLYAP: f64 = 1e-11;
}

/// Symmetric square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Validates and symmetrizes `m` as `(m + m') / 2`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() == 0 || !m.is_square() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square with dim >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m, "symmetric matrix")?;
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: Matrix) -> Self {
        let t = m.transpose();
        let mut s = (m + t) * 0.5;
        // (a + b) / 2 is already symmetric in exact arithmetic; copy the upper
        // triangle down so that it is symmetric in floating point as well.
        let n = s.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
        SymMatrix(s)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    /// 1×1 matrix.
    pub fn scalar(v: f64) -> Self {
        SymMatrix(Matrix::from_element(1, 1, v))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    /// Induced 2-norm, which for a symmetric matrix is the largest |eigenvalue|.
    pub fn norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// Principal square root of a positive definite matrix.
    pub fn sqrt_pd(&self) -> Result<Matrix> {
        let eig = SymmetricEigen::new(self.0.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::domain("square root requires a positive definite matrix"));
        }
        let d = Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
    }

    /// `M' K M` for a (possibly rectangular) `M`.
    pub fn congruence(&self, m: &Matrix) -> SymMatrix {
        SymMatrix::symmetrized(m.transpose() * &self.0 * m)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Largest singular value of a matrix of any shape (0 for empty matrices).
pub fn two_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Induced 2-norm of a square matrix.
pub fn induced_two_norm(m: &Matrix) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    Ok(two_norm(m))
}

const SCHUR_MAX_ITER: usize = 10_000;

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::NotConverged {
        what: "Schur eigenvalue iteration",
        iterations: SCHUR_MAX_ITER,
        residual: f64::NAN,
    })?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// True when every eigenvalue of `m` lies strictly inside the unit circle,
/// with margin [`tol::STABILITY`].
pub fn is_stable(m: &Matrix) -> Result<bool> {
    Ok(spectral_radius(m)? < 1.0 - tol::STABILITY)
}

/// Solves `P = D' P D + Q` for stable `D`.
///
/// Uses the doubling iteration `P ← P + Dₖ' P Dₖ`, `Dₖ ← Dₖ²`, which sums the
/// series `Σ (D')ᵏ Q Dᵏ` with quadratic convergence, followed by one residual
/// correction pass.
pub fn solve_dlyap(d: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    ensure_square(d, "D")?;
    ensure_finite(d, "D")?;
    if d.nrows() != q.dim() {
        return Err(Error::invalid(format!(
            "D is {}x{} but Q is {}x{}",
            d.nrows(),
            d.ncols(),
            q.dim(),
            q.dim()
        )));
    }
    let sr = spectral_radius(d)?;
    if sr >= 1.0 - tol::STABILITY {
        return Err(Error::domain(format!(
            "Lyapunov equation needs a stable matrix, spectral radius is {sr:.6}"
        )));
    }
    let mut p = doubling_sum(d, q.as_matrix())?;
    let mut resid = lyap_residual(d, &p, q);
    if two_norm(&resid) > tol::DLYAP * two_norm(&p).max(1.0) {
        p += doubling_sum(d, &resid)?;
        resid = lyap_residual(d, &p, q);
    }
    let r = two_norm(&resid);
    let scale = two_norm(&p).max(1.0);
    if r > tol::DLYAP * scale {
        return Err(Error::NotConverged {
            what: "Lyapunov doubling",
            iterations: MAX_DOUBLINGS,
            residual: r / scale,
        });
    }
    Ok(SymMatrix::symmetrized(p))
}

const MAX_DOUBLINGS: usize = 200;

fn doubling_sum(d: &Matrix, q: &Matrix) -> Result<Matrix> {
    let mut p = q.clone();
    let mut dk = d.clone();
    for _ in 0..MAX_DOUBLINGS {
        let inc = dk.transpose() * &p * &dk;
        p += &inc;
        dk = &dk * &dk;
        let pn = two_norm(&p).max(1.0);
        if two_norm(&inc) <= 1e-16 * pn || dk.amax() == 0.0 {
            return Ok(p);
        }
        if !dk.amax().is_finite() {
            break;
        }
    }
    Err(Error::NotConverged {
        what: "Lyapunov doubling",
        iterations: MAX_DOUBLINGS,
        residual: f64::NAN,
    })
}

/// `D' P D + Q − P`.
fn lyap_residual(d: &Matrix, p: &Matrix, q: &SymMatrix) -> Matrix {
    let r = d.transpose() * p * d + q.as_matrix() - p;
    (&r + r.transpose()) * 0.5
}

/// Smallest eigenvalue of `K1 − K2`.
pub fn psd_margin(k1: &SymMatrix, k2: &SymMatrix) -> Result<f64> {
    if k1.dim() != k2.dim() {
        return Err(Error::invalid(format!(
            "cannot compare {}x{} with {}x{}",
            k1.dim(),
            k1.dim(),
            k2.dim(),
            k2.dim()
        )));
    }
    Ok((k1 - k2).min_eigenvalue())
}

/// `K1 ≥ K2` in the positive-semidefinite order, up to [`tol::PSD`].
pub fn psd_order_holds(k1: &SymMatrix, k2: &SymMatrix) -> Result<bool> {
    let margin = psd_margin(k1, k2)?;
    let scale = k1.norm().max(k2.norm()).max(1.0);
    Ok(margin >= -tol::PSD * scale)
}

/// Solves `M X = rhs` for symmetric positive definite `M`.
pub(crate) fn spd_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    match Cholesky::new(m.clone()) {
        Some(ch) => Ok(ch.solve(rhs)),
        None => m.clone().lu().solve(rhs).ok_or(Error::NotConverged {
            what: "linear solve of a singular matrix",
            iterations: 0,
            residual: f64::INFINITY,
        }),
    }
}

/// Weighted Euclidean norm `‖x‖_s = ‖W x‖` under which a given stable matrix
/// `D` is a `√ρ`-contraction.
///
/// The induced matrix norm is `‖M‖_s = ‖W M W⁻¹‖`, and
/// `c1·‖M‖ ≤ ‖M‖_s ≤ c2·‖M‖` for every square `M`.
#[derive(Debug, Clone)]
pub struct WeightedNorm {
    pub w: Matrix,
    pub w_inv: Matrix,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    /// Largest eigenvalue of `W'W`.
    pub lambda_max: f64,
    /// Smallest eigenvalue of `W'W`.
    pub lambda_min: f64,
}

impl WeightedNorm {
    pub fn vector_norm(&self, x: &Vector) -> f64 {
        (&self.w * x).norm()
    }

    pub fn matrix_norm(&self, m: &Matrix) -> f64 {
        two_norm(&(&self.w * m * &self.w_inv))
    }

    /// The eigenvalue-ratio constants `(λn/λ1, λ1/λn)` without square roots.
    ///
    /// These are looser than `(c1, c2)`: the sandwich inequality only needs
    /// the square roots of these ratios.
    pub fn unsquared_constants(&self) -> (f64, f64) {
        (self.lambda_min / self.lambda_max, self.lambda_max / self.lambda_min)
    }
}

/// Builds a [`WeightedNorm`] for stable `D`.
///
/// `ρ = (spectral_radius(D)² + 1) / 2` and `W = P^{1/2}` where `P` solves
/// `(D/√ρ)' P (D/√ρ) − P = −I`. Then `D' P D = ρ (P − I) ≤ ρ P`, so
/// `‖D‖_s ≤ √ρ`.
pub fn build_weighted_norm(d: &Matrix) -> Result<WeightedNorm> {
    let sr = spectral_radius(d)?;
    if sr >= 1.0 - tol::STABILITY {
        return Err(Error::domain(format!(
            "weighted norm needs a stable matrix, spectral radius is {sr:.6}"
        )));
    }
    let rho = (sr * sr + 1.0) / 2.0;
    let scaled = d / rho.sqrt();
    let p = solve_dlyap(&scaled, &SymMatrix::identity(d.nrows()))?;
    let ev = p.eigenvalues();
    let (lambda_min, lambda_max) = (ev[0], ev[ev.len() - 1]);
    let w = p.sqrt_pd()?;
    let w_inv = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::domain("weighting matrix is singular"))?;
    Ok(WeightedNorm {
        w,
        w_inv,
        rho,
        c1: (lambda_min / lambda_max).sqrt(),
        c2: (lambda_max / lambda_min).sqrt(),
        lambda_max,
        lambda_min,
    })
}

pub fn matrix_from_rows(rows: &[&[f64]]) -> Matrix {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    Matrix::from_fn(nr, nc, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let m = random_matrix(rng, n, n);
        SymMatrix::new(&m * m.transpose()).unwrap()
    }

    #[test]
    fn two_norm_examples() {
        assert_relative_eq!(induced_two_norm(&Matrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(induced_two_norm(&Matrix::zeros(2, 2)).unwrap(), 0.0);
        let d = matrix_from_rows(&[&[3.0, 0.0], &[0.0, 4.0]]);
        assert_relative_eq!(induced_two_norm(&d).unwrap(), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn two_norm_rejects_bad_input() {
        assert!(matches!(
            induced_two_norm(&Matrix::zeros(2, 3)),
            Err(Error::InvalidArgument(_))
        ));
        let mut m = Matrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(induced_two_norm(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spectral_radius_examples() {
        let d = matrix_from_rows(&[&[0.5, 0.0], &[0.0, 0.25]]);
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(spectral_radius(&Matrix::identity(2, 2)).unwrap(), 1.0, epsilon = 1e-14);
        let nil = matrix_from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(spectral_radius(&nil).unwrap() < 1e-12);
        assert!(!is_stable(&Matrix::identity(2, 2)).unwrap());
        assert!(is_stable(&d).unwrap());
    }

    #[test]
    fn spectral_radius_matches_power_growth() {
        // ‖D^(2^k)‖^(1/2^k) → ρ(D); compare on a rotation-scaled matrix.
        let d = matrix_from_rows(&[&[0.6, -0.7], &[0.7, 0.6]]);
        let mut p = d.clone();
        for _ in 0..30 {
            p = &p * &p;
            p /= two_norm(&p);
        }
        let exact = (0.6f64 * 0.6 + 0.7 * 0.7).sqrt();
        assert_relative_eq!(spectral_radius(&d).unwrap(), exact, epsilon = 1e-12);
    }

    #[test]
    fn dlyap_examples() {
        let p = solve_dlyap(&Matrix::zeros(1, 1), &SymMatrix::scalar(1.0)).unwrap();
        assert_relative_eq!(p.as_matrix()[(0, 0)], 1.0, epsilon = 1e-14);

        let p = solve_dlyap(&Matrix::from_element(1, 1, 0.5), &SymMatrix::scalar(1.0)).unwrap();
        assert_relative_eq!(p.as_matrix()[(0, 0)], 4.0 / 3.0, epsilon = 1e-13);

        let d = Matrix::identity(2, 2) * 0.5;
        let p = solve_dlyap(&d, &SymMatrix::identity(2)).unwrap();
        assert_relative_eq!(p.as_matrix(), &(Matrix::identity(2, 2) * (4.0 / 3.0)), epsilon = 1e-13);
    }

    #[test]
    fn dlyap_rejects_unstable() {
        let d = Matrix::identity(2, 2) * 1.01;
        assert!(matches!(
            solve_dlyap(&d, &SymMatrix::identity(2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dlyap_residual_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let mut d = random_matrix(&mut rng, n, n);
            let sr = spectral_radius(&d).unwrap();
            let target = rng.random_range(0.05..0.98);
            if sr > 0.0 {
                d *= target / sr;
            }
            let q = random_psd(&mut rng, n);
            let p = solve_dlyap(&d, &q).unwrap();
            let resid = d.transpose() * p.as_matrix() * &d + q.as_matrix() - p.as_matrix();
            assert!(two_norm(&resid) <= tol::DLYAP * p.norm().max(1.0));
            assert_eq!(p.as_matrix(), &p.as_matrix().transpose());
            assert!(p.min_eigenvalue() >= -1e-9 * p.norm().max(1.0));
        }
    }

    #[test]
    fn psd_order_examples() {
        let i = SymMatrix::identity(2);
        let two = i.scale(2.0);
        assert!(psd_order_holds(&two, &i).unwrap());
        assert!(!psd_order_holds(&i, &two).unwrap());
        assert!(psd_order_holds(&i, &i).unwrap());
        assert!(matches!(
            psd_order_holds(&i, &SymMatrix::identity(3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn symmetrized_on_construction() {
        let m = matrix_from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
        assert_eq!(s.as_matrix()[(0, 1)], 1.0);
        assert!(SymMatrix::new(Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn weighted_norm_scalar_cases() {
        let wn = build_weighted_norm(&Matrix::zeros(1, 1)).unwrap();
        assert_relative_eq!(wn.rho, 0.5, epsilon = 1e-15);
        assert_relative_eq!(wn.c1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(wn.c2, 1.0, epsilon = 1e-14);

        let wn = build_weighted_norm(&Matrix::from_element(1, 1, 0.4957)).unwrap();
        assert_relative_eq!(wn.rho, (0.4957f64.powi(2) + 1.0) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wn.rho, 0.6229, epsilon = 1e-4);
        assert_relative_eq!(wn.c1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(wn.c2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn weighted_norm_rejects_unstable() {
        assert!(matches!(
            build_weighted_norm(&Matrix::identity(2, 2)),
            Err(Error::Domain(_))
        ));
    }

    fn check_sandwich(d: &Matrix, samples: usize, rng: &mut ChaCha8Rng) {
        let wn = build_weighted_norm(d).unwrap();
        assert!(wn.c1 <= wn.c2);
        assert!(wn.matrix_norm(d) <= wn.rho.sqrt() + 1e-10);
        let n = d.nrows();
        for _ in 0..samples {
            let m = random_matrix(rng, n, n);
            let plain = two_norm(&m);
            let weighted = wn.matrix_norm(&m);
            assert!(
                wn.c1 * plain <= weighted * (1.0 + 1e-10),
                "{} > {}",
                wn.c1 * plain,
                weighted
            );
            assert!(
                weighted <= wn.c2 * plain * (1.0 + 1e-10),
                "{} > {}",
                weighted,
                wn.c2 * plain
            );
        }
    }

    #[test]
    fn weighted_norm_sandwich_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check_sandwich(&Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.9])), 100, &mut rng);
    }

    #[test]
    fn weighted_norm_sandwich_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.random_range(2..5);
            let mut d = random_matrix(&mut rng, n, n);
            let sr = spectral_radius(&d).unwrap();
            d *= rng.random_range(0.1..0.95) / sr;
            check_sandwich(&d, 100, &mut rng);
        }
    }

    #[test]
    fn monotone_norm_lemma() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.random_range(1..5);
            let k2 = random_psd(&mut rng, n);
            let k1 = &k2 + &random_psd(&mut rng, n);
            assert!(k1.norm() >= k2.norm() - 1e-12);
        }
    }

    #[test]
    fn submultiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![0.3, -0.8, 0.5]));
        let wn = build_weighted_norm(&d).unwrap();
        for _ in 0..200 {
            let a = random_matrix(&mut rng, 3, 3);
            let b = random_matrix(&mut rng, 3, 3);
            assert!(two_norm(&(&a * &b)) <= two_norm(&a) * two_norm(&b) * (1.0 + 1e-12));
            assert!(wn.matrix_norm(&(&a * &b)) <= wn.matrix_norm(&a) * wn.matrix_norm(&b) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn unsquared_constants_are_looser() {
        let d = matrix_from_rows(&[&[0.9, 0.5], &[0.0, 0.3]]);
        let wn = build_weighted_norm(&d).unwrap();
        let (u1, u2) = wn.unsquared_constants();
        assert_relative_eq!(u1, wn.c1 * wn.c1, epsilon = 1e-12);
        assert_relative_eq!(u2, wn.c2 * wn.c2, epsilon = 1e-9);
        assert!(u1 <= wn.c1 && u2 >= wn.c2);
    }
}
