//! Riccati and Bellman operators for the unconstrained linear-quadratic
//! problem `x⁺ = A x + B u`, stage cost `x'Qx + u'Ru`.

use crate::error::{Error, Result};
use crate::matcore::{self, ensure_finite, spd_solve, tol, Matrix, SymMatrix};

/// Relative fixed-point residual accepted from [`LqSystem::solve_dare`].
pub const DARE_TOL: f64 = 1e-12;

const MAX_VALUE_ITERATIONS: usize = 100_000;
const MAX_NEWTON_STEPS: usize = 50;

/// Problem data `(A, B, Q, R)`.
///
/// `R` must be positive definite and `Q` positive semidefinite. Stabilizability
/// of `(A, B)` and detectability of `(A, √Q)` are not checked symbolically;
/// [`LqSystem::solve_dare`] fails when they do not hold.
#[derive(Debug, Clone)]
pub struct LqSystem {
    a: Matrix,
    b: Matrix,
    q: SymMatrix,
    r: SymMatrix,
}

/// Linear feedback `u = L x` together with its closed loop `A + B L`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPolicy {
    l: Matrix,
    closed_loop: Matrix,
}

impl GainPolicy {
    pub fn matrix(&self) -> &Matrix {
        &self.l
    }

    pub fn closed_loop(&self) -> &Matrix {
        &self.closed_loop
    }

    pub fn is_stabilizing(&self) -> Result<bool> {
        matcore::is_stable(&self.closed_loop)
    }
}

impl LqSystem {
    pub fn new(a: Matrix, b: Matrix, q: SymMatrix, r: SymMatrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::invalid(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::invalid(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if q.dim() != n {
            return Err(Error::invalid(format!("Q must be {n}x{n}, got {0}x{0}", q.dim())));
        }
        let m = b.ncols();
        if r.dim() != m {
            return Err(Error::invalid(format!("R must be {m}x{m}, got {0}x{0}", r.dim())));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        if r.min_eigenvalue() <= tol::PSD {
            return Err(Error::invalid("R must be positive definite"));
        }
        if q.min_eigenvalue() < -tol::PSD * q.norm().max(1.0) {
            return Err(Error::invalid("Q must be positive semidefinite"));
        }
        Ok(Self { a, b, q, r })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Same dynamics and state weight with input weight `ζR`.
    pub fn with_scaled_input_weight(&self, zeta: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.q.clone(), self.r.scale(zeta))
    }

    fn check_dim(&self, k: &SymMatrix) -> Result<()> {
        if k.dim() != self.state_dim() {
            return Err(Error::invalid(format!(
                "cost matrix is {0}x{0}, system state dimension is {1}",
                k.dim(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// Wraps `L` as a [`GainPolicy`] for this system.
    pub fn gain(&self, l: Matrix) -> Result<GainPolicy> {
        if l.nrows() != self.input_dim() || l.ncols() != self.state_dim() {
            return Err(Error::invalid(format!(
                "gain must be {}x{}, got {}x{}",
                self.input_dim(),
                self.state_dim(),
                l.nrows(),
                l.ncols()
            )));
        }
        ensure_finite(&l, "gain")?;
        let closed_loop = &self.a + &self.b * &l;
        Ok(GainPolicy { l, closed_loop })
    }

    /// `F(K) = A'(K − KB(B'KB + R)⁻¹B'K)A + Q`.
    pub fn bellman(&self, k: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(k)?;
        let km = k.as_matrix();
        let bt_k = self.b.transpose() * km;
        let s = &bt_k * &self.b + self.r.as_matrix();
        let inner = km - bt_k.transpose() * spd_solve(&s, &bt_k)?;
        Ok(SymMatrix::symmetrized(
            self.a.transpose() * inner * &self.a + self.q.as_matrix(),
        ))
    }

    /// `F_L(K) = (A + BL)' K (A + BL) + Q + L'RL`.
    pub fn policy_bellman(&self, gain: &GainPolicy, k: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(k)?;
        if gain.closed_loop.nrows() != self.state_dim() || gain.l.nrows() != self.input_dim() {
            return Err(Error::invalid("gain does not match the system dimensions"));
        }
        let d = &gain.closed_loop;
        Ok(SymMatrix::symmetrized(
            d.transpose() * k.as_matrix() * d + self.q.as_matrix() + gain.l.transpose() * self.r.as_matrix() * &gain.l,
        ))
    }

    /// The minimizing gain `L̃ = −(B'K̄B + R)⁻¹B'K̄A`, so that `F_L̃(K̄) = F(K̄)`.
    pub fn greedy_gain(&self, kbar: &SymMatrix) -> Result<GainPolicy> {
        self.weighted_greedy_gain(kbar, 1.0)
    }

    /// `−(B'KB + ζR)⁻¹B'KA`: the greedy gain of the problem with input weight `ζR`.
    pub fn zeta_gain(&self, k: &SymMatrix, zeta: f64) -> Result<GainPolicy> {
        check_zeta(zeta)?;
        self.weighted_greedy_gain(k, zeta)
    }

    fn weighted_greedy_gain(&self, k: &SymMatrix, zeta: f64) -> Result<GainPolicy> {
        self.check_dim(k)?;
        let bt_k = self.b.transpose() * k.as_matrix();
        let s = &bt_k * &self.b + self.r.as_matrix() * zeta;
        let l = -spd_solve(&s, &(bt_k * &self.a))?;
        self.gain(l)
    }

    /// `F^steps(K)`.
    pub fn iterate_bellman(&self, k: &SymMatrix, steps: usize) -> Result<SymMatrix> {
        self.check_dim(k)?;
        let mut out = k.clone();
        for _ in 0..steps {
            out = self.bellman(&out)?;
        }
        Ok(out)
    }

    /// Smallest eigenvalue of `K − F(K)`; nonnegative exactly on the region of
    /// decreasing.
    pub fn decrease_margin(&self, k: &SymMatrix) -> Result<f64> {
        matcore::psd_margin(k, &self.bellman(k)?)
    }

    /// `F(K) ≤ K` up to [`tol::PSD`].
    pub fn in_region_of_decreasing(&self, k: &SymMatrix) -> Result<bool> {
        matcore::psd_order_holds(k, &self.bellman(k)?)
    }

    /// `K_L`, the unique solution of `K = F_L(K)`, i.e. the infinite-horizon
    /// cost of `u = L x`.
    pub fn closed_loop_cost(&self, gain: &GainPolicy) -> Result<SymMatrix> {
        let stage = SymMatrix::symmetrized(self.q.as_matrix() + gain.l.transpose() * self.r.as_matrix() * &gain.l);
        matcore::solve_dlyap(&gain.closed_loop, &stage).map_err(|e| match e {
            Error::Domain(_) => Error::domain(format!(
                "closed loop A + BL is not stable (spectral radius {:.6})",
                matcore::spectral_radius(&gain.closed_loop).unwrap_or(f64::NAN)
            )),
            other => other,
        })
    }

    fn dare_residual(&self, k: &SymMatrix) -> Result<f64> {
        let fk = self.bellman(k)?;
        Ok((&fk - k).norm() / k.norm().max(1.0))
    }

    /// Stabilizing solution `K*` of `K = F(K)` and the optimal gain `L*`.
    ///
    /// Value iteration from `Q` until the greedy gain stabilizes, then
    /// Kleinman (policy-iteration) refinement; value iteration resumes if the
    /// refinement stalls.
    pub fn solve_dare(&self) -> Result<(SymMatrix, GainPolicy)> {
        let mut k = self.q.clone();
        let mut residual = f64::INFINITY;
        let mut iter = 0;
        while iter < MAX_VALUE_ITERATIONS {
            let next = self.bellman(&k)?;
            residual = (&next - &k).norm() / next.norm().max(1.0);
            k = next;
            iter += 1;
            if residual <= DARE_TOL {
                break;
            }
            if iter % 10 == 0 {
                let gain = self.greedy_gain(&k)?;
                if gain.is_stabilizing()? {
                    if let Some(refined) = self.kleinman(gain)? {
                        k = refined;
                        residual = self.dare_residual(&k)?;
                        break;
                    }
                }
            }
        }
        if residual > DARE_TOL {
            residual = self.dare_residual(&k)?;
        }
        if residual > DARE_TOL || !residual.is_finite() {
            return Err(Error::NotConverged {
                what: "Riccati solver",
                iterations: iter,
                residual,
            });
        }
        let gain = self.greedy_gain(&k)?;
        if !gain.is_stabilizing()? {
            return Err(Error::domain(
                "Riccati fixed point does not stabilize the system; (A, B) may not be stabilizable",
            ));
        }
        Ok((k, gain))
    }

    fn kleinman(&self, mut gain: GainPolicy) -> Result<Option<SymMatrix>> {
        let mut best: Option<(f64, SymMatrix)> = None;
        for _ in 0..MAX_NEWTON_STEPS {
            let k = match self.closed_loop_cost(&gain) {
                Ok(k) => k,
                Err(Error::Domain(_)) => return Ok(best.map(|(_, k)| k)),
                Err(e) => return Err(e),
            };
            let res = self.dare_residual(&k)?;
            let improved = best.as_ref().is_none_or(|(r, _)| res < *r);
            if improved {
                best = Some((res, k.clone()));
            }
            if res <= DARE_TOL {
                return Ok(Some(k));
            }
            if !improved {
                break;
            }
            gain = self.greedy_gain(&k)?;
        }
        Ok(best.and_then(|(r, k)| (r <= DARE_TOL).then_some(k)))
    }

    /// Solution of `K = A'(K − KB(B'KB + ζR)⁻¹B'K)A + Q` for `ζ ≥ 1`.
    ///
    /// The result lies in the region of decreasing of the original problem.
    pub fn zeta_dare(&self, zeta: f64) -> Result<SymMatrix> {
        check_zeta(zeta)?;
        let inflated = self.with_scaled_input_weight(zeta)?;
        let (k, _) = inflated.solve_dare()?;
        if !self.in_region_of_decreasing(&k)? {
            return Err(Error::domain(format!(
                "zeta-amplified cost left the region of decreasing (margin {:.3e})",
                self.decrease_margin(&k)?
            )));
        }
        Ok(k)
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta.is_finite() && zeta >= 1.0) {
        return Err(Error::invalid(format!("zeta must be a finite number >= 1, got {zeta}")));
    }
    Ok(())
}

/// Distance `‖K1 − K2‖` in the induced 2-norm.
pub fn distance(k1: &SymMatrix, k2: &SymMatrix) -> f64 {
    (k1 - k2).norm()
}
