//! Suboptimality bounds for unconstrained MPC with terminal cost `K` and
//! horizon `ℓ`.
//!
//! The MPC policy is the greedy gain of `F^{ℓ-1}(K)`; its infinite-horizon
//! cost exceeds the optimum by `‖K_L̃ − K*‖`. Three upper bounds are provided:
//! a contraction bound in a weighted norm, a monotonicity bound and a
//! Newton-step (quadratic) bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{build_weighted_norm, induced_two_norm, two_norm, Matrix, SymMatrix};
use crate::par::Exec;
use crate::riccati::{GainPolicy, LqSystem};

/// Truncation threshold for `Σ‖D̃ⁱ‖²`, relative to the partial sum.
pub const SERIES_REL_TOL: f64 = 1e-10;
const SERIES_MAX_TERMS: usize = 1_000_000;

/// First index of the series `Σᵢ‖D̃ⁱ‖²` in the Newton constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeriesStart {
    /// Includes the identity term; this is the certified form.
    #[default]
    Zero,
    /// Drops the identity term.
    One,
}

/// The pieces of the Newton constant `γ = η² ‖B'K*B + R‖ Σ‖D̃ⁱ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConstant {
    pub eta: f64,
    pub series_sum: f64,
    pub terms: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub ell: usize,
    pub alpha: f64,
    pub beta_ell: f64,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub eta: f64,
    pub gamma: f64,
    pub bound_contraction: f64,
    pub bound_monotone: f64,
    pub bound_newton: f64,
    pub actual_gap: f64,
    pub design_distance: f64,
}

impl BoundsReport {
    pub fn tightest_bound(&self) -> f64 {
        self.bound_contraction.min(self.bound_monotone).min(self.bound_newton)
    }
}

/// An [`LqSystem`] together with its Riccati solution, shared by all bound
/// computations.
#[derive(Debug, Clone)]
pub struct Analysis {
    sys: LqSystem,
    kstar: SymMatrix,
    lstar: GainPolicy,
    alpha: f64,
}

/// `F^{ℓ-1}(K)` and its greedy gain.
struct HorizonPolicy {
    kbar: SymMatrix,
    gain: GainPolicy,
}

impl Analysis {
    pub fn new(sys: LqSystem) -> Result<Self> {
        let (kstar, lstar) = sys.solve_dare()?;
        let alpha = induced_two_norm(lstar.closed_loop())?.powi(2).min(1.0);
        Ok(Self {
            sys,
            kstar,
            lstar,
            alpha,
        })
    }

    pub fn system(&self) -> &LqSystem {
        &self.sys
    }

    pub fn kstar(&self) -> &SymMatrix {
        &self.kstar
    }

    pub fn lstar(&self) -> &GainPolicy {
        &self.lstar
    }

    /// `min(‖A + BL*‖², 1)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `min(‖(A + BL*)^{ℓ-1}‖², 1)`.
    pub fn beta(&self, ell: usize) -> Result<f64> {
        check_ell(ell)?;
        if ell == 1 {
            return Ok(1.0);
        }
        let d = self.lstar.closed_loop();
        let p = d.clone().pow((ell - 1) as u32);
        Ok(two_norm(&p).powi(2).min(1.0))
    }

    /// `‖K − K*‖`.
    pub fn distance(&self, k: &SymMatrix) -> Result<f64> {
        self.check_dim(k)?;
        Ok((k - &self.kstar).norm())
    }

    fn check_dim(&self, k: &SymMatrix) -> Result<()> {
        if k.dim() != self.sys.state_dim() {
            return Err(Error::invalid(format!(
                "terminal cost is {0}x{0}, state dimension is {1}",
                k.dim(),
                self.sys.state_dim()
            )));
        }
        Ok(())
    }

    fn require_decreasing(&self, k: &SymMatrix) -> Result<()> {
        self.check_dim(k)?;
        if !self.sys.in_region_of_decreasing(k)? {
            return Err(Error::domain(format!(
                "terminal cost is not in the region of decreasing: min eigenvalue of K - F(K) is {:.6e}",
                self.sys.decrease_margin(k)?
            )));
        }
        Ok(())
    }

    fn horizon_policy(&self, k: &SymMatrix, ell: usize) -> Result<HorizonPolicy> {
        check_ell(ell)?;
        self.require_decreasing(k)?;
        let kbar = self.sys.iterate_bellman(k, ell - 1)?;
        let gain = self.sys.greedy_gain(&kbar)?;
        Ok(HorizonPolicy { kbar, gain })
    }

    /// The MPC feedback gain for terminal cost `K` and horizon `ℓ`.
    pub fn mpc_gain(&self, k: &SymMatrix, ell: usize) -> Result<GainPolicy> {
        Ok(self.horizon_policy(k, ell)?.gain)
    }

    fn contraction_from(&self, hp: &HorizonPolicy, beta: f64, dist: f64) -> Result<(f64, f64, f64, f64)> {
        let wn = build_weighted_norm(hp.gain.closed_loop())?;
        let ratio = wn.c2 / wn.c1;
        let bound = ratio / (1.0 - wn.rho) * (wn.rho + ratio * self.alpha) * beta * dist;
        Ok((bound, wn.rho, wn.c1, wn.c2))
    }

    /// `c2/(c1(1−ρ)) · (ρ + (c2/c1)α) · β_ℓ · ‖K − K*‖`, with the weighted norm
    /// built from the MPC closed loop.
    pub fn contraction_bound(&self, k: &SymMatrix, ell: usize) -> Result<f64> {
        let hp = self.horizon_policy(k, ell)?;
        let dist = self.distance(k)?;
        Ok(self.contraction_from(&hp, self.beta(ell)?, dist)?.0)
    }

    /// `α β_ℓ ‖K − K*‖`.
    pub fn monotone_bound(&self, k: &SymMatrix, ell: usize) -> Result<f64> {
        check_ell(ell)?;
        self.require_decreasing(k)?;
        Ok(self.alpha * self.beta(ell)? * self.distance(k)?)
    }

    /// Newton constant for `K̄` with the certified series starting at `i = 0`.
    pub fn newton_gamma(&self, kbar: &SymMatrix) -> Result<NewtonConstant> {
        self.newton_gamma_with(kbar, SeriesStart::Zero)
    }

    pub fn newton_gamma_with(&self, kbar: &SymMatrix, start: SeriesStart) -> Result<NewtonConstant> {
        self.require_decreasing(kbar)?;
        let gain = self.sys.greedy_gain(kbar)?;
        self.newton_constant(kbar, &gain, start)
    }

    fn newton_constant(&self, kbar: &SymMatrix, gain: &GainPolicy, start: SeriesStart) -> Result<NewtonConstant> {
        let (a, b, r) = (self.sys.a(), self.sys.b(), self.sys.r());
        let s_star = SymMatrix::symmetrized(b.transpose() * self.kstar.as_matrix() * b + r.as_matrix());
        let s_bar = SymMatrix::symmetrized(b.transpose() * kbar.as_matrix() * b + r.as_matrix());
        let nb = two_norm(b);
        let bt_k_a = b.transpose() * kbar.as_matrix() * a;
        let eta = (nb * two_norm(a) + nb * nb * two_norm(&bt_k_a) / s_bar.min_eigenvalue()) / s_star.min_eigenvalue();
        let (series_sum, terms) = power_norm_series(gain.closed_loop(), start)?;
        let gamma = eta * eta * s_star.max_eigenvalue() * series_sum;
        Ok(NewtonConstant {
            eta,
            series_sum,
            terms,
            gamma,
        })
    }

    /// `γ β_ℓ² ‖K − K*‖²` with `γ` evaluated at `F^{ℓ-1}(K)`.
    pub fn newton_bound(&self, k: &SymMatrix, ell: usize) -> Result<f64> {
        self.newton_bound_with(k, ell, SeriesStart::Zero)
    }

    pub fn newton_bound_with(&self, k: &SymMatrix, ell: usize, start: SeriesStart) -> Result<f64> {
        let hp = self.horizon_policy(k, ell)?;
        let nc = self.newton_constant(&hp.kbar, &hp.gain, start)?;
        let beta = self.beta(ell)?;
        let dist = self.distance(k)?;
        Ok(nc.gamma * beta * beta * dist * dist)
    }

    /// `‖K_L̃ − K*‖` for the MPC gain `L̃`.
    pub fn actual_gap(&self, k: &SymMatrix, ell: usize) -> Result<f64> {
        let hp = self.horizon_policy(k, ell)?;
        self.gap_of(&hp.gain)
    }

    fn gap_of(&self, gain: &GainPolicy) -> Result<f64> {
        Ok((&self.sys.closed_loop_cost(gain)? - &self.kstar).norm())
    }

    /// Upper bound on `‖Fⁱ(K) − K*‖`: `β_ℓ^j ‖K − K*‖` when `i = (ℓ−1) j`,
    /// otherwise `αⁱ ‖K − K*‖`.
    pub fn iterate_distance_bound(&self, k: &SymMatrix, ell: usize, i: usize) -> Result<f64> {
        check_ell(ell)?;
        self.require_decreasing(k)?;
        let dist = self.distance(k)?;
        if ell > 1 && i.is_multiple_of(ell - 1) {
            Ok(self.beta(ell)?.powi((i / (ell - 1)) as i32) * dist)
        } else {
            Ok(self.alpha.powi(i as i32) * dist)
        }
    }

    pub fn full_report(&self, k: &SymMatrix, ell: usize) -> Result<BoundsReport> {
        let hp = self.horizon_policy(k, ell)?;
        let dist = self.distance(k)?;
        let beta = self.beta(ell)?;
        let (bound_contraction, rho, c1, c2) = self.contraction_from(&hp, beta, dist)?;
        let nc = self.newton_constant(&hp.kbar, &hp.gain, SeriesStart::Zero)?;
        Ok(BoundsReport {
            ell,
            alpha: self.alpha,
            beta_ell: beta,
            rho,
            c1,
            c2,
            eta: nc.eta,
            gamma: nc.gamma,
            bound_contraction,
            bound_monotone: self.alpha * beta * dist,
            bound_newton: nc.gamma * beta * beta * dist * dist,
            actual_gap: self.gap_of(&hp.gain)?,
            design_distance: dist,
        })
    }

    /// Reports for every `(K, ℓ)` pair, in input order.
    pub fn reports(&self, cases: &[(SymMatrix, usize)], exec: Exec) -> Vec<Result<BoundsReport>> {
        exec.map(cases, |(k, ell)| self.full_report(k, *ell))
    }
}

fn check_ell(ell: usize) -> Result<()> {
    if ell == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok(())
}

/// `Σ_{i≥start} ‖Dⁱ‖²` for stable `D`.
///
/// Terms are summed until the current one drops below [`SERIES_REL_TOL`] of
/// the partial sum. The remainder is then bounded by
/// `Σ_{j=1..p} ‖D^{N+j}‖² / (1 − ‖D^p‖²)`, where `p` is the first power with
/// `‖D^p‖ < 1`, and added, so the result never underestimates the series.
pub fn power_norm_series(d: &Matrix, start: SeriesStart) -> Result<(f64, usize)> {
    if !crate::matcore::is_stable(d)? {
        return Err(Error::domain("closed loop is not stable; the power series diverges"));
    }
    let n = d.nrows();
    let mut power = Matrix::identity(n, n);
    let mut sum = 0.0;
    let mut contraction: Option<(usize, f64)> = None;
    let mut i = 0usize;
    loop {
        let term = two_norm(&power).powi(2);
        if i >= 1 && contraction.is_none() && term < 1.0 {
            contraction = Some((i, term));
        }
        if i > 0 || start == SeriesStart::Zero {
            sum += term;
        }
        if let Some((p, s2)) = contraction {
            if term <= SERIES_REL_TOL * sum {
                let mut tail = 0.0;
                let mut next = power.clone();
                for _ in 0..p {
                    next = d * &next;
                    tail += two_norm(&next).powi(2);
                }
                return Ok((sum + tail / (1.0 - s2), i + 1));
            }
        }
        i += 1;
        if i > SERIES_MAX_TERMS {
            return Err(Error::NotConverged {
                what: "power-norm series",
                iterations: i,
                residual: term,
            });
        }
        power = d * &power;
    }
}
