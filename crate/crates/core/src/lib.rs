//! Performance-bound analysis for model predictive control on linear-quadratic
//! problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`matcore`]: dense matrix utilities (norms, eigenvalues, Lyapunov
//!   equations, positive-semidefinite ordering, weighted norms).
//! - [`riccati`]: the Riccati/Bellman operator layer for an [`LqSystem`].
//! - [`bounds`]: the contraction, monotonicity and Newton-step suboptimality
//!   bounds together with the exact gap.
//! - [`polytope`]: half-space polytopes, a dense simplex LP and maximal
//!   positively invariant sets.
//! - [`qp`]: a dense dual active-set QP solver and MPC condensing.
//! - [`cmpc`]: the constrained MPC engine, closed-loop costs and grid maps.
//!
//! Grid sweeps and Monte Carlo estimates run through [`par`], which uses rayon
//! when the `parallel` feature is enabled and plain iterators otherwise.

pub mod bounds;
pub mod cmpc;
pub mod error;
pub mod matcore;
pub mod par;
pub mod polytope;
pub mod qp;
pub mod riccati;

pub use bounds::{Analysis, BoundsReport};
pub use cmpc::{ConstrainedProblem, CostMapGrid, GridSpec, MpcController, TerminalDesign};
pub use error::{Error, Result};
pub use matcore::{Matrix, SymMatrix, Vector, WeightedNorm};
pub use polytope::HPolytope;
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use riccati::{GainPolicy, LqSystem};
