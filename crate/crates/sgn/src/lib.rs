//! Smoothed Gauss-Newton estimation of moment condition models.
//!
//! GMM/SMM objective functions are frequently non-smooth (indicator-based
//! simulated moments), noisy, and non-convex. This crate implements a
//! Gauss-Newton iteration that keeps the *raw* sample moments in the step
//! while replacing the (possibly nonexistent) Jacobian with the Jacobian of
//! the convolution-smoothed moments, and augments every iteration with a
//! covering-sequence global search step. The returned estimate is the best
//! iterate visited, measured in the weighted moment norm.
//!
//! Highlights:
//!
//! * [`solver::solve`] — the full local + global loop with optional
//!   heavy-ball momentum and a chi-square stopping rule;
//! * [`smoothing`] — Monte-Carlo smoothed moments and Jacobians;
//! * [`qn`] — a rolling quasi-Newton Jacobian that refreshes one random
//!   direction per iteration (for models where smoothing is intractable);
//! * [`covering`] — Sobol / Halton / uniform covering sequences and a
//!   discrepancy estimator;
//! * [`problems`] — benchmark problems: sample quantile, smoothed quantile
//!   regression, a panel dynamic-discrete-choice SMM, and toy maps;
//! * [`harness`] — a seeded Monte-Carlo replication runner with CSV output.
//!
//! ```
//! use sgn::problems::QuantileProblem;
//! use sgn::solver::{JacobianMode, SolverConfig};
//! use sgn::moments::{MomentProblem, WeightMatrix};
//!
//! let problem = QuantileProblem::standard_normal(250, 0.7, 42).unwrap();
//! let w = WeightMatrix::identity(1);
//! let cfg = SolverConfig {
//!     gamma: 0.1,
//!     eps: 0.1,
//!     b_max: 150,
//!     jacobian: JacobianMode::ClosedForm,
//!     theta0: Some(vec![0.0]),
//!     covering: None, // local iterations only
//!     ..SolverConfig::default()
//! };
//! let result = sgn::solver::solve(&problem, &w, &cfg).unwrap();
//! // the best iterate solves the moment condition as well as possible
//! assert!(result.best_obj_norm <= 1.0 / 250.0 + 1e-12);
//! ```

pub mod covering;
pub mod error;
pub mod harness;
pub mod moments;
pub mod problems;
pub mod qn;
pub mod seeds;
pub mod smoothing;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
