//! Benchmark moment problems and the smoothed-moment baseline solver.

mod ddc;
mod quantile;
mod quantreg;
mod toy;

pub use ddc::{DdcDesign, DdcProblem};
pub use quantile::QuantileProblem;
pub use quantreg::QuantRegProblem;
pub use toy::{LinearMomentProblem, TwoBasinProblem};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamBox, ParamVector, WeightMatrix};
use crate::solver::{solve, SolverConfig, SolverResult};

/// The true parameter vector of a generated problem, constrained to the
/// interior of its box.
#[derive(Debug, Clone)]
pub struct TrueParams {
    /// The data-generating parameter value.
    pub theta_dagger: ParamVector,
}

impl TrueParams {
    /// Validate that the truth lies strictly inside the box.
    pub fn new(theta_dagger: ParamVector, bounds: &ParamBox) -> Result<Self> {
        if theta_dagger.dim() != bounds.dim() {
            return Err(Error::contract("true parameter dimension mismatch"));
        }
        for (i, &v) in theta_dagger.values().iter().enumerate() {
            if v <= bounds.lower()[i] || v >= bounds.upper()[i] {
                return Err(Error::contract(format!(
                    "true parameter coordinate {i} = {v} is not interior to the box"
                )));
            }
        }
        Ok(TrueParams { theta_dagger })
    }
}

/// View of a problem with its moments replaced by the smoothed moments
/// `gbar_eps` at a fixed bandwidth. Running the ordinary solver on this
/// adapter is Gauss-Newton on smoothed moments: the baseline the smoothed
/// Gauss-Newton iteration is compared against. Its fixed point carries the
/// `O(eps^2)` smoothing bias.
pub struct SmoothedProblem<'a> {
    inner: &'a dyn MomentProblem,
    eps: f64,
}

impl<'a> SmoothedProblem<'a> {
    /// Wrap `inner` at bandwidth `eps`; fails if the problem cannot smooth
    /// its moments.
    pub fn new(inner: &'a dyn MomentProblem, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config(format!("bandwidth must be positive, got {eps}")));
        }
        let center = ParamVector::from_dvector(
            (inner.param_box().lower() + inner.param_box().upper()) * 0.5,
        )?;
        if inner.smoothed_moments(&center, eps).is_none() {
            return Err(Error::config(
                "problem exposes no smoothed moments; the smoothed baseline needs them",
            ));
        }
        Ok(SmoothedProblem { inner, eps })
    }

    /// The fixed smoothing bandwidth.
    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl MomentProblem for SmoothedProblem<'_> {
    fn dim_theta(&self) -> usize {
        self.inner.dim_theta()
    }

    fn dim_moments(&self) -> usize {
        self.inner.dim_moments()
    }

    fn sample_size(&self) -> usize {
        self.inner.sample_size()
    }

    fn param_box(&self) -> &ParamBox {
        self.inner.param_box()
    }

    fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
        self.inner
            .smoothed_moments(theta, self.eps)
            .expect("checked at construction")
    }

    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        _eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        // the Jacobian of gbar_eps at the adapter's own bandwidth
        self.inner.smoothed_closed_form(theta, self.eps)
    }
}

/// The smoothed-GMM baseline: the identical solver loop, but with the
/// smoothed moments `gbar_eps` substituted for `gbar_n` in both the local
/// and global steps. Converges to the smoothed minimizer rather than the
/// sample minimizer.
pub fn baseline_smoothed_gn_solve(
    problem: &dyn MomentProblem,
    w: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<SolverResult> {
    let eps = cfg.effective_eps(problem.sample_size());
    let smoothed = SmoothedProblem::new(problem, eps)?;
    solve(&smoothed, w, cfg)
}
