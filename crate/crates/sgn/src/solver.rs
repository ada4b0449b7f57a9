//! The smoothed Gauss-Newton loop: local step, optional heavy-ball
//! momentum, covering-sequence global step, stopping rules, and
//! best-iterate bookkeeping.
//!
//! Each iteration takes the step
//!
//! ```text
//! theta_{b+1} = theta_b - gamma [G' W G]^{-1} G' W gbar_n(theta_b) + alpha (theta_b - theta_{b-1})
//! ```
//!
//! with `G` the smoothed Jacobian at `theta_b` (closed form, Monte-Carlo, or
//! quasi-Newton), then compares the weighted moment norm at the next
//! covering point against the local result and teleports when the covering
//! point is strictly better. The reported estimate is the iterate with the
//! smallest weighted moment norm, so a wandering tail cannot degrade it.

use std::io::Write as IoWrite;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::covering::{CoveringConfig, CoveringSequence};
use crate::error::{Error, Result};
use crate::moments::{
    clamp_to_box, weighted_norm, MomentProblem, MomentValue, ParamVector, WeightMatrix,
};
use crate::qn::{qn_init, qn_update_jacobian};
use crate::smoothing::{mc_jacobian, SmoothingConfig};
use crate::{seeds, special};

/// How the local step obtains its smoothed Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JacobianMode {
    /// Use the problem's closed-form smoothed Jacobian.
    ClosedForm,
    /// Monte-Carlo estimator with `draws` Gaussian directions per iteration.
    MonteCarlo {
        /// Directions per iteration.
        draws: usize,
    },
    /// Rolling quasi-Newton window, refreshing `directions_per_iter`
    /// directions per iteration. `window: None` picks
    /// `max(25, ceil(1.5 d_theta))`. `sample_mean` switches from the
    /// de-meaned least-squares estimator to the plain sample-mean variant.
    QuasiNewton {
        /// Window length `L >= d_theta`; `None` uses the default rule.
        window: Option<usize>,
        /// Directions refreshed per iteration (>= 1).
        #[serde(default = "default_directions")]
        directions_per_iter: usize,
        /// Use the sample-mean estimator instead of least squares.
        #[serde(default)]
        sample_mean: bool,
    },
}

fn default_directions() -> usize {
    1
}

impl JacobianMode {
    /// Quasi-Newton with all defaults.
    pub fn quasi_newton() -> Self {
        JacobianMode::QuasiNewton { window: None, directions_per_iter: 1, sample_mean: false }
    }
}

/// Default quasi-Newton window for a given parameter dimension.
pub fn default_qn_window(d_theta: usize) -> usize {
    25usize.max((1.5 * d_theta as f64).ceil() as usize)
}

/// When to terminate the iteration loop (always capped by `b_max`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StoppingRule {
    /// Run exactly `b_max` iterations.
    FixedIterations,
    /// Stop `extra_j` iterations after the squared weighted norm first
    /// drops below `chi2_quantile(p, level) / n`.
    ChiSquarePlusJ {
        /// Chi-square level in (0, 1), e.g. 0.95.
        level: f64,
        /// Additional iterations after the threshold first passes.
        extra_j: usize,
    },
}

/// What ended the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopOutcome {
    /// The iteration budget `b_max` ran out.
    FixedIterations,
    /// The chi-square rule fired; `first_pass` is the iteration whose
    /// iterate first passed the threshold.
    ChiSquareSatisfied {
        /// Iteration index of the first passing iterate.
        first_pass: usize,
    },
}

/// Which branch produced the accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// The Gauss-Newton (plus momentum) step was kept.
    Local,
    /// The covering candidate strictly improved the norm and replaced it.
    GlobalReplaced,
}

/// One accepted iterate and its diagnostics.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Iteration index `b`.
    pub b: usize,
    /// The accepted iterate `theta_{b+1}`.
    pub theta: ParamVector,
    /// Weighted moment norm at the iterate.
    pub obj_norm: f64,
    /// Local step or global replacement.
    pub step_kind: StepKind,
    /// Smallest singular value of the Jacobian estimate used this iteration.
    pub jacobian_sigma_min: f64,
}

/// Full solver output: the best iterate plus the per-iteration trace.
#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Iterate with the smallest weighted moment norm (including `theta_0`).
    pub theta_best: ParamVector,
    /// Its weighted moment norm.
    pub best_obj_norm: f64,
    /// Number of iterations run (equals `trace.len()`).
    pub iterations_run: usize,
    /// Per-iteration records.
    pub trace: Vec<IterationRecord>,
    /// What stopped the run.
    pub stopped_by: StopOutcome,
}

impl SolverResult {
    /// Write the trace as CSV with columns
    /// `b,theta_0..theta_{d-1},obj_norm,step_kind,sigma_min`.
    pub fn write_trace_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        let d = self.theta_best.dim();
        write!(out, "b")?;
        for i in 0..d {
            write!(out, ",theta_{i}")?;
        }
        writeln!(out, ",obj_norm,step_kind,sigma_min")?;
        for rec in &self.trace {
            write!(out, "{}", rec.b)?;
            for v in rec.theta.values() {
                write!(out, ",{v:.17e}")?;
            }
            let kind = match rec.step_kind {
                StepKind::Local => "local",
                StepKind::GlobalReplaced => "global",
            };
            writeln!(out, ",{:.17e},{kind},{:.17e}", rec.obj_norm, rec.jacobian_sigma_min)?;
        }
        Ok(())
    }
}

/// Solver tuning. `Default` gives the suggested inputs: `gamma = 0.1`,
/// bandwidth `n^{-1/4}`, no momentum, quasi-Newton Jacobian, Sobol covering,
/// 300 iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Learning rate in (0, 1).
    pub gamma: f64,
    /// Smoothing bandwidth; `None` uses `n^{-1/4}` for the problem at hand.
    pub eps: Option<f64>,
    /// Heavy-ball momentum in [0, 1); 0 disables momentum.
    pub alpha: f64,
    /// Jacobian estimator.
    pub jacobian: JacobianMode,
    /// Covering sequence for the global step; `None` runs local-only
    /// iterations (requires `theta0`).
    pub covering: Option<CoveringConfig>,
    /// Iteration budget.
    pub b_max: usize,
    /// Stopping rule (checked against the budget).
    pub stop: StoppingRule,
    /// Smallest admissible singular value of the Jacobian before the step
    /// switches to a truncated minimum-norm least-squares solve.
    pub sigma_tol: f64,
    /// Starting point; `None` starts at the first covering point.
    pub theta0: Option<Vec<f64>>,
    /// Master seed for all solver-internal randomness.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.1,
            eps: None,
            alpha: 0.0,
            jacobian: JacobianMode::quasi_newton(),
            covering: Some(CoveringConfig::sobol()),
            b_max: 300,
            stop: StoppingRule::FixedIterations,
            sigma_tol: 1e-10,
            theta0: None,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Enable momentum at the rate-optimal `alpha` for the configured
    /// learning rate.
    pub fn with_momentum(mut self) -> Self {
        self.alpha = optimal_alpha(self.gamma).0;
        self
    }

    /// Effective bandwidth for a problem of sample size `n`.
    pub fn effective_eps(&self, n: usize) -> f64 {
        self.eps.unwrap_or((n.max(1) as f64).powf(-0.25))
    }

    fn validate(&self, problem: &dyn MomentProblem) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0,1), got {}", self.alpha)));
        }
        if let Some(eps) = self.eps {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::config(format!("eps must be positive, got {eps}")));
            }
        }
        if self.b_max == 0 {
            return Err(Error::config("b_max must be at least 1"));
        }
        if self.sigma_tol.is_nan() || self.sigma_tol <= 0.0 {
            return Err(Error::config("sigma_tol must be positive"));
        }
        if self.covering.is_none() && self.theta0.is_none() {
            return Err(Error::config(
                "local-only runs (covering = none) need an explicit theta0",
            ));
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != problem.dim_theta() {
                return Err(Error::config(format!(
                    "theta0 has dimension {}, problem expects {}",
                    t0.len(),
                    problem.dim_theta()
                )));
            }
        }
        if problem.dim_moments() < problem.dim_theta() {
            return Err(Error::config(format!(
                "problem is under-identified: p = {} < d_theta = {}",
                problem.dim_moments(),
                problem.dim_theta()
            )));
        }
        if let JacobianMode::QuasiNewton { window: Some(l), .. } = self.jacobian {
            if l < problem.dim_theta() {
                return Err(Error::config(format!(
                    "quasi-Newton window {l} must be at least d_theta {}",
                    problem.dim_theta()
                )));
            }
        }
        Ok(())
    }
}

/// Gauss-Newton direction `(G' W G)^{-1} G' W g`, solved through the SVD of
/// the weighted residual system `chol(W)' G`. Returns the direction, the
/// smallest singular value of `G`, and whether the truncated minimum-norm
/// fallback was used.
fn gauss_newton_direction(
    jac: &DMatrix<f64>,
    w: &WeightMatrix,
    g_val: &MomentValue,
    sigma_tol: f64,
) -> Result<(DVector<f64>, f64, bool)> {
    let sigma_min = jac
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // NaN singular values also fall through to the regularized branch
    let regularized = sigma_min.is_nan() || sigma_min < sigma_tol;
    let lt = w.cholesky_lower().transpose();
    let weighted_jac = &lt * jac;
    let weighted_res = &lt * g_val.as_dvector();
    let svd = weighted_jac.svd(true, true);
    // In the regularized branch, singular values at or below sigma_tol are
    // dropped, giving the minimum-norm least-squares step.
    let cutoff = if regularized { sigma_tol } else { 0.0 };
    let direction = svd
        .solve(&weighted_res, cutoff)
        .map_err(|e| Error::eval(format!("Gauss-Newton solve failed: {e}")))?;
    Ok((direction, sigma_min, regularized))
}

/// One local step from cached moments: clamped
/// `theta_b - gamma * dir + alpha * (theta_b - theta_prev)`.
#[allow(clippy::too_many_arguments)]
fn local_step_from(
    problem: &dyn MomentProblem,
    theta_b: &ParamVector,
    theta_prev: &ParamVector,
    g_val: &MomentValue,
    jac: &DMatrix<f64>,
    w: &WeightMatrix,
    gamma: f64,
    alpha: f64,
    sigma_tol: f64,
) -> Result<(ParamVector, f64, bool)> {
    let (direction, sigma_min, regularized) = gauss_newton_direction(jac, w, g_val, sigma_tol)?;
    let raw = theta_b.as_dvector() - gamma * direction
        + alpha * (theta_b.as_dvector() - theta_prev.as_dvector());
    let next = clamp_to_box(&ParamVector::from_dvector(raw)?, problem.param_box());
    Ok((next, sigma_min, regularized))
}

/// The local Gauss-Newton step with momentum. Evaluates the moments at
/// `theta_b` once; pass `theta_prev = theta_b` on the first iteration.
pub fn local_step(
    problem: &dyn MomentProblem,
    theta_b: &ParamVector,
    theta_prev: &ParamVector,
    jac: &DMatrix<f64>,
    w: &WeightMatrix,
    gamma: f64,
    alpha: f64,
) -> Result<ParamVector> {
    let g_val = problem.moments(theta_b)?;
    let (next, _, _) = local_step_from(
        problem, theta_b, theta_prev, &g_val, jac, w, gamma, alpha, 1e-10,
    )?;
    Ok(next)
}

/// The global comparison step. `norm_local` is the already-known weighted
/// norm at `theta_local`; the candidate costs exactly one extra moment
/// evaluation. The candidate wins only on a strict improvement.
pub fn global_step(
    problem: &dyn MomentProblem,
    theta_local: ParamVector,
    norm_local: f64,
    theta_candidate: ParamVector,
    w: &WeightMatrix,
) -> Result<(ParamVector, f64, StepKind)> {
    let g_cand = problem.moments(&theta_candidate)?;
    let norm_cand = weighted_norm(&g_cand, w)?;
    if norm_cand < norm_local {
        Ok((theta_candidate, norm_cand, StepKind::GlobalReplaced))
    } else {
        Ok((theta_local, norm_local, StepKind::Local))
    }
}

/// Evaluate the stopping rule on the trace collected so far.
///
/// `ChiSquarePlusJ` fires once some iterate's squared weighted norm drops
/// below `chi2_quantile(p, level) / n` *and* `extra_j` further iterations
/// have run. `FixedIterations` never fires here; the budget is enforced by
/// the loop itself.
pub fn stopping_check(trace: &[IterationRecord], rule: &StoppingRule, p: usize, n: usize) -> bool {
    match rule {
        StoppingRule::FixedIterations => false,
        StoppingRule::ChiSquarePlusJ { level, extra_j } => {
            let threshold = match chi2_quantile(p, *level) {
                Ok(q) => q / n.max(1) as f64,
                Err(_) => return false,
            };
            match first_pass_index(trace, threshold) {
                Some(k) => trace.len() > k + extra_j,
                None => false,
            }
        }
    }
}

fn first_pass_index(trace: &[IterationRecord], threshold: f64) -> Option<usize> {
    trace
        .iter()
        .position(|rec| rec.obj_norm * rec.obj_norm <= threshold)
}

/// Run the full solver loop on a problem.
///
/// Deterministic: identical `(problem, w, cfg)` produce a bit-identical
/// trace. Fails with a partial trace if the Jacobian estimate stays rank
/// deficient after retries.
pub fn solve(
    problem: &dyn MomentProblem,
    w: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<SolverResult> {
    cfg.validate(problem)?;
    if w.dim() != problem.dim_moments() {
        return Err(Error::config(format!(
            "weight matrix dimension {} does not match p = {}",
            w.dim(),
            problem.dim_moments()
        )));
    }
    let eps = cfg.effective_eps(problem.sample_size());
    let mut covering = match &cfg.covering {
        Some(cc) => Some(CoveringSequence::new(*cc, problem.param_box().clone())?),
        None => None,
    };

    let theta0 = match &cfg.theta0 {
        Some(values) => ParamVector::new(values.clone())?,
        None => covering
            .as_mut()
            .expect("validated: covering or theta0")
            .next_point(),
    };

    let mut qn_buffer = match cfg.jacobian {
        JacobianMode::QuasiNewton { window, .. } => {
            let l = window.unwrap_or_else(|| default_qn_window(problem.dim_theta()));
            Some(qn_init(
                problem,
                &theta0,
                eps,
                l,
                seeds::derive_seed(&[cfg.seed, seeds::role::QN_INIT]),
            )?)
        }
        _ => None,
    };
    let mut qn_rng = seeds::stream(&[cfg.seed, seeds::role::SOLVER]);

    let mut theta_cur = theta0.clone();
    let mut theta_prev = theta0.clone();
    let mut g_cur = problem.moments(&theta_cur)?;
    let mut norm_cur = weighted_norm(&g_cur, w)?;
    let mut best_theta = theta_cur.clone();
    let mut best_norm = norm_cur;

    let mut trace: Vec<IterationRecord> = Vec::with_capacity(cfg.b_max);
    let mut stopped_by = StopOutcome::FixedIterations;

    for b in 0..cfg.b_max {
        let jac = match cfg.jacobian {
            JacobianMode::ClosedForm => match problem.smoothed_closed_form(&theta_cur, eps) {
                Some(res) => res?.1,
                None => {
                    return Err(Error::Solver {
                        reason: "problem exposes no closed-form smoothed Jacobian".into(),
                        trace,
                    })
                }
            },
            JacobianMode::MonteCarlo { draws } => {
                let sc = SmoothingConfig {
                    eps,
                    draws,
                    seed: seeds::derive_seed(&[cfg.seed, seeds::role::JACOBIAN, b as u64]),
                };
                mc_jacobian(problem, &theta_cur, &sc)?
            }
            JacobianMode::QuasiNewton { directions_per_iter, sample_mean, .. } => {
                let buffer = qn_buffer.as_mut().expect("buffer exists in QN mode");
                if sample_mean {
                    buffer.update(problem, &theta_cur, &g_cur, &mut qn_rng, directions_per_iter)?;
                    buffer.sample_mean_jacobian()
                } else {
                    match qn_update_jacobian(
                        buffer,
                        problem,
                        &theta_cur,
                        &g_cur,
                        &mut qn_rng,
                        directions_per_iter,
                    ) {
                        Ok(j) => j,
                        Err(Error::RankDeficient { sigma_min }) => {
                            return Err(Error::Solver {
                                reason: format!(
                                    "quasi-Newton design stayed rank deficient (sigma_min = {sigma_min:.3e})"
                                ),
                                trace,
                            })
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        };

        let (theta_loc, sigma_min, _regularized) = local_step_from(
            problem,
            &theta_cur,
            &theta_prev,
            &g_cur,
            &jac,
            w,
            cfg.gamma,
            cfg.alpha,
            cfg.sigma_tol,
        )?;
        let g_loc = problem.moments(&theta_loc)?;
        let norm_loc = weighted_norm(&g_loc, w)?;

        let (theta_next, g_next, norm_next, kind) = match covering.as_mut() {
            Some(seq) => {
                let candidate = seq.next_point();
                let g_cand = problem.moments(&candidate)?;
                let norm_cand = weighted_norm(&g_cand, w)?;
                if norm_cand < norm_loc {
                    (candidate, g_cand, norm_cand, StepKind::GlobalReplaced)
                } else {
                    (theta_loc, g_loc, norm_loc, StepKind::Local)
                }
            }
            None => (theta_loc, g_loc, norm_loc, StepKind::Local),
        };

        // momentum is meaningless across a teleport; restart it there
        theta_prev = match kind {
            StepKind::Local => theta_cur.clone(),
            StepKind::GlobalReplaced => theta_next.clone(),
        };
        theta_cur = theta_next;
        g_cur = g_next;
        norm_cur = norm_next;

        if norm_cur < best_norm {
            best_norm = norm_cur;
            best_theta = theta_cur.clone();
        }

        trace.push(IterationRecord {
            b,
            theta: theta_cur.clone(),
            obj_norm: norm_cur,
            step_kind: kind,
            jacobian_sigma_min: sigma_min,
        });

        if stopping_check(&trace, &cfg.stop, problem.dim_moments(), problem.sample_size()) {
            if let StoppingRule::ChiSquarePlusJ { level, .. } = cfg.stop {
                let threshold = chi2_quantile(problem.dim_moments(), level)?
                    / problem.sample_size().max(1) as f64;
                let first_pass = first_pass_index(&trace, threshold).unwrap_or(b);
                stopped_by = StopOutcome::ChiSquareSatisfied { first_pass };
            }
            break;
        }
    }

    Ok(SolverResult {
        theta_best: best_theta,
        best_obj_norm: best_norm,
        iterations_run: trace.len(),
        trace,
        stopped_by,
    })
}

/// Heavy-ball companion matrix `A(gamma, alpha) = [[1-gamma+alpha, -alpha], [1, 0]]`.
pub fn companion_matrix(gamma: f64, alpha: f64) -> Matrix2<f64> {
    Matrix2::new(1.0 - gamma + alpha, -alpha, 1.0, 0.0)
}

/// Effective contraction rate of the momentum iteration:
/// `1 - rho(A(gamma, alpha))` with `rho` the spectral radius, clipped to
/// `[0, 1]`. At `alpha = 0` this reduces to `gamma` exactly.
pub fn companion_rate(gamma: f64, alpha: f64) -> f64 {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    assert!((0.0..1.0).contains(&alpha), "alpha must lie in [0,1)");
    let tr = 1.0 - gamma + alpha;
    let det = alpha;
    let disc = tr * tr - 4.0 * det;
    let rho = if disc >= 0.0 {
        let root = disc.sqrt();
        (0.5 * (tr + root)).abs().max((0.5 * (tr - root)).abs())
    } else {
        det.sqrt()
    };
    (1.0 - rho).clamp(0.0, 1.0)
}

/// A `(gamma, alpha)` pair with its companion matrix and effective rate.
#[derive(Debug, Clone, Copy)]
pub struct CompanionAnalysis {
    /// Learning rate.
    pub gamma: f64,
    /// Momentum parameter.
    pub alpha: f64,
    /// Effective rate `1 - rho(A)`.
    pub rate: f64,
    /// The companion matrix itself.
    pub matrix: Matrix2<f64>,
}

/// Bundle the companion matrix and rate for `(gamma, alpha)`.
pub fn companion_analysis(gamma: f64, alpha: f64) -> CompanionAnalysis {
    CompanionAnalysis {
        gamma,
        alpha,
        rate: companion_rate(gamma, alpha),
        matrix: companion_matrix(gamma, alpha),
    }
}

/// Momentum parameter maximizing the effective rate, found by a grid search
/// over `alpha in [0, 1)` at step 1e-3 (ties broken toward smaller alpha).
/// Returns `(alpha_star, rate)`.
pub fn optimal_alpha(gamma: f64) -> (f64, f64) {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    let mut best = (0.0, companion_rate(gamma, 0.0));
    for i in 1..1000 {
        let alpha = i as f64 * 1e-3;
        let rate = companion_rate(gamma, alpha);
        if rate > best.1 {
            best = (alpha, rate);
        }
    }
    best
}

/// Chi-square quantile (inverse CDF) with `p` degrees of freedom, by
/// bisection on the regularized incomplete gamma function; absolute error
/// below 1e-8.
pub fn chi2_quantile(p: usize, level: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::contract("chi2_quantile needs p >= 1"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::contract(format!(
            "chi2_quantile level must lie in (0,1), got {level}"
        )));
    }
    let a = 0.5 * p as f64;
    let cdf = |x: f64| special::reg_lower_gamma(a, 0.5 * x);
    let mut hi = 2.0 * p as f64 + 20.0;
    while cdf(hi) < level {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::contract("chi2_quantile failed to bracket the level"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
