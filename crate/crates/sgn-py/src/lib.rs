//! Python bindings for the smoothed Gauss-Newton moment-estimation library.
//!
//! Exposes the benchmark problems, the solver with its tuning knobs, the
//! momentum/companion analysis, chi-square thresholds, covering sequences,
//! and the replication harness (as a JSON-summary call). See
//! `python/smoke_test.py` at the repository root for a worked example.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sgn::covering::{CoveringConfig, CoveringKind, CoveringSequence};
use sgn::harness;
use sgn::moments::{MomentProblem, ParamBox, ParamVector, WeightMatrix};
use sgn::problems;
use sgn::solver;

fn err(e: sgn::Error) -> PyErr {
    match e {
        sgn::Error::Contract(_) | sgn::Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Solver tuning; mirrors the library defaults.
#[pyclass(name = "SolverConfig", skip_from_py_object)]
#[derive(Clone)]
struct PySolverConfig {
    inner: solver::SolverConfig,
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        gamma = 0.1, eps = None, alpha = 0.0, jacobian = "quasi_newton",
        draws = 100, window = None, directions_per_iter = 1, sample_mean = false,
        covering = "sobol", randomize = false, seed = 0, b_max = 300,
        stop_level = None, extra_j = 0, sigma_tol = 1e-10, theta0 = None,
    ))]
    fn new(
        gamma: f64,
        eps: Option<f64>,
        alpha: f64,
        jacobian: &str,
        draws: usize,
        window: Option<usize>,
        directions_per_iter: usize,
        sample_mean: bool,
        covering: &str,
        randomize: bool,
        seed: u64,
        b_max: usize,
        stop_level: Option<f64>,
        extra_j: usize,
        sigma_tol: f64,
        theta0: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let jacobian = match jacobian {
            "closed_form" => solver::JacobianMode::ClosedForm,
            "monte_carlo" => solver::JacobianMode::MonteCarlo { draws },
            "quasi_newton" => solver::JacobianMode::QuasiNewton {
                window,
                directions_per_iter,
                sample_mean,
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown jacobian mode `{other}` (closed_form, monte_carlo, quasi_newton)"
                )))
            }
        };
        let covering = match covering {
            "none" => None,
            "sobol" => Some(CoveringConfig {
                kind: CoveringKind::Sobol,
                seed,
                randomize,
                include_origin: false,
            }),
            "halton" => Some(CoveringConfig {
                kind: CoveringKind::Halton,
                seed,
                randomize: false,
                include_origin: false,
            }),
            "uniform" | "uniform_random" => Some(CoveringConfig {
                kind: CoveringKind::UniformRandom,
                seed,
                randomize: false,
                include_origin: false,
            }),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown covering kind `{other}` (sobol, halton, uniform, none)"
                )))
            }
        };
        let stop = match stop_level {
            None => solver::StoppingRule::FixedIterations,
            Some(level) => solver::StoppingRule::ChiSquarePlusJ { level, extra_j },
        };
        Ok(PySolverConfig {
            inner: solver::SolverConfig {
                gamma,
                eps,
                alpha,
                jacobian,
                covering,
                b_max,
                stop,
                sigma_tol,
                theta0,
                seed,
            },
        })
    }

    /// Set momentum to the rate-optimal value for the configured gamma.
    fn with_momentum(&self) -> Self {
        PySolverConfig { inner: self.inner.clone().with_momentum() }
    }

    fn __repr__(&self) -> String {
        format!(
            "SolverConfig(gamma={}, eps={:?}, alpha={}, b_max={})",
            self.inner.gamma, self.inner.eps, self.inner.alpha, self.inner.b_max
        )
    }
}

/// Solver output: best iterate plus the per-iteration trace.
#[pyclass(name = "SolverResult")]
struct PySolverResult {
    inner: solver::SolverResult,
}

#[pymethods]
impl PySolverResult {
    /// The best iterate (smallest weighted moment norm).
    #[getter]
    fn theta_best(&self) -> Vec<f64> {
        self.inner.theta_best.values().to_vec()
    }

    /// Weighted moment norm at the best iterate.
    #[getter]
    fn best_obj_norm(&self) -> f64 {
        self.inner.best_obj_norm
    }

    /// Number of iterations run.
    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    /// Trace rows `(b, theta, obj_norm, step_kind, sigma_min)`.
    #[getter]
    fn trace(&self) -> Vec<(usize, Vec<f64>, f64, String, f64)> {
        self.inner
            .trace
            .iter()
            .map(|rec| {
                let kind = match rec.step_kind {
                    solver::StepKind::Local => "local".to_string(),
                    solver::StepKind::GlobalReplaced => "global".to_string(),
                };
                (
                    rec.b,
                    rec.theta.values().to_vec(),
                    rec.obj_norm,
                    kind,
                    rec.jacobian_sigma_min,
                )
            })
            .collect()
    }

    /// The full trace as CSV text.
    fn trace_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner
            .write_trace_csv(&mut buf)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "SolverResult(theta_best={:?}, best_obj_norm={:.3e}, iterations={})",
            self.inner.theta_best.values(),
            self.inner.best_obj_norm,
            self.inner.iterations_run
        )
    }
}

fn run_solve(
    problem: &dyn MomentProblem,
    cfg: &PySolverConfig,
    weights: Option<Vec<f64>>,
) -> PyResult<PySolverResult> {
    let w = match weights {
        None => WeightMatrix::identity(problem.dim_moments()),
        Some(diag) => WeightMatrix::diagonal(diag).map_err(err)?,
    };
    solver::solve(problem, &w, &cfg.inner)
        .map(|inner| PySolverResult { inner })
        .map_err(err)
}

fn run_baseline(
    problem: &dyn MomentProblem,
    cfg: &PySolverConfig,
    weights: Option<Vec<f64>>,
) -> PyResult<PySolverResult> {
    let w = match weights {
        None => WeightMatrix::identity(problem.dim_moments()),
        Some(diag) => WeightMatrix::diagonal(diag).map_err(err)?,
    };
    problems::baseline_smoothed_gn_solve(problem, &w, &cfg.inner)
        .map(|inner| PySolverResult { inner })
        .map_err(err)
}

/// Sample quantile estimation problem.
#[pyclass(name = "QuantileProblem")]
struct PyQuantileProblem {
    inner: problems::QuantileProblem,
}

#[pymethods]
impl PyQuantileProblem {
    #[new]
    fn new(data: Vec<f64>, t: f64) -> PyResult<Self> {
        problems::QuantileProblem::new(data, t)
            .map(|inner| PyQuantileProblem { inner })
            .map_err(err)
    }

    /// Fresh standard normal data of size `n`.
    #[staticmethod]
    fn standard_normal(n: usize, t: f64, seed: u64) -> PyResult<Self> {
        problems::QuantileProblem::standard_normal(n, t, seed)
            .map(|inner| PyQuantileProblem { inner })
            .map_err(err)
    }

    /// Raw moment `F_n(theta) - t`.
    fn moments(&self, theta: f64) -> f64 {
        self.inner.raw_moment(theta)
    }

    /// Closed-form smoothed moment and Jacobian (kernel density).
    fn smoothed(&self, theta: f64, eps: f64) -> (f64, f64) {
        self.inner.smoothed(theta, eps)
    }

    /// Midpoint of the exact-root interval of order statistics.
    fn gmm_root_midpoint(&self) -> f64 {
        self.inner.gmm_root_midpoint()
    }

    /// Standard error `sqrt(t(1-t)/n) / f_eps(theta_hat)`.
    fn std_err(&self, theta_hat: f64, eps: f64) -> f64 {
        self.inner.std_err(theta_hat, eps)
    }

    /// The sorted dataset.
    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    /// Run the smoothed Gauss-Newton solver.
    #[pyo3(signature = (config, weights = None))]
    fn solve(&self, config: &PySolverConfig, weights: Option<Vec<f64>>) -> PyResult<PySolverResult> {
        run_solve(&self.inner, config, weights)
    }

    /// Run the smoothed-moment baseline (Gauss-Newton on smoothed moments).
    #[pyo3(signature = (config, weights = None))]
    fn solve_smoothed_baseline(
        &self,
        config: &PySolverConfig,
        weights: Option<Vec<f64>>,
    ) -> PyResult<PySolverResult> {
        run_baseline(&self.inner, config, weights)
    }
}

/// Quantile regression with instruments.
#[pyclass(name = "QuantRegProblem")]
struct PyQuantRegProblem {
    inner: problems::QuantRegProblem,
}

#[pymethods]
impl PyQuantRegProblem {
    /// Generate a Gaussian design; returns `(problem, true_coefficients)`.
    #[staticmethod]
    fn generate(
        n: usize,
        beta: Vec<f64>,
        sigma: f64,
        t: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let (inner, truth) =
            problems::QuantRegProblem::generate(n, &beta, sigma, t, seed).map_err(err)?;
        Ok((PyQuantRegProblem { inner }, truth.values().to_vec()))
    }

    /// Raw indicator moments.
    fn moments(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(theta).map_err(err)?;
        Ok(self.inner.raw_moments(&theta).as_slice().to_vec())
    }

    /// Closed-form smoothed moments and Jacobian (row-major nested lists).
    fn smoothed(&self, theta: Vec<f64>, eps: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let theta = ParamVector::new(theta).map_err(err)?;
        let (m, jac) = self.inner.smoothed_moments_jacobian(&theta, eps);
        let rows = (0..jac.nrows())
            .map(|i| (0..jac.ncols()).map(|j| jac[(i, j)]).collect())
            .collect();
        Ok((m.as_slice().to_vec(), rows))
    }

    #[pyo3(signature = (config, weights = None))]
    fn solve(&self, config: &PySolverConfig, weights: Option<Vec<f64>>) -> PyResult<PySolverResult> {
        run_solve(&self.inner, config, weights)
    }
}

/// Panel dynamic discrete choice estimated by simulated method of moments.
#[pyclass(name = "DdcProblem")]
struct PyDdcProblem {
    inner: problems::DdcProblem,
    design: problems::DdcDesign,
}

#[pymethods]
impl PyDdcProblem {
    /// Generate the benchmark design at the given sizes.
    #[staticmethod]
    fn generate(
        n: usize,
        periods: usize,
        beta_dim: usize,
        data_seed: u64,
        sim_seed: u64,
    ) -> PyResult<Self> {
        let design = problems::DdcDesign::benchmark(n, periods, beta_dim);
        problems::DdcProblem::generate(design.clone(), data_seed, sim_seed)
            .map(|inner| PyDdcProblem { inner, design })
            .map_err(err)
    }

    /// The data-generating parameters `(beta, rho)`.
    fn theta_dagger(&self) -> Vec<f64> {
        self.design.theta_dagger().values().to_vec()
    }

    /// Simulated-moment difference at `theta`.
    fn moments(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(theta).map_err(err)?;
        Ok(self.inner.moments(&theta).map_err(err)?.values().to_vec())
    }

    /// Smoothed-simulator moments at bandwidth `eps`.
    fn smoothed_moments(&self, theta: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(theta).map_err(err)?;
        Ok(self
            .inner
            .smoothed_eval(&theta, eps)
            .map_err(err)?
            .values()
            .to_vec())
    }

    #[pyo3(signature = (config, weights = None))]
    fn solve(&self, config: &PySolverConfig, weights: Option<Vec<f64>>) -> PyResult<PySolverResult> {
        run_solve(&self.inner, config, weights)
    }
}

/// Two-basin toy moment map `(theta^2 - 1, c (theta - 1))`.
#[pyclass(name = "TwoBasinProblem")]
struct PyTwoBasinProblem {
    inner: problems::TwoBasinProblem,
}

#[pymethods]
impl PyTwoBasinProblem {
    #[new]
    #[pyo3(signature = (weight = 0.5, lo = -3.0, hi = 3.0))]
    fn new(weight: f64, lo: f64, hi: f64) -> PyResult<Self> {
        problems::TwoBasinProblem::new(weight, lo, hi)
            .map(|inner| PyTwoBasinProblem { inner })
            .map_err(err)
    }

    fn moments(&self, theta: f64) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(vec![theta]).map_err(err)?;
        Ok(self.inner.moments(&theta).map_err(err)?.values().to_vec())
    }

    /// The exact root selected by the second moment.
    #[getter]
    fn global_root(&self) -> f64 {
        self.inner.global_root()
    }

    #[pyo3(signature = (config, weights = None))]
    fn solve(&self, config: &PySolverConfig, weights: Option<Vec<f64>>) -> PyResult<PySolverResult> {
        run_solve(&self.inner, config, weights)
    }
}

/// Chi-square quantile with `p` degrees of freedom.
#[pyfunction]
fn chi2_quantile(p: usize, level: f64) -> PyResult<f64> {
    solver::chi2_quantile(p, level).map_err(err)
}

/// Effective momentum contraction rate `1 - rho(A(gamma, alpha))`.
#[pyfunction]
fn companion_rate(gamma: f64, alpha: f64) -> f64 {
    solver::companion_rate(gamma, alpha)
}

/// Rate-optimal momentum `(alpha_star, rate)` for a learning rate.
#[pyfunction]
fn optimal_alpha(gamma: f64) -> (f64, f64) {
    solver::optimal_alpha(gamma)
}

/// The `(gamma, alpha_star, rate)` table over the published gamma grid.
#[pyfunction]
fn momentum_table() -> Vec<(f64, f64, f64)> {
    [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8]
        .iter()
        .map(|&gamma| {
            let (alpha, rate) = solver::optimal_alpha(gamma);
            (gamma, alpha, rate)
        })
        .collect()
}

/// First `count` points of a covering sequence on the unit cube.
#[pyfunction]
#[pyo3(signature = (kind, dim, count, seed = 0, randomize = false, include_origin = false))]
fn covering_points(
    kind: &str,
    dim: usize,
    count: usize,
    seed: u64,
    randomize: bool,
    include_origin: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let kind = match kind {
        "sobol" => CoveringKind::Sobol,
        "halton" => CoveringKind::Halton,
        "uniform" | "uniform_random" => CoveringKind::UniformRandom,
        other => return Err(PyValueError::new_err(format!("unknown covering kind `{other}`"))),
    };
    let cfg = CoveringConfig { kind, seed, randomize, include_origin };
    let bounds = ParamBox::cube(0.0, 1.0, dim).map_err(err)?;
    let mut seq = CoveringSequence::new(cfg, bounds).map_err(err)?;
    Ok(seq
        .take_points(count)
        .into_iter()
        .map(|p| p.values().to_vec())
        .collect())
}

/// Covering discrepancy estimate `max_probe min_point ||probe - point||`.
#[pyfunction]
fn discrepancy(points: Vec<Vec<f64>>, probes: Vec<Vec<f64>>) -> PyResult<f64> {
    let to_params = |rows: Vec<Vec<f64>>| -> sgn::Result<Vec<ParamVector>> {
        rows.into_iter().map(ParamVector::new).collect()
    };
    let points = to_params(points).map_err(err)?;
    let probes = to_params(probes).map_err(err)?;
    sgn::covering::discrepancy(&points, &probes).map_err(err)
}

/// Run a replication experiment from a TOML or JSON spec string; returns
/// the per-method summaries as a JSON string.
#[pyfunction]
fn run_experiment(spec_text: &str) -> PyResult<String> {
    let spec = harness::ExperimentSpec::from_text(spec_text).map_err(err)?;
    let output = harness::run_replications(&spec).map_err(err)?;
    let methods: Vec<serde_json::Value> = output
        .methods
        .iter()
        .map(|m| {
            serde_json::json!({
                "method": m.method,
                "summary": m.summary,
            })
        })
        .collect();
    let value = serde_json::json!({
        "theta_dagger": output.theta_dagger,
        "methods": methods,
    });
    Ok(value.to_string())
}

#[pymodule]
fn sgn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PySolverResult>()?;
    m.add_class::<PyQuantileProblem>()?;
    m.add_class::<PyQuantRegProblem>()?;
    m.add_class::<PyDdcProblem>()?;
    m.add_class::<PyTwoBasinProblem>()?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(companion_rate, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(momentum_table, m)?)?;
    m.add_function(wrap_pyfunction!(covering_points, m)?)?;
    m.add_function(wrap_pyfunction!(discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
