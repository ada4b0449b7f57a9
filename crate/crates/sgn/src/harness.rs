//! Seeded Monte-Carlo replication harness.
//!
//! An [`ExperimentSpec`] names a problem family, its parameters, a solver
//! configuration, and optionally a smoothed-moment baseline. The runner
//! derives child seeds from `(master_seed, replication, role)` so that
//! data generation, simulation shocks, and solver randomness never collide,
//! replications are independent of execution order and worker count, and
//! shrinking the replication count reproduces a prefix of the larger run.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, ParamVector, WeightMatrix};
use crate::problems::{
    baseline_smoothed_gn_solve, DdcDesign, DdcProblem, QuantRegProblem, QuantileProblem,
    TwoBasinProblem,
};
use crate::seeds::{self, role};
use crate::solver::{chi2_quantile, solve, SolverConfig, StoppingRule};
use crate::special;

/// Critical value for the 5% two-sided normal test.
const Z_5PC: f64 = 1.95996;

/// Which benchmark family an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Sample quantile of standard normal data.
    Quantile,
    /// Quantile regression with generated Gaussian design.
    QuantReg,
    /// Panel dynamic discrete choice SMM.
    Ddc,
    /// Two-basin toy map (no data; tests the global step).
    Toy,
}

/// A full experiment description; maps 1:1 onto the TOML/JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Problem family.
    pub problem_kind: ProblemKind,
    /// Family-specific parameters (sizes, levels, truths).
    #[serde(default)]
    pub problem_params: BTreeMap<String, serde_json::Value>,
    /// Solver configuration for the smoothed Gauss-Newton run.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Optional smoothed-GMM baseline configuration.
    #[serde(default)]
    pub baseline: Option<SolverConfig>,
    /// Number of Monte-Carlo replications.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Master seed all child seeds derive from.
    #[serde(default)]
    pub master_seed: u64,
    /// Where to write the CSV reports (optional; the CLI can override).
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Worker threads for the replication loop (`None` = rayon default).
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_replications() -> usize {
    100
}

impl ExperimentSpec {
    /// Parse a TOML or JSON experiment file (JSON when the text starts
    /// with `{`).
    pub fn from_text(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            serde_json::from_str(trimmed)
                .map_err(|e| Error::config(format!("invalid JSON experiment spec: {e}")))
        } else {
            toml::from_str(trimmed)
                .map_err(|e| Error::config(format!("invalid TOML experiment spec: {e}")))
        }
    }

    /// Load a spec from disk.
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.problem_params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::config(format!("problem parameter `{key}` must be a number"))),
        }
    }

    fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.problem_params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::config(format!("problem parameter `{key}` must be a nonnegative integer"))),
        }
    }

    fn param_vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.problem_params.get(key) {
            None => Ok(None),
            Some(serde_json::Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| Error::config(format!("`{key}` entries must be numbers")))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(_) => Err(Error::config(format!("problem parameter `{key}` must be an array"))),
        }
    }
}

/// Per-coefficient replication statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    /// Coefficient index.
    pub coefficient: usize,
    /// Mean estimate.
    pub avg: f64,
    /// Standard deviation of the estimates.
    pub std: f64,
    /// `avg - theta_dagger`.
    pub bias: f64,
    /// Mean absolute error against the truth.
    pub mae: f64,
    /// Rejection rate of `H0: theta = theta_dagger` at 5%, when standard
    /// errors are available.
    pub size: Option<f64>,
}

/// Summary of one method over all replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    /// Per-coefficient statistics over the non-failed replications.
    pub per_coefficient: Vec<CoefficientSummary>,
    /// Mean final weighted moment norm.
    pub mean_final_obj_norm: f64,
    /// Replications whose final squared weighted norm exceeded the
    /// chi-square threshold (still included in the statistics above).
    pub threshold_failures: usize,
    /// Hard failures (excluded from the statistics).
    pub error_count: usize,
    /// Replications entering the statistics.
    pub replications_used: usize,
}

/// One successful replication of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    /// Replication index.
    pub replication: usize,
    /// Estimated parameter vector.
    pub estimate: Vec<f64>,
    /// Final weighted moment norm at the estimate.
    pub obj_norm: f64,
    /// Iterations the solver ran.
    pub iterations: usize,
    /// Per-coefficient standard errors when the family provides them.
    pub std_errs: Option<Vec<f64>>,
}

/// All replications of one method plus their summary.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    /// Method tag: `sgn`, `smoothed`, or `direct`.
    pub method: String,
    /// Records in replication order; `None` marks a hard failure.
    pub records: Vec<Option<ReplicationRecord>>,
    /// Failure messages keyed by replication.
    pub errors: Vec<(usize, String)>,
    /// The aggregated summary.
    pub summary: ReplicationSummary,
}

/// Full experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// One entry per method that ran.
    pub methods: Vec<MethodOutput>,
    /// The data-generating truth the summaries are measured against.
    pub theta_dagger: Vec<f64>,
}

impl ExperimentOutput {
    /// The output of a method by tag.
    pub fn method(&self, tag: &str) -> Option<&MethodOutput> {
        self.methods.iter().find(|m| m.method == tag)
    }
}

/// Per-coefficient statistics of a list of estimates against the truth.
/// `std_errs`, when given, must hold one standard-error vector per
/// estimate; the test size is the fraction of replications with
/// `|estimate - truth| / se > 1.95996`, coefficient by coefficient.
pub fn summarize(
    estimates: &[ParamVector],
    theta_dagger: &ParamVector,
    std_errs: Option<&[Vec<f64>]>,
) -> Result<Vec<CoefficientSummary>> {
    if estimates.is_empty() {
        return Err(Error::contract("summarize needs at least one estimate"));
    }
    let d = theta_dagger.dim();
    if estimates.iter().any(|e| e.dim() != d) {
        return Err(Error::contract("estimate dimension mismatch"));
    }
    if let Some(ses) = std_errs {
        if ses.len() != estimates.len() || ses.iter().any(|s| s.len() != d) {
            return Err(Error::contract("std_errs shape mismatch"));
        }
    }
    let r = estimates.len() as f64;
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let truth = theta_dagger.values()[j];
        let values: Vec<f64> = estimates.iter().map(|e| e.values()[j]).collect();
        let avg = values.iter().sum::<f64>() / r;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let mae = values.iter().map(|v| (v - truth).abs()).sum::<f64>() / r;
        let size = std_errs.map(|ses| {
            let rejections = values
                .iter()
                .zip(ses)
                .filter(|(v, se)| ((*v - truth) / se[j]).abs() > Z_5PC)
                .count();
            rejections as f64 / r
        });
        out.push(CoefficientSummary {
            coefficient: j,
            avg,
            std: var.sqrt(),
            bias: avg - truth,
            mae,
            size,
        });
    }
    Ok(out)
}

/// One replication's problem instance and truth.
struct Instance {
    problem: Box<dyn MomentProblem>,
    theta_dagger: ParamVector,
    /// Per-replication starting point override (Toy draws it).
    theta0: Option<Vec<f64>>,
    /// Direct (solver-free) estimate when the family has one.
    direct: Option<f64>,
    /// Standard-error callback `(estimate, eps) -> se vector`.
    quantile: Option<QuantileProblem>,
}

fn build_instance(spec: &ExperimentSpec, rep: usize) -> Result<Instance> {
    let data_seed = seeds::derive_seed(&[spec.master_seed, rep as u64, role::DATA]);
    match spec.problem_kind {
        ProblemKind::Quantile => {
            let n = spec.param_usize("n", 250)?;
            let t = spec.param_f64("t", 0.7)?;
            let problem = QuantileProblem::standard_normal(n, t, data_seed)?;
            let direct = Some(problem.gmm_root_midpoint());
            Ok(Instance {
                theta_dagger: ParamVector::new(vec![special::std_normal_quantile(t)])?,
                theta0: None,
                direct,
                quantile: Some(problem.clone()),
                problem: Box::new(problem),
            })
        }
        ProblemKind::QuantReg => {
            let n = spec.param_usize("n", 200)?;
            let t = spec.param_f64("t", 0.5)?;
            let sigma = spec.param_f64("sigma", 1.0)?;
            let beta = spec.param_vec("beta")?.unwrap_or_else(|| vec![0.5, 1.0]);
            let (problem, truth) = QuantRegProblem::generate(n, &beta, sigma, t, data_seed)?;
            Ok(Instance {
                problem: Box::new(problem),
                theta_dagger: truth,
                theta0: None,
                direct: None,
                quantile: None,
            })
        }
        ProblemKind::Ddc => {
            let n = spec.param_usize("n", 250)?;
            let periods = spec.param_usize("periods", 10)?;
            let beta_dim = spec.param_usize("beta_dim", 14)?;
            let design = DdcDesign::benchmark(n, periods, beta_dim);
            let sim_seed = seeds::derive_seed(&[spec.master_seed, rep as u64, role::SIM]);
            let problem = DdcProblem::generate(design.clone(), data_seed, sim_seed)?;
            Ok(Instance {
                theta_dagger: design.theta_dagger(),
                theta0: None,
                direct: None,
                quantile: None,
                problem: Box::new(problem),
            })
        }
        ProblemKind::Toy => {
            let weight = spec.param_f64("weight", 0.5)?;
            let lo = spec.param_f64("lo", -3.0)?;
            let hi = spec.param_f64("hi", 3.0)?;
            let problem = TwoBasinProblem::new(weight, lo, hi)?;
            // optional per-replication uniform starting point
            let theta0 = match (self_param(spec, "theta0_min")?, self_param(spec, "theta0_max")?) {
                (Some(a), Some(b)) => {
                    let mut rng = seeds::stream(&[data_seed]);
                    let u: f64 = rand::Rng::random(&mut rng);
                    Some(vec![a + u * (b - a)])
                }
                _ => None,
            };
            Ok(Instance {
                theta_dagger: ParamVector::new(vec![problem.global_root()])?,
                theta0,
                direct: None,
                quantile: None,
                problem: Box::new(problem),
            })
        }
    }
}

fn self_param(spec: &ExperimentSpec, key: &str) -> Result<Option<f64>> {
    match spec.problem_params.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::config(format!("problem parameter `{key}` must be a number"))),
    }
}

/// Reseed a solver configuration for one replication.
fn reseed(cfg: &SolverConfig, master: u64, rep: usize, salt: u64) -> SolverConfig {
    let mut out = cfg.clone();
    out.seed = seeds::derive_seed(&[master, rep as u64, role::SOLVER, salt]);
    if let Some(cov) = &mut out.covering {
        cov.seed = seeds::derive_seed(&[master, rep as u64, role::COVER, salt]);
    }
    out
}

struct RepOutcome {
    sgn: std::result::Result<ReplicationRecord, String>,
    baseline: Option<std::result::Result<ReplicationRecord, String>>,
    direct: Option<ReplicationRecord>,
}

fn run_one(spec: &ExperimentSpec, rep: usize) -> Result<RepOutcome> {
    let instance = build_instance(spec, rep)?;
    let problem = instance.problem.as_ref();
    let w = WeightMatrix::identity(problem.dim_moments());

    let mut solver_cfg = reseed(&spec.solver, spec.master_seed, rep, 0);
    if solver_cfg.theta0.is_none() {
        solver_cfg.theta0 = instance.theta0.clone();
    }
    let sgn_eps = solver_cfg.effective_eps(problem.sample_size());
    let sgn = match solve(problem, &w, &solver_cfg) {
        Ok(result) => Ok(ReplicationRecord {
            replication: rep,
            estimate: result.theta_best.values().to_vec(),
            obj_norm: result.best_obj_norm,
            iterations: result.iterations_run,
            std_errs: instance
                .quantile
                .as_ref()
                .map(|q| vec![q.std_err(result.theta_best.values()[0], sgn_eps)]),
        }),
        Err(e) => Err(e.to_string()),
    };

    let baseline = match &spec.baseline {
        None => None,
        Some(cfg) => {
            let mut cfg = reseed(cfg, spec.master_seed, rep, 1);
            if cfg.theta0.is_none() {
                cfg.theta0 = instance.theta0.clone();
            }
            let eps = cfg.effective_eps(problem.sample_size());
            Some(match baseline_smoothed_gn_solve(problem, &w, &cfg) {
                Ok(result) => Ok(ReplicationRecord {
                    replication: rep,
                    estimate: result.theta_best.values().to_vec(),
                    obj_norm: result.best_obj_norm,
                    iterations: result.iterations_run,
                    std_errs: instance
                        .quantile
                        .as_ref()
                        .map(|q| vec![q.std_err(result.theta_best.values()[0], eps)]),
                }),
                Err(e) => Err(e.to_string()),
            })
        }
    };

    let direct = instance.direct.map(|estimate| {
        let obj_norm = instance
            .quantile
            .as_ref()
            .map(|q| q.raw_moment(estimate).abs())
            .unwrap_or(0.0);
        ReplicationRecord {
            replication: rep,
            estimate: vec![estimate],
            obj_norm,
            iterations: 0,
            std_errs: instance
                .quantile
                .as_ref()
                .map(|q| vec![q.std_err(estimate, sgn_eps)]),
        }
    });

    Ok(RepOutcome { sgn, baseline, direct })
}

fn assemble(
    method: &str,
    outcomes: Vec<(usize, std::result::Result<ReplicationRecord, String>)>,
    theta_dagger: &ParamVector,
    chi2_threshold: f64,
) -> Result<MethodOutput> {
    let total = outcomes.len();
    let mut records: Vec<Option<ReplicationRecord>> = vec![None; total];
    let mut errors = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(rec) => records[rep] = Some(rec),
            Err(msg) => errors.push((rep, msg)),
        }
    }
    let good: Vec<&ReplicationRecord> = records.iter().flatten().collect();
    if good.is_empty() {
        return Err(Error::Experiment(format!(
            "every replication of method `{method}` failed"
        )));
    }
    let estimates: Vec<ParamVector> = good
        .iter()
        .map(|r| ParamVector::new(r.estimate.clone()))
        .collect::<Result<_>>()?;
    let std_errs: Option<Vec<Vec<f64>>> = if good.iter().all(|r| r.std_errs.is_some()) {
        Some(good.iter().map(|r| r.std_errs.clone().unwrap()).collect())
    } else {
        None
    };
    let per_coefficient = summarize(&estimates, theta_dagger, std_errs.as_deref())?;
    let mean_final_obj_norm = good.iter().map(|r| r.obj_norm).sum::<f64>() / good.len() as f64;
    let threshold_failures = good
        .iter()
        .filter(|r| r.obj_norm * r.obj_norm > chi2_threshold)
        .count();
    Ok(MethodOutput {
        method: method.to_string(),
        errors,
        summary: ReplicationSummary {
            per_coefficient,
            mean_final_obj_norm,
            threshold_failures,
            error_count: total - good.len(),
            replications_used: good.len(),
        },
        records,
    })
}

/// Run every replication of the experiment and aggregate the summaries.
///
/// Replications run on a rayon pool (`spec.workers` threads when set); the
/// output is independent of the worker count and execution order.
pub fn run_replications(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    if spec.replications == 0 {
        return Err(Error::config("replications must be at least 1"));
    }
    let run_all = || -> Result<Vec<RepOutcome>> {
        (0..spec.replications)
            .into_par_iter()
            .map(|rep| run_one(spec, rep))
            .collect()
    };
    let outcomes = match spec.workers {
        None => run_all()?,
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::config(format!("failed to build worker pool: {e}")))?
            .install(run_all)?,
    };

    // truth is replication independent; take it from replication 0
    let instance0 = build_instance(spec, 0)?;
    let theta_dagger = instance0.theta_dagger.clone();
    let p = instance0.problem.dim_moments();
    let n = instance0.problem.sample_size();
    let level = match spec.solver.stop {
        StoppingRule::ChiSquarePlusJ { level, .. } => level,
        StoppingRule::FixedIterations => 0.95,
    };
    let chi2_threshold = chi2_quantile(p, level)? / n.max(1) as f64;

    let mut methods = Vec::new();
    methods.push(assemble(
        "sgn",
        outcomes.iter().enumerate().map(|(r, o)| (r, o.sgn.clone())).collect(),
        &theta_dagger,
        chi2_threshold,
    )?);
    if spec.baseline.is_some() {
        methods.push(assemble(
            "smoothed",
            outcomes
                .iter()
                .enumerate()
                .filter_map(|(r, o)| o.baseline.clone().map(|b| (r, b)))
                .collect(),
            &theta_dagger,
            chi2_threshold,
        )?);
    }
    if outcomes.iter().any(|o| o.direct.is_some()) {
        methods.push(assemble(
            "direct",
            outcomes
                .iter()
                .enumerate()
                .filter_map(|(r, o)| o.direct.clone().map(Ok).map(|d| (r, d)))
                .collect(),
            &theta_dagger,
            chi2_threshold,
        )?);
    }

    Ok(ExperimentOutput { methods, theta_dagger: theta_dagger.values().to_vec() })
}

/// Write per-replication and summary CSVs for every method into `dir`.
/// Returns the created paths.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for method in &output.methods {
        let rep_path = dir.join(format!("replications_{}.csv", method.method));
        let mut f = std::fs::File::create(&rep_path)?;
        writeln!(f, "replication,coefficient,estimate,obj_norm,iterations")?;
        for rec in output_records(method) {
            for (j, est) in rec.estimate.iter().enumerate() {
                writeln!(
                    f,
                    "{},{},{:.17e},{:.17e},{}",
                    rec.replication, j, est, rec.obj_norm, rec.iterations
                )?;
            }
        }
        written.push(rep_path);

        let sum_path = dir.join(format!("summary_{}.csv", method.method));
        let mut f = std::fs::File::create(&sum_path)?;
        writeln!(f, "coefficient,avg,std,bias,mae,size")?;
        for c in &method.summary.per_coefficient {
            let size = c.size.map(|s| format!("{s:.6}")).unwrap_or_default();
            writeln!(
                f,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{size}",
                c.coefficient, c.avg, c.std, c.bias, c.mae
            )?;
        }
        written.push(sum_path);
    }
    let diag_path = dir.join("diagnostics.csv");
    let mut f = std::fs::File::create(&diag_path)?;
    writeln!(
        f,
        "method,mean_final_obj_norm,threshold_failures,error_count,replications_used"
    )?;
    for method in &output.methods {
        let s = &method.summary;
        writeln!(
            f,
            "{},{:.17e},{},{},{}",
            method.method, s.mean_final_obj_norm, s.threshold_failures, s.error_count, s.replications_used
        )?;
    }
    written.push(diag_path);
    Ok(written)
}

fn output_records(method: &MethodOutput) -> impl Iterator<Item = &ReplicationRecord> {
    method.records.iter().flatten()
}
