//! Command-line interface: single solves, Monte-Carlo replication
//! experiments, the momentum table, covering-sequence dumps, and
//! chi-square threshold lookups. Errors exit nonzero after printing one
//! machine-readable JSON line on stderr.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sgn::covering::{
    discrepancy, default_probes, grid_probes_2d, CoveringConfig, CoveringKind, CoveringSequence,
};
use sgn::harness::{run_replications, write_outputs, ExperimentSpec};
use sgn::moments::{ParamBox, WeightMatrix};
use sgn::solver::{chi2_quantile, optimal_alpha, solve};

#[derive(Parser)]
#[command(name = "sgn", version, about = "Smoothed Gauss-Newton moment estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRun {
    /// Experiment configuration file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the spec's output_path).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver once and write the iteration trace as CSV.
    Solve(CommonRun),
    /// Run the full replication experiment and write report CSVs.
    Replicate(CommonRun),
    /// Emit the momentum table: gamma, optimal alpha, effective rate.
    MomentumTable {
        /// Output directory; prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump covering points as CSV plus a discrepancy estimate.
    Cover {
        /// Sequence kind: sobol, halton, or uniform_random.
        #[arg(long, default_value = "sobol")]
        kind: String,
        /// Dimension of the points.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// How many points to emit.
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// Seed (uniform draws / Sobol digital shift).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Digitally shift the Sobol sequence.
        #[arg(long, default_value_t = false)]
        randomize: bool,
        /// Output directory; prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the chi-square stopping threshold for p moments.
    Chi2 {
        /// Degrees of freedom (number of moments).
        #[arg(long)]
        p: usize,
        /// Quantile level, e.g. 0.95.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Sample size; also prints the squared-norm threshold quantile/n.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() {
    if let Err(err) = run() {
        let line = serde_json::json!({ "error": err.to_string() });
        eprintln!("error: {line}");
        std::process::exit(1);
    }
}

fn load_spec(common: &CommonRun) -> sgn::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        spec.master_seed = seed;
    }
    if let Some(workers) = common.workers {
        spec.workers = Some(workers);
    }
    if let Some(out) = &common.out {
        spec.output_path = Some(out.clone());
    }
    Ok(spec)
}

fn run() -> sgn::Result<()> {
    match Cli::parse().command {
        Command::Solve(common) => {
            let spec = load_spec(&common)?;
            let dir = spec.output_path.clone().unwrap_or_else(|| PathBuf::from("out"));
            // single run = replication 0 of the experiment
            let single = ExperimentSpec { replications: 1, ..spec };
            let output = run_replications(&single)?;
            let record = output
                .method("sgn")
                .and_then(|m| m.records[0].clone())
                .ok_or_else(|| sgn::Error::Experiment("single run failed".into()))?;
            std::fs::create_dir_all(&dir)?;
            // re-run through the trace writer for the full per-iteration CSV
            let trace_path = dir.join("trace.csv");
            write_single_trace(&single, &trace_path)?;
            println!("{}", trace_path.display());
            println!(
                "theta_best = {:?}, obj_norm = {:.6e}, iterations = {}",
                record.estimate, record.obj_norm, record.iterations
            );
            Ok(())
        }
        Command::Replicate(common) => {
            let spec = load_spec(&common)?;
            let dir = spec.output_path.clone().unwrap_or_else(|| PathBuf::from("out"));
            let output = run_replications(&spec)?;
            let written = write_outputs(&output, &dir)?;
            for path in written {
                println!("{}", path.display());
            }
            for method in &output.methods {
                let s = &method.summary;
                println!(
                    "method={} used={} errors={} threshold_failures={} mean_obj_norm={:.4e}",
                    method.method,
                    s.replications_used,
                    s.error_count,
                    s.threshold_failures,
                    s.mean_final_obj_norm
                );
            }
            Ok(())
        }
        Command::MomentumTable { out } => {
            let mut text = String::from("gamma,alpha_star,rate\n");
            for gamma in [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8] {
                let (alpha, rate) = optimal_alpha(gamma);
                text.push_str(&format!("{gamma},{alpha:.3},{rate:.4}\n"));
            }
            emit(out.as_deref(), "momentum_table.csv", &text)
        }
        Command::Cover { kind, dim, count, seed, randomize, out } => {
            let kind = match kind.as_str() {
                "sobol" => CoveringKind::Sobol,
                "halton" => CoveringKind::Halton,
                "uniform" | "uniform_random" => CoveringKind::UniformRandom,
                other => {
                    return Err(sgn::Error::Config(format!("unknown covering kind `{other}`")))
                }
            };
            let cfg = CoveringConfig { kind, seed, randomize, include_origin: false };
            let bounds = ParamBox::cube(0.0, 1.0, dim)?;
            let mut seq = CoveringSequence::new(cfg, bounds.clone())?;
            let points = seq.take_points(count);
            let mut text = String::from("k");
            for j in 0..dim {
                text.push_str(&format!(",x_{j}"));
            }
            text.push('\n');
            for (k, p) in points.iter().enumerate() {
                text.push_str(&k.to_string());
                for v in p.values() {
                    text.push_str(&format!(",{v:.12}"));
                }
                text.push('\n');
            }
            let probes = if dim == 2 {
                grid_probes_2d(&bounds, 64)?
            } else {
                default_probes(&bounds, 1 << 14)?
            };
            let d = discrepancy(&points, &probes)?;
            eprintln!("discrepancy_estimate = {d:.6} (over {} probes)", probes.len());
            emit(out.as_deref(), "cover.csv", &text)
        }
        Command::Chi2 { p, level, n } => {
            let q = chi2_quantile(p, level)?;
            println!("chi2_quantile(p={p}, level={level}) = {q:.8}");
            if let Some(n) = n {
                println!("squared-norm threshold quantile/n = {:.10}", q / n as f64);
            }
            Ok(())
        }
    }
}

fn write_single_trace(spec: &ExperimentSpec, path: &std::path::Path) -> sgn::Result<()> {
    // rebuild replication 0 exactly as the harness does, then dump the trace
    use sgn::harness::ProblemKind;
    use sgn::problems::{DdcDesign, DdcProblem, QuantRegProblem, QuantileProblem, TwoBasinProblem};
    use sgn::seeds::{derive_seed, role};

    let data_seed = derive_seed(&[spec.master_seed, 0, role::DATA]);
    let problem: Box<dyn sgn::moments::MomentProblem> = match spec.problem_kind {
        ProblemKind::Quantile => {
            let n = spec.problem_params.get("n").and_then(|v| v.as_u64()).unwrap_or(250) as usize;
            let t = spec.problem_params.get("t").and_then(|v| v.as_f64()).unwrap_or(0.7);
            Box::new(QuantileProblem::standard_normal(n, t, data_seed)?)
        }
        ProblemKind::QuantReg => {
            let n = spec.problem_params.get("n").and_then(|v| v.as_u64()).unwrap_or(200) as usize;
            let t = spec.problem_params.get("t").and_then(|v| v.as_f64()).unwrap_or(0.5);
            let (p, _) = QuantRegProblem::generate(n, &[0.5, 1.0], 1.0, t, data_seed)?;
            Box::new(p)
        }
        ProblemKind::Ddc => {
            let n = spec.problem_params.get("n").and_then(|v| v.as_u64()).unwrap_or(250) as usize;
            let periods =
                spec.problem_params.get("periods").and_then(|v| v.as_u64()).unwrap_or(10) as usize;
            let beta_dim =
                spec.problem_params.get("beta_dim").and_then(|v| v.as_u64()).unwrap_or(14) as usize;
            let sim_seed = derive_seed(&[spec.master_seed, 0, role::SIM]);
            Box::new(DdcProblem::generate(
                DdcDesign::benchmark(n, periods, beta_dim),
                data_seed,
                sim_seed,
            )?)
        }
        ProblemKind::Toy => Box::new(TwoBasinProblem::benchmark()),
    };
    let w = WeightMatrix::identity(problem.dim_moments());
    let mut cfg = spec.solver.clone();
    cfg.seed = derive_seed(&[spec.master_seed, 0, role::SOLVER, 0]);
    if let Some(cov) = &mut cfg.covering {
        cov.seed = derive_seed(&[spec.master_seed, 0, role::COVER, 0]);
    }
    let result = solve(problem.as_ref(), &w, &cfg)?;
    let mut file = std::fs::File::create(path)?;
    result.write_trace_csv(&mut file)?;
    Ok(())
}

fn emit(out: Option<&std::path::Path>, name: &str, text: &str) -> sgn::Result<()> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path)?;
            f.write_all(text.as_bytes())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
