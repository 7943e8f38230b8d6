//! `dapdb`: generate instances, solve references, run and compare the
//! decentralized primal-dual methods.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 some seeds
//! of a comparison failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dapdb_core::experiment::{generate, run_experiment};
use dapdb_core::metrics::csv_export;
use dapdb_core::oracle::{attach_reference, refine_dual_bounds, DEFAULT_TOL};
use dapdb_core::run::run_with;
use dapdb_core::{Error, ExperimentSpec, Family, Method, Params, ProblemInstance, RunOptions, SafeStep, Scheduler};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "dapdb",
    version,
    about = "Decentralized primal-dual methods with local backtracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random instance on a small-world network
    Gen(GenArgs),
    /// Solve the centralized problem and store the reference value
    SolveRef(SolveRefArgs),
    /// Run one method on one instance
    Run(RunArgs),
    /// Run a multi-seed experiment and write per-run and aggregate CSVs
    Compare(CompareArgs),
    /// Print the resolved experiment plan without running it
    Describe(DescribeArgs),
}

#[derive(Args, Debug, Clone)]
struct InstanceArgs {
    /// Problem family: qcqp or qp
    #[arg(long, default_value = "qcqp")]
    problem: Family,
    /// Decision dimension
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value_t = 24)]
    edges: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Topology seed; defaults to --seed
    #[arg(long)]
    graph_seed: Option<u64>,
}

impl InstanceArgs {
    fn generate(&self) -> Result<ProblemInstance> {
        let graph_seed = self.graph_seed.unwrap_or(self.seed);
        Ok(generate(
            self.problem,
            self.n,
            self.nodes,
            self.edges,
            self.seed,
            graph_seed,
        )?)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Also solve the reference and tighten the dual bounds
    #[arg(long)]
    reference: bool,
    /// KKT tolerance of the reference solve
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output file; defaults to $DAPDB_OUT_DIR/instance_seed<seed>.json, else stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "DAPDB_OUT_DIR", hide_env_values = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveRefArgs {
    /// Instance file written by `gen`
    instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output file; defaults to overwriting the input
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Overrides of the method parameters.
#[derive(Args, Debug, Clone, Default)]
struct ParamArgs {
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    c_alpha: Option<f64>,
    #[arg(long)]
    c_beta: Option<f64>,
    #[arg(long)]
    c_varsigma: Option<f64>,
    #[arg(long)]
    c_gamma: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Safe step rule: certified or half-inverse-lipschitz
    #[arg(long, value_parser = parse_safe_step)]
    safe_step: Option<SafeStep>,
    /// Run the per-node searches on a thread pool
    #[arg(long)]
    parallel: bool,
}

fn parse_safe_step(s: &str) -> std::result::Result<SafeStep, String> {
    match s {
        "certified" => Ok(SafeStep::Certified),
        "half-inverse-lipschitz" => Ok(SafeStep::HalfInverseLipschitz),
        other => Err(format!("unknown safe step rule {other:?}")),
    }
}

impl ParamArgs {
    fn apply(&self, mut p: Params) -> Params {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.kappa, self.kappa);
        set(&mut p.rho, self.rho);
        set(&mut p.delta, self.delta);
        set(&mut p.c_alpha, self.c_alpha);
        set(&mut p.c_beta, self.c_beta);
        set(&mut p.c_varsigma, self.c_varsigma);
        set(&mut p.zeta, self.zeta);
        if self.c_gamma.is_some() {
            p.c_gamma = self.c_gamma;
        }
        if let Some(s) = self.safe_step {
            p.safe_step = s;
        }
        if self.parallel {
            p.scheduler = Scheduler::Parallel;
        }
        p
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Instance file; generated from the instance flags when absent
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    gen: InstanceArgs,
    #[arg(long, default_value = "dapdb")]
    algo: Method,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    metric_stride: usize,
    /// Dump all agent states every M iterations
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output directory
    #[arg(long, env = "DAPDB_OUT_DIR", hide_env_values = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Experiment file (TOML); the default experiment of --problem otherwise
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "qcqp")]
    problem: Family,
    #[arg(long)]
    iters: Option<usize>,
    /// Comma-separated instance seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Method>>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, env = "DAPDB_OUT_DIR", hide_env_values = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "qcqp")]
    problem: Family,
}

fn load_spec(path: Option<&Path>, family: Family) -> Result<ExperimentSpec> {
    Ok(match path {
        Some(p) => ExperimentSpec::load(p)?,
        None => match family {
            Family::Qcqp => ExperimentSpec::qcqp_default(),
            Family::Qp => ExperimentSpec::qp_default(),
        },
    })
}

fn write_instance(inst: &ProblemInstance, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    inst.save(path)?;
    Ok(())
}

/// Reference solve followed by dual-bound tightening.
fn solve_reference(inst: &mut ProblemInstance, tol: f64) -> Result<f64> {
    let sol = attach_reference(inst, tol)?;
    refine_dual_bounds(inst, &sol)?;
    Ok(sol.phi_star)
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    let mut inst = args.instance.generate()?;
    if args.reference {
        let phi = solve_reference(&mut inst, args.tol)?;
        log::info!("reference value {phi:.12e}");
    }
    let target = args.out.or_else(|| {
        args.out_dir
            .map(|d| d.join(format!("instance_seed{}.json", args.instance.seed)))
    });
    match target {
        Some(path) => {
            write_instance(&inst, &path)?;
            println!("{}", path.display());
        }
        None => println!("{}", serde_json::to_string(&inst)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve_ref(args: SolveRefArgs) -> Result<ExitCode> {
    let mut inst = ProblemInstance::load(&args.instance)?;
    let phi = solve_reference(&mut inst, args.tol)?;
    let out = args.out.unwrap_or(args.instance);
    write_instance(&inst, &out)?;
    println!("phi_star {phi:.12e}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut inst = match &args.instance {
        Some(p) => ProblemInstance::load(p)?,
        None => args.gen.generate()?,
    };
    if inst.phi_star().is_none() {
        solve_reference(&mut inst, args.tol)?;
    }
    let base = if inst.is_unconstrained() || args.algo == Method::Dapdb0 {
        Params::qp()
    } else {
        Params::qcqp()
    };
    let params = args.params.apply(base);
    let config = params.resolve(&inst, args.algo)?;
    if let Some(0) = args.checkpoint_every {
        return Err(Error::InvalidParameter("checkpoint interval must be positive".into()).into());
    }
    let ckpt_dir = match (&args.out, args.checkpoint_every) {
        (Some(out), Some(_)) => {
            let d = out.join("checkpoints");
            std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
            Some(d)
        }
        (None, Some(_)) => {
            return Err(Error::InvalidParameter("--checkpoint-every needs --out".into()).into());
        }
        _ => None,
    };
    let log_every = (args.iters / 10).max(1);
    let opts = RunOptions::new(args.iters).with_stride(args.metric_stride);
    let trace = run_with(&inst, args.algo, config, opts, |solver, report| {
        let k = solver.iterations();
        if k % log_every == 0 {
            log::info!(
                "iteration {k}: eta {} gamma {:.3e} backtracks {}",
                report.eta,
                report.gamma,
                solver.total_backtracks()
            );
        }
        if let (Some(dir), Some(every)) = (&ckpt_dir, args.checkpoint_every) {
            if k % every == 0 {
                let snapshot = json!({ "clock": solver.clock(), "states": solver.states() });
                let path = dir.join(format!("iter{k:07}.json"));
                std::fs::write(&path, snapshot.to_string()).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    })?;
    let last = trace.last().context("empty trace")?;
    let summary = json!({
        "method": args.algo.name(),
        "iters": last.iter,
        "log_rel_subopt": last.log_rel_subopt,
        "rel_consensus_err": last.rel_consensus_err,
        "rel_infeasibility": last.rel_infeasibility,
        "avg_grad_calls": last.avg_grad_calls,
        "neighbor_rounds": last.neighbor_rounds,
        "total_backtracks": last.total_backtracks,
    });
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        csv_export(&trace, out.join(format!("{}.csv", args.algo)))?;
        std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let mut spec = load_spec(args.spec.as_deref(), args.problem)?;
    if let Some(k) = args.iters {
        spec.iters = k;
    }
    if let Some(seeds) = args.seeds {
        spec.seeds = seeds;
    }
    if let Some(algos) = args.algo {
        spec.algorithms = algos;
    }
    spec.params = args.params.apply(spec.params);
    if args.out.is_some() {
        spec.out_dir = args.out;
    }
    spec.validate()?;
    let outcome = run_experiment(&spec)?;
    for (method, aggs) in &outcome.aggregates {
        let by_iter = &aggs[0];
        match by_iter.columns[0].last() {
            Some((mean, std)) => println!(
                "{method}: {} runs, final mean log-rel-subopt {mean:.4e} (std {std:.2e})",
                by_iter.runs
            ),
            None => println!("{method}: no aggregate rows"),
        }
    }
    if let Some(dir) = &spec.out_dir {
        println!("results in {}", dir.display());
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("seed {} failed: {}", f.seed, f.message);
        }
        Ok(ExitCode::from(3))
    }
}

fn cmd_describe(args: DescribeArgs) -> Result<ExitCode> {
    let spec = load_spec(args.spec.as_deref(), args.problem)?;
    print!("{}", spec.describe()?);
    Ok(ExitCode::SUCCESS)
}

/// The error chain, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Graph(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::InvalidProblem(_)
            | Error::Parse(_)
            | Error::Io { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::SolveRef(a) => cmd_solve_ref(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Describe(a) => cmd_describe(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
