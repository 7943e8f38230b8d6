//! Full runs: iterate a [`Solver`] and record a [`RunTrace`].

use crate::algo::{AlgorithmConfig, IterationReport, Method, Solver};
use crate::error::{Error, Result};
use crate::metrics::{
    ergodic_metrics, log_rel_suboptimality, max_violation, node_mean, rel_consensus_error, rel_infeasibility, RunTrace,
    TraceRecord,
};
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub iters: usize,
    /// Record every `metric_stride`-th iteration (the last one is always kept).
    pub metric_stride: usize,
}

impl RunOptions {
    pub fn new(iters: usize) -> Self {
        RunOptions {
            iters,
            metric_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.metric_stride = stride;
        self
    }
}

/// Runs `method` for `opts.iters` iterations. `observer` sees the solver and
/// the report after every iteration.
pub fn run_with<F>(
    instance: &ProblemInstance,
    method: Method,
    config: AlgorithmConfig,
    opts: RunOptions,
    mut observer: F,
) -> Result<RunTrace>
where
    F: FnMut(&Solver<'_>, &IterationReport) -> Result<()>,
{
    if opts.metric_stride == 0 {
        return Err(Error::InvalidParameter("metric stride must be positive".into()));
    }
    let phi_star = instance
        .phi_star()
        .ok_or_else(|| Error::InvalidProblem("instance has no reference value; solve it first".into()))?;
    let mut solver = Solver::new(instance, method, config)?;
    let baseline = max_violation(&node_mean(&instance.x0), instance);

    let mut trace = RunTrace::default();
    trace.records.push(record(&solver, None, phi_star, baseline)?);
    for k in 1..=opts.iters {
        let report = solver.step()?;
        observer(&solver, &report)?;
        if k % opts.metric_stride == 0 || k == opts.iters {
            trace.records.push(record(&solver, Some(&report), phi_star, baseline)?);
        }
    }
    trace.ergodic_x = solver.ergodic_x();
    trace.ergodic_theta = solver.ergodic_theta();
    Ok(trace)
}

pub fn run(instance: &ProblemInstance, method: Method, config: AlgorithmConfig, opts: RunOptions) -> Result<RunTrace> {
    run_with(instance, method, config, opts, |_, _| Ok(()))
}

/// Constant-step baseline for `iters` iterations.
pub fn dapd_run(instance: &ProblemInstance, config: AlgorithmConfig, iters: usize) -> Result<RunTrace> {
    run(instance, Method::Dapd, config, RunOptions::new(iters))
}

fn record(solver: &Solver<'_>, report: Option<&IterationReport>, phi_star: f64, baseline: f64) -> Result<TraceRecord> {
    let instance = solver.instance();
    let xs = solver.iterates();
    let ledger = solver.ledger();
    let ergodic = match solver.ergodic_x() {
        Some(x_bar) => Some(ergodic_metrics(instance, &x_bar, phi_star)?),
        None => None,
    };
    Ok(TraceRecord {
        iter: solver.iterations(),
        t: solver.clock().t,
        eta: report.map_or(1.0, |r| r.eta),
        gamma: report.map_or(0.0, |r| r.gamma),
        log_rel_subopt: log_rel_suboptimality(&xs, instance, phi_star),
        rel_consensus_err: rel_consensus_error(&xs).value,
        rel_infeasibility: rel_infeasibility(&node_mean(&xs), instance, baseline),
        avg_grad_calls: solver.grad_calls_per_node(),
        neighbor_rounds: ledger.neighbor_rounds,
        flood_rounds: ledger.flood_rounds,
        total_backtracks: solver.total_backtracks(),
        ergodic_abs_subopt: ergodic.map_or(f64::NAN, |e| e.abs_subopt),
        ergodic_infeasibility: ergodic.map_or(f64::NAN, |e| e.infeasibility),
        ergodic_consensus: ergodic.map_or(f64::NAN, |e| e.consensus),
    })
}
