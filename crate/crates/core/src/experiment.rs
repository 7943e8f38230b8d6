//! Multi-seed experiments: generate, solve the reference, run every listed
//! method, export per-run and aggregate CSV files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algo::{Method, Params};
use crate::error::{Error, Result};
use crate::generate::{gen_qcqp, gen_qcqp_small, gen_qp};
use crate::graph::NetworkGraph;
use crate::metrics::{csv_export, RunTrace, TraceRecord};
use crate::oracle::{attach_reference, refine_dual_bounds, DEFAULT_TOL};
use crate::problem::ProblemInstance;
use crate::run::{run, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qcqp,
    Qp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Qcqp => "qcqp",
            Family::Qp => "qp",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qcqp" => Ok(Family::Qcqp),
            "qp" => Ok(Family::Qp),
            other => Err(Error::Parse(format!("unknown problem family {other:?}"))),
        }
    }
}

/// Generates one instance of `family` on a fresh small-world graph.
pub fn generate(
    family: Family,
    n: usize,
    nodes: usize,
    edges: usize,
    seed: u64,
    graph_seed: u64,
) -> Result<ProblemInstance> {
    let graph = NetworkGraph::build_small_world(nodes, edges, graph_seed)?;
    match family {
        Family::Qcqp if n < 4 => gen_qcqp_small(n, graph, seed),
        Family::Qcqp => gen_qcqp(n, graph, seed),
        Family::Qp => gen_qp(n, graph, seed),
    }
}

/// Experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub family: Family,
    pub n: usize,
    pub nodes: usize,
    pub edges: usize,
    pub seeds: Vec<u64>,
    /// Shared topology seed; each instance seed doubles as its graph seed
    /// when absent.
    #[serde(default)]
    pub graph_seed: Option<u64>,
    pub algorithms: Vec<Method>,
    pub iters: usize,
    #[serde(default = "one")]
    pub metric_stride: usize,
    pub params: Params,
    /// Per-method replacements of `params`.
    #[serde(default)]
    pub overrides: BTreeMap<Method, Params>,
    #[serde(default = "default_ref_tol")]
    pub reference_tol: f64,
    /// Points of the shared resource grids used for aggregation.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_ref_tol() -> f64 {
    DEFAULT_TOL
}

fn default_grid_points() -> usize {
    200
}

impl ExperimentSpec {
    /// Constrained experiment on 12 nodes and 24 edges.
    pub fn qcqp_default() -> Self {
        ExperimentSpec {
            family: Family::Qcqp,
            n: 20,
            nodes: 12,
            edges: 24,
            seeds: (1..=20).collect(),
            graph_seed: None,
            algorithms: vec![Method::Dapdb, Method::Dapd],
            iters: 3000,
            metric_stride: 1,
            params: Params::qcqp(),
            overrides: BTreeMap::new(),
            reference_tol: DEFAULT_TOL,
            grid_points: 200,
            out_dir: None,
        }
    }

    /// Unconstrained experiment on the same topology size.
    pub fn qp_default() -> Self {
        ExperimentSpec {
            family: Family::Qp,
            algorithms: vec![Method::Dapdb0, Method::Dapd],
            params: Params::qp(),
            iters: 10_000,
            ..Self::qcqp_default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn params_for(&self, method: Method) -> &Params {
        self.overrides.get(&method).unwrap_or(&self.params)
    }

    pub fn graph_seed_for(&self, seed: u64) -> u64 {
        self.graph_seed.unwrap_or(seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithm list is empty".into());
        }
        if self.iters == 0 || self.metric_stride == 0 || self.grid_points < 2 {
            return bad("iters and metric_stride must be positive and grid_points at least 2".into());
        }
        let min_n = match self.family {
            Family::Qcqp => 2,
            Family::Qp => 2,
        };
        if self.n < min_n {
            return bad(format!("{} instances need n >= {min_n}", self.family));
        }
        if self.nodes < 3 || self.edges < self.nodes || self.edges > self.nodes * (self.nodes - 1) / 2 {
            return bad(format!(
                "cannot build a {}-node graph with {} edges",
                self.nodes, self.edges
            ));
        }
        if self.family == Family::Qcqp && self.algorithms.contains(&Method::Dapdb0) {
            return bad("dapdb0 does not apply to constrained instances".into());
        }
        if !(self.reference_tol > 0.0) {
            return bad("reference_tol must be positive".into());
        }
        Ok(())
    }

    /// Resolved plan without running anything. Identical specs give
    /// identical text.
    pub fn describe(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(out, "family      {}", self.family);
        let _ = writeln!(out, "dimension   n = {}", self.n);
        let _ = writeln!(out, "network     {} nodes, {} edges", self.nodes, self.edges);
        let _ = writeln!(
            out,
            "seeds       {} ({})",
            self.seeds.len(),
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        );
        match self.graph_seed {
            Some(g) => {
                let _ = writeln!(out, "graph seed  {g} (shared)");
            }
            None => {
                let _ = writeln!(out, "graph seed  per instance seed");
            }
        }
        let _ = writeln!(out, "iterations  {} (metric stride {})", self.iters, self.metric_stride);
        let _ = writeln!(out, "reference   KKT tolerance {:e}", self.reference_tol);
        let c_gamma_max = 1.0 / (2.0 * self.edges as f64);
        for &method in &self.algorithms {
            let p = self.params_for(method);
            let _ = writeln!(out, "[{method}]");
            let _ = writeln!(
                out,
                "  delta {}  c_alpha {}  c_beta {}  c_varsigma {}  rho {}  zeta {}",
                p.delta, p.c_alpha, p.c_beta, p.c_varsigma, p.rho, p.zeta
            );
            match p.c_gamma {
                Some(c) => {
                    let _ = writeln!(out, "  c_gamma {c} (limit 1/(2|E|) = {c_gamma_max})");
                }
                None => {
                    let _ = writeln!(out, "  c_gamma 1/(2|E|) = {c_gamma_max}");
                }
            }
            if method.is_adaptive() {
                let _ = writeln!(out, "  tau_bar = {} x safe step, {:?} safe step", p.kappa, p.safe_step);
            } else {
                let _ = writeln!(out, "  tau = safe step ({:?}), eta fixed to 1", p.safe_step);
            }
            let (lo, hi) = self.safe_step_range(p)?;
            let _ = writeln!(
                out,
                "  safe steps over all seeds: [{lo:.6e}, {hi:.6e}] (generator dual bounds, before refinement)"
            );
        }
        Ok(out)
    }

    fn safe_step_range(&self, params: &Params) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &seed in &self.seeds {
            let inst = generate(
                self.family,
                self.n,
                self.nodes,
                self.edges,
                seed,
                self.graph_seed_for(seed),
            )?;
            for t in params.safe_steps(&inst)? {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        Ok((lo, hi))
    }
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub method: Method,
    pub trace: RunTrace,
}

#[derive(Debug, Clone)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Mean and standard deviation of the three figure quantities on a shared axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub axis_name: &'static str,
    pub axis: Vec<f64>,
    pub runs: usize,
    /// `(mean, std)` per axis point for suboptimality, consensus error and infeasibility.
    pub columns: [Vec<(f64, f64)>; 3],
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},runs,log_rel_subopt_mean,log_rel_subopt_std,rel_consensus_err_mean,rel_consensus_err_std,\
rel_infeasibility_mean,rel_infeasibility_std\n",
            self.axis_name
        );
        for (k, a) in self.axis.iter().enumerate() {
            let _ = write!(out, "{a:.16e},{}", self.runs);
            for col in &self.columns {
                let (m, s) = col[k];
                let _ = write!(out, ",{m:.16e},{s:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub failures: Vec<SeedFailure>,
    /// Per method: aggregates by iteration, by gradient calls and by
    /// communication rounds.
    pub aggregates: BTreeMap<Method, [Aggregate; 3]>,
}

fn quantities(r: &TraceRecord) -> [f64; 3] {
    [r.log_rel_subopt, r.rel_consensus_err, r.rel_infeasibility]
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Value of the last record whose resource usage does not exceed `budget`.
pub fn step_interpolate(
    records: &[TraceRecord],
    resource: impl Fn(&TraceRecord) -> f64,
    budget: f64,
) -> Option<&TraceRecord> {
    let idx = records.partition_point(|r| resource(r) <= budget);
    idx.checked_sub(1).map(|i| &records[i])
}

fn aggregate_on_axis(
    traces: &[&RunTrace],
    axis_name: &'static str,
    axis: Vec<f64>,
    resource: impl Fn(&TraceRecord) -> f64 + Copy,
) -> Aggregate {
    let mut columns: [Vec<(f64, f64)>; 3] = Default::default();
    for &a in &axis {
        let rows: Vec<[f64; 3]> = traces
            .iter()
            .filter_map(|t| step_interpolate(&t.records, resource, a).map(quantities))
            .collect();
        for (c, col) in columns.iter_mut().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            col.push(if vals.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&vals)
            });
        }
    }
    Aggregate {
        axis_name,
        axis,
        runs: traces.len(),
        columns,
    }
}

fn linear_grid(max: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| max * k as f64 / (points - 1) as f64).collect()
}

/// Aggregates of one method's runs. The resource grids stop at the
/// smallest final budget over all runs.
pub fn aggregate_runs(traces: &[&RunTrace], grid_points: usize) -> [Aggregate; 3] {
    let iters = |r: &TraceRecord| r.iter as f64;
    let grads = |r: &TraceRecord| r.avg_grad_calls;
    let comm = |r: &TraceRecord| r.neighbor_rounds as f64;
    let common = |f: &dyn Fn(&TraceRecord) -> f64| {
        traces
            .iter()
            .filter_map(|t| t.last().map(f))
            .fold(f64::INFINITY, f64::min)
    };
    let iter_axis: Vec<f64> = traces
        .first()
        .map(|t| t.records.iter().map(iters).collect())
        .unwrap_or_default();
    [
        aggregate_on_axis(traces, "iter", iter_axis, iters),
        aggregate_on_axis(
            traces,
            "avg_grad_calls",
            linear_grid(common(&grads), grid_points),
            grads,
        ),
        aggregate_on_axis(traces, "neighbor_rounds", linear_grid(common(&comm), grid_points), comm),
    ]
}

/// Runs one seed: instance, reference, every method.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<(ProblemInstance, Vec<RunResult>)> {
    let mut inst = generate(
        spec.family,
        spec.n,
        spec.nodes,
        spec.edges,
        seed,
        spec.graph_seed_for(seed),
    )?;
    let reference = attach_reference(&mut inst, spec.reference_tol)?;
    refine_dual_bounds(&mut inst, &reference)?;
    let mut results = Vec::with_capacity(spec.algorithms.len());
    for &method in &spec.algorithms {
        let config = spec.params_for(method).resolve(&inst, method)?;
        let opts = RunOptions::new(spec.iters).with_stride(spec.metric_stride);
        let trace = run(&inst, method, config, opts)?;
        results.push(RunResult { seed, method, trace });
    }
    Ok((inst, results))
}

/// Runs every seed in parallel. Failed seeds are reported and left out of
/// the aggregates. Files are written when `out_dir` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if let Some(dir) = &spec.out_dir {
        for sub in ["runs", "instances", "aggregate"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let per_seed: Vec<(u64, Result<Vec<RunResult>>)> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let res = run_seed(spec, seed).and_then(|(inst, runs)| {
                if let Some(dir) = &spec.out_dir {
                    inst.save(dir.join("instances").join(format!("seed{seed}.json")))?;
                    for r in &runs {
                        csv_export(&r.trace, dir.join("runs").join(format!("{}_seed{seed}.csv", r.method)))?;
                    }
                }
                Ok(runs)
            });
            (seed, res)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in per_seed {
        match res {
            Ok(r) => runs.extend(r),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                })
            }
        }
    }

    let mut aggregates = BTreeMap::new();
    for &method in &spec.algorithms {
        let traces: Vec<&RunTrace> = runs.iter().filter(|r| r.method == method).map(|r| &r.trace).collect();
        if traces.is_empty() {
            continue;
        }
        let aggs = aggregate_runs(&traces, spec.grid_points);
        if let Some(dir) = &spec.out_dir {
            for a in &aggs {
                let p = dir.join("aggregate").join(format!("{method}_by_{}.csv", a.axis_name));
                std::fs::write(&p, a.to_csv()).map_err(|e| Error::io(&p, e))?;
            }
        }
        aggregates.insert(method, aggs);
    }
    Ok(ExperimentOutcome {
        runs,
        failures,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_describe_mentions_gamma_bound() {
        let spec = ExperimentSpec::qcqp_default();
        let text = spec.describe().unwrap();
        assert!(text.contains(&format!("{}", 1.0 / 48.0)));
        assert_eq!(text, spec.describe().unwrap());
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let spec = ExperimentSpec {
            seeds: vec![],
            ..ExperimentSpec::qcqp_default()
        };
        assert!(matches!(spec.describe(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn toml_round_trip() {
        let mut spec = ExperimentSpec::qp_default();
        spec.overrides.insert(Method::Dapd, Params::qp());
        let text = spec.to_toml().unwrap();
        assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn dapdb0_needs_unconstrained_family() {
        let spec = ExperimentSpec {
            algorithms: vec![Method::Dapdb0],
            ..ExperimentSpec::qcqp_default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn step_interpolation_picks_last_affordable_row() {
        let rec = |iter: usize, calls: f64| TraceRecord {
            iter,
            t: 1.0,
            eta: 1.0,
            gamma: 0.0,
            log_rel_subopt: iter as f64,
            rel_consensus_err: 0.0,
            rel_infeasibility: 0.0,
            avg_grad_calls: calls,
            neighbor_rounds: iter as u64,
            flood_rounds: 0,
            total_backtracks: 0,
            ergodic_abs_subopt: f64::NAN,
            ergodic_infeasibility: f64::NAN,
            ergodic_consensus: f64::NAN,
        };
        let rows = vec![rec(0, 0.0), rec(1, 3.0), rec(2, 4.0), rec(3, 5.0)];
        let f = |r: &TraceRecord| r.avg_grad_calls;
        assert_eq!(step_interpolate(&rows, f, 3.5).unwrap().iter, 1);
        assert_eq!(step_interpolate(&rows, f, 4.0).unwrap().iter, 2);
        assert_eq!(step_interpolate(&rows, f, 100.0).unwrap().iter, 3);
        assert!(step_interpolate(&rows, f, -1.0).is_none());
    }
}
