//! Figure quantities, resource counters and the CSV trace format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{incidence_apply, NetworkGraph};
use crate::problem::ProblemInstance;

/// Denominators below this are treated as zero.
pub const NORM_GUARD: f64 = 1e-12;

/// Unweighted mean of the node vectors.
pub fn node_mean(xs: &[DVector<f64>]) -> DVector<f64> {
    let n = xs.first().map_or(0, |x| x.len());
    xs.iter().fold(DVector::zeros(n), |acc, x| acc + x) / xs.len().max(1) as f64
}

/// `log(|phi(x_bar) - phi*| / |phi*| + 1)` at the node mean `x_bar`.
/// When `phi* = 0` the absolute gap is used instead.
pub fn log_rel_suboptimality(xs: &[DVector<f64>], instance: &ProblemInstance, phi_star: f64) -> f64 {
    let gap = (instance.objective(&node_mean(xs)) - phi_star).abs();
    if phi_star == 0.0 {
        log::warn!("reference value is zero; reporting the absolute gap");
        (gap + 1.0).ln()
    } else {
        (gap / phi_star.abs() + 1.0).ln()
    }
}

/// Relative consensus error together with how it was normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusError {
    pub value: f64,
    /// False when the mean was too small and `value` is the absolute
    /// variance `sum_i ||x_i - x_bar||^2 / N`.
    pub relative: bool,
}

/// `sum_i ||x_i - x_bar||^2 / (N ||x_bar||^2)`.
pub fn rel_consensus_error(xs: &[DVector<f64>]) -> ConsensusError {
    let mean = node_mean(xs);
    let spread = xs.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / xs.len().max(1) as f64;
    let scale = mean.norm_squared();
    if mean.norm() > NORM_GUARD {
        ConsensusError {
            value: spread / scale,
            relative: true,
        }
    } else {
        ConsensusError {
            value: spread,
            relative: false,
        }
    }
}

/// `max_i ||(g_i(x))_+||`.
pub fn max_violation(x: &DVector<f64>, instance: &ProblemInstance) -> f64 {
    instance.nodes.iter().map(|n| n.violation(x)).fold(0.0, f64::max)
}

/// Violation at `x_bar` divided by `baseline`, or the absolute violation
/// when the baseline is zero.
pub fn rel_infeasibility(x_bar: &DVector<f64>, instance: &ProblemInstance, baseline: f64) -> f64 {
    let v = max_violation(x_bar, instance);
    if baseline > 0.0 {
        v / baseline
    } else {
        v
    }
}

/// `||A x||`: the norm of all stacked edge differences.
pub fn consensus_residual(graph: &NetworkGraph, xs: &[DVector<f64>]) -> Result<f64> {
    Ok(incidence_apply(graph, xs)?
        .iter()
        .map(|d| d.norm_squared())
        .sum::<f64>()
        .sqrt())
}

/// Edge duals `lambda = A s` recovered from the consensus states.
pub fn reconstruct_lambda(graph: &NetworkGraph, s: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    incidence_apply(graph, s)
}

/// Quality of per-node time averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicMetrics {
    /// `|sum_i phi_i(x_bar_i) - phi*|`.
    pub abs_subopt: f64,
    /// `max_i (g_i(x_bar_i))_+`.
    pub infeasibility: f64,
    /// `||A x_bar||`.
    pub consensus: f64,
}

pub fn ergodic_metrics(instance: &ProblemInstance, x_bar: &[DVector<f64>], phi_star: f64) -> Result<ErgodicMetrics> {
    let value: f64 = instance.nodes.iter().zip(x_bar).map(|(n, x)| n.objective(x)).sum();
    let infeasibility = instance
        .nodes
        .iter()
        .zip(x_bar)
        .map(|(n, x)| n.violation(x))
        .fold(0.0, f64::max);
    Ok(ErgodicMetrics {
        abs_subopt: (value - phi_star).abs(),
        infeasibility,
        consensus: consensus_residual(&instance.graph, x_bar)?,
    })
}

/// One recorded row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Completed iterations.
    pub iter: usize,
    pub t: f64,
    pub eta: f64,
    pub gamma: f64,
    pub log_rel_subopt: f64,
    pub rel_consensus_err: f64,
    pub rel_infeasibility: f64,
    pub avg_grad_calls: f64,
    pub neighbor_rounds: u64,
    pub flood_rounds: u64,
    pub total_backtracks: u64,
    /// Time-averaged iterates; NaN before the first iteration.
    pub ergodic_abs_subopt: f64,
    pub ergodic_infeasibility: f64,
    pub ergodic_consensus: f64,
}

pub const CSV_HEADER: &str = "iter,t,eta,gamma,log_rel_subopt,rel_consensus_err,rel_infeasibility,\
avg_grad_calls,neighbor_rounds,flood_rounds,total_backtracks,\
ergodic_abs_subopt,ergodic_infeasibility,ergodic_consensus";

/// Recorded rows plus the final time averages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub ergodic_x: Option<Vec<DVector<f64>>>,
    pub ergodic_theta: Option<Vec<DVector<f64>>>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e}",
                r.iter,
                r.t,
                r.eta,
                r.gamma,
                r.log_rel_subopt,
                r.rel_consensus_err,
                r.rel_infeasibility,
                r.avg_grad_calls,
                r.neighbor_rounds,
                r.flood_rounds,
                r.total_backtracks,
                r.ergodic_abs_subopt,
                r.ergodic_infeasibility,
                r.ergodic_consensus,
            );
        }
        out
    }

    /// Parses the rows written by [`RunTrace::to_csv`]. The time averages
    /// are not part of the CSV and come back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse("missing or unexpected trace header".into())),
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 14 {
                return Err(Error::Parse(format!(
                    "row {}: expected 14 columns, got {}",
                    lineno + 2,
                    cols.len()
                )));
            }
            let f = |i: usize| -> Result<f64> {
                cols[i]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}, column {}: {e}", lineno + 2, i + 1)))
            };
            let u = |i: usize| -> Result<u64> {
                cols[i]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}, column {}: {e}", lineno + 2, i + 1)))
            };
            records.push(TraceRecord {
                iter: u(0)? as usize,
                t: f(1)?,
                eta: f(2)?,
                gamma: f(3)?,
                log_rel_subopt: f(4)?,
                rel_consensus_err: f(5)?,
                rel_infeasibility: f(6)?,
                avg_grad_calls: f(7)?,
                neighbor_rounds: u(8)?,
                flood_rounds: u(9)?,
                total_backtracks: u(10)?,
                ergodic_abs_subopt: f(11)?,
                ergodic_infeasibility: f(12)?,
                ergodic_consensus: f(13)?,
            });
        }
        Ok(RunTrace {
            records,
            ..Default::default()
        })
    }
}

pub fn csv_export(trace: &RunTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn csv_import(path: impl AsRef<Path>) -> Result<RunTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunTrace::from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{NodeProblem, QuadConstraint};
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| dv(&[x])).collect()
    }

    fn pair_instance() -> ProblemInstance {
        let g = NetworkGraph::new(2, [(0, 1)]).unwrap();
        let node = NodeProblem::quadratic(DMatrix::from_element(1, 1, 1.0), dv(&[-1.0]), 0.0);
        ProblemInstance::new(vec![node.clone(), node], g, scalars(&[0.0, 0.0]), "test").unwrap()
    }

    #[test]
    fn suboptimality_examples() {
        let inst = pair_instance();
        // phi(x) = x^2 - 2x, phi* = -1 at x = 1
        assert_eq!(log_rel_suboptimality(&scalars(&[1.0, 1.0]), &inst, -1.0), 0.0);
        assert!((log_rel_suboptimality(&scalars(&[0.0, 2.0]), &inst, -1.0)).abs() < 1e-15);
        // gap 1 = |phi*|
        let v = log_rel_suboptimality(&scalars(&[0.0, 0.0]), &inst, -1.0);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let a = log_rel_suboptimality(&scalars(&[0.3, 1.9]), &inst, -1.0);
        let b = log_rel_suboptimality(&scalars(&[1.9, 0.3]), &inst, -1.0);
        assert_eq!(a, b);
        // zero reference uses the absolute gap
        assert!((log_rel_suboptimality(&scalars(&[0.0, 0.0]), &inst, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(rel_consensus_error(&scalars(&[2.0, 2.0, 2.0])).value, 0.0);
        let c = rel_consensus_error(&scalars(&[1.0, 3.0]));
        assert!(c.relative);
        assert!((c.value - 0.25).abs() < 1e-15);
        let v = dv(&[1.0, -2.0]);
        let c = rel_consensus_error(&[v.clone(), -v.clone()]);
        assert!(!c.relative);
        assert!((c.value - v.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn infeasibility_examples() {
        let g = NetworkGraph::new(1, []).unwrap();
        let node = NodeProblem::zero(1).with_constraint(QuadConstraint::affine(dv(&[1.0]), -1.0));
        let inst = ProblemInstance::new(vec![node], g, scalars(&[0.0]), "test").unwrap();
        assert_eq!(rel_infeasibility(&dv(&[0.5]), &inst, 2.0), 0.0);
        assert_eq!(rel_infeasibility(&dv(&[1.5]), &inst, 2.0), 0.25);
        let x0 = dv(&[3.0]);
        assert_eq!(rel_infeasibility(&x0, &inst, max_violation(&x0, &inst)), 1.0);
        assert_eq!(rel_infeasibility(&dv(&[1.5]), &inst, 0.0), 0.5);
    }

    fn sample_trace(rows: usize) -> RunTrace {
        let records = (0..rows)
            .map(|k| TraceRecord {
                iter: k,
                t: 1.0 / (1.0 + k as f64),
                eta: 1.0 + 0.1 * k as f64,
                gamma: 1.0 / 1440.0,
                log_rel_subopt: (k as f64 + 0.3).ln(),
                rel_consensus_err: 1e-7 / 3.0,
                rel_infeasibility: std::f64::consts::PI,
                avg_grad_calls: 1.5 * k as f64,
                neighbor_rounds: k as u64,
                flood_rounds: 2 * k as u64 + 1,
                total_backtracks: 7,
                ergodic_abs_subopt: if k == 0 { f64::NAN } else { 0.1 },
                ergodic_infeasibility: if k == 0 { f64::NAN } else { 1e-300 },
                ergodic_consensus: if k == 0 { f64::NAN } else { 2.0 / 7.0 },
            })
            .collect();
        RunTrace {
            records,
            ..Default::default()
        }
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(sample_trace(0).to_csv().lines().count(), 1);
        assert_eq!(sample_trace(3).to_csv().lines().count(), 4);
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let trace = sample_trace(5);
        let back = RunTrace::from_csv(&trace.to_csv()).unwrap();
        assert_eq!(back.records.len(), 5);
        for (a, b) in trace.records.iter().zip(&back.records) {
            let bits = |r: &TraceRecord| {
                [
                    r.t,
                    r.eta,
                    r.gamma,
                    r.log_rel_subopt,
                    r.rel_consensus_err,
                    r.rel_infeasibility,
                    r.avg_grad_calls,
                    r.ergodic_abs_subopt,
                    r.ergodic_infeasibility,
                    r.ergodic_consensus,
                ]
                .map(f64::to_bits)
            };
            assert_eq!(bits(a), bits(b));
            assert_eq!(
                (a.iter, a.neighbor_rounds, a.flood_rounds, a.total_backtracks),
                (b.iter, b.neighbor_rounds, b.flood_rounds, b.total_backtracks)
            );
        }
        assert_eq!(trace.to_csv(), back.to_csv());
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(RunTrace::from_csv("a,b\n").is_err());
        let bad = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(RunTrace::from_csv(&bad).is_err());
    }
}
