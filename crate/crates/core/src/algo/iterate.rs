//! Synchronous outer iterations over the simulated network.
//!
//! One outer iteration runs four phases separated by barriers:
//! 1. every node runs its local search (no communication),
//! 2. one max-consensus flood agrees on the momentum `eta^k`,
//! 3. every node fixes its steps and computes its next primal-dual pair,
//! 4. one neighbor round exchanges the consensus states `s^{k+1}`.
//!
//! Nodes never read each other's state outside of phases 2 and 4.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmConfig, Method, Scheduler};
use super::kernels::{backtrack_node, candidate, gamma_update, BacktrackOutcome, TestKind};
use super::state::AgentState;
use crate::error::{Error, Result};
use crate::graph::{max_consensus, neighbor_diff, CommLedger};
use crate::problem::ProblemInstance;

/// Iteration counter and the quantities that live across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunClock {
    /// Index of the next iteration to run.
    pub iter: usize,
    /// Averaging weight of the last completed iteration.
    pub t: f64,
    /// `max_i tau_bar_i`, agreed on once at startup.
    pub tau_bar_max: f64,
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    pub eta: f64,
    pub gamma: f64,
    pub t: f64,
    /// `eta > 1`: at least one node shrank its step.
    pub did_contract: bool,
    pub per_node_backtracks: Vec<usize>,
    /// `(sum_i d_i (2 tau_i^k / c_alpha + eta tau_i^{k-1} / c_varsigma))^{-1}`,
    /// an upper limit that `gamma` must respect.
    pub gamma_limit: f64,
}

/// Initial states and the startup flood agreeing on `max_i tau_bar_i`.
pub fn initialize(
    instance: &ProblemInstance,
    config: &AlgorithmConfig,
    ledger: &mut CommLedger,
) -> Result<(Vec<AgentState>, RunClock)> {
    let states = instance
        .nodes
        .iter()
        .zip(&instance.x0)
        .enumerate()
        .map(|(i, (node, x0))| AgentState::new(node, x0.clone(), config.tau_bar[i], config.zeta[i]))
        .collect();
    let tau_bar_max = max_consensus(&instance.graph, &config.tau_bar, ledger)?;
    Ok((
        states,
        RunClock {
            iter: 0,
            t: 1.0,
            tau_bar_max,
        },
    ))
}

/// One iteration of the backtracking method for constrained problems.
pub fn dapdb_iterate(
    instance: &ProblemInstance,
    states: &mut [AgentState],
    config: &AlgorithmConfig,
    ledger: &mut CommLedger,
    clock: &mut RunClock,
) -> Result<IterationReport> {
    iterate(Method::Dapdb, instance, states, config, ledger, clock)
}

/// One iteration of the backtracking method without functional constraints.
pub fn dapdb0_iterate(
    instance: &ProblemInstance,
    states: &mut [AgentState],
    config: &AlgorithmConfig,
    ledger: &mut CommLedger,
    clock: &mut RunClock,
) -> Result<IterationReport> {
    if !instance.is_unconstrained() {
        return Err(Error::InvalidProblem(
            "dapdb0 only handles instances without functional constraints".into(),
        ));
    }
    iterate(Method::Dapdb0, instance, states, config, ledger, clock)
}

/// One iteration of the constant-step baseline.
pub fn dapd_iterate(
    instance: &ProblemInstance,
    states: &mut [AgentState],
    config: &AlgorithmConfig,
    ledger: &mut CommLedger,
    clock: &mut RunClock,
) -> Result<IterationReport> {
    iterate(Method::Dapd, instance, states, config, ledger, clock)
}

fn map_nodes<T: Send>(scheduler: Scheduler, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    match scheduler {
        Scheduler::Sequential => (0..n).map(f).collect(),
        Scheduler::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Node-local result of phase 3.
struct NextPair {
    x: DVector<f64>,
    theta: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    sigma: f64,
    extra_grad_calls: u64,
}

fn iterate(
    method: Method,
    instance: &ProblemInstance,
    states: &mut [AgentState],
    config: &AlgorithmConfig,
    ledger: &mut CommLedger,
    clock: &mut RunClock,
) -> Result<IterationReport> {
    let graph = &instance.graph;
    let n_nodes = instance.num_nodes();
    if states.len() != n_nodes {
        return Err(Error::LengthMismatch {
            expected: n_nodes,
            got: states.len(),
        });
    }
    let k = clock.iter;

    // phase 1: local searches
    let outcomes: Vec<BacktrackOutcome> = {
        let states = &*states;
        map_nodes(config.scheduler, n_nodes, |i| {
            let node = &instance.nodes[i];
            let state = &states[i];
            match method {
                Method::Dapdb => backtrack_node(node, state, config, TestKind::PrimalDual, i, k),
                Method::Dapdb0 => backtrack_node(node, state, config, TestKind::Smoothness, i, k),
                Method::Dapd => {
                    let grad = node.f_grad(&state.x);
                    let (x_tilde, theta_tilde) = candidate(node, state, &grad, state.tau, 1.0, config.zeta[i])?;
                    Ok(BacktrackOutcome {
                        tau_tilde: state.tau,
                        eta: 1.0,
                        x_tilde,
                        theta_tilde,
                        contractions: 0,
                        trials: 1,
                        grad,
                    })
                }
            }
        })?
    };

    // phase 2: momentum agreement
    let eta = if method.is_adaptive() {
        let local: Vec<f64> = outcomes.iter().map(|o| o.eta).collect();
        max_consensus(graph, &local, ledger)?
    } else {
        1.0
    };
    let gamma = gamma_update(eta, clock.tau_bar_max, config);
    let t = if k == 0 { 1.0 } else { clock.t / eta };

    // phase 3: accepted steps and next iterates
    let next: Vec<NextPair> = {
        let states = &*states;
        let outcomes = &outcomes;
        map_nodes(config.scheduler, n_nodes, |i| {
            let node = &instance.nodes[i];
            let state = &states[i];
            let out = &outcomes[i];
            let tau = state.tau / eta;
            let sigma = config.zeta[i] * tau;
            let s = &state.s + (&state.x * (1.0 + eta) - &state.x_prev * eta) * gamma;
            let (x, theta, extra) = if eta > 1.0 {
                let (x, theta) = candidate(node, state, &out.grad, tau, eta, config.zeta[i])?;
                (x, theta, 1)
            } else {
                (out.x_tilde.clone(), out.theta_tilde.clone(), 0)
            };
            Ok(NextPair {
                x,
                theta,
                s,
                tau,
                sigma,
                extra_grad_calls: extra,
            })
        })?
    };

    // phase 4: neighbor exchange of s^{k+1}
    let s_next: Vec<DVector<f64>> = next.iter().map(|p| p.s.clone()).collect();
    let lap = neighbor_diff(graph, &s_next, ledger)?;

    let mut limit_sum = 0.0;
    for (i, ((state, pair), (out, lap_i))) in states.iter_mut().zip(next).zip(outcomes.iter().zip(lap)).enumerate() {
        let node = &instance.nodes[i];
        let degree = graph.degree(i) as f64;
        limit_sum += degree * (2.0 * pair.tau / config.consts.c_alpha + eta * state.tau / config.consts.c_varsigma);

        let r_next = node.g_jac_t_apply(&pair.x, &pair.theta) + lap_i;
        state.x_prev = std::mem::replace(&mut state.x, pair.x);
        state.theta_prev = std::mem::replace(&mut state.theta, pair.theta);
        state.r_prev = std::mem::replace(&mut state.r, r_next);
        state.s = pair.s;
        state.tau = pair.tau;
        state.sigma = pair.sigma;
        state.backtracks_this_iter = out.contractions;
        state.total_backtracks += out.contractions as u64;
        state.grad_calls += out.trials as u64 + pair.extra_grad_calls;

        let finite = state
            .x
            .iter()
            .chain(state.theta.iter())
            .chain(state.s.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged {
                iter: k,
                what: format!("non-finite state at node {i}"),
            });
        }
        if state.x.norm() > 1e3 * node.domain_radius() {
            return Err(Error::Diverged {
                iter: k,
                what: format!("iterate of node {i} left the domain"),
            });
        }
    }

    clock.iter += 1;
    clock.t = t;
    Ok(IterationReport {
        iter: k,
        eta,
        gamma,
        t,
        did_contract: eta > 1.0,
        per_node_backtracks: outcomes.iter().map(|o| o.contractions).collect(),
        gamma_limit: if limit_sum > 0.0 {
            1.0 / limit_sum
        } else {
            f64::INFINITY
        },
    })
}

/// Owns the run state of one algorithm on one instance and keeps the
/// weighted time averages of the iterates.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    instance: &'a ProblemInstance,
    method: Method,
    config: AlgorithmConfig,
    states: Vec<AgentState>,
    ledger: CommLedger,
    clock: RunClock,
    weight_sum: f64,
    x_sums: Vec<DVector<f64>>,
    theta_sums: Vec<DVector<f64>>,
}

impl<'a> Solver<'a> {
    pub fn new(instance: &'a ProblemInstance, method: Method, config: AlgorithmConfig) -> Result<Self> {
        config.validate(instance, method)?;
        let mut ledger = CommLedger::default();
        let (states, clock) = initialize(instance, &config, &mut ledger)?;
        let x_sums = states.iter().map(|s| s.x.map(|_| 0.0)).collect();
        let theta_sums = states.iter().map(|s| s.theta.map(|_| 0.0)).collect();
        Ok(Solver {
            instance,
            method,
            config,
            states,
            ledger,
            clock,
            weight_sum: 0.0,
            x_sums,
            theta_sums,
        })
    }

    pub fn step(&mut self) -> Result<IterationReport> {
        let report = match self.method {
            Method::Dapdb => dapdb_iterate,
            Method::Dapdb0 => dapdb0_iterate,
            Method::Dapd => dapd_iterate,
        }(
            self.instance,
            &mut self.states,
            &self.config,
            &mut self.ledger,
            &mut self.clock,
        )?;
        // x_prev / theta_prev now hold the iterates this step consumed
        self.weight_sum += report.t;
        for (state, (xs, ts)) in self.states.iter().zip(self.x_sums.iter_mut().zip(&mut self.theta_sums)) {
            xs.axpy(report.t, &state.x_prev, 1.0);
            ts.axpy(report.t, &state.theta_prev, 1.0);
        }
        Ok(report)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn instance(&self) -> &ProblemInstance {
        self.instance
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn clock(&self) -> &RunClock {
        &self.clock
    }

    /// Completed iterations.
    pub fn iterations(&self) -> usize {
        self.clock.iter
    }

    /// Current primal iterates, one per node.
    pub fn iterates(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.x.clone()).collect()
    }

    /// Weighted averages of `x_i^0 .. x_i^{K-1}`; `None` before the first step.
    pub fn ergodic_x(&self) -> Option<Vec<DVector<f64>>> {
        (self.weight_sum > 0.0).then(|| self.x_sums.iter().map(|s| s / self.weight_sum).collect())
    }

    pub fn ergodic_theta(&self) -> Option<Vec<DVector<f64>>> {
        (self.weight_sum > 0.0).then(|| self.theta_sums.iter().map(|s| s / self.weight_sum).collect())
    }

    pub fn grad_calls_per_node(&self) -> f64 {
        self.states.iter().map(|s| s.grad_calls as f64).sum::<f64>() / self.states.len() as f64
    }

    pub fn total_backtracks(&self) -> u64 {
        self.states.iter().map(|s| s.total_backtracks).sum()
    }
}
