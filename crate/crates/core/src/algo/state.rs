use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::problem::NodeProblem;

/// Live variables of one agent between iterations.
///
/// After iteration `k` completes, `x`/`theta`/`r` hold the `k+1` iterates,
/// the `*_prev` fields hold the `k` iterates, and `tau`/`sigma` hold the
/// accepted steps `tau_i^k`, `sigma_i^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub theta: DVector<f64>,
    pub theta_prev: DVector<f64>,
    /// Auxiliary consensus state; the edge duals are `A s`.
    pub s: DVector<f64>,
    pub r: DVector<f64>,
    pub r_prev: DVector<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub backtracks_this_iter: usize,
    pub total_backtracks: u64,
    pub grad_calls: u64,
}

impl AgentState {
    /// Initial state with `theta = 0` and `s = 0`, so `r = 0` as well.
    pub fn new(node: &NodeProblem, x0: DVector<f64>, tau_bar: f64, zeta: f64) -> Self {
        let n = x0.len();
        let m = node.num_constraints();
        AgentState {
            x_prev: x0.clone(),
            x: x0,
            theta: DVector::zeros(m),
            theta_prev: DVector::zeros(m),
            s: DVector::zeros(n),
            r: DVector::zeros(n),
            r_prev: DVector::zeros(n),
            tau: tau_bar,
            sigma: zeta * tau_bar,
            backtracks_this_iter: 0,
            total_backtracks: 0,
            grad_calls: 0,
        }
    }
}
