//! Node-local pieces of the iteration: the backtracking test, the
//! backtracking search itself, the consensus step size and the averaging
//! weights.

use nalgebra::DVector;

use super::config::{AlgorithmConfig, LambdaForm};
use super::state::AgentState;
use crate::error::{Error, Result};
use crate::problem::{NodeProblem, TestConstants};

/// Hard cap on contractions when no safe step is known.
const UNCERTIFIED_CONTRACTION_LIMIT: usize = 2000;

fn smooth_gap(
    node: &NodeProblem,
    x: &DVector<f64>,
    x_cand: &DVector<f64>,
    grad_x: &DVector<f64>,
    form: LambdaForm,
) -> f64 {
    match form {
        LambdaForm::Exact => node.f_bregman(x, x_cand),
        LambdaForm::GradientInnerProduct => (node.f_grad(x_cand) - grad_x).dot(&(x_cand - x)),
    }
}

/// Backtracking test function evaluated at a candidate pair. The candidate
/// is accepted when the value is at most
/// `-(delta/tau)||x_cand - x||^2 - (delta/(zeta tau))||theta_cand - theta||^2`.
#[allow(clippy::too_many_arguments)]
pub fn test_function_e(
    node: &NodeProblem,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    x_cand: &DVector<f64>,
    theta_cand: &DVector<f64>,
    tau_tilde: f64,
    zeta: f64,
    consts: &TestConstants,
    form: LambdaForm,
) -> f64 {
    let grad_x = node.f_grad(x);
    test_value(
        node, x, theta, x_cand, theta_cand, &grad_x, tau_tilde, zeta, consts, form,
    )
}

#[allow(clippy::too_many_arguments)]
fn test_value(
    node: &NodeProblem,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    x_cand: &DVector<f64>,
    theta_cand: &DVector<f64>,
    grad_x: &DVector<f64>,
    tau_tilde: f64,
    zeta: f64,
    consts: &TestConstants,
    form: LambdaForm,
) -> f64 {
    let dx2 = (x_cand - x).norm_squared();
    let mut e = 2.0 * smooth_gap(node, x, x_cand, grad_x, form) - (1.0 - consts.c_sum()) / tau_tilde * dx2;
    if node.num_constraints() > 0 {
        let dtheta = theta_cand - theta;
        e -= dtheta.norm_squared() / (zeta * tau_tilde);
        e += 2.0 * tau_tilde / consts.c_alpha * node.g_jac_t_apply(x_cand, &dtheta).norm_squared();
        let curvature = node.g_jac_diff_t_apply(x_cand, x, theta).norm_squared();
        if curvature > 0.0 {
            e += tau_tilde * curvature / consts.c_beta;
        }
    }
    e
}

/// Right-hand side of the backtracking test.
pub fn test_threshold(
    x: &DVector<f64>,
    theta: &DVector<f64>,
    x_cand: &DVector<f64>,
    theta_cand: &DVector<f64>,
    tau_tilde: f64,
    zeta: f64,
    delta: f64,
) -> f64 {
    let mut rhs = -delta / tau_tilde * (x_cand - x).norm_squared();
    if !theta.is_empty() {
        rhs -= delta / (zeta * tau_tilde) * (theta_cand - theta).norm_squared();
    }
    rhs
}

/// Test of the unconstrained variant: the smooth gap must not exceed
/// `(1 - delta - c_alpha - c_varsigma) / (2 tau) ||x_cand - x||^2`.
pub fn smoothness_test(
    node: &NodeProblem,
    x: &DVector<f64>,
    x_cand: &DVector<f64>,
    grad_x: &DVector<f64>,
    tau_tilde: f64,
    consts: &TestConstants,
    form: LambdaForm,
) -> bool {
    let gap = smooth_gap(node, x, x_cand, grad_x, form);
    let slack = 1.0 - consts.delta - consts.c_alpha - consts.c_varsigma;
    gap <= slack / (2.0 * tau_tilde) * (x_cand - x).norm_squared()
}

/// Which acceptance rule the search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    /// Full primal-dual test.
    PrimalDual,
    /// Smoothness-only test for nodes without functional constraints.
    Smoothness,
}

/// Accepted result of one node's search.
#[derive(Debug, Clone)]
pub struct BacktrackOutcome {
    pub tau_tilde: f64,
    pub eta: f64,
    pub x_tilde: DVector<f64>,
    pub theta_tilde: DVector<f64>,
    /// Number of times the step was shrunk.
    pub contractions: usize,
    /// Candidate evaluations (contractions + 1).
    pub trials: usize,
    /// `grad f(x^k)`, reused by the recomputation step.
    pub grad: DVector<f64>,
}

/// Primal-dual candidate for a trial step `tau_tilde` with momentum `eta`.
pub(crate) fn candidate(
    node: &NodeProblem,
    state: &AgentState,
    grad: &DVector<f64>,
    tau_tilde: f64,
    eta: f64,
    zeta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = &state.r + (&state.r - &state.r_prev) * eta;
    let x_new = node.prox_phi(&(&state.x - (grad + p) * tau_tilde), tau_tilde)?;
    let theta_new = if node.num_constraints() == 0 {
        DVector::zeros(0)
    } else {
        node.project_dual(&(&state.theta + node.g_value(&x_new) * (zeta * tau_tilde)))?
    };
    Ok((x_new, theta_new))
}

/// Contraction budget for one search: ten times the theoretical bound
/// `ceil(log_{1/rho}(tau_bar / hat_tau)) + 1` when a safe step is known.
pub fn contraction_limit(tau_bar: f64, hat_tau: Option<f64>, rho: f64) -> usize {
    match hat_tau {
        Some(h) => {
            let bound = ((tau_bar / h).ln() / (1.0 / rho).ln()).ceil().max(0.0) as usize + 1;
            10 * bound
        }
        None => UNCERTIFIED_CONTRACTION_LIMIT,
    }
}

/// Local backtracking search of node `i` at iteration `iter`, starting from
/// the previous accepted step `state.tau`.
pub fn backtrack_node(
    node: &NodeProblem,
    state: &AgentState,
    config: &AlgorithmConfig,
    kind: TestKind,
    i: usize,
    iter: usize,
) -> Result<BacktrackOutcome> {
    let zeta = config.zeta[i];
    let limit = contraction_limit(config.tau_bar[i], config.hat_tau.as_ref().map(|h| h[i]), config.rho);
    let grad = node.f_grad(&state.x);
    let mut tau_tilde = state.tau;
    let mut contractions = 0;
    loop {
        let eta = state.tau / tau_tilde;
        let (x_tilde, theta_tilde) = candidate(node, state, &grad, tau_tilde, eta, zeta)?;
        let accepted = match kind {
            TestKind::PrimalDual => {
                let e = test_value(
                    node,
                    &state.x,
                    &state.theta,
                    &x_tilde,
                    &theta_tilde,
                    &grad,
                    tau_tilde,
                    zeta,
                    &config.consts,
                    config.lambda_form,
                );
                e <= test_threshold(
                    &state.x,
                    &state.theta,
                    &x_tilde,
                    &theta_tilde,
                    tau_tilde,
                    zeta,
                    config.consts.delta,
                )
            }
            TestKind::Smoothness => smoothness_test(
                node,
                &state.x,
                &x_tilde,
                &grad,
                tau_tilde,
                &config.consts,
                config.lambda_form,
            ),
        };
        if accepted {
            return Ok(BacktrackOutcome {
                tau_tilde,
                eta,
                x_tilde,
                theta_tilde,
                contractions,
                trials: contractions + 1,
                grad,
            });
        }
        contractions += 1;
        if contractions > limit {
            return Err(Error::BacktrackLimit { node: i, iter, limit });
        }
        tau_tilde *= config.rho;
    }
}

/// Consensus dual step `(c_gamma / tau_bar) (2/c_alpha + eta/c_varsigma)^{-1}`.
pub fn gamma_update(eta: f64, tau_bar_max: f64, config: &AlgorithmConfig) -> f64 {
    config.c_gamma / tau_bar_max / (2.0 / config.consts.c_alpha + eta / config.consts.c_varsigma)
}

/// Averaging weights `t_0 = 1`, `t_{k+1} = t_k / eta^{k+1}` for the momentum
/// sequence `eta^0, eta^1, ...`. The first entry only fixes the length.
pub fn t_weights(etas: &[f64]) -> Result<Vec<f64>> {
    if etas.iter().any(|&e| !(e >= 1.0)) {
        return Err(Error::InvalidParameter("momentum values must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(etas.len());
    let mut t = 1.0;
    for (k, &eta) in etas.iter().enumerate() {
        if k > 0 {
            t /= eta;
        }
        out.push(t);
    }
    Ok(out)
}

/// Weighted time average of per-node iterates `trajectory[k][i]` over the
/// first `k_max` iterations.
pub fn ergodic_average(trajectory: &[Vec<DVector<f64>>], weights: &[f64], k_max: usize) -> Result<Vec<DVector<f64>>> {
    if k_max == 0 || trajectory.len() < k_max || weights.len() < k_max {
        return Err(Error::InvalidParameter(format!(
            "ergodic average over {k_max} iterations needs that many iterates and weights"
        )));
    }
    let total: f64 = weights[..k_max].iter().sum();
    let mut acc: Vec<DVector<f64>> = trajectory[0].iter().map(|x| x * 0.0).collect();
    for (snap, &w) in trajectory[..k_max].iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(snap) {
            a.axpy(w, x, 1.0);
        }
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}
