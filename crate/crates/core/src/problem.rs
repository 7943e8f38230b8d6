//! Per-agent first-order oracles and problem instances.
//!
//! Every node in this crate carries the same structured model:
//!
//! * smooth part `f(x) = 0.5 x'Qx + q'x + c`,
//! * constraint map `g(x)` with components `0.5 x'A_j x + b_j'x + c_j`, read
//!   as `g(x) <= 0` (cone `R_+^m`),
//! * nonsmooth part `phi(x) = w ||x||_1 + indicator([-R, R]^n)`.
//!
//! That covers both experiment families plus hand-written test instances.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::prox::{project_cone_ball, prox_l1_box};

/// One quadratic constraint component `0.5 x'Ax + b'x + c <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadConstraint {
    pub fn affine(b: DVector<f64>, c: f64) -> Self {
        let n = b.len();
        QuadConstraint {
            a: DMatrix::zeros(n, n),
            b,
            c,
        }
    }

    /// `0.5 (x - center)' A (x - center) - level`.
    pub fn ellipsoid(a: DMatrix<f64>, center: &DVector<f64>, level: f64) -> Self {
        let b = -(&a * center);
        let c = 0.5 * center.dot(&(&a * center)) - level;
        QuadConstraint { a, b, c }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x) + self.c
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    pub fn is_affine(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }
}

/// Lipschitz data used by the safe step size and the non-adaptive baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    /// Lipschitz constant of the gradient of `f`.
    pub l_f: f64,
    /// Lipschitz constant of the Jacobian of `g`.
    pub l_g: f64,
    /// Bound on the Jacobian norm of `g` over the domain.
    pub c_g: f64,
}

/// Backtracking test constants shared by every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConstants {
    pub delta: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_varsigma: f64,
}

impl TestConstants {
    pub fn c_sum(&self) -> f64 {
        self.c_alpha + self.c_beta + self.c_varsigma
    }
}

/// Local problem data of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProblem {
    pub q: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub constraints: Vec<QuadConstraint>,
    pub l1_weight: f64,
    #[serde(with = "inf_as_null")]
    pub box_radius: f64,
    /// Bound `B_i` on the dual variable norm (`inf` when unbounded).
    #[serde(with = "inf_as_null")]
    pub dual_bound: f64,
    pub smoothness: Option<Smoothness>,
}

impl NodeProblem {
    /// Unconstrained node with `f(x) = 0.5 x'Qx + q'x + c` and `phi = 0`.
    pub fn quadratic(q: DMatrix<f64>, lin: DVector<f64>, offset: f64) -> Self {
        NodeProblem {
            q,
            lin,
            offset,
            constraints: Vec::new(),
            l1_weight: 0.0,
            box_radius: f64::INFINITY,
            dual_bound: f64::INFINITY,
            smoothness: None,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::quadratic(DMatrix::zeros(n, n), DVector::zeros(n), 0.0)
    }

    pub fn with_constraint(mut self, c: QuadConstraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_l1(mut self, weight: f64) -> Self {
        self.l1_weight = weight;
        self
    }

    pub fn with_box(mut self, radius: f64) -> Self {
        self.box_radius = radius;
        self
    }

    pub fn with_dual_bound(mut self, bound: f64) -> Self {
        self.dual_bound = bound;
        self
    }

    pub fn with_smoothness(mut self, s: Smoothness) -> Self {
        self.smoothness = Some(s);
        self
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn f_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.lin.dot(x) + self.offset
    }

    pub fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.lin
    }

    /// Bregman gap `f(y) - f(x) - <grad f(x), y - x>`, evaluated as
    /// `0.5 (y - x)'Q(y - x)` so that no large values cancel.
    pub fn f_bregman(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d = y - x;
        0.5 * d.dot(&(&self.q * &d))
    }

    pub fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.value(x)))
    }

    /// `Jg(x)' theta`.
    pub fn g_jac_t_apply(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (c, &t) in self.constraints.iter().zip(theta.iter()) {
            if t != 0.0 {
                out.axpy(t, &c.gradient(x), 1.0);
            }
        }
        out
    }

    /// `(Jg(x) - Jg(x'))' theta`.
    pub fn g_jac_diff_t_apply(&self, x: &DVector<f64>, x_other: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let d = x - x_other;
        let mut out = DVector::zeros(self.dim());
        for (c, &t) in self.constraints.iter().zip(theta.iter()) {
            if t != 0.0 {
                out.axpy(t, &(&c.a * &d), 1.0);
            }
        }
        out
    }

    /// `prox_{tau phi}(v)`.
    pub fn prox_phi(&self, v: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
        prox_l1_box(v, tau * self.l1_weight, self.box_radius)
    }

    /// Projection onto the dual feasible set `R_+^m ∩ {||theta|| <= B}`.
    pub fn project_dual(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.is_empty() {
            return Ok(v.clone());
        }
        project_cone_ball(v, self.dual_bound)
    }

    /// Nonsmooth part, `+inf` outside the box.
    pub fn phi_value(&self, x: &DVector<f64>) -> f64 {
        if !self.in_domain(x) {
            return f64::INFINITY;
        }
        self.l1_weight * x.lp_norm(1)
    }

    /// Local objective `f + phi`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f_value(x) + self.phi_value(x)
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.iter().all(|v| v.abs() <= self.box_radius)
    }

    /// Radius `D_i` of the domain: the largest Euclidean norm in the box.
    pub fn domain_radius(&self) -> f64 {
        self.box_radius * (self.dim() as f64).sqrt()
    }

    /// Norm of the positive part of `g(x)`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        self.g_value(x).map(|v| v.max(0.0)).norm()
    }

    /// Smoothness constants estimated from the data: spectral norms for
    /// `L_f` and `L_g`, and the box bound of the Jacobian for `C_g`.
    pub fn estimate_smoothness(&self) -> Smoothness {
        let l_f = spectral_norm(&self.q);
        let a_norms: Vec<f64> = self.constraints.iter().map(|c| spectral_norm(&c.a)).collect();
        let l_g = a_norms.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c_g = self
            .constraints
            .iter()
            .zip(&a_norms)
            .map(|(c, an)| {
                let r = an * self.domain_radius() + c.b.norm();
                r * r
            })
            .sum::<f64>()
            .sqrt();
        Smoothness { l_f, l_g, c_g }
    }

    /// Stored smoothness constants, falling back to estimates.
    pub fn smoothness_or_estimate(&self) -> Smoothness {
        self.smoothness.unwrap_or_else(|| self.estimate_smoothness())
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.q.shape() != (n, n) || self.lin.len() != n {
            return Err(Error::InvalidProblem(format!("node data is not {n}-dimensional")));
        }
        if self.constraints.iter().any(|c| c.a.shape() != (n, n) || c.b.len() != n) {
            return Err(Error::InvalidProblem("constraint has the wrong dimension".into()));
        }
        if !(self.l1_weight >= 0.0) || !(self.box_radius > 0.0) || !(self.dual_bound > 0.0) {
            return Err(Error::InvalidProblem(
                "need l1 weight >= 0, box radius > 0 and dual bound > 0".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Reference optimum attached to an instance, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub phi_star: f64,
    pub method_tag: String,
    pub tolerance: f64,
    pub kkt_residual: f64,
}

/// A full consensus problem: node data, topology and initial points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub nodes: Vec<NodeProblem>,
    pub graph: NetworkGraph,
    pub x0: Vec<DVector<f64>>,
    pub reference: Option<ReferenceInfo>,
    pub generator_tag: String,
}

impl ProblemInstance {
    pub fn new(
        nodes: Vec<NodeProblem>,
        graph: NetworkGraph,
        x0: Vec<DVector<f64>>,
        generator_tag: impl Into<String>,
    ) -> Result<Self> {
        let inst = ProblemInstance {
            nodes,
            graph,
            x0,
            reference: None,
            generator_tag: generator_tag.into(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n_nodes = self.graph.num_nodes();
        if self.nodes.len() != n_nodes || self.x0.len() != n_nodes {
            return Err(Error::InvalidProblem(format!(
                "graph has {n_nodes} nodes but {} node problems and {} initial points",
                self.nodes.len(),
                self.x0.len()
            )));
        }
        let n = self.dim();
        for (node, x0) in self.nodes.iter().zip(&self.x0) {
            node.validate(n)?;
            if x0.len() != n || !node.in_domain(x0) {
                return Err(Error::InvalidProblem("initial point outside the node domain".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, NodeProblem::dim)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn phi_star(&self) -> Option<f64> {
        self.reference.as_ref().map(|r| r.phi_star)
    }

    /// True when no node carries functional constraints.
    pub fn is_unconstrained(&self) -> bool {
        self.nodes.iter().all(|n| n.num_constraints() == 0)
    }

    /// `sum_i (f_i + phi_i)(x)` at a common point.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.nodes.iter().map(|n| n.objective(x)).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let inst: ProblemInstance = serde_json::from_str(&text)?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Largest primal step for which the backtracking test is guaranteed to
/// pass at node `i`.
///
/// Returns the smaller of the positive root of
/// `(1-delta-c)/tau = L_f + (L_g B)^2 tau / c_beta` and
/// `sqrt(c_alpha (1-delta) / (2 zeta)) / C_g`. Either branch may be
/// `+inf` when its curvature data vanishes.
pub fn hat_tau(smooth: &Smoothness, dual_bound: f64, consts: &TestConstants, zeta: f64) -> Result<f64> {
    let TestConstants {
        delta,
        c_alpha,
        c_beta,
        c_varsigma,
    } = *consts;
    let slack = 1.0 - (delta + c_alpha + c_beta + c_varsigma);
    if !(delta > 0.0 && c_alpha > 0.0 && c_varsigma > 0.0 && c_beta >= 0.0 && zeta > 0.0) {
        return Err(Error::InvalidParameter(
            "delta, c_alpha, c_varsigma and zeta must be positive, c_beta nonnegative".into(),
        ));
    }
    if !(slack > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta + c_alpha + c_beta + c_varsigma must be < 1, got {}",
            1.0 - slack
        )));
    }
    let Smoothness { l_f, l_g, c_g } = *smooth;
    let lgb = if l_g == 0.0 { 0.0 } else { l_g * dual_bound };
    if !lgb.is_finite() {
        return Err(Error::InvalidParameter(
            "nonlinear constraints need a finite dual bound".into(),
        ));
    }
    let first = if lgb == 0.0 {
        slack / l_f
    } else {
        if c_beta == 0.0 {
            return Err(Error::InvalidParameter(
                "c_beta must be positive when L_g * B > 0".into(),
            ));
        }
        let a = lgb * lgb / c_beta;
        // positive root of a t^2 + L_f t - slack, in cancellation-free form
        2.0 * slack / (l_f + (l_f * l_f + 4.0 * slack * a).sqrt())
    };
    let second = if c_g == 0.0 {
        f64::INFINITY
    } else {
        (c_alpha * (1.0 - delta) / (2.0 * zeta)).sqrt() / c_g
    };
    Ok(first.min(second))
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(delta: f64, ca: f64, cb: f64, cs: f64) -> TestConstants {
        TestConstants {
            delta,
            c_alpha: ca,
            c_beta: cb,
            c_varsigma: cs,
        }
    }

    #[test]
    fn hat_tau_degenerate_branch() {
        let s = Smoothness {
            l_f: 1.0,
            l_g: 0.0,
            c_g: 0.0,
        };
        let t = hat_tau(&s, f64::INFINITY, &consts(0.1, 0.1, 0.1, 0.1), 1.0).unwrap();
        assert!((t - 0.6).abs() < 1e-15);
        // c_beta = 0 is fine without constraint curvature
        let t = hat_tau(&s, f64::INFINITY, &consts(0.1, 0.4, 0.0, 0.4), 1.0).unwrap();
        assert!((t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn hat_tau_both_branches() {
        let s = Smoothness {
            l_f: 1.0,
            l_g: 1.0,
            c_g: 1.0,
        };
        let c = consts(0.1, 0.1, 0.1, 0.1);
        let t = hat_tau(&s, 1.0, &c, 1.0).unwrap();
        assert!((t - 0.2).abs() < 1e-15);
        let second = (0.1f64 * 0.9 / 2.0).sqrt();
        assert!(second > 0.2 && (second - 0.212_132).abs() < 1e-6);

        // both sufficient inequalities hold at the returned step
        let slack = 1.0 - 0.1;
        assert!(slack / t >= 0.3 / t + 1.0 + (1.0 / 0.1) * t - 1e-12);
        assert!(slack / t >= 2.0 * 1.0 / 0.1 * t);
    }

    #[test]
    fn hat_tau_lower_bound() {
        let c = consts(0.1, 0.1, 0.1, 0.1);
        for (l_f, l_g, c_g, b, zeta) in [
            (1.0, 1.0, 1.0, 1.0, 1.0),
            (60.0, 0.25, 13.0, 500.0, 1.0),
            (0.01, 3.0, 0.5, 2.0, 4.0),
            (1000.0, 1e-3, 100.0, 1e4, 0.1),
        ] {
            let s = Smoothness { l_f, l_g, c_g };
            let t = hat_tau(&s, b, &c, zeta).unwrap();
            let slack: f64 = 1.0 - 0.4;
            let lower = [
                slack / (2.0 * l_f),
                (c.c_beta * slack / 2.0).sqrt() / (l_g * b),
                (c.c_alpha * 0.9 / (2.0 * zeta)).sqrt() / c_g,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            assert!(t >= lower * (1.0 - 1e-12), "{t} < {lower}");
        }
    }

    #[test]
    fn hat_tau_rejects_bad_constants() {
        let s = Smoothness {
            l_f: 1.0,
            l_g: 1.0,
            c_g: 1.0,
        };
        assert!(hat_tau(&s, 1.0, &consts(0.5, 0.2, 0.2, 0.2), 1.0).is_err());
        assert!(hat_tau(&s, 1.0, &consts(0.1, 0.1, 0.0, 0.1), 1.0).is_err());
        assert!(hat_tau(&s, f64::INFINITY, &consts(0.1, 0.1, 0.1, 0.1), 1.0).is_err());
        assert!(hat_tau(&s, 1.0, &consts(0.1, 0.1, 0.1, 0.1), 0.0).is_err());
    }

    #[test]
    fn oracles_on_tiny_node() {
        // f = 0.5 (x-3)^2 = 0.5 x^2 - 3x + 4.5, g = x - 1
        let node = NodeProblem::quadratic(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, -3.0), 4.5)
            .with_constraint(QuadConstraint::affine(DVector::from_element(1, 1.0), -1.0));
        let x = DVector::from_element(1, 1.0);
        assert_eq!(node.f_value(&x), 2.0);
        assert_eq!(node.f_grad(&x)[0], -2.0);
        assert_eq!(node.g_value(&x)[0], 0.0);
        let th = DVector::from_element(1, 2.0);
        assert_eq!(node.g_jac_t_apply(&x, &th)[0], 2.0);
        assert_eq!(node.g_jac_diff_t_apply(&x, &DVector::zeros(1), &th)[0], 0.0);
        assert_eq!(node.phi_value(&x), 0.0);
    }

    #[test]
    fn ellipsoid_constraint_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[0.25, 0.05, 0.05, 0.1]);
        let center = DVector::from_vec(vec![2.0, 1.5]);
        let c = QuadConstraint::ellipsoid(a.clone(), &center, 1.0);
        let x = DVector::from_vec(vec![-0.3, 4.0]);
        let d = &x - &center;
        let direct = 0.5 * d.dot(&(&a * &d)) - 1.0;
        assert!((c.value(&x) - direct).abs() < 1e-14);
        assert!((c.gradient(&x) - &a * &d).norm() < 1e-14);
    }

    #[test]
    fn infinite_bounds_survive_json() {
        let node = NodeProblem::zero(2).with_box(5.0);
        let text = serde_json::to_string(&node).unwrap();
        let back: NodeProblem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, node);
        assert!(back.dual_bound.is_infinite());
    }
}
