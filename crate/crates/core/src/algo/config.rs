use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{hat_tau, ProblemInstance, TestConstants};

/// Which iteration to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Backtracking method for constrained problems.
    Dapdb,
    /// Backtracking method for problems without functional constraints.
    Dapdb0,
    /// Non-adaptive baseline: constant safe steps, momentum fixed to one.
    Dapd,
}

impl Method {
    pub fn is_adaptive(self) -> bool {
        !matches!(self, Method::Dapd)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Dapdb => "dapdb",
            Method::Dapdb0 => "dapdb0",
            Method::Dapd => "dapd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dapdb" => Ok(Method::Dapdb),
            "dapdb0" => Ok(Method::Dapdb0),
            "dapd" => Ok(Method::Dapd),
            other => Err(Error::Parse(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// How the smooth-part decrease is measured in the backtracking test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaForm {
    /// `f(x~) - f(x) - <grad f(x), x~ - x>`, evaluated through
    /// [`NodeProblem::f_bregman`](crate::problem::NodeProblem::f_bregman).
    #[default]
    Exact,
    /// `<grad f(x~) - grad f(x), x~ - x>`, a stronger condition.
    GradientInnerProduct,
}

/// How the per-node safe step is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafeStep {
    /// Closed-form certificate from the Lipschitz data ([`hat_tau`]).
    #[default]
    Certified,
    /// `1 / (2 L_f)`, the baseline choice for the unconstrained QP runs.
    HalfInverseLipschitz,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    #[default]
    Sequential,
    Parallel,
}

/// User-facing run parameters; resolved against an instance into an
/// [`AlgorithmConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub delta: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_varsigma: f64,
    /// Defaults to `1 / (2 |E|)`.
    pub c_gamma: Option<f64>,
    pub rho: f64,
    /// Initial step inflation: `tau_bar_i = kappa * hat_tau_i` for the
    /// backtracking methods. Ignored by the baseline.
    pub kappa: f64,
    pub zeta: f64,
    pub lambda_form: LambdaForm,
    pub safe_step: SafeStep,
    pub scheduler: Scheduler,
}

impl Default for Params {
    fn default() -> Self {
        Params::qcqp()
    }
}

impl Params {
    /// Settings of the constrained experiments.
    pub fn qcqp() -> Self {
        Params {
            delta: 0.1,
            c_alpha: 0.1,
            c_beta: 0.1,
            c_varsigma: 0.1,
            c_gamma: None,
            rho: 0.9,
            kappa: 20.0,
            zeta: 1.0,
            lambda_form: LambdaForm::Exact,
            safe_step: SafeStep::Certified,
            scheduler: Scheduler::Sequential,
        }
    }

    /// Settings of the unconstrained QP experiments.
    pub fn qp() -> Self {
        Params {
            delta: 0.1,
            c_alpha: 0.4,
            c_beta: 0.0,
            c_varsigma: 0.4,
            kappa: 5.0,
            safe_step: SafeStep::HalfInverseLipschitz,
            ..Params::qcqp()
        }
    }

    pub fn test_constants(&self) -> TestConstants {
        TestConstants {
            delta: self.delta,
            c_alpha: self.c_alpha,
            c_beta: self.c_beta,
            c_varsigma: self.c_varsigma,
        }
    }

    /// Per-node safe steps for `instance`.
    pub fn safe_steps(&self, instance: &ProblemInstance) -> Result<Vec<f64>> {
        instance
            .nodes
            .iter()
            .map(|node| {
                let smooth = node
                    .smoothness
                    .ok_or_else(|| Error::InvalidProblem("node has no smoothness constants".into()))?;
                let t = match self.safe_step {
                    SafeStep::Certified => hat_tau(&smooth, node.dual_bound, &self.test_constants(), self.zeta)?,
                    SafeStep::HalfInverseLipschitz => 0.5 / smooth.l_f,
                };
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::InvalidProblem(format!("safe step {t} is not usable")));
                }
                Ok(t)
            })
            .collect()
    }

    /// Resolves per-node quantities. The baseline starts from the safe
    /// steps; the backtracking methods start from `kappa` times them.
    pub fn resolve(&self, instance: &ProblemInstance, method: Method) -> Result<AlgorithmConfig> {
        let hat = self.safe_steps(instance)?;
        let scale = if method.is_adaptive() { self.kappa } else { 1.0 };
        let tau_bar = hat.iter().map(|t| scale * t).collect();
        let num_edges = instance.graph.num_edges().max(1);
        let config = AlgorithmConfig {
            consts: self.test_constants(),
            c_gamma: self.c_gamma.unwrap_or(1.0 / (2.0 * num_edges as f64)),
            rho: self.rho,
            zeta: vec![self.zeta; instance.num_nodes()],
            tau_bar,
            hat_tau: Some(hat),
            kappa: scale,
            lambda_form: self.lambda_form,
            scheduler: self.scheduler,
        };
        config.validate(instance, method)?;
        Ok(config)
    }
}

/// Fully resolved constants for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub consts: TestConstants,
    pub c_gamma: f64,
    pub rho: f64,
    /// Dual-to-primal step ratio per node.
    pub zeta: Vec<f64>,
    /// Initial primal step per node.
    pub tau_bar: Vec<f64>,
    /// Certified safe steps, when the smoothness data is known.
    pub hat_tau: Option<Vec<f64>>,
    pub kappa: f64,
    pub lambda_form: LambdaForm,
    pub scheduler: Scheduler,
}

impl AlgorithmConfig {
    pub fn validate(&self, instance: &ProblemInstance, method: Method) -> Result<()> {
        let TestConstants {
            delta,
            c_alpha,
            c_beta,
            c_varsigma,
        } = self.consts;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(delta > 0.0 && c_alpha > 0.0 && c_varsigma > 0.0 && c_beta >= 0.0) {
            return bad("delta, c_alpha, c_varsigma must be positive and c_beta nonnegative".into());
        }
        if !(delta + c_alpha + c_beta + c_varsigma < 1.0) {
            return bad("need c_alpha + c_beta + c_varsigma < 1 - delta".into());
        }
        match method {
            Method::Dapdb if c_beta <= 0.0 && !instance.is_unconstrained() => {
                return bad("dapdb needs c_beta > 0 on constrained instances".into());
            }
            Method::Dapdb0 => {
                if c_beta != 0.0 {
                    return bad("dapdb0 requires c_beta = 0".into());
                }
                if !instance.is_unconstrained() {
                    return Err(Error::InvalidProblem(
                        "dapdb0 only handles instances without functional constraints".into(),
                    ));
                }
            }
            Method::Dapd if self.hat_tau.is_none() => {
                return bad("the baseline needs safe steps (smoothness constants)".into());
            }
            _ => {}
        }
        let num_edges = instance.graph.num_edges();
        if num_edges > 0 && !(self.c_gamma > 0.0 && self.c_gamma <= 1.0 / (2.0 * num_edges as f64)) {
            return bad(format!(
                "c_gamma must lie in (0, 1/(2|E|)] = (0, {}]",
                1.0 / (2.0 * num_edges as f64)
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        let n = instance.num_nodes();
        if self.zeta.len() != n || self.tau_bar.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: self.zeta.len().min(self.tau_bar.len()),
            });
        }
        if self
            .zeta
            .iter()
            .chain(&self.tau_bar)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return bad("zeta_i and tau_bar_i must be positive and finite".into());
        }
        Ok(())
    }

    pub fn tau_bar_max(&self) -> f64 {
        self.tau_bar.iter().copied().fold(0.0, f64::max)
    }
}
