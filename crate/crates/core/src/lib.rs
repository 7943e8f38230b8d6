//! Decentralized accelerated primal-dual methods with local backtracking
//! for constrained composite consensus optimization, simulated over an
//! undirected agent network.
//!
//! Every node `i` holds `phi_i + f_i` and constraints `g_i(x) <= 0`; the
//! network minimizes `sum_i (phi_i + f_i)(x)` while agreeing on `x`. Nodes
//! exchange vectors only with neighbors, plus one network-wide maximum per
//! iteration to agree on a common step shrink factor.
//!
//! ```
//! use dapdb_core::{generate, oracle, run, Method, Params, RunOptions};
//!
//! let mut inst = generate::gen_qcqp(4, dapdb_core::NetworkGraph::build_small_world(4, 5, 1)?, 7)?;
//! oracle::attach_reference(&mut inst, 1e-8)?;
//! let config = Params::qcqp().resolve(&inst, Method::Dapdb)?;
//! let trace = run::run(&inst, Method::Dapdb, config, RunOptions::new(50))?;
//! assert_eq!(trace.records.len(), 51);
//! # Ok::<(), dapdb_core::Error>(())
//! ```

// negated comparisons are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod graph;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod run;

pub use algo::{
    AgentState, AlgorithmConfig, IterationReport, LambdaForm, Method, Params, RunClock, SafeStep, Scheduler, Solver,
};
pub use error::{Error, Result};
pub use experiment::{ExperimentSpec, Family};
pub use graph::{CommLedger, NetworkGraph};
pub use metrics::{RunTrace, TraceRecord};
pub use oracle::ReferenceSolution;
pub use problem::{NodeProblem, ProblemInstance, QuadConstraint, ReferenceInfo, Smoothness, TestConstants};
pub use run::RunOptions;
