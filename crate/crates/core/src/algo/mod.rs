//! The decentralized primal-dual iterations.

mod config;
mod iterate;
mod kernels;
mod state;

pub use config::{AlgorithmConfig, LambdaForm, Method, Params, SafeStep, Scheduler};
pub use iterate::{dapd_iterate, dapdb0_iterate, dapdb_iterate, initialize, IterationReport, RunClock, Solver};
pub use kernels::{
    backtrack_node, contraction_limit, ergodic_average, gamma_update, smoothness_test, t_weights, test_function_e,
    test_threshold, BacktrackOutcome, TestKind,
};
pub use state::AgentState;
