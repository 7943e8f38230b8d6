//! Shared fixtures for the kernel benchmarks.

use dapdb_core::experiment::generate;
use dapdb_core::oracle::attach_reference;
use dapdb_core::{Family, ProblemInstance};
use nalgebra::DVector;

/// Instance of the default experiment size with its reference attached.
pub fn experiment_instance(family: Family, seed: u64) -> ProblemInstance {
    let mut inst = generate(family, 20, 12, 24, seed, seed).expect("generator accepts the default sizes");
    attach_reference(&mut inst, 1e-8).expect("reference solve converges on generated instances");
    inst
}

/// Deterministic, well-spread vector entries.
pub fn wavy_vector(n: usize, phase: f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 5.0 * (1.7 * i as f64 + phase).sin())
}

pub fn wavy_states(nodes: usize, n: usize) -> Vec<DVector<f64>> {
    (0..nodes).map(|k| wavy_vector(n, k as f64)).collect()
}
