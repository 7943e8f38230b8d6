//! Random instance families used in the experiments: l1-regularized QCQPs
//! with one ellipsoidal constraint per node, and l1-regularized QPs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::problem::{NodeProblem, ProblemInstance, QuadConstraint, Smoothness};

/// Box half-width of the QCQP domain.
pub const QCQP_BOX: f64 = 10.0;
/// Non-binding box keeping the QP domain compact.
pub const QP_BOX: f64 = 1e6;

/// Haar-like random orthonormal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn random_orthonormal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn from_spectrum(v: &DMatrix<f64>, spectrum: &[f64]) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
    let m = v * d * v.transpose();
    (&m + m.transpose()) * 0.5
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Fills `first, <uniform draws in [lo, hi]>, tail...` and sorts decreasingly.
fn spectrum(n: usize, first: f64, tail: &[f64], lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mid = n - 1 - tail.len();
    let dist = Uniform::new_inclusive(lo, hi).expect("valid uniform bounds");
    let mut v = Vec::with_capacity(n);
    v.push(first);
    v.extend((0..mid).map(|_| dist.sample(rng)));
    v.extend_from_slice(tail);
    sorted_desc(v)
}

fn uniform_point(n: usize, radius: f64, rng: &mut impl Rng) -> DVector<f64> {
    let dist = Uniform::new_inclusive(-radius, radius).expect("valid uniform bounds");
    DVector::from_fn(n, |_, _| dist.sample(rng))
}

/// l1-regularized QCQP over the box `[-10, 10]^n`.
///
/// Node `i` (1-based) gets `f_i = 0.5 x'Q_i x` with spectrum
/// `5i, U[1,5i]..., 1, 0, 0` and the constraint
/// `0.5 (x - c_i)' A_i (x - c_i) <= 1` with spectrum `1/4, U[1/16,1/4]..., 1/16`.
/// Requires `n >= 4`.
pub fn gen_qcqp(n: usize, graph: NetworkGraph, seed: u64) -> Result<ProblemInstance> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("QCQP generator needs n >= 4, got {n}")));
    }
    qcqp_family(
        n,
        graph,
        seed,
        |i, rng| spectrum(n, 5.0 * i, &[1.0, 0.0, 0.0], 1.0, 5.0 * i, rng),
        "qcqp",
    )
}

/// Low-dimensional QCQP variant for `n in {2, 3}`, used by grid-search
/// cross checks. The objective spectrum keeps the largest eigenvalue `5i`
/// and a single zero eigenvalue.
pub fn gen_qcqp_small(n: usize, graph: NetworkGraph, seed: u64) -> Result<ProblemInstance> {
    if !(2..=3).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "small QCQP generator needs n in 2..=3, got {n}"
        )));
    }
    qcqp_family(
        n,
        graph,
        seed,
        |i, rng| spectrum(n, 5.0 * i, &[0.0], 1.0, 5.0 * i, rng),
        "qcqp-small",
    )
}

fn qcqp_family(
    n: usize,
    graph: NetworkGraph,
    seed: u64,
    objective_spectrum: impl Fn(f64, &mut ChaCha8Rng) -> Vec<f64>,
    family: &str,
) -> Result<ProblemInstance> {
    let num_nodes = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_width = 1.0 / (2.0 * (n as f64).sqrt());
    let jitter = Uniform::new_inclusive(-half_width, half_width).expect("valid uniform bounds");

    let mut nodes = Vec::with_capacity(num_nodes);
    let mut centers = Vec::with_capacity(num_nodes);
    for i in 1..=num_nodes {
        let gamma = objective_spectrum(i as f64, &mut rng);
        let v = random_orthonormal(n, &mut rng);
        let q = from_spectrum(&v, &gamma);

        let r = spectrum(n, 0.25, &[1.0 / 16.0], 1.0 / 16.0, 0.25, &mut rng);
        let u = random_orthonormal(n, &mut rng);
        let a = from_spectrum(&u, &r);

        let center = DVector::from_fn(n, |_, _| 2.0 + jitter.sample(&mut rng));
        let c_g = r[0] * (QCQP_BOX * (n as f64).sqrt() + center.norm());
        let node = NodeProblem::quadratic(q, DVector::zeros(n), 0.0)
            .with_constraint(QuadConstraint::ellipsoid(a, &center, 1.0))
            .with_l1(1.0 / num_nodes as f64)
            .with_box(QCQP_BOX)
            .with_smoothness(Smoothness {
                l_f: gamma[0],
                l_g: r[0],
                c_g,
            });
        nodes.push(node);
        centers.push(center);
    }
    assign_slater_dual_bounds(&mut nodes, &centers)?;

    let x0 = uniform_point(n, QCQP_BOX, &mut rng);
    let x0 = vec![x0; num_nodes];
    ProblemInstance::new(
        nodes,
        graph,
        x0,
        format!("{family}:n={n}:nodes={num_nodes}:seed={seed}:x0=uniform[-10,10]"),
    )
}

/// Dual bounds from a Slater point: with `x_s` the mean of the ellipsoid
/// centers, every `g_i(x_s) < 0` and, since the objective is nonnegative,
/// `theta_i* <= phi(x_s) / (-g_i(x_s))`. The bound doubles that value.
fn assign_slater_dual_bounds(nodes: &mut [NodeProblem], centers: &[DVector<f64>]) -> Result<()> {
    let n = centers[0].len();
    let slater = centers.iter().fold(DVector::zeros(n), |acc, c| acc + c) / centers.len() as f64;
    let phi: f64 = nodes.iter().map(|node| node.objective(&slater)).sum();
    for node in nodes.iter_mut() {
        let g = node.g_value(&slater)[0];
        if !(g < 0.0) || !phi.is_finite() {
            return Err(Error::InvalidProblem("Slater point is not strictly feasible".into()));
        }
        node.dual_bound = 2.0 * phi / (-g);
    }
    Ok(())
}

/// l1-regularized unconstrained QP. Node `i` draws `L_i ~ N(1000, 100)`
/// (redrawn while nonpositive) and gets `f_i = 0.5 x'Q_i x + q_i'x + c_i`
/// with spectrum `L_i, U[0, min(100, L_i)]..., 0`. Requires `n >= 2`.
pub fn gen_qp(n: usize, graph: NetworkGraph, seed: u64) -> Result<ProblemInstance> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("QP generator needs n >= 2, got {n}")));
    }
    let num_nodes = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lipschitz = Normal::new(1000.0, 100.0).expect("valid normal");
    let unit = Uniform::new_inclusive(0.0, 1.0).expect("valid uniform bounds");

    let mut nodes = Vec::with_capacity(num_nodes);
    for _ in 0..num_nodes {
        let l = loop {
            let l: f64 = lipschitz.sample(&mut rng);
            if l > 0.0 {
                break l;
            }
        };
        let gamma = spectrum(n, l, &[0.0], 0.0, l.min(100.0), &mut rng);
        let v = random_orthonormal(n, &mut rng);
        let q = from_spectrum(&v, &gamma);
        let lin = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = unit.sample(&mut rng);
        let node = NodeProblem::quadratic(q, lin, offset)
            .with_l1(1.0 / num_nodes as f64)
            .with_box(QP_BOX)
            .with_smoothness(Smoothness {
                l_f: l,
                l_g: 0.0,
                c_g: 0.0,
            });
        nodes.push(node);
    }
    let x0 = uniform_point(n, 10.0, &mut rng);
    let x0 = vec![x0; num_nodes];
    ProblemInstance::new(
        nodes,
        graph,
        x0,
        format!("qp:n={n}:nodes={num_nodes}:seed={seed}:x0=uniform[-10,10]"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
        sorted_desc(m.clone().symmetric_eigenvalues().iter().copied().collect())
    }

    fn graph(n: usize) -> NetworkGraph {
        NetworkGraph::build_small_world(n, (2 * n).min(n * (n - 1) / 2), 1).unwrap()
    }

    #[test]
    fn orthonormal_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_orthonormal(6, &mut rng);
        assert!((&v * v.transpose() - DMatrix::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn qcqp_spectra() {
        let inst = gen_qcqp(20, graph(12), 4).unwrap();
        assert_eq!(inst.num_nodes(), 12);
        for (k, node) in inst.nodes.iter().enumerate() {
            let i = (k + 1) as f64;
            let ev = eigenvalues_desc(&node.q);
            assert!((ev[0] - 5.0 * i).abs() < 1e-10);
            assert!(ev[18].abs() < 1e-10 && ev[19].abs() < 1e-10);
            assert!((ev[17] - 1.0).abs() < 1e-10);
            let ea = eigenvalues_desc(&node.constraints[0].a);
            assert!((ea[0] - 0.25).abs() < 1e-12 && (ea[19] - 1.0 / 16.0).abs() < 1e-12);
            assert!(ea.iter().all(|&e| e >= 1.0 / 16.0 - 1e-12));
            let s = node.smoothness.unwrap();
            assert_eq!(s.l_f, 5.0 * i);
            assert!(node.dual_bound.is_finite() && node.dual_bound > 0.0);
            assert_eq!(node.l1_weight, 1.0 / 12.0);
        }
        assert!(inst.x0.iter().all(|x| x == &inst.x0[0]));
        assert!(inst.x0[0].iter().all(|v| v.abs() <= 10.0));
    }

    #[test]
    fn qcqp_rejects_small_n() {
        assert!(gen_qcqp(3, graph(4), 0).is_err());
        assert!(gen_qcqp_small(4, graph(4), 0).is_err());
        assert!(gen_qcqp_small(2, graph(3), 0).is_ok());
    }

    #[test]
    fn qp_spectra_and_gradient_at_origin() {
        let inst = gen_qp(10, graph(5), 8).unwrap();
        for node in &inst.nodes {
            let ev = eigenvalues_desc(&node.q);
            assert!(ev[9].abs() < 1e-9);
            assert!(ev[8] > 1e-9 || ev[8] >= -1e-9);
            assert!(ev.iter().all(|&e| e >= -1e-9));
            assert!((ev[0] - node.smoothness.unwrap().l_f).abs() < 1e-9);
            let g0 = node.f_grad(&DVector::zeros(10));
            assert_eq!(g0, node.lin);
            assert_eq!(node.num_constraints(), 0);
        }
        assert!(gen_qp(1, graph(3), 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_qcqp(6, graph(4), 11).unwrap();
        let b = gen_qcqp(6, graph(4), 11).unwrap();
        assert_eq!(a, b);
        let c = gen_qp(6, graph(4), 11).unwrap();
        let d = gen_qp(6, graph(4), 11).unwrap();
        assert_eq!(c, d);
        assert_ne!(gen_qcqp(6, graph(4), 12).unwrap(), a);
    }

    #[test]
    fn slater_point_bounds_are_valid_for_a_feasible_point() {
        let inst = gen_qcqp(5, graph(4), 2).unwrap();
        let n = 5;
        let mut centers = DVector::zeros(n);
        for node in &inst.nodes {
            let a = &node.constraints[0].a;
            let c = -a.clone().try_inverse().unwrap() * &node.constraints[0].b;
            centers += c;
        }
        let slater = centers / 4.0;
        assert!(inst.nodes.iter().all(|node| node.g_value(&slater)[0] < 0.0));
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = gen_qcqp(5, graph(4), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        inst.save(&path).unwrap();
        let back = ProblemInstance::load(&path).unwrap();
        assert_eq!(back.generator_tag, inst.generator_tag);
        assert_eq!(back.graph, inst.graph);
        for (a, b) in back.nodes.iter().zip(&inst.nodes) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.constraints, b.constraints);
            assert_eq!(a.dual_bound, b.dual_bound);
        }
    }
}
