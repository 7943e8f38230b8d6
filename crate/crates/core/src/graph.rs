//! Communication topology and the two simulated network primitives:
//! synchronous neighbor exchange and network-wide max-consensus.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connected undirected graph. Edges are stored as `(i, j)` with `i < j`,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EdgeList", into = "EdgeList")]
pub struct NetworkGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct EdgeList {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<EdgeList> for NetworkGraph {
    type Error = Error;

    fn try_from(list: EdgeList) -> Result<Self> {
        NetworkGraph::new(list.num_nodes, list.edges)
    }
}

impl From<NetworkGraph> for EdgeList {
    fn from(g: NetworkGraph) -> Self {
        EdgeList {
            num_nodes: g.num_nodes,
            edges: g.edges,
        }
    }
}

impl NetworkGraph {
    /// Builds a graph from an edge list. Pairs may be given in either
    /// orientation; they are normalized to `i < j`. Self loops, duplicates
    /// and disconnected graphs are rejected.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Graph(format!("self loop at node {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if !set.insert((i, j)) {
                return Err(Error::Graph(format!("duplicate edge ({i}, {j})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        let graph = NetworkGraph {
            num_nodes,
            edges,
            neighbors,
        };
        if !graph.is_connected() {
            return Err(Error::Graph("graph is not connected".into()));
        }
        Ok(graph)
    }

    /// Random small-world topology: a Hamiltonian cycle over a uniformly
    /// random node permutation, plus `num_edges - num_nodes` distinct chords
    /// drawn uniformly from the remaining node pairs.
    pub fn build_small_world(num_nodes: usize, num_edges: usize, seed: u64) -> Result<Self> {
        if num_nodes < 3 {
            return Err(Error::Graph(format!(
                "small-world graph needs at least 3 nodes, got {num_nodes}"
            )));
        }
        let max_edges = num_nodes * (num_nodes - 1) / 2;
        if num_edges < num_nodes || num_edges > max_edges {
            return Err(Error::Graph(format!(
                "edge count {num_edges} outside [{num_nodes}, {max_edges}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..num_nodes).collect();
        perm.shuffle(&mut rng);

        let norm = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
        let mut chosen = BTreeSet::new();
        for k in 0..num_nodes {
            chosen.insert(norm(perm[k], perm[(k + 1) % num_nodes]));
        }
        let mut candidates: Vec<(usize, usize)> = (0..num_nodes)
            .flat_map(|i| ((i + 1)..num_nodes).map(move |j| (i, j)))
            .filter(|e| !chosen.contains(e))
            .collect();
        let extra = num_edges - num_nodes;
        let (picked, _) = candidates.partial_shuffle(&mut rng, extra);
        chosen.extend(picked.iter().copied());
        NetworkGraph::new(num_nodes, chosen)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Plain-text edge list: `"N E"` on the first line, then one `"i j"`
    /// line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.num_nodes, self.edges.len());
        for (i, j) in &self.edges {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let (n, e) = parse_pair(header)?;
        let edges = lines.map(parse_pair).collect::<Result<Vec<_>>>()?;
        if edges.len() != e {
            return Err(Error::Parse(format!(
                "header declares {e} edges, found {}",
                edges.len()
            )));
        }
        NetworkGraph::new(n, edges)
    }

    /// Laplacian action `(d_i s_i - sum_{j in N_i} s_j)` without touching a
    /// ledger. Used by diagnostics and by [`neighbor_diff`].
    pub fn laplacian_apply(&self, states: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.check_len(states.len())?;
        Ok((0..self.num_nodes)
            .map(|i| {
                let mut out = &states[i] * self.degree(i) as f64;
                for &j in &self.neighbors[i] {
                    out -= &states[j];
                }
                out
            })
            .collect())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.num_nodes {
            return Err(Error::LengthMismatch {
                expected: self.num_nodes,
                got,
            });
        }
        Ok(())
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Parse(format!("expected two integers, got {line:?}"))),
    }
}

/// Counters for simulated communication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    /// Synchronous rounds in which every node exchanges one vector with each neighbor.
    pub neighbor_rounds: u64,
    /// Network-wide max-consensus floodings.
    pub flood_rounds: u64,
    /// Total n-dimensional payloads delivered over edges.
    pub vectors_sent: u64,
}

/// One neighbor-exchange round: every node obtains
/// `sum_{j in N_i} (s_i - s_j)`.
pub fn neighbor_diff(
    graph: &NetworkGraph,
    states: &[DVector<f64>],
    ledger: &mut CommLedger,
) -> Result<Vec<DVector<f64>>> {
    let out = graph.laplacian_apply(states)?;
    ledger.neighbor_rounds += 1;
    ledger.vectors_sent += 2 * graph.num_edges() as u64;
    Ok(out)
}

/// Edge differences `x_i - x_j` for each stored edge `(i, j)`. Diagnostic
/// only; no communication is charged.
pub fn incidence_apply(graph: &NetworkGraph, x: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    graph.check_len(x.len())?;
    Ok(graph.edges.iter().map(|&(i, j)| &x[i] - &x[j]).collect())
}

/// Network-wide maximum, simulated as a single flooding round.
pub fn max_consensus(graph: &NetworkGraph, values: &[f64], ledger: &mut CommLedger) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::LengthMismatch {
            expected: graph.num_nodes(),
            got: 0,
        });
    }
    graph.check_len(values.len())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("max_consensus"));
    }
    ledger.flood_rounds += 1;
    Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    fn triangle() -> NetworkGraph {
        NetworkGraph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn experiment_scale_small_world() {
        let g = NetworkGraph::build_small_world(12, 24, 3).unwrap();
        assert_eq!(g.num_nodes(), 12);
        assert_eq!(g.num_edges(), 24);
        assert!(g.is_connected());
        let deg: usize = (0..12).map(|i| g.degree(i)).sum();
        assert_eq!(deg, 48);
    }

    #[test]
    fn forced_topologies() {
        let g = NetworkGraph::build_small_world(3, 3, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        let k4 = NetworkGraph::build_small_world(4, 6, 7).unwrap();
        assert!((0..4).all(|i| k4.degree(i) == 3));
    }

    #[test]
    fn small_world_rejects_bad_sizes() {
        assert!(NetworkGraph::build_small_world(2, 2, 0).is_err());
        assert!(NetworkGraph::build_small_world(5, 4, 0).is_err());
        assert!(NetworkGraph::build_small_world(5, 11, 0).is_err());
    }

    #[test]
    fn contains_hamiltonian_cycle_edges() {
        // every node has degree >= 2 because of the cycle
        for seed in 0..20 {
            let g = NetworkGraph::build_small_world(10, 14, seed).unwrap();
            assert!((0..10).all(|i| g.degree(i) >= 2));
        }
    }

    #[test]
    fn seed_determinism() {
        let a = NetworkGraph::build_small_world(12, 24, 99).unwrap();
        let b = NetworkGraph::build_small_world(12, 24, 99).unwrap();
        let c = NetworkGraph::build_small_world(12, 24, 100).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn rejects_disconnected_and_duplicates() {
        assert!(NetworkGraph::new(4, [(0, 1), (2, 3)]).is_err());
        assert!(NetworkGraph::new(2, [(0, 1), (1, 0)]).is_err());
        assert!(NetworkGraph::new(2, [(0, 0)]).is_err());
        assert!(NetworkGraph::new(2, [(0, 2)]).is_err());
        assert!(NetworkGraph::new(1, []).is_ok());
    }

    #[test]
    fn neighbor_diff_examples() {
        let g = triangle();
        let mut ledger = CommLedger::default();
        let v = DVector::from_vec(vec![1.5, -2.0]);
        let out = neighbor_diff(&g, &[v.clone(), v.clone(), v], &mut ledger).unwrap();
        assert!(out.iter().all(|o| o.iter().all(|&x| x == 0.0)));

        let out = neighbor_diff(&g, &scalars(&[1.0, 2.0, 4.0]), &mut ledger).unwrap();
        let got: Vec<f64> = out.iter().map(|o| o[0]).collect();
        assert_eq!(got, vec![-4.0, -1.0, 5.0]);
        assert_eq!(got.iter().sum::<f64>(), 0.0);
        assert_eq!(ledger.neighbor_rounds, 2);
        assert_eq!(ledger.vectors_sent, 12);

        let path = NetworkGraph::new(2, [(0, 1)]).unwrap();
        let out = neighbor_diff(&path, &scalars(&[1.0, 0.0]), &mut ledger).unwrap();
        assert_eq!((out[0][0], out[1][0]), (1.0, -1.0));

        assert!(neighbor_diff(&g, &scalars(&[1.0]), &mut ledger).is_err());
    }

    #[test]
    fn incidence_examples() {
        let path = NetworkGraph::new(2, [(0, 1)]).unwrap();
        assert_eq!(incidence_apply(&path, &scalars(&[3.0, 1.0])).unwrap()[0][0], 2.0);

        let g = triangle();
        let x = scalars(&[1.0, 2.0, 4.0]);
        let e: Vec<f64> = incidence_apply(&g, &x).unwrap().iter().map(|v| v[0]).collect();
        assert_eq!(e, vec![-1.0, -3.0, -2.0]);
        let sq: f64 = e.iter().map(|v| v * v).sum();
        let lap = g.laplacian_apply(&x).unwrap();
        let quad: f64 = x.iter().zip(&lap).map(|(a, b)| a.dot(b)).sum();
        assert_eq!(sq, 14.0);
        assert_eq!(quad, 14.0);
    }

    #[test]
    fn max_consensus_examples() {
        let g = triangle();
        let mut ledger = CommLedger::default();
        assert_eq!(max_consensus(&g, &[1.0, 1.0, 1.0], &mut ledger).unwrap(), 1.0);
        assert_eq!(max_consensus(&g, &[1.0, 2.5, 0.3], &mut ledger).unwrap(), 2.5);
        let single = NetworkGraph::new(1, []).unwrap();
        assert_eq!(max_consensus(&single, &[7.0], &mut ledger).unwrap(), 7.0);
        assert_eq!(ledger.flood_rounds, 3);
        assert!(max_consensus(&g, &[], &mut ledger).is_err());
        assert!(max_consensus(&g, &[1.0, f64::NAN, 0.0], &mut ledger).is_err());
        assert_eq!(ledger.flood_rounds, 3);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = NetworkGraph::build_small_world(8, 12, 5).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("8 12\n"));
        assert_eq!(NetworkGraph::from_edge_list(&text).unwrap(), g);
        assert!(NetworkGraph::from_edge_list("3 2\n0 1\n").is_err());
        assert!(NetworkGraph::from_edge_list("3 1\n0 x\n").is_err());
    }
}
