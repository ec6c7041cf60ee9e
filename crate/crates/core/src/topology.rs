//! Undirected communication graphs.
//!
//! Adjacency is stored as sorted per-node neighbor lists (self excluded);
//! every constructor enforces symmetry and drops self-loops.
//!
//! Edge-list text format: one `i j` pair per line, whitespace separated,
//! 0-indexed. Blank lines and lines starting with `#` are ignored.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub const DEFAULT_ATTEMPT_BUDGET: u32 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<[f64; 2]>>,
    max_degree: usize,
    attempts: u32,
}

impl NetworkTopology {
    fn from_adjacency(mut neighbors: Vec<Vec<usize>>, positions: Option<Vec<[f64; 2]>>) -> Self {
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let max_degree = neighbors.iter().map(Vec::len).max().unwrap_or(0);
        NetworkTopology { neighbors, positions, max_degree, attempts: 1 }
    }

    /// Builds a graph from an edge list, applying the symmetric closure and
    /// dropping self-loops and duplicates. Connectivity is not enforced; query
    /// it with [`NetworkTopology::is_connected`].
    pub fn from_edge_list(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Topology(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        Ok(Self::from_adjacency(neighbors, None))
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::from_edge_list(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edge_list(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Number of placements drawn before a connected one was found (1 for
    /// graphs not built by resampling).
    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == n
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

/// Parses the edge-list text format; `n` is one more than the largest index
/// unless given explicitly.
pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<NetworkTopology> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut field = |name: &str| -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::Topology(format!("line {}: missing {name}", lineno + 1)))?
                .parse()
                .map_err(|e| Error::Topology(format!("line {}: {e}", lineno + 1)))
        };
        let i = field("first endpoint")?;
        let j = field("second endpoint")?;
        if parts.next().is_some() {
            return Err(Error::Topology(format!("line {}: expected two fields", lineno + 1)));
        }
        edges.push((i, j));
    }
    let n = match n {
        Some(n) => n,
        None => edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(1),
    };
    NetworkTopology::from_edge_list(n, &edges)
}

fn place_once(n: usize, radius: f64, rng: &mut SimRng) -> NetworkTopology {
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let r2 = radius * radius;
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            // Strict inequality: "distance less than the radius".
            if dx * dx + dy * dy < r2 {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    NetworkTopology::from_adjacency(neighbors, Some(positions))
}

/// Random geometric graph on the unit square, resampled until connected.
pub fn random_geometric_graph(n: usize, radius: f64, seed: u64) -> Result<NetworkTopology> {
    random_geometric_graph_with_budget(n, radius, seed, DEFAULT_ATTEMPT_BUDGET)
}

pub fn random_geometric_graph_with_budget(
    n: usize,
    radius: f64,
    seed: u64,
    budget: u32,
) -> Result<NetworkTopology> {
    if n == 0 {
        return Err(Error::Param("n must be at least 1".into()));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::Param(format!("radius must lie in (0, sqrt 2], got {radius}")));
    }
    if budget == 0 {
        return Err(Error::Param("attempt budget must be positive".into()));
    }
    for attempt in 0..budget {
        let mut rng = rng::stream(seed, &[rng::purpose::TOPOLOGY, attempt as u64]);
        let mut topo = place_once(n, radius, &mut rng);
        if topo.is_connected() {
            topo.attempts = attempt + 1;
            return Ok(topo);
        }
    }
    Err(Error::Disconnected { budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn symmetric_irreflexive(t: &NetworkTopology) -> bool {
        (0..t.n()).all(|i| {
            t.neighbors(i)
                .iter()
                .all(|&j| j != i && t.neighbors(j).binary_search(&i).is_ok())
        })
    }

    #[test]
    fn single_node_is_connected() {
        let t = random_geometric_graph(1, 0.3, 5).unwrap();
        assert!(t.is_connected());
        assert!(t.neighbors(0).is_empty());
    }

    #[test]
    fn radius_domain() {
        assert!(random_geometric_graph(2, std::f64::consts::SQRT_2 + 1e-9, 1).is_err());
        assert!(random_geometric_graph(2, 1.5, 1).is_err());
        assert!(random_geometric_graph(2, 0.0, 1).is_err());
        assert!(random_geometric_graph(2, std::f64::consts::SQRT_2, 1).is_ok());
    }

    #[test]
    fn connectivity_examples() {
        assert!(!NetworkTopology::from_edge_list(2, &[]).unwrap().is_connected());
        assert!(NetworkTopology::complete(5).unwrap().is_connected());
        assert!(NetworkTopology::path(3).unwrap().is_connected());
    }

    #[test]
    fn edge_list_normalization() {
        let path = NetworkTopology::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(path.is_connected());
        assert_eq!(path.neighbors(1), &[0, 2]);

        let loops = NetworkTopology::from_edge_list(2, &[(0, 0)]).unwrap();
        assert_eq!(loops.edge_count(), 0);
        assert!(!loops.is_connected());

        let dup = NetworkTopology::from_edge_list(3, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(dup.edge_count(), 1);
        assert_eq!(dup.neighbors(0), &[1]);

        assert!(NetworkTopology::from_edge_list(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn edge_list_text_round_trip() {
        let t = random_geometric_graph(30, 0.4, 21).unwrap();
        let back = parse_edge_list(&t.to_edge_list_string(), Some(30)).unwrap();
        for i in 0..30 {
            assert_eq!(back.neighbors(i), t.neighbors(i));
        }
        assert!(parse_edge_list("0 1 2\n", None).is_err());
        assert!(parse_edge_list("0 x\n", None).is_err());
        let c = parse_edge_list("# comment\n\n0 1  # first\n1 2\n", None).unwrap();
        assert_eq!(c.n(), 3);
    }

    #[test]
    fn budget_exhaustion_reports_budget() {
        match random_geometric_graph_with_budget(50, 0.01, 3, 4) {
            Err(Error::Disconnected { budget }) => assert_eq!(budget, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paper_scale_connectivity_rate() {
        // Single-placement connectivity over 500 seeds, checked by an
        // independent union-find over all pairs.
        let mut connected = 0;
        for seed in 0..500u64 {
            let mut rng = rng::stream(seed, &[rng::purpose::TOPOLOGY, 0]);
            let t = place_once(50, 0.3, &mut rng);
            let pos = t.positions().unwrap();
            let mut parent: Vec<usize> = (0..50).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while p[r] != r {
                    r = p[r];
                }
                p[x] = r;
                r
            }
            for i in 0..50 {
                for j in i + 1..50 {
                    let d = ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt();
                    if d < 0.3 {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a] = b;
                    }
                }
            }
            let root = find(&mut parent, 0);
            let uf_connected = (0..50).all(|i| find(&mut parent, i) == root);
            assert_eq!(uf_connected, t.is_connected());
            connected += uf_connected as usize;
        }
        assert!(connected > 250, "connected in {connected}/500");
        let t = random_geometric_graph_with_budget(50, 0.3, 0, 100).unwrap();
        assert!(t.attempts() <= 100);
    }

    proptest! {
        #[test]
        fn constructors_are_symmetric(n in 1usize..40, radius in 0.05f64..1.4, seed in any::<u64>()) {
            if let Ok(t) = random_geometric_graph_with_budget(n, radius, seed, 20) {
                prop_assert!(symmetric_irreflexive(&t));
                prop_assert!(t.is_connected());
            }
        }

        #[test]
        fn edge_lists_are_symmetrized(edges in proptest::collection::vec((0usize..12, 0usize..12), 0..60)) {
            let t = NetworkTopology::from_edge_list(12, &edges).unwrap();
            prop_assert!(symmetric_irreflexive(&t));
        }
    }
}
