//! Communication graphs and Metropolis–Hastings mixing matrices.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Cap on Erdős–Rényi resampling before giving up.
pub const MAX_ER_ATTEMPTS: usize = 1000;

/// Spectral gaps at or below this value are treated as a disconnected graph.
pub const MIN_SPECTRAL_GAP: f64 = 1e-12;

/// Undirected, connected, simple graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    // normalized to i < j, sorted
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicate edges, out-of-range
    /// endpoints and disconnected edge sets.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one vertex".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let graph = Graph {
            n,
            edges,
            adjacency,
        };
        if !graph.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    fn is_connected(&self) -> bool {
        connected(self.n, &self.adjacency)
    }

    /// Edge-list text: header `n <count>`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        Self::parse_edge_list_named(text, "<edge list>")
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list_named(&text, &path.display().to_string())
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }

    fn parse_edge_list_named(text: &str, name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: name.to_string(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing `n <count>` header".into()))?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count
                .parse::<usize>()
                .map_err(|e| err(hline, format!("bad vertex count: {e}")))?,
            _ => return Err(err(hline, format!("expected `n <count>`, found `{header}`"))),
        };
        let mut edges = Vec::new();
        for (k, line) in lines {
            let parts: Vec<_> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(err(k, format!("expected `i j`, found `{line}`")));
            }
            let i = parts[0]
                .parse::<usize>()
                .map_err(|e| err(k, format!("bad vertex `{}`: {e}", parts[0])))?;
            let j = parts[1]
                .parse::<usize>()
                .map_err(|e| err(k, format!("bad vertex `{}`: {e}", parts[1])))?;
            edges.push((i, j));
        }
        Graph::new(n, edges)
    }
}

fn connected(n: usize, adjacency: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Samples G(n, p), resampling with `seed + 1, seed + 2, …` until connected.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Erdős–Rényi graph needs n >= 2, got {n}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "edge probability must lie in (0, 1], got {p}"
        )));
    }
    for attempt in 0..MAX_ER_ATTEMPTS {
        let mut rng = rng::seeded(seed.wrapping_add(attempt as u64));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        match Graph::new(n, edges) {
            Ok(g) => return Ok(g),
            Err(Error::InvalidGraph(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DisconnectedGraph {
        n,
        p,
        attempts: MAX_ER_ATTEMPTS,
    })
}

pub fn gen_ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("ring needs n >= 3, got {n}")));
    }
    Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
}

pub fn gen_complete(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "complete graph needs n >= 2, got {n}"
        )));
    }
    Graph::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
}

/// Symmetric doubly stochastic weight matrix supported on a [`Graph`].
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    graph: Graph,
}

impl MixingMatrix {
    /// Wraps an explicit matrix after checking every mixing invariant against
    /// `graph`.
    pub fn from_dense(w: DMatrix<f64>, graph: Graph) -> Result<Self> {
        let m = MixingMatrix { w, graph };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Symmetry (exact), row sums (1e-12), sign pattern and spectrum in (−1, 1].
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.w.nrows() != n || self.w.ncols() != n {
            return Err(Error::InvalidMixing(format!(
                "matrix is {}x{}, graph has {n} vertices",
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let wij = self.w[(i, j)];
                if wij != self.w[(j, i)] {
                    return Err(Error::InvalidMixing(format!("W[{i}][{j}] != W[{j}][{i}]")));
                }
                let should_be_positive = i == j || self.graph.has_edge(i, j);
                if should_be_positive && wij <= 0.0 {
                    return Err(Error::InvalidMixing(format!(
                        "W[{i}][{j}] = {wij} must be positive"
                    )));
                }
                if !should_be_positive && wij != 0.0 {
                    return Err(Error::InvalidMixing(format!(
                        "W[{i}][{j}] = {wij} but ({i}, {j}) is not an edge"
                    )));
                }
                row += wij;
            }
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMixing(format!("row {i} sums to {row}")));
            }
        }
        let eig = self.eigenvalues();
        if eig[0] > 1.0 + 1e-10 || *eig.last().unwrap() <= -1.0 + 1e-12 {
            return Err(Error::InvalidMixing(format!(
                "spectrum [{}, {}] outside (-1, 1]",
                eig.last().unwrap(),
                eig[0]
            )));
        }
        if n > 1 && (eig[1] - 1.0).abs() < 1e-10 {
            return Err(Error::InvalidMixing("eigenvalue 1 is repeated".into()));
        }
        Ok(())
    }

    /// Eigenvalues sorted in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.w.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Same matrix with vertices relabelled by `perm` (vertex `i` becomes
    /// `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: perm.len(),
            });
        }
        let graph = Graph::new(
            n,
            self.graph.edges().iter().map(|&(i, j)| (perm[i], perm[j])),
        )?;
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w[(perm[i], perm[j])] = self.w[(i, j)];
            }
        }
        MixingMatrix::from_dense(w, graph)
    }
}

/// `W_ij = 1 / (1 + max(d_i, d_j))` on edges, diagonal fills rows to one.
pub fn metropolis_weights(g: &Graph) -> MixingMatrix {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        let wij = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix {
        w,
        graph: g.clone(),
    }
}

/// `ρ = 1 − max(|λ_2|, |λ_n|)`; a single agent has gap 1.
pub fn spectral_gap(w: &MixingMatrix) -> Result<f64> {
    let ev = w.eigenvalues();
    if ev.len() == 1 {
        return Ok(1.0);
    }
    let second = ev[1].abs().max(ev[ev.len() - 1].abs());
    let gap = 1.0 - second;
    if gap <= MIN_SPECTRAL_GAP {
        return Err(Error::VanishingSpectralGap { gap });
    }
    Ok(gap)
}
