//! Communication graphs and Metropolis mixing matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Resampling cap for Erdős–Rényi graphs that keep coming out disconnected.
const MAX_ER_ATTEMPTS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    AllToAll,
    Ring,
    ErdosRenyi,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::AllToAll => "all_to_all",
            TopologyKind::Ring => "ring",
            TopologyKind::ErdosRenyi => "erdos_renyi",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_to_all" | "complete" => Ok(TopologyKind::AllToAll),
            "ring" | "cycle" => Ok(TopologyKind::Ring),
            "erdos_renyi" | "er" | "random" => Ok(TopologyKind::ErdosRenyi),
            other => invalid(format!("unknown topology `{other}`")),
        }
    }
}

/// Undirected simple graph on nodes `0..n_nodes`.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list. Rejects self-loops, duplicates and
    /// out-of-range indices. Connectivity is not required here; see
    /// [`Graph::is_connected`].
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return invalid("graph needs at least one node");
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return invalid(format!("edge ({a}, {b}) out of range for {n_nodes} nodes"));
            }
            if a == b {
                return invalid(format!("self-loop at node {a}"));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return invalid(format!("duplicate edge ({a}, {b})"));
            }
        }
        Ok(Graph {
            n_nodes,
            edges: set.into_iter().collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.n_nodes
    }

    /// Edge-list text: first line `n`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n_nodes);
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing node count".into(),
        })?;
        let n: usize = header.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad node count `{header}`"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let mut it = l.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                    line,
                    msg: format!("expected `i j`, got `{l}`"),
                })
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line,
                    msg: format!("trailing tokens in `{l}`"),
                });
            }
            edges.push((a, b));
        }
        Graph::from_edges(n, edges)
    }
}

/// Builds a connected graph of the requested kind.
///
/// Erdős–Rényi graphs are redrawn on successive ChaCha streams of the same
/// seed until one is connected, so the result depends only on
/// `(kind, n, p, seed)`. `p` and `seed` are ignored for the other kinds.
pub fn build_graph(kind: TopologyKind, n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return invalid(format!("need at least 2 nodes, got {n}"));
    }
    match kind {
        TopologyKind::AllToAll => {
            let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            Graph::from_edges(n, edges)
        }
        TopologyKind::Ring => {
            // n = 2 degenerates to a single edge
            let edges: BTreeSet<_> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
            Graph::from_edges(n, edges)
        }
        TopologyKind::ErdosRenyi => {
            if !(p > 0.0 && p <= 1.0) {
                return invalid(format!("edge probability must lie in (0, 1], got {p}"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for attempt in 0..MAX_ER_ATTEMPTS {
                rng.set_stream(attempt);
                rng.set_word_pos(0);
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                let g = Graph::from_edges(n, edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::GenerationFailed {
                attempts: MAX_ER_ATTEMPTS as usize,
                reason: format!("no connected G({n}, {p}) sample"),
            })
        }
    }
}

/// Symmetric doubly stochastic weight matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix {
    n: usize,
    w: Vec<f64>,
}

impl MixingMatrix {
    /// Tolerance used when validating user-supplied matrices.
    pub const TOL: f64 = 1e-12;

    /// Validates symmetry, entries in `[0, 1]` and unit row sums.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return invalid("empty mixing matrix");
        }
        let mut w = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return invalid(format!("row {i} has {} entries, expected {n}", row.len()));
            }
            w.extend_from_slice(row);
        }
        let m = MixingMatrix { n, w };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        MixingMatrix { n, w }
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() || !(-Self::TOL..=1.0 + Self::TOL).contains(&v) {
                    return invalid(format!("entry ({i}, {j}) = {v} outside [0, 1]"));
                }
                if (v - self.get(j, i)).abs() > Self::TOL {
                    return invalid(format!("matrix not symmetric at ({i}, {j})"));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("row {i} sums to {sum}"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Singular values in decreasing order. `W` is symmetric, so these are the
    /// absolute eigenvalues.
    pub fn singular_values(&self) -> Vec<f64> {
        let eig = self
            .to_mat()
            .self_adjoint_eigenvalues(Side::Lower)
            .expect("symmetric eigendecomposition of a small matrix");
        let mut s: Vec<f64> = eig.into_iter().map(f64::abs).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Second-largest singular value, 0 for a single node.
    pub fn second_singular_value(&self) -> f64 {
        self.singular_values().get(1).copied().unwrap_or(0.0)
    }
}

/// Lazy Metropolis weights: `w_ij = 1 / (1 + max(deg i, deg j))` on edges and
/// the remaining mass on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return invalid("metropolis weights need a connected graph");
    }
    let n = g.n_nodes();
    let deg = g.degrees();
    let mut w = vec![0.0; n * n];
    for &(a, b) in g.edges() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[a * n + b] = v;
        w[b * n + a] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[i * n + j]).sum();
        w[i * n + i] = 1.0 - off;
    }
    Ok(MixingMatrix { n, w })
}
