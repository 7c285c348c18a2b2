//! Communication graphs and doubly stochastic averaging matrices.
//!
//! Workers form an undirected graph; gossip averaging multiplies the
//! column-stacked model matrix by a doubly stochastic matrix `W`. The mixing
//! quality of the random `W` law is summarized by the spectral gap
//! `rho = max(|lambda_2|, |lambda_n|)` of `E[W' W]`; `rho < 1` whenever the
//! graph is connected.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the doubly stochastic row/column-sum invariant.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("worker count {0} is too small (need at least {1})")]
    InvalidSize(usize, usize),
    #[error("edge ({0}, {1}) is out of range for {2} workers")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop edge at worker {0}")]
    SelfLoop(usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid worker pair ({0}, {0}): averaging requires two distinct workers")]
    InvalidPair(usize),
    #[error("worker index {0} out of range for {1} workers")]
    IndexOutOfRange(usize, usize),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("partition is not a valid bipartition: {0}")]
    InvalidPartition(String),
    #[error("selection weights invalid: {0}")]
    InvalidWeights(String),
}

/// Undirected worker graph with an optional active/passive bipartition.
///
/// Edges are stored as ordered pairs `(i, j)` with `i < j`. When a partition
/// is present every edge joins one active to one passive worker, which is the
/// property that makes the averaging handshake deadlock-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    active: Option<BTreeSet<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    passive: Option<BTreeSet<usize>>,
}

impl TopologyGraph {
    /// Builds a graph from raw edges, validating indices and self-loops.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::InvalidSize(0, 1));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            if a >= n || b >= n {
                return Err(TopologyError::EdgeOutOfRange(a, b, n));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n,
            edges: set,
            active: None,
            passive: None,
        })
    }

    /// Single-node edgeless graph; averaging is a no-op on it.
    pub fn single() -> Self {
        Self {
            n: 1,
            edges: BTreeSet::new(),
            active: Some(BTreeSet::from([0])),
            passive: Some(BTreeSet::new()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == i {
                out.push(b);
            } else if b == i {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == i || b == i)
            .count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn partition(&self) -> Option<(&BTreeSet<usize>, &BTreeSet<usize>)> {
        match (&self.active, &self.passive) {
            (Some(a), Some(p)) => Some((a, p)),
            _ => None,
        }
    }

    pub fn is_active(&self, i: usize) -> Option<bool> {
        self.active.as_ref().map(|a| a.contains(&i))
    }

    /// Installs an active/passive split, checking it is a bipartition of V
    /// in which every edge crosses sides.
    pub fn with_partition(
        mut self,
        active: BTreeSet<usize>,
        passive: BTreeSet<usize>,
    ) -> Result<Self, TopologyError> {
        if !active.is_disjoint(&passive) {
            return Err(TopologyError::InvalidPartition(
                "active and passive sets overlap".into(),
            ));
        }
        if active.union(&passive).count() != self.n {
            return Err(TopologyError::InvalidPartition(
                "sets do not cover all workers".into(),
            ));
        }
        if let Some(&w) = active.union(&passive).max() {
            if w >= self.n {
                return Err(TopologyError::IndexOutOfRange(w, self.n));
            }
        }
        for &(a, b) in &self.edges {
            if active.contains(&a) == active.contains(&b) {
                return Err(TopologyError::InvalidPartition(format!(
                    "edge ({a}, {b}) does not cross the partition"
                )));
            }
        }
        self.active = Some(active);
        self.passive = Some(passive);
        Ok(self)
    }

    /// True iff the graph is connected (single node counts as connected).
    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let adj: Vec<Vec<usize>> = (0..self.n).map(|i| self.neighbors(i)).collect();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Serializes as `{"n": .., "edges": [[i,j],..], "active": [..], "passive": [..]}`.
    pub fn to_json(&self) -> String {
        let json = serde_json::json!({
            "n": self.n,
            "edges": self.edges.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
            "active": self.active.as_ref().map(|s| s.iter().copied().collect::<Vec<_>>()),
            "passive": self.passive.as_ref().map(|s| s.iter().copied().collect::<Vec<_>>()),
        });
        serde_json::to_string_pretty(&json).expect("topology serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        #[derive(Deserialize)]
        struct Raw {
            n: usize,
            edges: Vec<(usize, usize)>,
            #[serde(default)]
            active: Option<Vec<usize>>,
            #[serde(default)]
            passive: Option<Vec<usize>>,
        }
        let raw: Raw = serde_json::from_str(text)
            .map_err(|e| TopologyError::InvalidPartition(format!("topology JSON: {e}")))?;
        let graph = TopologyGraph::new(raw.n, raw.edges)?;
        match (raw.active, raw.passive) {
            (Some(a), Some(p)) => {
                graph.with_partition(a.into_iter().collect(), p.into_iter().collect())
            }
            _ => Ok(graph),
        }
    }

    /// Graph Laplacian `D - A` as a dense matrix.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(a, b) in &self.edges {
            l[(a, a)] += 1.0;
            l[(b, b)] += 1.0;
            l[(a, b)] -= 1.0;
            l[(b, a)] -= 1.0;
        }
        l
    }
}

/// Ring of `n` workers with the parity bipartition when `n` is even.
pub fn build_ring(n: usize) -> Result<TopologyGraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n, 2));
    }
    let edges = (0..n).map(|j| (j, (j + 1) % n));
    let graph = TopologyGraph::new(n, edges)?;
    if n.is_multiple_of(2) {
        let active: BTreeSet<usize> = (0..n).step_by(2).collect();
        let passive: BTreeSet<usize> = (1..n).step_by(2).collect();
        graph.with_partition(active, passive)
    } else {
        Ok(graph)
    }
}

/// Offsets `2^i + 1` for `0 <= i <= floor(log2(n-1))`, reduced mod `n`.
fn skip_ring_offsets(n: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut step = 1usize;
    while step < n {
        offsets.push(step + 1);
        step *= 2;
    }
    offsets
}

/// Skip-ring: each worker additionally links to peers `2^i + 1` hops away.
///
/// Self-loops and duplicate edges are dropped. Offset 2 joins same-parity
/// workers, so the parity bipartition is generally invalid; it is installed
/// only when every edge happens to cross sides. For a bipartition-friendly
/// variant see [`build_skip_ring_bipartite`].
pub fn build_skip_ring(n: usize) -> Result<TopologyGraph, TopologyError> {
    skip_ring_with_offsets(n, &skip_ring_offsets(n))
}

/// Skip-ring restricted to odd offsets so the parity bipartition is valid.
///
/// Used by the deadlock-free simulation mode; the dropped even offsets are
/// reported through the returned warning string when any were removed.
pub fn build_skip_ring_bipartite(
    n: usize,
) -> Result<(TopologyGraph, Option<String>), TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n, 2));
    }
    if !n.is_multiple_of(2) {
        return Err(TopologyError::InvalidPartition(format!(
            "skip-ring on odd n={n} admits no bipartition"
        )));
    }
    let all = skip_ring_offsets(n);
    let odd: Vec<usize> = all.iter().copied().filter(|o| o % 2 == 1).collect();
    let dropped: Vec<usize> = all.iter().copied().filter(|o| o % 2 == 0).collect();
    let graph = if odd.is_empty() {
        // n = 2 leaves no odd offset; fall back to the plain ring edge.
        build_ring(n)?
    } else {
        skip_ring_with_offsets(n, &odd)?
    };
    if !graph.is_connected() {
        return Err(TopologyError::Disconnected);
    }
    let active: BTreeSet<usize> = (0..n).step_by(2).collect();
    let passive: BTreeSet<usize> = (1..n).step_by(2).collect();
    let graph = graph.with_partition(active, passive)?;
    let warning = if dropped.is_empty() {
        None
    } else {
        Some(format!(
            "skip-ring(n={n}): dropped even offsets {dropped:?} to keep the bipartition"
        ))
    };
    Ok((graph, warning))
}

fn skip_ring_with_offsets(n: usize, offsets: &[usize]) -> Result<TopologyGraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidSize(n, 2));
    }
    let mut edges = Vec::new();
    for j in 0..n {
        for &o in offsets {
            let t = (j + o) % n;
            if t != j {
                edges.push((j, t));
            }
        }
    }
    if edges.is_empty() {
        // n = 2 reduces every offset to a self-loop; keep the single ring edge.
        edges.push((0, 1));
    }
    let graph = TopologyGraph::new(n, edges)?;
    // Parity bipartition is attempted but installed only if valid.
    if n.is_multiple_of(2) {
        let active: BTreeSet<usize> = (0..n).step_by(2).collect();
        let passive: BTreeSet<usize> = (1..n).step_by(2).collect();
        match graph.clone().with_partition(active, passive) {
            Ok(g) => return Ok(g),
            Err(_) => return Ok(graph),
        }
    }
    Ok(graph)
}

/// An `n x n` doubly stochastic averaging matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingMatrix {
    entries: DMatrix<f64>,
}

impl AveragingMatrix {
    /// Wraps a matrix after checking nonnegativity and row/column sums.
    pub fn new(entries: DMatrix<f64>) -> Result<Self, TopologyError> {
        if entries.nrows() != entries.ncols() {
            return Err(TopologyError::NotDoublyStochastic(format!(
                "matrix is {}x{}, not square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                let e = entries[(i, j)];
                if e < 0.0 {
                    return Err(TopologyError::NotDoublyStochastic(format!(
                        "negative entry {e} at ({i}, {j})"
                    )));
                }
                row += e;
                col += entries[(j, i)];
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotDoublyStochastic(format!(
                    "row {i} sums to {row}, column {i} sums to {col}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

/// Pairwise averaging matrix: identity except `W_ii = W_jj = W_ij = W_ji = 1/2`.
pub fn pair_averaging_matrix(
    i: usize,
    j: usize,
    n: usize,
) -> Result<AveragingMatrix, TopologyError> {
    if i >= n {
        return Err(TopologyError::IndexOutOfRange(i, n));
    }
    if j >= n {
        return Err(TopologyError::IndexOutOfRange(j, n));
    }
    if i == j {
        return Err(TopologyError::InvalidPair(i));
    }
    let mut w = DMatrix::identity(n, n);
    w[(i, i)] = 0.5;
    w[(j, j)] = 0.5;
    w[(i, j)] = 0.5;
    w[(j, i)] = 0.5;
    AveragingMatrix::new(w)
}

/// How the updating worker and its gossip partner are chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborRule {
    #[default]
    UniformOverNeighbors,
}

/// Probability law for the updating worker; partner is uniform over neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    worker_weights: Vec<f64>,
    neighbor_rule: NeighborRule,
}

impl SelectionPolicy {
    pub fn new(worker_weights: Vec<f64>, graph: &TopologyGraph) -> Result<Self, TopologyError> {
        if worker_weights.len() != graph.n() {
            return Err(TopologyError::InvalidWeights(format!(
                "{} weights for {} workers",
                worker_weights.len(),
                graph.n()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in worker_weights.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(TopologyError::InvalidWeights(format!(
                    "weight {p} at worker {i}"
                )));
            }
            if p > 0.0 && graph.n() > 1 && graph.degree(i) == 0 {
                return Err(TopologyError::InvalidWeights(format!(
                    "worker {i} has positive weight but no neighbors"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TopologyError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self {
            worker_weights,
            neighbor_rule: NeighborRule::UniformOverNeighbors,
        })
    }

    pub fn uniform(graph: &TopologyGraph) -> Result<Self, TopologyError> {
        let n = graph.n();
        Self::new(vec![1.0 / n as f64; n], graph)
    }

    pub fn worker_weights(&self) -> &[f64] {
        &self.worker_weights
    }

    pub fn neighbor_rule(&self) -> NeighborRule {
        self.neighbor_rule
    }

    /// Samples the updating worker by its weight.
    pub fn sample_worker<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.worker_weights.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.worker_weights.len() - 1
    }

    /// Samples `(worker, neighbor)`; `None` when the graph has no edges.
    pub fn sample_pair<R: Rng>(
        &self,
        graph: &TopologyGraph,
        rng: &mut R,
    ) -> Option<(usize, usize)> {
        if graph.edge_count() == 0 {
            return None;
        }
        let i = self.sample_worker(rng);
        let nbrs = graph.neighbors(i);
        if nbrs.is_empty() {
            return None;
        }
        let j = nbrs[rng.gen_range(0..nbrs.len())];
        Some((i, j))
    }
}

/// Exact `E[W' W]` under a selection policy, by enumerating every
/// `(worker, neighbor)` pair with probability `p_i / deg(i)`.
pub fn expected_gram(
    graph: &TopologyGraph,
    policy: &SelectionPolicy,
) -> Result<DMatrix<f64>, TopologyError> {
    if !graph.is_connected() {
        return Err(TopologyError::Disconnected);
    }
    let n = graph.n();
    if n == 1 {
        return Ok(DMatrix::identity(1, 1));
    }
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        let p = policy.worker_weights()[i];
        if p == 0.0 {
            continue;
        }
        let nbrs = graph.neighbors(i);
        let q = p / nbrs.len() as f64;
        for j in nbrs {
            let w = pair_averaging_matrix(i, j, n)?;
            gram += q * (w.entries().transpose() * w.entries());
        }
    }
    Ok(gram)
}

/// `rho = max(|lambda_2|, |lambda_n|)` of a symmetric doubly stochastic matrix,
/// eigenvalues sorted descending.
pub fn spectral_gap(gram: &DMatrix<f64>) -> Result<f64, TopologyError> {
    let n = gram.nrows();
    if n != gram.ncols() {
        return Err(TopologyError::NotSymmetric);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (gram[(i, j)] - gram[(j, i)]).abs() > 1e-9 {
                return Err(TopologyError::NotSymmetric);
            }
        }
    }
    if n == 1 {
        return Ok(0.0);
    }
    let sym = SymmetricEigen::new(gram.clone());
    // Eigenpair residual gate: ||A v - lambda v|| <= 1e-9 ||v||. The matrices
    // here stay small (n <= 256), so the extra n^3 verification is cheap.
    for (idx, &lambda) in sym.eigenvalues.iter().enumerate() {
        let v = sym.eigenvectors.column(idx);
        let residual = (gram * v - lambda * v).norm();
        if residual > 1e-9 * v.norm() {
            return Err(TopologyError::NotDoublyStochastic(format!(
                "eigensolver residual {residual:e} for eigenvalue {lambda}"
            )));
        }
    }
    let mut eigs: Vec<f64> = sym.eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).expect("symmetric eigenvalues are finite"));
    let rho = eigs[1].abs().max(eigs[n - 1].abs());
    Ok(rho.min(1.0))
}

/// Spectral summary of the pair-gossip law on a graph.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub expected_gram: DMatrix<f64>,
    pub rho: f64,
    pub bar_rho: f64,
}

/// Computes `E[W' W]`, its spectral gap, and the derived mixing constant.
pub fn analyze(graph: &TopologyGraph, policy: &SelectionPolicy) -> Result<SpectralReport, TopologyError> {
    let gram = expected_gram(graph, policy)?;
    let rho = spectral_gap(&gram)?;
    let bar_rho = crate::theory::bar_rho(rho, graph.n())
        .map_err(|_| TopologyError::NotDoublyStochastic(format!("rho {rho} out of range")))?;
    Ok(SpectralReport {
        expected_gram: gram,
        rho,
        bar_rho,
    })
}

/// One Monte-Carlo measurement of gossip consensus decay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecayPoint {
    /// Number of sampled averaging matrices applied.
    pub rounds: u32,
    /// Basis vector the product was applied to.
    pub start_worker: usize,
    /// Monte-Carlo mean of `|| 1/n - (prod W) e_i ||^2`.
    pub mean_sq_dist: f64,
    pub std_err: f64,
    /// `((n-1)/n) rho^rounds`, the decay lemma's bound.
    pub bound: f64,
}

/// Estimates `E || 1_n/n - (prod_{k=1}^K W_k) e_i ||^2` by sampling pair
/// averages from the policy, for every start worker and each round count.
pub fn consensus_decay_mc(
    graph: &TopologyGraph,
    policy: &SelectionPolicy,
    round_counts: &[u32],
    trials: u64,
    seed: u64,
) -> Result<Vec<DecayPoint>, TopologyError> {
    use rand::SeedableRng;
    let n = graph.n();
    let report = analyze(graph, policy)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &rounds in round_counts {
        for start in 0..n {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..trials {
                let mut v = vec![0.0f64; n];
                v[start] = 1.0;
                for _ in 0..rounds {
                    if let Some((i, j)) = policy.sample_pair(graph, &mut rng) {
                        let avg = (v[i] + v[j]) * 0.5;
                        v[i] = avg;
                        v[j] = avg;
                    }
                }
                let inv = 1.0 / n as f64;
                let dist: f64 = v.iter().map(|&x| (inv - x) * (inv - x)).sum();
                sum += dist;
                sum_sq += dist * dist;
            }
            let mean = sum / trials as f64;
            let var = (sum_sq / trials as f64 - mean * mean).max(0.0);
            out.push(DecayPoint {
                rounds,
                start_worker: start,
                mean_sq_dist: mean,
                std_err: (var / trials as f64).sqrt(),
                bound: (n as f64 - 1.0) / n as f64 * report.rho.powi(rounds as i32),
            });
        }
    }
    Ok(out)
}

/// Outcome of the deadlock-freedom analysis of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeadlockVerdict {
    /// A bipartition covering all edges exists; handshakes cannot cycle.
    DeadlockFree {
        active: BTreeSet<usize>,
        passive: BTreeSet<usize>,
    },
    /// No bipartition exists; the returned vertices form an odd cycle.
    OddCycle(Vec<usize>),
}

impl DeadlockVerdict {
    pub fn is_deadlock_free(&self) -> bool {
        matches!(self, DeadlockVerdict::DeadlockFree { .. })
    }
}

/// Two-colors the graph; returns the partition or a violating odd cycle.
pub fn detect_deadlock_freedom(graph: &TopologyGraph) -> DeadlockVerdict {
    let n = graph.n();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| graph.neighbors(i)).collect();
    let mut color: Vec<Option<bool>> = vec![None; n];
    let mut parent: Vec<usize> = (0..n).collect();
    for start in 0..n {
        if color[start].is_some() {
            continue;
        }
        color[start] = Some(true);
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match color[v] {
                    None => {
                        color[v] = Some(!color[u].unwrap());
                        parent[v] = u;
                        queue.push_back(v);
                    }
                    Some(c) if c == color[u].unwrap() => {
                        return DeadlockVerdict::OddCycle(odd_cycle(u, v, &parent));
                    }
                    Some(_) => {}
                }
            }
        }
    }
    let active: BTreeSet<usize> = (0..n).filter(|&i| color[i] == Some(true)).collect();
    let passive: BTreeSet<usize> = (0..n).filter(|&i| color[i] == Some(false)).collect();
    DeadlockVerdict::DeadlockFree { active, passive }
}

/// Reconstructs the odd cycle through conflict edge `(u, v)` via BFS parents.
fn odd_cycle(u: usize, v: usize, parent: &[usize]) -> Vec<usize> {
    let path_to_root = |mut x: usize| {
        let mut path = vec![x];
        while parent[x] != x {
            x = parent[x];
            path.push(x);
        }
        path
    };
    let pu = path_to_root(u);
    let pv = path_to_root(v);
    // Trim the common suffix; pu[iu] == pv[iv] is the lowest common ancestor,
    // which must appear in the cycle exactly once.
    let mut iu = pu.len();
    let mut iv = pv.len();
    while iu > 0 && iv > 0 && pu[iu - 1] == pv[iv - 1] {
        iu -= 1;
        iv -= 1;
    }
    let mut cycle: Vec<usize> = pu[..=iu].to_vec();
    cycle.extend(pv[..iv].iter().rev());
    cycle
}
