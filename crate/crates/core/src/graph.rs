//! Accumulated-phase interaction graph.
//!
//! Every pair of particles `(k, l)` carries the total Ising phase it has
//! accumulated so far. For commuting couplings this matrix is the complete
//! description of the many-body state, so connectivity questions about the
//! state (is a bipartition entangled, can entanglement be localized between
//! two particles, how large are the entangled clusters) reduce to ordinary
//! graph queries.
//!
//! Phases are stored unreduced. An edge counts as present only when its phase
//! is not a multiple of 2π (within [`PHASE_TOLERANCE`]), because such a phase
//! is the identity on the qubits.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when deciding whether a phase is a multiple of 2π.
pub const PHASE_TOLERANCE: f64 = 1e-12;

/// Whether a raw accumulated phase acts non-trivially on the pair.
pub fn is_effective_phase(phase: f64) -> bool {
    let r = phase.rem_euclid(TAU);
    r > PHASE_TOLERANCE && TAU - r > PHASE_TOLERANCE
}

/// Union by size. `find` does not compress so it can run behind `&self`.
#[derive(Clone, Debug)]
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn find_compress(&mut self, x: usize) -> usize {
        let root = self.find(x);
        let mut x = x;
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find_compress(a);
        let rb = self.find_compress(b);
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Symmetric matrix of accumulated pair phases Γ, stored sparsely by row.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    n: usize,
    rows: Vec<BTreeMap<usize, f64>>,
    links: UnionFind,
    // set when an edge stopped being effective; the union-find can only merge,
    // so queries fall back to the full scan until `refresh_connectivity`
    links_stale: bool,
}

impl InteractionGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![BTreeMap::new(); n],
            links: UnionFind::new(n),
            links_stale: false,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.n {
            return Err(Error::IndexOutOfRange { index, n: self.n });
        }
        Ok(())
    }

    /// Raw accumulated phase Γ_kl (zero on the diagonal and for untouched pairs).
    pub fn phase(&self, k: usize, l: usize) -> f64 {
        self.rows[k].get(&l).copied().unwrap_or(0.0)
    }

    /// Add `delta` radians to the pair `(k, l)`.
    pub fn add_phase(&mut self, k: usize, l: usize, delta: f64) -> Result<()> {
        self.check_index(k)?;
        self.check_index(l)?;
        if k == l {
            return Err(Error::SelfInteraction(k));
        }
        if !delta.is_finite() {
            return Err(Error::NonFinitePhase(delta));
        }
        let entry = self.rows[k].entry(l).or_insert(0.0);
        let was_effective = is_effective_phase(*entry);
        *entry += delta;
        let now = *entry;
        self.rows[l].insert(k, now);

        if is_effective_phase(now) {
            self.links.union(k, l);
        } else if was_effective {
            self.links_stale = true;
        }
        Ok(())
    }

    /// Nonzero raw entries of row `k`, ordered by column.
    pub fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[k].iter().map(|(&l, &p)| (l, p))
    }

    /// Every stored pair `k < l` with its raw phase.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(k, row)| {
            row.range(k + 1..).map(move |(&l, &p)| (k, l, p))
        })
    }

    pub fn is_edge(&self, k: usize, l: usize) -> bool {
        k != l && is_effective_phase(self.phase(k, l))
    }

    fn effective_neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[k]
            .iter()
            .filter(|(_, &p)| is_effective_phase(p))
            .map(|(&l, _)| l)
    }

    /// True iff some particle of the partition's side A shares an effective
    /// edge with a particle of the complement.
    pub fn is_entangled_partition(&self, partition: &Partition) -> bool {
        partition
            .set_a()
            .iter()
            .any(|&k| self.effective_neighbors(k).any(|l| !partition.contains(l)))
    }

    /// Rebuild the incremental union-find from scratch.
    pub fn refresh_connectivity(&mut self) {
        let mut links = UnionFind::new(self.n);
        for (k, l, p) in self.edges() {
            if is_effective_phase(p) {
                links.union(k, l);
            }
        }
        self.links = links;
        self.links_stale = false;
    }

    pub fn path_exists(&self, i: usize, j: usize) -> Result<bool> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(Error::InvalidParameter(format!(
                "path query needs two distinct particles, got {i} twice"
            )));
        }
        if self.links_stale {
            Ok(self.shortest_path(i, j)?.is_some())
        } else {
            Ok(self.links.find(i) == self.links.find(j))
        }
    }

    /// Breadth-first shortest path over effective edges, endpoints included.
    pub fn shortest_path(&self, i: usize, j: usize) -> Result<Option<Vec<usize>>> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Ok(Some(vec![i]));
        }
        let mut prev = vec![usize::MAX; self.n];
        prev[i] = i;
        let mut queue = VecDeque::from([i]);
        while let Some(k) = queue.pop_front() {
            for l in self.effective_neighbors(k) {
                if prev[l] != usize::MAX {
                    continue;
                }
                prev[l] = k;
                if l == j {
                    let mut path = vec![j];
                    let mut cur = j;
                    while cur != i {
                        cur = prev[cur];
                        path.push(cur);
                    }
                    path.reverse();
                    return Ok(Some(path));
                }
                queue.push_back(l);
            }
        }
        Ok(None)
    }

    /// Connected components over effective edges, members ascending, clusters
    /// ordered by their smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        if self.links_stale {
            return self.connected_components_scan();
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..self.n {
            by_root.entry(self.links.find(k)).or_default().push(k);
        }
        let mut clusters: Vec<Vec<usize>> = by_root.into_values().collect();
        clusters.sort_by_key(|c| c[0]);
        clusters
    }

    /// Same result as [`connected_components`](Self::connected_components),
    /// computed by a full breadth-first scan of the stored phases.
    pub fn connected_components_scan(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut clusters = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut cluster = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(k) = queue.pop_front() {
                for l in self.effective_neighbors(k) {
                    if !seen[l] {
                        seen[l] = true;
                        cluster.push(l);
                        queue.push_back(l);
                    }
                }
            }
            cluster.sort_unstable();
            clusters.push(cluster);
        }
        clusters
    }

    pub fn largest_cluster_size(&self) -> usize {
        self.connected_components().iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Largest lattice distance between two particles of the same cluster.
    pub fn max_entangled_distance(
        &self,
        positions: &[(usize, usize)],
        metric: &LatticeMetric,
    ) -> Result<usize> {
        if positions.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: positions.len(),
            });
        }
        let mut best = 0;
        for cluster in self.connected_components() {
            for (a, &k) in cluster.iter().enumerate() {
                for &l in &cluster[a + 1..] {
                    best = best.max(metric.distance(positions[k], positions[l]));
                }
            }
        }
        Ok(best)
    }

    /// Sub-matrix restricted to `indices`, relabelled `0..indices.len()`.
    pub fn induced_subgraph(&self, indices: &[usize]) -> Result<InteractionGraph> {
        let mut local = BTreeMap::new();
        for (pos, &k) in indices.iter().enumerate() {
            self.check_index(k)?;
            if local.insert(k, pos).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate index {k}")));
            }
        }
        let mut sub = InteractionGraph::new(indices.len());
        for (pos, &k) in indices.iter().enumerate() {
            for (l, p) in self.row(k) {
                if let Some(&lpos) = local.get(&l) {
                    if lpos > pos {
                        sub.add_phase(pos, lpos, p)?;
                    }
                }
            }
        }
        Ok(sub)
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            n_particles: self.n,
            edges: self.edges().collect(),
        }
    }

    pub fn from_snapshot(snapshot: &GraphSnapshot) -> Result<Self> {
        let mut g = InteractionGraph::new(snapshot.n_particles);
        for &(k, l, p) in &snapshot.edges {
            g.add_phase(k, l, p)?;
        }
        Ok(g)
    }
}

/// JSON checkpoint of a graph:
///
/// ```json
/// { "n_particles": 3, "edges": [[0, 1, 3.141592653589793], [1, 2, 0.5]] }
/// ```
///
/// `edges` lists each unordered pair once as `[k, l, phase]` with `k < l`;
/// phases are raw accumulated radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub n_particles: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Side A of a bipartition; the complement B is implicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    set_a: Vec<usize>,
    member: Vec<bool>,
}

impl Partition {
    pub fn new(n: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut set_a: Vec<usize> = indices.into_iter().collect();
        set_a.sort_unstable();
        if set_a.is_empty() {
            return Err(Error::InvalidPartition("side A is empty".into()));
        }
        if set_a.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPartition("duplicate index".into()));
        }
        if let Some(&last) = set_a.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange { index: last, n });
            }
        }
        let mut member = vec![false; n];
        for &k in &set_a {
            member[k] = true;
        }
        Ok(Self { n, set_a, member })
    }

    pub fn n_total(&self) -> usize {
        self.n
    }

    pub fn set_a(&self) -> &[usize] {
        &self.set_a
    }

    pub fn n_a(&self) -> usize {
        self.set_a.len()
    }

    pub fn n_b(&self) -> usize {
        self.n - self.set_a.len()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.member.get(k).copied().unwrap_or(false)
    }

    pub fn complement(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&k| !self.member[k])
    }
}

/// Manhattan distance on a periodic `dims.0 × dims.1` lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeMetric {
    pub dims: (usize, usize),
}

impl LatticeMetric {
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> usize {
        fn wrap(x: usize, y: usize, m: usize) -> usize {
            let d = x.abs_diff(y) % m;
            d.min(m - d)
        }
        wrap(a.0, b.0, self.dims.0) + wrap(a.1, b.1, self.dims.1)
    }

    /// Largest distance attainable on this lattice.
    pub fn diameter(&self) -> usize {
        self.dims.0 / 2 + self.dims.1 / 2
    }
}
