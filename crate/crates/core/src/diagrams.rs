//! Labelled diagram combinatorics: g-graphs, permutation pairs, linkedness, clusters,
//! external partitions, spanning trees and anchored trees.
//!
//! Vertices carry global ids: black vertices first, then white; within each colour the
//! externals come first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GgrError, Result};

pub const DEFAULT_VERTEX_CAP: usize = 8;
/// Largest number of candidate edge subsets a graph enumeration may scan.
pub const EDGE_SUBSET_BUDGET: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Black,
    White,
}

/// Internal/external vertex counts per colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexCounts {
    /// internal black
    pub p: usize,
    /// internal white
    pub q: usize,
    /// external black
    pub n: usize,
    /// external white
    pub m: usize,
}

impl VertexCounts {
    pub fn new(p: usize, q: usize, n: usize, m: usize) -> Self {
        VertexCounts { p, q, n, m }
    }

    pub fn black(&self) -> usize {
        self.p + self.n
    }

    pub fn white(&self) -> usize {
        self.q + self.m
    }

    pub fn total(&self) -> usize {
        self.black() + self.white()
    }

    pub fn internal(&self) -> usize {
        self.p + self.q
    }

    pub fn color(&self, v: usize) -> Color {
        if v < self.black() {
            Color::Black
        } else {
            Color::White
        }
    }

    /// Index within the colour class (0-based, externals first).
    pub fn local(&self, v: usize) -> usize {
        if v < self.black() {
            v
        } else {
            v - self.black()
        }
    }

    pub fn is_external(&self, v: usize) -> bool {
        if v < self.black() {
            v < self.n
        } else {
            v - self.black() < self.m
        }
    }

    pub fn white_id(&self, local: usize) -> usize {
        self.black() + local
    }

    /// Edges allowed in a g-graph: every pair except external–external.
    pub fn allowed_edges(&self) -> Vec<(usize, usize)> {
        let t = self.total();
        let mut out = vec![];
        for u in 0..t {
            for v in (u + 1)..t {
                if !(self.is_external(u) && self.is_external(v)) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Label as in the dump format: `b3`, `w1` (1-based within colour).
    pub fn label(&self, v: usize) -> String {
        match self.color(v) {
            Color::Black => format!("b{}", self.local(v) + 1),
            Color::White => format!("w{}", self.local(v) + 1),
        }
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.total() > cap {
            return Err(GgrError::CapExceeded { what: "total vertices", cap, requested: self.total() });
        }
        Ok(())
    }
}

/// Union–find with path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }

    /// Components as sorted vertex lists, ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![vec![]; n];
        for v in 0..n {
            let r = self.find(v);
            by_root[r].push(v);
        }
        by_root.into_iter().filter(|c| !c.is_empty()).collect()
    }

    pub fn component_count(&mut self) -> usize {
        (0..self.parent.len()).filter(|&v| self.find(v) == v).count()
    }
}

/// A g-graph on the vertices of `counts`; edges `(u, v)` with `u < v`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GGraph {
    pub counts: VertexCounts,
    pub edges: Vec<(usize, usize)>,
}

impl GGraph {
    pub fn new(counts: VertexCounts, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 || e.0.max(e.1) >= counts.total() {
                return invalid(format!("bad edge {e:?}"));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort();
        edges.dedup();
        Ok(GGraph { counts, edges })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.counts.total()];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// No external–external edge and every internal vertex has an incident edge.
    pub fn is_admissible(&self) -> bool {
        let c = self.counts;
        if self.edges.iter().any(|&(u, v)| c.is_external(u) && c.is_external(v)) {
            return false;
        }
        self.degrees().iter().enumerate().all(|(v, &d)| c.is_external(v) || d > 0)
    }

    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.counts.total());
        for &(u, v) in &self.edges {
            uf.union(u, v);
        }
        uf.component_count() <= 1
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.counts.total() && self.is_connected()
    }

    /// Connected components of the graph alone (singletons included).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.counts.total());
        for &(u, v) in &self.edges {
            uf.union(u, v);
        }
        uf.components()
    }
}

/// All admissible g-graphs, in lexicographic order of their edge lists.
pub fn enumerate_ggraphs(counts: VertexCounts, cap: usize) -> Result<Vec<GGraph>> {
    counts.check_cap(cap)?;
    let allowed = counts.allowed_edges();
    let subsets = 1u64.checked_shl(allowed.len() as u32).unwrap_or(u64::MAX);
    if subsets > EDGE_SUBSET_BUDGET {
        return Err(GgrError::CapExceeded {
            what: "edge subsets",
            cap: EDGE_SUBSET_BUDGET as usize,
            requested: subsets.min(usize::MAX as u64) as usize,
        });
    }
    let mut out = vec![];
    for mask in 0..subsets {
        let edges: Vec<(usize, usize)> =
            allowed.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| *e).collect();
        let g = GGraph { counts, edges };
        if g.is_admissible() {
            out.push(g);
        }
    }
    out.sort();
    Ok(out)
}

/// Connected graphs on `counts.total()` vertices with every edge allowed (no external rule).
pub fn enumerate_connected_graphs(total: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    let edges: Vec<(usize, usize)> = (0..total).flat_map(|u| ((u + 1)..total).map(move |v| (u, v))).collect();
    let subsets = 1u64.checked_shl(edges.len() as u32).unwrap_or(u64::MAX);
    if subsets > EDGE_SUBSET_BUDGET {
        return Err(GgrError::CapExceeded {
            what: "edge subsets",
            cap: EDGE_SUBSET_BUDGET as usize,
            requested: subsets.min(usize::MAX as u64) as usize,
        });
    }
    let mut out = vec![];
    for mask in 0..subsets {
        let mut uf = UnionFind::new(total);
        let chosen: Vec<(usize, usize)> =
            edges.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| *e).collect();
        for &(u, v) in &chosen {
            uf.union(u, v);
        }
        if uf.component_count() <= 1 {
            out.push(chosen);
        }
    }
    out.sort();
    Ok(out)
}

/// A permutation in one-line notation: `i ↦ self.0[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_vec(v: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; v.len()];
        for &x in &v {
            if x >= v.len() || seen[x] {
                return invalid(format!("{v:?} is not a permutation"));
            }
            seen[x] = true;
        }
        Ok(Permutation(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = vec![];
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            let mut c = vec![];
            let mut i = s;
            while !seen[i] {
                seen[i] = true;
                c.push(i);
                i = self.0[i];
            }
            out.push(c);
        }
        out
    }

    /// `(-1)^π` as ±1.
    pub fn sign(&self) -> i32 {
        let transpositions: usize = self.cycles().iter().map(|c| c.len() - 1).sum();
        if transpositions % 2 == 0 {
            1
        } else {
            -1
        }
    }

    /// Lehmer code; lexicographic on codes equals lexicographic on one-line notation.
    pub fn lehmer(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.0[i + 1..].iter().filter(|&&x| x < self.0[i]).count()).collect()
    }

    /// All permutations of `n` symbols in lexicographic order.
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut cur: Vec<usize> = (0..n).collect();
        let mut out = vec![Permutation(cur.clone())];
        loop {
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
                break;
            };
            let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
            cur.swap(i, j);
            cur[i + 1..].reverse();
            out.push(Permutation(cur.clone()));
        }
        out
    }

    pub fn one_line(&self) -> String {
        self.0.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(" ")
    }
}

/// A diagram `(π, τ, G)`: permutations of the black and white labels plus a g-graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagram {
    pub graph: GGraph,
    pub pi: Permutation,
    pub tau: Permutation,
}

/// Cluster data of a diagram: components of its g-graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub clusters: Vec<Vec<usize>>,
    /// clusters with internal vertices only
    pub k: usize,
    /// clusters containing an external vertex
    pub kappa: usize,
    pub n_g: usize,
    pub n_g_star: usize,
}

/// Classes of linked diagrams with one external vertex of each colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class11 {
    /// at least one added vertex
    A,
    /// no added vertex, some same-colour g-edge
    B1,
    /// no added vertex, only opposite-colour g-edges
    B2,
}

impl Diagram {
    pub fn new(graph: GGraph, pi: Permutation, tau: Permutation) -> Result<Self> {
        if pi.len() != graph.counts.black() || tau.len() != graph.counts.white() {
            return invalid("permutation sizes do not match the vertex counts");
        }
        Ok(Diagram { graph, pi, tau })
    }

    pub fn counts(&self) -> VertexCounts {
        self.graph.counts
    }

    pub fn sign(&self) -> i32 {
        self.pi.sign() * self.tau.sign()
    }

    pub fn is_admissible(&self) -> bool {
        self.graph.is_admissible()
    }

    /// Global-id γ-edges `(v, σ(v))`, fixed points included.
    pub fn gamma_edges(&self) -> Vec<(usize, usize)> {
        let c = self.counts();
        let mut out: Vec<(usize, usize)> = self.pi.0.iter().enumerate().map(|(i, &j)| (i, j)).collect();
        out.extend(self.tau.0.iter().enumerate().map(|(i, &j)| (c.white_id(i), c.white_id(j))));
        out
    }

    /// Connectivity of the union of g-edges and γ-edges (fixed points are self-loops).
    pub fn is_linked(&self) -> bool {
        let mut uf = UnionFind::new(self.counts().total());
        for &(u, v) in self.graph.edges.iter().chain(self.gamma_edges().iter()) {
            uf.union(u, v);
        }
        uf.component_count() <= 1
    }

    /// Linked components as vertex sets.
    pub fn linked_components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.counts().total());
        for &(u, v) in self.graph.edges.iter().chain(self.gamma_edges().iter()) {
            uf.union(u, v);
        }
        uf.components()
    }

    pub fn decompose(&self) -> ClusterDecomposition {
        let c = self.counts();
        let clusters = self.graph.components();
        let (mut k, mut kappa, mut n_g, mut n_g_star) = (0, 0, 0, 0);
        for cl in &clusters {
            let ext = cl.iter().filter(|&&v| c.is_external(v)).count();
            let int = cl.len() - ext;
            if ext == 0 {
                k += 1;
                n_g += int - 2;
            } else {
                kappa += 1;
                n_g_star += int;
            }
        }
        debug_assert_eq!(n_g + n_g_star + 2 * k, c.internal());
        ClusterDecomposition { clusters, k, kappa, n_g, n_g_star }
    }

    /// Class of a linked diagram with one external vertex per colour.
    pub fn classify_11(&self) -> Result<Class11> {
        let c = self.counts();
        if c.n != 1 || c.m != 1 {
            return invalid("classification needs exactly one external vertex of each colour");
        }
        if !self.is_admissible() || !self.is_linked() {
            return invalid("classification needs an admissible linked diagram");
        }
        let d = self.decompose();
        if d.n_g + d.n_g_star >= 1 {
            return Ok(Class11::A);
        }
        if self.graph.edges.iter().any(|&(u, v)| c.color(u) == c.color(v)) {
            Ok(Class11::B1)
        } else {
            Ok(Class11::B2)
        }
    }

    /// `p q n m | b1-w2 ... | π | τ`
    pub fn dump(&self) -> String {
        let c = self.counts();
        let edges: Vec<String> =
            self.graph.edges.iter().map(|&(u, v)| format!("{}-{}", c.label(u), c.label(v))).collect();
        format!("{} {} {} {} | {} | {} | {}", c.p, c.q, c.n, c.m, edges.join(" "), self.pi.one_line(), self.tau.one_line())
    }

    pub fn parse_dump(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        if parts.len() != 4 {
            return invalid(format!("expected four `|`-separated fields in `{line}`"));
        }
        let nums: Vec<usize> = parts[0]
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| GgrError::InvalidParameter(format!("bad count `{s}`"))))
            .collect::<Result<_>>()?;
        if nums.len() != 4 {
            return invalid("expected `p q n m`");
        }
        let c = VertexCounts::new(nums[0], nums[1], nums[2], nums[3]);
        let vertex = |s: &str| -> Result<usize> {
            let (col, idx) = s.split_at(1);
            let i: usize = idx.parse().map_err(|_| GgrError::InvalidParameter(format!("bad vertex `{s}`")))?;
            match col {
                "b" if (1..=c.black()).contains(&i) => Ok(i - 1),
                "w" if (1..=c.white()).contains(&i) => Ok(c.white_id(i - 1)),
                _ => invalid(format!("bad vertex `{s}`")),
            }
        };
        let mut edges = vec![];
        for e in parts[1].split_whitespace() {
            let (a, b) = e.split_once('-').ok_or_else(|| GgrError::InvalidParameter(format!("bad edge `{e}`")))?;
            edges.push((vertex(a)?, vertex(b)?));
        }
        let perm = |s: &str| -> Result<Permutation> {
            let v: Vec<usize> = s
                .split_whitespace()
                .map(|x| x.parse::<usize>().ok().and_then(|i| i.checked_sub(1)))
                .collect::<Option<_>>()
                .ok_or_else(|| GgrError::InvalidParameter(format!("bad permutation `{s}`")))?;
            Permutation::from_vec(v)
        };
        Diagram::new(GGraph::new(c, edges)?, perm(parts[2])?, perm(parts[3])?)
    }
}

/// All admissible diagrams, graphs outermost then π then τ, each in canonical order.
pub fn enumerate_diagrams(counts: VertexCounts, linked_only: bool, cap: usize) -> Result<Vec<Diagram>> {
    let graphs = enumerate_ggraphs(counts, cap)?;
    let pis = Permutation::all(counts.black());
    let taus = Permutation::all(counts.white());
    let mut out = vec![];
    for g in &graphs {
        for pi in &pis {
            for tau in &taus {
                let d = Diagram { graph: g.clone(), pi: pi.clone(), tau: tau.clone() };
                if !linked_only || d.is_linked() {
                    out.push(d);
                }
            }
        }
    }
    Ok(out)
}

/// Ordered `κ`-tuples of (black part, white part); parts may be empty but never both.
pub type ExternalPartition = (Vec<Vec<usize>>, Vec<Vec<usize>>);

pub fn enumerate_partitions(n: usize, m: usize, kappa: usize) -> Result<Vec<ExternalPartition>> {
    if kappa == 0 {
        return invalid("κ must be at least 1");
    }
    let mut out = vec![];
    if kappa > n + m {
        return Ok(out);
    }
    let total = n + m;
    let mut assign = vec![0usize; total];
    loop {
        let mut black = vec![vec![]; kappa];
        let mut white = vec![vec![]; kappa];
        for (i, &a) in assign.iter().enumerate() {
            if i < n {
                black[a].push(i);
            } else {
                white[a].push(i - n);
            }
        }
        if (0..kappa).all(|l| !black[l].is_empty() || !white[l].is_empty()) {
            out.push((black, white));
        }
        // odometer
        let mut pos = 0;
        loop {
            if pos == total {
                return Ok(out);
            }
            assign[pos] += 1;
            if assign[pos] < kappa {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

/// Spanning trees with no external–external edge, decoded from Prüfer sequences.
pub fn enumerate_trees(counts: VertexCounts, cap: usize) -> Result<Vec<GGraph>> {
    counts.check_cap(cap)?;
    let t = counts.total();
    let mut out = vec![];
    match t {
        0 => return Ok(out),
        1 => return Ok(vec![GGraph { counts, edges: vec![] }]),
        _ => {}
    }
    let len = t - 2;
    let mut seq = vec![0usize; len];
    loop {
        let edges = prufer_decode(&seq, t);
        let g = GGraph::new(counts, edges)?;
        if !g.edges.iter().any(|&(u, v)| counts.is_external(u) && counts.is_external(v)) {
            out.push(g);
        }
        let mut pos = 0;
        loop {
            if pos == len {
                out.sort();
                return Ok(out);
            }
            seq[pos] += 1;
            if seq[pos] < t {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

fn prufer_decode(seq: &[usize], t: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; t];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = vec![];
    for &s in seq {
        let leaf = (0..t).find(|&v| degree[v] == 1).unwrap();
        edges.push((leaf.min(s), leaf.max(s)));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..t).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Directed inter-cluster edge set; vertices are numbered consecutively cluster by cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnchoredTree {
    pub edges: Vec<(usize, usize)>,
}

/// Cluster index of every vertex for consecutive numbering.
pub fn cluster_of(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat(c).take(s)).collect()
}

pub fn is_anchored_tree(sizes: &[usize], edges: &[(usize, usize)]) -> bool {
    let owner = cluster_of(sizes);
    let t = owner.len();
    let (mut indeg, mut outdeg) = (vec![0; t], vec![0; t]);
    let mut uf = UnionFind::new(sizes.len());
    for &(u, v) in edges {
        if u >= t || v >= t || owner[u] == owner[v] {
            return false;
        }
        outdeg[u] += 1;
        indeg[v] += 1;
        if !uf.union(owner[u], owner[v]) {
            return false;
        }
    }
    edges.len() + 1 == sizes.len() && indeg.iter().chain(&outdeg).all(|&d| d <= 1)
}

pub fn enumerate_anchored_trees(sizes: &[usize], cap: usize) -> Result<Vec<AnchoredTree>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return invalid("anchored trees need at least one nonempty cluster");
    }
    let total: usize = sizes.iter().sum();
    if total > cap {
        return Err(GgrError::CapExceeded { what: "total vertices", cap, requested: total });
    }
    let owner = cluster_of(sizes);
    let candidates: Vec<(usize, usize)> = (0..total)
        .flat_map(|u| (0..total).map(move |v| (u, v)))
        .filter(|&(u, v)| owner[u] != owner[v])
        .collect();
    let need = sizes.len() - 1;
    let mut out = vec![];
    let mut chosen = vec![];
    let mut used_in = vec![false; total];
    let mut used_out = vec![false; total];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        start: usize,
        need: usize,
        candidates: &[(usize, usize)],
        owner: &[usize],
        clusters: usize,
        chosen: &mut Vec<(usize, usize)>,
        used_in: &mut [bool],
        used_out: &mut [bool],
        out: &mut Vec<AnchoredTree>,
    ) {
        if chosen.len() == need {
            let mut uf = UnionFind::new(clusters);
            if chosen.iter().all(|&(u, v)| uf.union(owner[u], owner[v])) {
                out.push(AnchoredTree { edges: chosen.clone() });
            }
            return;
        }
        for i in start..candidates.len() {
            let (u, v) = candidates[i];
            if used_out[u] || used_in[v] {
                continue;
            }
            used_out[u] = true;
            used_in[v] = true;
            chosen.push((u, v));
            rec(i + 1, need, candidates, owner, clusters, chosen, used_in, used_out, out);
            chosen.pop();
            used_out[u] = false;
            used_in[v] = false;
        }
    }
    rec(0, need, &candidates, &owner, sizes.len(), &mut chosen, &mut used_in, &mut used_out, &mut out);
    Ok(out)
}

/// The B2 g-graph: internal black `j` joined to internal white `matching[j]`.
pub fn b2_graph(k: usize, matching: &[usize]) -> Result<GGraph> {
    let c = VertexCounts::new(k, k, 1, 1);
    if matching.len() != k || Permutation::from_vec(matching.to_vec()).is_err() {
        return invalid("matching must be a permutation of the internal pairs");
    }
    let edges = (0..k).map(|j| (1 + j, c.white_id(1 + matching[j]))).collect();
    GGraph::new(c, edges)
}

/// Every linked B2 diagram with `k` internal clusters (all matchings, all permutation pairs).
pub fn enumerate_b2(k: usize, cap: usize) -> Result<Vec<Diagram>> {
    if k == 0 {
        return invalid("B2 diagrams have at least one internal cluster");
    }
    VertexCounts::new(k, k, 1, 1).check_cap(cap)?;
    let perms = Permutation::all(k + 1);
    let mut out = vec![];
    for matching in Permutation::all(k) {
        let g = b2_graph(k, &matching.0)?;
        for pi in &perms {
            for tau in &perms {
                let d = Diagram { graph: g.clone(), pi: pi.clone(), tau: tau.clone() };
                if d.is_linked() {
                    out.push(d);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Linked B2 permutation pairs for the identity matching.
pub fn b2_permutation_pairs(k: usize) -> Vec<(Permutation, Permutation)> {
    let perms = Permutation::all(k + 1);
    let g = b2_graph(k, &(0..k).collect::<Vec<_>>()).expect("identity matching");
    let mut out = vec![];
    for pi in &perms {
        for tau in &perms {
            let d = Diagram { graph: g.clone(), pi: pi.clone(), tau: tau.clone() };
            if d.is_linked() {
                out.push((pi.clone(), tau.clone()));
            }
        }
    }
    out
}

impl fmt::Display for Diagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

/// Set partitions of `0..n` as block lists, blocks ordered by smallest element.
pub fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..cur.len() {
            cur[b].push(i);
            rec(i + 1, n, cur, out);
            cur[b].pop();
        }
        cur.push(vec![i]);
        rec(i + 1, n, cur, out);
        cur.pop();
    }
    let mut out = vec![];
    rec(0, n, &mut vec![], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count_graphs(p: usize, q: usize, n: usize, m: usize) -> usize {
        enumerate_ggraphs(VertexCounts::new(p, q, n, m), 8).unwrap().len()
    }

    #[test]
    fn small_graph_counts() {
        assert_eq!(count_graphs(1, 1, 0, 0), 1);
        assert_eq!(count_graphs(2, 1, 0, 0), 4);
        assert_eq!(count_graphs(1, 0, 1, 1), 3);
        assert_eq!(count_graphs(0, 0, 1, 1), 1);
        assert_eq!(count_graphs(1, 0, 0, 0), 0);
    }

    #[test]
    fn graph_cap_is_an_error() {
        let err = enumerate_ggraphs(VertexCounts::new(5, 4, 0, 0), 8).unwrap_err();
        assert!(matches!(err, GgrError::CapExceeded { cap: 8, requested: 9, .. }));
    }

    #[test]
    fn permutations_lexicographic_with_signs() {
        let all = Permutation::all(3);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0].0, vec![0, 1, 2]);
        assert_eq!(all[5].0, vec![2, 1, 0]);
        let signs: Vec<i32> = all.iter().map(|p| p.sign()).collect();
        assert_eq!(signs, vec![1, -1, -1, 1, 1, -1]);
        for w in all.windows(2) {
            assert!(w[0].lehmer() < w[1].lehmer());
        }
        assert_eq!(Permutation::all(0).len(), 1);
    }

    #[test]
    fn smallest_closed_diagram_is_unique() {
        let all = enumerate_diagrams(VertexCounts::new(1, 1, 0, 0), true, 8).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].sign(), 1);
        assert!(enumerate_diagrams(VertexCounts::new(0, 0, 0, 0), false, 8).unwrap().len() == 1);
        assert!(enumerate_diagrams(VertexCounts::new(2, 0, 0, 0), false, 8).unwrap().len() == 2);
    }

    #[test]
    fn linkedness_examples() {
        let c = VertexCounts::new(0, 0, 1, 0);
        let d = Diagram::new(GGraph::new(c, vec![]).unwrap(), Permutation::identity(1), Permutation::identity(0)).unwrap();
        assert!(d.is_linked());
        let c = VertexCounts::new(2, 0, 0, 0);
        let d = Diagram::new(GGraph::new(c, vec![]).unwrap(), Permutation(vec![1, 0]), Permutation::identity(0)).unwrap();
        assert!(d.is_linked() && !d.is_admissible());
        let c = VertexCounts::new(0, 0, 2, 0);
        let d = Diagram::new(GGraph::new(c, vec![]).unwrap(), Permutation(vec![1, 0]), Permutation::identity(0)).unwrap();
        assert!(d.is_linked() && d.is_admissible());
    }

    fn d_small() -> Diagram {
        Diagram::parse_dump("1 1 1 1 | b2-w2 | 2 1 | 2 1").unwrap()
    }

    #[test]
    fn smallest_b2_diagram() {
        let d = d_small();
        let dec = d.decompose();
        assert_eq!((dec.k, dec.kappa, dec.n_g, dec.n_g_star), (1, 2, 0, 0));
        assert_eq!(d.classify_11().unwrap(), Class11::B2);
        assert_eq!(enumerate_b2(1, 8).unwrap(), vec![d]);
    }

    #[test]
    fn classes_of_variants() {
        // an extra internal pair attached to the cluster
        let a = Diagram::parse_dump("2 2 1 1 | b2-w2 b2-w3 b3-w2 | 2 1 3 | 2 1 3").unwrap();
        assert!(a.is_linked());
        assert_eq!(a.classify_11().unwrap(), Class11::A);
        let b1 = Diagram::parse_dump("3 1 1 1 | b2-b3 b4-w2 | 2 3 4 1 | 2 1").unwrap();
        assert!(b1.is_linked());
        assert_eq!(b1.classify_11().unwrap(), Class11::B1);
    }

    #[test]
    fn external_only_clusters() {
        let d = Diagram::parse_dump("0 0 1 1 | | 1 | 1").unwrap();
        let dec = d.decompose();
        assert_eq!((dec.k, dec.kappa), (0, 2));
        assert!(!d.is_linked());
    }

    #[test]
    fn dump_round_trip() {
        for d in enumerate_diagrams(VertexCounts::new(1, 1, 1, 1), true, 8).unwrap() {
            assert_eq!(Diagram::parse_dump(&d.dump()).unwrap(), d);
        }
        assert!(Diagram::parse_dump("1 1 0 0 | b1-w9 | 1 | 1").is_err());
    }

    #[test]
    fn partition_counts() {
        assert_eq!(enumerate_partitions(1, 1, 1).unwrap().len(), 1);
        assert_eq!(enumerate_partitions(1, 1, 2).unwrap().len(), 2);
        for n in 0..=3 {
            for m in 0..=3 {
                for kappa in (n + m + 1)..=(n + m + 2) {
                    assert!(enumerate_partitions(n, m, kappa).unwrap().is_empty());
                }
            }
        }
    }

    #[test]
    fn tree_counts() {
        for t in 2..=6 {
            let trees = enumerate_trees(VertexCounts::new(t, 0, 0, 0), 8).unwrap();
            assert_eq!(trees.len(), t.pow(t as u32 - 2));
            assert!(trees.iter().all(GGraph::is_tree));
        }
        assert_eq!(enumerate_trees(VertexCounts::new(1, 0, 2, 0), 8).unwrap().len(), 1);
        assert_eq!(enumerate_trees(VertexCounts::new(2, 0, 2, 0), 8).unwrap().len(), 16 - 8);
        assert_eq!(enumerate_trees(VertexCounts::new(1, 1, 0, 0), 8).unwrap().len(), 1);
    }

    #[test]
    fn anchored_tree_counts() {
        assert_eq!(enumerate_anchored_trees(&[3], 8).unwrap(), vec![AnchoredTree { edges: vec![] }]);
        assert_eq!(enumerate_anchored_trees(&[1, 1], 8).unwrap().len(), 2);
        assert_eq!(enumerate_anchored_trees(&[1, 1, 1], 8).unwrap().len(), 6);
    }

    #[test]
    fn anchored_trees_match_exhaustive_filter() {
        for sizes in [vec![1, 2], vec![2, 2], vec![1, 1, 2], vec![2, 1, 1], vec![1, 1, 1, 1]] {
            let total: usize = sizes.iter().sum();
            let owner = cluster_of(&sizes);
            let cand: Vec<(usize, usize)> = (0..total)
                .flat_map(|u| (0..total).map(move |v| (u, v)))
                .filter(|&(u, v)| owner[u] != owner[v])
                .collect();
            let mut brute = 0;
            for mask in 0u64..(1 << cand.len()) {
                if mask.count_ones() as usize != sizes.len() - 1 {
                    continue;
                }
                let e: Vec<_> = cand.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| *e).collect();
                if is_anchored_tree(&sizes, &e) {
                    brute += 1;
                }
            }
            assert_eq!(enumerate_anchored_trees(&sizes, 8).unwrap().len(), brute, "{sizes:?}");
        }
    }

    #[test]
    fn b2_counts_respect_factorial_bound() {
        for k in 1..=3 {
            let count = enumerate_b2(k, 8).unwrap().len();
            let bound = (1..=k).product::<usize>() * (1..=k + 1).product::<usize>().pow(2);
            assert!(count <= bound && count > 0);
            assert!(enumerate_b2(k, 8).unwrap().iter().all(|d| d.classify_11().unwrap() == Class11::B2));
        }
        assert_eq!(enumerate_b2(1, 8).unwrap().len(), 1);
    }

    #[test]
    fn bell_numbers() {
        let bell: Vec<usize> = (0..=6).map(|n| set_partitions(n).len()).collect();
        assert_eq!(bell, vec![1, 1, 2, 5, 15, 52, 203]);
    }

    proptest! {
        #[test]
        fn cluster_statistics_identity(p in 0usize..3, q in 0usize..3, n in 0usize..2, m in 0usize..2, pick in 0usize..1000) {
            let c = VertexCounts::new(p, q, n, m);
            let all = enumerate_diagrams(c, false, 8).unwrap();
            prop_assume!(!all.is_empty());
            let d = &all[pick % all.len()];
            let dec = d.decompose();
            prop_assert_eq!(dec.n_g + dec.n_g_star + 2 * dec.k, p + q);
            prop_assert!(dec.clusters.iter().all(|cl| cl.iter().any(|&v| c.is_external(v)) || cl.len() >= 2));
        }
    }
}
