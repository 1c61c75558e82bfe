//! Values of diagrams: one-particle density matrices on the grid, position-space
//! quadrature, pointwise linked integrands, momentum-space sums for matching-type
//! diagrams, truncated correlations and the tree-graph and anchored-tree bounds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagrams::{
    b2_graph, b2_permutation_pairs, enumerate_anchored_trees, enumerate_connected_graphs, enumerate_trees, Class11,
    Color, Diagram, Permutation, UnionFind, VertexCounts,
};
use crate::error::{invalid, GgrError, Result};
use crate::numerics::{factorial, kahan_sum, kahan_sum_complex, ComplexKahan};
use crate::polyhedron::{dirichlet_kernel_fft, fft3_forward, MomentumSet, Monomial};
use crate::scattering::{g_integrals, ScatteringSolution};
use crate::torus::{Momentum, Point, Torus};

/// Largest number of grid points a position-space evaluation may visit.
pub const DEFAULT_BUDGET: f64 = 1e9;

type Radial = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Grid tables of `γ↑`, `γ↓`, `g_s`, `g_p` on a discrete torus.
#[derive(Clone)]
pub struct Kernels {
    pub torus: Torus,
    pub up: MomentumSet,
    pub dn: MomentumSet,
    gamma: [Vec<Complex64>; 2],
    /// index 0: opposite spins (`g_s`), index 1: equal spins (`g_p`)
    g: [Vec<f64>; 2],
    g_fn: [Radial; 2],
    coords: Vec<[usize; 3]>,
}

impl fmt::Debug for Kernels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernels")
            .field("torus", &self.torus)
            .field("n_up", &self.up.len())
            .field("n_dn", &self.dn.len())
            .finish()
    }
}

fn spin(c: Color) -> usize {
    match c {
        Color::Black => 0,
        Color::White => 1,
    }
}

impl Kernels {
    pub fn new(
        torus: Torus,
        up: MomentumSet,
        dn: MomentumSet,
        g_s: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_p: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        for set in [&up, &dn] {
            if (set.l - torus.l).abs() > 1e-12 * torus.l {
                return invalid("momentum sets and torus must share the box side");
            }
            if torus.m as i64 <= 2 * set.max_abs_index() {
                return Err(GgrError::Degenerate(format!(
                    "grid M = {} aliases momenta up to index {}; need M > {}",
                    torus.m,
                    set.max_abs_index(),
                    2 * set.max_abs_index()
                )));
            }
        }
        let vol = torus.volume();
        let table = |set: &MomentumSet| -> Vec<Complex64> {
            dirichlet_kernel_fft(set, Monomial::One, &torus).into_iter().map(|z| z / vol).collect()
        };
        let gamma = [table(&up), table(&dn)];
        let g_fn: [Radial; 2] = [Arc::new(g_s), Arc::new(g_p)];
        let lengths: Vec<f64> = (0..torus.grid_len()).map(|i| torus.grid_length(i)).collect();
        let g = [lengths.iter().map(|&r| g_fn[0](r)).collect(), lengths.iter().map(|&r| g_fn[1](r)).collect()];
        let coords = (0..torus.grid_len()).map(|i| torus.grid_coords(i)).collect();
        Ok(Kernels { torus, up, dn, gamma, g, g_fn, coords })
    }

    pub fn from_solution(torus: Torus, up: MomentumSet, dn: MomentumSet, sol: &ScatteringSolution) -> Result<Self> {
        let (s, p) = (sol.clone(), sol.clone());
        Kernels::new(torus, up, dn, move |r| s.g_s(r), move |r| p.g_p(r))
    }

    /// `g ≡ 0`.
    pub fn free(torus: Torus, up: MomentumSet, dn: MomentumSet) -> Result<Self> {
        Kernels::new(torus, up, dn, |_| 0.0, |_| 0.0)
    }

    pub fn set(&self, c: Color) -> &MomentumSet {
        match c {
            Color::Black => &self.up,
            Color::White => &self.dn,
        }
    }

    pub fn density(&self, c: Color) -> f64 {
        self.set(c).density()
    }

    /// Grid index of the displacement `a - b`.
    #[inline]
    pub fn diff(&self, a: usize, b: usize) -> usize {
        let m = self.torus.m;
        let (ca, cb) = (self.coords[a], self.coords[b]);
        let d = |i: usize| if ca[i] >= cb[i] { ca[i] - cb[i] } else { ca[i] + m - cb[i] };
        (d(0) * m + d(1)) * m + d(2)
    }

    #[inline]
    pub fn gamma_grid(&self, c: Color, d: usize) -> Complex64 {
        self.gamma[spin(c)][d]
    }

    #[inline]
    pub fn g_grid(&self, same_spin: bool, d: usize) -> f64 {
        self.g[same_spin as usize][d]
    }

    /// `γ(x; y) = L^{-3} Σ_k e^{ik(x-y)}` evaluated directly.
    pub fn gamma_at(&self, c: Color, x: &Point, y: &Point) -> Complex64 {
        let l = self.torus.l;
        let z = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        kahan_sum_complex(self.set(c).points.iter().map(|k| Complex64::from_polar(1.0, k.phase(&z, l)))) / self.torus.volume()
    }

    pub fn g_at(&self, same_spin: bool, x: &Point, y: &Point) -> f64 {
        self.g_fn[same_spin as usize](self.torus.periodic_distance(x, y))
    }

    pub fn g_radial(&self, same_spin: bool, r: f64) -> f64 {
        self.g_fn[same_spin as usize](r)
    }

    /// `G(q) = h³ Σ_x g(x) e^{-iq·x}` on the grid, indexed by `q mod M`.
    pub fn g_fourier_grid(&self, same_spin: bool) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = self.g[same_spin as usize].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft3_forward(&mut data, self.torus.m);
        let h3 = self.torus.cell_volume();
        data.into_iter().map(|z| z * h3).collect()
    }

    pub fn momentum_slot(&self, q: &Momentum) -> usize {
        let m = self.torus.m as i64;
        let w = |c: i64| c.rem_euclid(m) as usize;
        (w(q.0[0]) * self.torus.m + w(q.0[1])) * self.torus.m + w(q.0[2])
    }

    /// `h³ Σ_x |γ_σ(x)|`.
    pub fn gamma_l1(&self, c: Color) -> f64 {
        self.torus.cell_volume() * kahan_sum(self.gamma[spin(c)].iter().map(|z| z.norm()))
    }
}

/// Determinant of a small dense complex matrix (row-major), destroying the input.
pub fn det_small(a: &mut [Complex64], n: usize) -> Complex64 {
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm())).unwrap();
        if a[piv * n + col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in (col + 1)..n {
            let f = a[r * n + col] / p;
            if f.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= f * v;
            }
        }
    }
    det
}

#[derive(Debug, Clone, Copy)]
enum Factor {
    Gamma(Color),
    G { same: bool },
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    u: usize,
    v: usize,
    kind: Factor,
}

impl Edge {
    #[inline]
    fn value(&self, k: &Kernels, pos: &[usize]) -> Complex64 {
        let d = k.diff(pos[self.u], pos[self.v]);
        match self.kind {
            Factor::Gamma(c) => k.gamma_grid(c, d),
            Factor::G { same } => Complex64::new(k.g_grid(same, d), 0.0),
        }
    }
}

/// Global-id positions: externals from the caller (black then white), internals zeroed.
fn initial_positions(counts: VertexCounts, externals: &[usize], grid: usize) -> Result<Vec<usize>> {
    if externals.len() != counts.n + counts.m {
        return invalid(format!("expected {} external positions, got {}", counts.n + counts.m, externals.len()));
    }
    if externals.iter().any(|&e| e >= grid) {
        return invalid("external grid index out of range");
    }
    let mut pos = vec![0; counts.total()];
    pos[..counts.n].copy_from_slice(&externals[..counts.n]);
    for j in 0..counts.m {
        pos[counts.white_id(j)] = externals[counts.n + j];
    }
    Ok(pos)
}

fn internal_ids(counts: VertexCounts) -> Vec<usize> {
    (0..counts.total()).filter(|&v| !counts.is_external(v)).collect()
}

fn check_budget(grid: usize, free: usize, budget: f64) -> Result<()> {
    let cost = (grid as f64).powi(free as i32);
    if cost > budget {
        return Err(GgrError::Budget(format!(
            "{free} free vertices need {cost:.3e} grid points (budget {budget:.1e}); use the Fourier path or a smaller M"
        )));
    }
    Ok(())
}

/// `Γ_D` by grid quadrature over all internal coordinates; externals are grid indices,
/// black ones first. Without externals the first internal vertex is pinned at the origin
/// (exact by translation invariance of the grid).
pub fn diagram_value(d: &Diagram, externals: &[usize], k: &Kernels, budget: f64) -> Result<Complex64> {
    if !d.is_admissible() {
        return invalid("diagram is not admissible");
    }
    let c = d.counts();
    let grid = k.torus.grid_len();
    let mut pos = initial_positions(c, externals, grid)?;
    let internals = internal_ids(c);
    let mut depth = vec![usize::MAX; c.total()];
    for (i, &v) in internals.iter().enumerate() {
        depth[v] = i;
    }
    let mut edges: Vec<Edge> = d
        .graph
        .edges
        .iter()
        .map(|&(u, v)| Edge { u, v, kind: Factor::G { same: c.color(u) == c.color(v) } })
        .collect();
    edges.extend(d.gamma_edges().into_iter().map(|(u, v)| Edge { u, v, kind: Factor::Gamma(c.color(u)) }));
    let level = |e: &Edge| {
        let (a, b) = (depth[e.u], depth[e.v]);
        match (a == usize::MAX, b == usize::MAX) {
            (true, true) => None,
            (true, false) => Some(b),
            (false, true) => Some(a),
            (false, false) => Some(a.max(b)),
        }
    };
    let r = internals.len();
    let mut by_level: Vec<Vec<Edge>> = vec![vec![]; r];
    let mut constant = Complex64::new(d.sign() as f64, 0.0);
    for e in &edges {
        match level(e) {
            None => constant *= e.value(k, &pos),
            Some(l) => by_level[l].push(*e),
        }
    }
    if r == 0 {
        return Ok(constant);
    }
    let pinned = c.n + c.m == 0;
    let free = if pinned { r - 1 } else { r };
    check_budget(grid, free, budget)?;
    let weight = if pinned {
        k.torus.volume() * k.torus.cell_volume().powi(r as i32 - 1)
    } else {
        k.torus.cell_volume().powi(r as i32)
    };

    fn rec(level: usize, prod: Complex64, pos: &mut [usize], internals: &[usize], by_level: &[Vec<Edge>], k: &Kernels) -> Complex64 {
        if level == internals.len() {
            return prod;
        }
        let grid = k.torus.grid_len();
        let mut acc = Complex64::new(0.0, 0.0);
        for x in 0..grid {
            pos[internals[level]] = x;
            let mut p = prod;
            for e in &by_level[level] {
                p *= e.value(k, pos);
                if p.re == 0.0 && p.im == 0.0 {
                    break;
                }
            }
            if p.re != 0.0 || p.im != 0.0 {
                acc += rec(level + 1, p, pos, internals, by_level, k);
            }
        }
        acc
    }

    let total = if pinned {
        pos[internals[0]] = 0;
        let mut p = constant;
        for e in &by_level[0] {
            p *= e.value(k, &pos);
        }
        if r == 1 {
            p
        } else {
            let parts: Vec<Complex64> = (0..grid)
                .into_par_iter()
                .map(|x| {
                    let mut pos = pos.clone();
                    pos[internals[1]] = x;
                    let mut q = p;
                    for e in &by_level[1] {
                        q *= e.value(k, &pos);
                    }
                    rec(2, q, &mut pos, &internals, &by_level, k)
                })
                .collect();
            kahan_sum_complex(parts)
        }
    } else {
        let parts: Vec<Complex64> = (0..grid)
            .into_par_iter()
            .map(|x| {
                let mut pos = pos.clone();
                pos[internals[0]] = x;
                let mut q = constant;
                for e in &by_level[0] {
                    q *= e.value(k, &pos);
                }
                rec(1, q, &mut pos, &internals, &by_level, k)
            })
            .collect();
        kahan_sum_complex(parts)
    };
    Ok(total * weight)
}

/// Pointwise sums over all diagrams on a vertex set: for every subset `B` the function
/// `F(B) = W(B) det γ↑(B) det γ↓(B)` with `W(B)` the sum over admissible g-graphs on `B`,
/// and its linked part obtained by Möbius inversion over set partitions.
pub struct SubsetIntegrand<'a> {
    kernels: &'a Kernels,
    counts: VertexCounts,
    allowed: Vec<(usize, usize, bool)>,
    internal_mask: usize,
}

impl<'a> SubsetIntegrand<'a> {
    pub const MAX_VERTICES: usize = 16;

    pub fn new(kernels: &'a Kernels, counts: VertexCounts) -> Result<Self> {
        if counts.total() > Self::MAX_VERTICES {
            return Err(GgrError::CapExceeded { what: "subset integrand vertices", cap: Self::MAX_VERTICES, requested: counts.total() });
        }
        let allowed =
            counts.allowed_edges().into_iter().map(|(u, v)| (u, v, counts.color(u) == counts.color(v))).collect();
        let internal_mask = (0..counts.total()).filter(|&v| !counts.is_external(v)).fold(0, |m, v| m | 1 << v);
        Ok(SubsetIntegrand { kernels, counts, allowed, internal_mask })
    }

    pub fn counts(&self) -> VertexCounts {
        self.counts
    }

    /// `F(B)` for every subset `B` of the vertices (bit `v` = global id `v`).
    pub fn subset_values(&self, pos: &[usize]) -> Vec<Complex64> {
        let k = self.kernels;
        let t = self.counts.total();
        let full = 1usize << t;
        let mut w = vec![1.0f64; t * t];
        for &(u, v, same) in &self.allowed {
            let x = 1.0 + k.g_grid(same, k.diff(pos[u], pos[v]));
            w[u * t + v] = x;
            w[v * t + u] = x;
        }
        // products of (1 + g_e) over allowed edges inside B
        let mut p = vec![1.0f64; full];
        for b in 1..full {
            let hi = usize::BITS as usize - 1 - b.leading_zeros() as usize;
            let rest = b ^ (1 << hi);
            let mut x = p[rest];
            let mut r = rest;
            while r != 0 {
                let u = r.trailing_zeros() as usize;
                r &= r - 1;
                x *= w[u * t + hi];
            }
            p[b] = x;
        }
        // inclusion–exclusion over isolated internal vertices
        for i in 0..t {
            if self.internal_mask >> i & 1 == 0 {
                continue;
            }
            for b in 0..full {
                if b >> i & 1 == 1 {
                    p[b] -= p[b ^ (1 << i)];
                }
            }
        }
        let nb = self.counts.black();
        let nw = self.counts.white();
        let dets = |c: Color, offset: usize, len: usize| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(1.0, 0.0); 1 << len];
            let mut mat = vec![Complex64::new(0.0, 0.0); len * len];
            for (s, slot) in out.iter_mut().enumerate().skip(1) {
                let idx: Vec<usize> = (0..len).filter(|&i| s >> i & 1 == 1).map(|i| offset + i).collect();
                let n = idx.len();
                for (a, &i) in idx.iter().enumerate() {
                    for (b, &j) in idx.iter().enumerate() {
                        mat[a * n + b] = k.gamma_grid(c, k.diff(pos[i], pos[j]));
                    }
                }
                *slot = det_small(&mut mat[..n * n], n);
            }
            out
        };
        let du = dets(Color::Black, 0, nb);
        let dd = dets(Color::White, nb, nw);
        let black_mask = (1usize << nb) - 1;
        (0..full).map(|b| du[b & black_mask] * dd[b >> nb] * p[b]).collect()
    }

    /// Sum over all admissible diagrams on the full vertex set.
    pub fn full(&self, pos: &[usize]) -> Complex64 {
        *self.subset_values(pos).last().unwrap()
    }

    /// Sum over linked admissible diagrams on the full vertex set.
    pub fn linked(&self, pos: &[usize]) -> Complex64 {
        let f = self.subset_values(pos);
        let t = self.counts.total();
        if t == 0 {
            return f[0];
        }
        let full = (1usize << t) - 1;
        let mut lk = vec![Complex64::new(0.0, 0.0); 1 << t];
        // subsets containing vertex 0, in increasing order
        let mut s = 1usize;
        while s <= full {
            let rest = s ^ 1;
            let mut acc = f[s];
            let mut sub = rest;
            loop {
                let tset = sub | 1;
                if tset != s {
                    acc -= lk[tset] * f[s ^ tset];
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            lk[s] = acc;
            s += 2;
        }
        lk[full]
    }
}

/// `∫ h(positions)` over all internal grid coordinates (externals fixed, black first).
/// Without externals the first internal vertex is pinned at the origin.
pub fn integrate_internal<F>(k: &Kernels, counts: VertexCounts, externals: &[usize], budget: f64, h: F) -> Result<Complex64>
where
    F: Fn(&[usize]) -> Complex64 + Sync,
{
    let grid = k.torus.grid_len();
    let mut pos = initial_positions(counts, externals, grid)?;
    let internals = internal_ids(counts);
    let r = internals.len();
    if r == 0 {
        return Ok(h(&pos));
    }
    let pinned = counts.n + counts.m == 0;
    let free: Vec<usize> = if pinned { internals[1..].to_vec() } else { internals.clone() };
    check_budget(grid, free.len(), budget)?;
    let weight = if pinned {
        k.torus.volume() * k.torus.cell_volume().powi(r as i32 - 1)
    } else {
        k.torus.cell_volume().powi(r as i32)
    };
    if pinned {
        pos[internals[0]] = 0;
    }
    if free.is_empty() {
        return Ok(h(&pos) * weight);
    }
    let parts: Vec<Complex64> = (0..grid)
        .into_par_iter()
        .map(|x| {
            let mut pos = pos.clone();
            pos[free[0]] = x;
            let rest = &free[1..];
            let mut acc = ComplexKahan::new();
            let mut odo = vec![0usize; rest.len()];
            loop {
                for (slot, &v) in odo.iter().zip(rest) {
                    pos[v] = *slot;
                }
                acc.add(h(&pos));
                let mut i = 0;
                loop {
                    if i == odo.len() {
                        return acc.value();
                    }
                    odo[i] += 1;
                    if odo[i] < grid {
                        break;
                    }
                    odo[i] = 0;
                    i += 1;
                }
            }
        })
        .collect();
    Ok(kahan_sum_complex(parts) * weight)
}

/// `Σ_{D ∈ 𝒟_{p,q}^{n,m}} Γ_D` (all admissible diagrams) by the pointwise subset sum.
pub fn full_sum(k: &Kernels, counts: VertexCounts, externals: &[usize], budget: f64) -> Result<Complex64> {
    let s = SubsetIntegrand::new(k, counts)?;
    integrate_internal(k, counts, externals, budget, |pos| s.full(pos))
}

/// `Σ_{D ∈ ℒ_{p,q}^{n,m}} Γ_D` (linked admissible diagrams) by the pointwise subset sum.
pub fn linked_sum(k: &Kernels, counts: VertexCounts, externals: &[usize], budget: f64) -> Result<Complex64> {
    let s = SubsetIntegrand::new(k, counts)?;
    integrate_internal(k, counts, externals, budget, |pos| s.linked(pos))
}

/// A matching-type diagram with `k` internal pairs: black `j` is joined to white
/// `matching[j-1] + 1` (1-based local labels; label 0 is external).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct B2Diagram {
    pub k: usize,
    pub pi: Permutation,
    pub tau: Permutation,
    pub matching: Vec<usize>,
}

impl B2Diagram {
    pub fn new(pi: Permutation, tau: Permutation, matching: Vec<usize>) -> Result<Self> {
        let k = matching.len();
        let b = B2Diagram { k, pi, tau, matching };
        if b.to_diagram()?.classify_11()? != Class11::B2 {
            return invalid("not a matching-type diagram");
        }
        Ok(b)
    }

    pub fn from_diagram(d: &Diagram) -> Result<Self> {
        if d.classify_11()? != Class11::B2 {
            return invalid("not a matching-type diagram");
        }
        let c = d.counts();
        let mut matching = vec![usize::MAX; c.p];
        for &(u, v) in &d.graph.edges {
            matching[c.local(u) - 1] = c.local(v) - 1;
        }
        Ok(B2Diagram { k: c.p, pi: d.pi.clone(), tau: d.tau.clone(), matching })
    }

    pub fn to_diagram(&self) -> Result<Diagram> {
        Diagram::new(b2_graph(self.k, &self.matching)?, self.pi.clone(), self.tau.clone())
    }

    pub fn sign(&self) -> i32 {
        self.pi.sign() * self.tau.sign()
    }
}

/// How momentum equalities are decided: exactly, or modulo the grid size (discrete torus).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumArithmetic {
    Exact,
    Modulo(i64),
}

impl MomentumArithmetic {
    fn reduce(self, q: Momentum) -> Momentum {
        match self {
            MomentumArithmetic::Exact => q,
            MomentumArithmetic::Modulo(m) => Momentum([q.0[0].rem_euclid(m), q.0[1].rem_euclid(m), q.0[2].rem_euclid(m)]),
        }
    }
}

/// External treatment of the momentum sum.
#[derive(Debug, Clone, Copy)]
pub enum ExternalMode {
    /// value at external positions `(x₁, y₁)`
    At(Point, Point),
    /// `L^{-6} ∬ Γ dx₁ dy₁`: zero total transfer on each external vertex
    ZeroMode,
}

struct Lookup {
    arith: MomentumArithmetic,
    by_residue: HashMap<Momentum, Momentum>,
}

impl Lookup {
    fn new(set: &MomentumSet, arith: MomentumArithmetic) -> Result<Self> {
        let mut by_residue = HashMap::new();
        for k in &set.points {
            if by_residue.insert(arith.reduce(*k), *k).is_some() {
                return Err(GgrError::Degenerate("momentum set aliases under the grid modulus".into()));
            }
        }
        Ok(Lookup { arith, by_residue })
    }

    fn get(&self, q: Momentum) -> Option<Momentum> {
        self.by_residue.get(&self.arith.reduce(q)).copied()
    }

    fn is_zero(&self, q: Momentum) -> bool {
        self.arith.reduce(q) == self.arith.reduce(Momentum::ZERO)
    }
}

/// Direct momentum-space value of a matching-type diagram: every black momentum is
/// enumerated, white momenta follow from the transfer constraints cycle by cycle.
/// `g_hat(q) = ∫ g_s(z) e^{-iq·z} dz`.
pub fn b2_value_fourier(
    b2: &B2Diagram,
    up: &MomentumSet,
    dn: &MomentumSet,
    g_hat: &(dyn Fn(&Momentum) -> Complex64 + Sync),
    arith: MomentumArithmetic,
    mode: ExternalMode,
) -> Result<Complex64> {
    b2.to_diagram()?.classify_11().and_then(|c| if c == Class11::B2 { Ok(()) } else { invalid("not a matching-type diagram") })?;
    let l = up.l;
    let k = b2.k;
    let kk = k + 1;
    let pi_inv = b2.pi.inverse();
    let tau_inv = b2.tau.inverse();
    let look_dn = Lookup::new(dn, arith)?;
    Lookup::new(up, arith)?;
    // black j (internal) pairs with white matching[j-1]+1
    let mut partner_of_white = vec![0usize; kk];
    for j in 1..kk {
        partner_of_white[b2.matching[j - 1] + 1] = j;
    }
    let tau_cycles = b2.tau.cycles();
    let npts = up.len();
    let total_up = (npts as f64).powi(kk as i32);
    if total_up > 1e9 {
        return Err(GgrError::Budget(format!("{total_up:.2e} black momentum assignments")));
    }
    let prefactor = b2.sign() as f64 * l.powi(-6 * kk as i32) * l.powi(3 * k as i32);
    let mut acc = ComplexKahan::new();
    let mut odo = vec![0usize; kk];
    loop {
        let ku: Vec<Momentum> = odo.iter().map(|&i| up.points[i]).collect();
        let du: Vec<Momentum> = (0..kk).map(|j| ku[j].sub(&ku[pi_inv.apply(j)])).collect();
        let external_ok = match mode {
            ExternalMode::ZeroMode => look_dn.is_zero(du[0]),
            ExternalMode::At(..) => true,
        };
        if external_ok {
            // required white transfers
            let mut dd: Vec<Option<Momentum>> = vec![None; kk];
            for w in 1..kk {
                dd[w] = Some(du[partner_of_white[w]].neg());
            }
            if let ExternalMode::ZeroMode = mode {
                dd[0] = Some(Momentum::ZERO);
            }
            // enumerate white momenta cycle by cycle
            let mut weight_sum = Complex64::new(0.0, 0.0);
            let mut kd = vec![Momentum::ZERO; kk];
            white_cycles(&tau_cycles, 0, &dd, &look_dn, dn, &mut kd, &mut |kd: &[Momentum]| {
                let d0 = kd[0].sub(&kd[tau_inv.apply(0)]);
                let mut w = Complex64::new(1.0, 0.0);
                for j in 1..kk {
                    let wj = b2.matching[j - 1] + 1;
                    let q = kd[wj].sub(&kd[tau_inv.apply(wj)]);
                    w *= g_hat(&q);
                }
                if let ExternalMode::At(x1, y1) = mode {
                    w *= Complex64::from_polar(1.0, du[0].phase(&x1, l) + d0.phase(&y1, l));
                }
                weight_sum += w;
            });
            acc.add(weight_sum);
        }
        let mut i = 0;
        loop {
            if i == kk {
                return Ok(acc.value() * prefactor);
            }
            odo[i] += 1;
            if odo[i] < npts {
                break;
            }
            odo[i] = 0;
            i += 1;
        }
    }
}

/// Enumerate white momenta: along each cycle `k_{τ(w)} = k_w + Δ_{τ(w)}` where the transfer is
/// prescribed; a free transfer (the external vertex at given position) closes the cycle.
fn white_cycles(
    cycles: &[Vec<usize>],
    ci: usize,
    dd: &[Option<Momentum>],
    look: &Lookup,
    set: &MomentumSet,
    kd: &mut Vec<Momentum>,
    emit: &mut dyn FnMut(&[Momentum]),
) {
    if ci == cycles.len() {
        emit(kd);
        return;
    }
    let cyc = &cycles[ci];
    'start: for k0 in &set.points {
        kd[cyc[0]] = *k0;
        for t in 1..cyc.len() {
            let w = cyc[t];
            let Some(delta) = dd[w] else { unreachable!("internal transfers are prescribed") };
            match look.get(kd[cyc[t - 1]].add(&delta)) {
                Some(next) => kd[w] = next,
                None => continue 'start,
            }
        }
        // closing step back to cyc[0]
        if let Some(delta) = dd[cyc[0]] {
            let back = kd[*cyc.last().unwrap()].add(&delta);
            if look.get(back) != Some(*k0) {
                continue;
            }
        }
        white_cycles(cycles, ci + 1, dd, look, set, kd, emit);
    }
}

/// Memoized `A(S) = #{k ∈ P : k + s ∈ P for all s ∈ S}`.
#[derive(Debug, Default)]
pub struct OverlapCounter {
    memo: HashMap<Vec<Momentum>, u64>,
}

impl OverlapCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&mut self, set: &MomentumSet, offsets: &[Momentum]) -> u64 {
        let mut key: Vec<Momentum> = offsets.iter().copied().filter(|s| *s != Momentum::ZERO).collect();
        key.sort();
        key.dedup();
        if key.is_empty() {
            return set.len() as u64;
        }
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = set.points.iter().filter(|k| key.iter().all(|s| set.contains(&k.add(s)))).count() as u64;
        self.memo.insert(key, v);
        v
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

/// Transfer domain `{q : -q ∈ P↑ - P↑, q ∈ P↓ - P↓}`, sorted.
pub fn transfer_domain(up: &MomentumSet, dn: &MomentumSet) -> Vec<Momentum> {
    let diffs = |s: &MomentumSet| -> HashSet<Momentum> {
        s.points.iter().flat_map(|a| s.points.iter().map(move |b| a.sub(b))).collect()
    };
    let du = diffs(up);
    let dd = diffs(dn);
    let mut out: Vec<Momentum> = dd.into_iter().filter(|q| du.contains(&q.neg())).collect();
    out.sort();
    out
}

/// Zero mode `L^{-6} ∬ Γ_D dx₁ dy₁` of a matching-type diagram, summed over the pair
/// transfers `q_j` (black `j` gains `-q_j`, its white partner `+q_j`) with every
/// permutation cycle carrying zero net transfer; each cycle contributes the number of
/// momenta compatible with its partial transfer sums.
pub fn b2_integrated(
    b2: &B2Diagram,
    up: &MomentumSet,
    dn: &MomentumSet,
    domain: &[Momentum],
    g_hat: &dyn Fn(&Momentum) -> f64,
    counters: &mut (OverlapCounter, OverlapCounter),
) -> Result<f64> {
    let k = b2.k;
    let kk = k + 1;
    let l = up.l;
    let domain_set: HashSet<Momentum> = domain.iter().copied().collect();
    // white label -> variable index of its partner
    let mut var_of_white = vec![usize::MAX; kk];
    for j in 1..kk {
        var_of_white[b2.matching[j - 1] + 1] = j - 1;
    }
    let pi_cycles = b2.pi.cycles();
    let tau_cycles = b2.tau.cycles();
    let mut constraints: Vec<Vec<usize>> = vec![];
    for c in &pi_cycles {
        constraints.push(c.iter().filter(|&&j| j > 0).map(|&j| j - 1).collect());
    }
    for c in &tau_cycles {
        constraints.push(c.iter().filter(|&&w| w > 0).map(|&w| var_of_white[w]).collect());
    }
    constraints.retain(|c| !c.is_empty());

    struct Ctx<'a> {
        k: usize,
        constraints: &'a [Vec<usize>],
        domain: &'a [Momentum],
        domain_set: &'a HashSet<Momentum>,
        pi_cycles: &'a [Vec<usize>],
        tau_cycles: &'a [Vec<usize>],
        var_of_white: &'a [usize],
        up: &'a MomentumSet,
        dn: &'a MomentumSet,
        g_hat: &'a dyn Fn(&Momentum) -> f64,
    }

    fn leaf(ctx: &Ctx, q: &[Momentum], counters: &mut (OverlapCounter, OverlapCounter)) -> f64 {
        let mut w: f64 = q.iter().map(|x| (ctx.g_hat)(x)).product();
        if w == 0.0 {
            return 0.0;
        }
        let mut offsets = vec![];
        for c in ctx.pi_cycles {
            offsets.clear();
            let mut s = Momentum::ZERO;
            for &j in &c[1..] {
                if j > 0 {
                    s = s.sub(&q[j - 1]);
                }
                offsets.push(s);
            }
            let a = counters.0.count(ctx.up, &offsets);
            if a == 0 {
                return 0.0;
            }
            w *= a as f64;
        }
        for c in ctx.tau_cycles {
            offsets.clear();
            let mut s = Momentum::ZERO;
            for &wl in &c[1..] {
                if wl > 0 {
                    s = s.add(&q[ctx.var_of_white[wl]]);
                }
                offsets.push(s);
            }
            let a = counters.1.count(ctx.dn, &offsets);
            if a == 0 {
                return 0.0;
            }
            w *= a as f64;
        }
        w
    }

    fn rec(ctx: &Ctx, q: &mut Vec<Option<Momentum>>, counters: &mut (OverlapCounter, OverlapCounter)) -> f64 {
        // propagate forced variables
        for c in ctx.constraints {
            let open: Vec<usize> = c.iter().copied().filter(|&v| q[v].is_none()).collect();
            if open.len() == 1 {
                let mut s = Momentum::ZERO;
                for &v in c {
                    if let Some(x) = q[v] {
                        s = s.add(&x);
                    }
                }
                let forced = s.neg();
                if !ctx.domain_set.contains(&forced) {
                    return 0.0;
                }
                q[open[0]] = Some(forced);
                let r = rec(ctx, q, counters);
                q[open[0]] = None;
                return r;
            }
        }
        match (0..ctx.k).find(|&v| q[v].is_none()) {
            None => {
                for c in ctx.constraints {
                    let s = c.iter().fold(Momentum::ZERO, |s, &v| s.add(&q[v].unwrap()));
                    if s != Momentum::ZERO {
                        return 0.0;
                    }
                }
                let vals: Vec<Momentum> = q.iter().map(|x| x.unwrap()).collect();
                leaf(ctx, &vals, counters)
            }
            Some(v) => {
                let mut acc = 0.0;
                let mut comp = 0.0;
                for x in ctx.domain {
                    q[v] = Some(*x);
                    let y = rec(ctx, q, counters) - comp;
                    let t = acc + y;
                    comp = (t - acc) - y;
                    acc = t;
                }
                q[v] = None;
                acc
            }
        }
    }

    let ctx = Ctx {
        k,
        constraints: &constraints,
        domain,
        domain_set: &domain_set,
        pi_cycles: &pi_cycles,
        tau_cycles: &tau_cycles,
        var_of_white: &var_of_white,
        up,
        dn,
        g_hat,
    };
    let mut q = vec![None; k];
    let total = rec(&ctx, &mut q, counters);
    Ok(b2.sign() as f64 * l.powi(-6 * kk as i32) * l.powi(3 * k as i32) * total)
}

/// Conjugation-orbit representatives of the linked identity-matching permutation pairs
/// with their orbit sizes.
pub fn b2_orbits(k: usize) -> Vec<(B2Diagram, usize)> {
    let pairs = b2_permutation_pairs(k);
    let relabel: Vec<Permutation> = Permutation::all(k)
        .into_iter()
        .map(|s| Permutation(std::iter::once(0).chain(s.0.iter().map(|x| x + 1)).collect()))
        .collect();
    let conj = |p: &Permutation, s: &Permutation| -> Permutation {
        let mut out = vec![0; p.len()];
        for i in 0..p.len() {
            out[s.apply(i)] = s.apply(p.apply(i));
        }
        Permutation(out)
    };
    let mut orbits: BTreeMap<(Permutation, Permutation), usize> = BTreeMap::new();
    for (pi, tau) in pairs {
        let rep = relabel.iter().map(|s| (conj(&pi, s), conj(&tau, s))).min().unwrap();
        *orbits.entry(rep).or_default() += 1;
    }
    orbits
        .into_iter()
        .map(|((pi, tau), n)| (B2Diagram { k, pi, tau, matching: (0..k).collect() }, n))
        .collect()
}

/// Per-order sums `S_k = (1/k!²) Σ_{D ∈ B2(k)} L^{-6}∬Γ_D` (equivalently `(1/k!)` times the
/// identity-matching sum, since every matching gives the same total).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Order {
    pub k: usize,
    pub diagrams: usize,
    pub orbits: usize,
    pub sum: f64,
}

pub fn b2_series(up: &MomentumSet, dn: &MomentumSet, g_hat: &(dyn Fn(&Momentum) -> f64 + Sync), k_max: usize) -> Result<Vec<B2Order>> {
    let domain = transfer_domain(up, dn);
    let mut out = vec![];
    for k in 1..=k_max {
        if k > 5 {
            return Err(GgrError::CapExceeded { what: "matching-type cluster count", cap: 5, requested: k });
        }
        let orbits = b2_orbits(k);
        let values: Vec<f64> = orbits
            .par_iter()
            .map_init(
                || (OverlapCounter::new(), OverlapCounter::new()),
                |counters, (b2, n)| b2_integrated(b2, up, dn, &domain, g_hat, counters).map(|v| v * *n as f64),
            )
            .collect::<Result<_>>()?;
        let diagrams: usize = orbits.iter().map(|(_, n)| n).sum();
        out.push(B2Order { k, diagrams: diagrams * factorial(k) as usize, orbits: orbits.len(), sum: kahan_sum(values) / factorial(k) });
    }
    Ok(out)
}

/// Continuum `G(q) = ∫ g_s e^{-iq·x} dx`, cached by `|n|²`.
pub fn radial_g_hat(sol: &ScatteringSolution, l: f64, domain: &[Momentum]) -> HashMap<i64, f64> {
    let mut norms: Vec<i64> = domain.iter().map(|q| q.norm_sq_index()).collect();
    norms.sort();
    norms.dedup();
    let scale = 2.0 * std::f64::consts::PI / l;
    norms
        .par_iter()
        .map(|&n2| (n2, sol.fourier_g(crate::scattering::Channel::S, scale * (n2 as f64).sqrt())))
        .collect()
}

/// Truncated correlation: the double permutation sum over all vertices restricted to
/// permutations linking the clusters (each connected by its chosen graph).
pub fn truncated_correlation(
    counts: VertexCounts,
    cluster_graphs: &[Vec<(usize, usize)>],
    clusters: &[Vec<usize>],
    positions: &[Point],
    k: &Kernels,
) -> Result<Complex64> {
    if counts.total() > 8 {
        return Err(GgrError::CapExceeded { what: "truncated-correlation vertices", cap: 8, requested: counts.total() });
    }
    check_clusters(counts, cluster_graphs, clusters, positions)?;
    let graph: Vec<(usize, usize)> = cluster_graphs.iter().flatten().copied().collect();
    let gam = gamma_matrix(counts, positions, k);
    let t = counts.total();
    let mut acc = ComplexKahan::new();
    for pi in Permutation::all(counts.black()) {
        for tau in Permutation::all(counts.white()) {
            let mut uf = UnionFind::new(t);
            for &(u, v) in &graph {
                uf.union(u, v);
            }
            let mut val = Complex64::new((pi.sign() * tau.sign()) as f64, 0.0);
            for i in 0..counts.black() {
                uf.union(i, pi.apply(i));
                val *= gam[i * t + pi.apply(i)];
            }
            for i in 0..counts.white() {
                let (a, b) = (counts.white_id(i), counts.white_id(tau.apply(i)));
                uf.union(a, b);
                val *= gam[a * t + b];
            }
            if uf.component_count() == 1 {
                acc.add(val);
            }
        }
    }
    Ok(acc.value())
}

fn check_clusters(counts: VertexCounts, graphs: &[Vec<(usize, usize)>], clusters: &[Vec<usize>], positions: &[Point]) -> Result<()> {
    if positions.len() != counts.total() {
        return invalid("one position per vertex required");
    }
    if graphs.len() != clusters.len() || clusters.iter().any(|c| c.is_empty()) {
        return invalid("one connecting graph per nonempty cluster required");
    }
    let mut seen = vec![false; counts.total()];
    for (c, g) in clusters.iter().zip(graphs) {
        for &v in c {
            if v >= counts.total() || seen[v] {
                return invalid("clusters must partition the vertices");
            }
            seen[v] = true;
        }
        let mut uf = UnionFind::new(counts.total());
        for &(u, v) in g {
            if !c.contains(&u) || !c.contains(&v) {
                return invalid("connecting graph leaves its cluster");
            }
            uf.union(u, v);
        }
        let r = uf.find(c[0]);
        if c.iter().any(|&v| uf.find(v) != r) {
            return invalid("connecting graph does not connect its cluster");
        }
    }
    if seen.iter().any(|s| !s) {
        return invalid("clusters must cover every vertex");
    }
    Ok(())
}

/// `γ_{μν}` for all vertex pairs (zero across colours), row-major.
fn gamma_matrix(counts: VertexCounts, positions: &[Point], k: &Kernels) -> Vec<Complex64> {
    let t = counts.total();
    let mut out = vec![Complex64::new(0.0, 0.0); t * t];
    for u in 0..t {
        for v in 0..t {
            if counts.color(u) == counts.color(v) {
                out[u * t + v] = k.gamma_at(counts.color(u), &positions[u], &positions[v]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300
    }
}

/// `|Σ_{connected G} Π g_e|` against `C_TG^{p+q} Σ_{trees} Π |g_e|`.
pub fn verify_tree_graph(counts: VertexCounts, positions: &[Point], k: &Kernels, c_tg: f64) -> Result<BoundCheck> {
    if counts.n + counts.m != 0 || counts.total() > 6 {
        return invalid("tree-graph check takes at most six internal vertices");
    }
    if positions.len() != counts.total() {
        return invalid("one position per vertex required");
    }
    let t = counts.total();
    let g = |u: usize, v: usize| k.g_at(counts.color(u) == counts.color(v), &positions[u], &positions[v]);
    let lhs = kahan_sum(enumerate_connected_graphs(t)?.iter().map(|edges| edges.iter().map(|&(u, v)| g(u, v)).product::<f64>()));
    let rhs = kahan_sum(
        enumerate_trees(counts, 8)?.iter().map(|tree| tree.edges.iter().map(|&(u, v)| g(u, v).abs()).product::<f64>()),
    );
    Ok(BoundCheck { lhs: lhs.abs(), rhs: c_tg.powi(t as i32) * rhs })
}

/// `|ρ_t| ≤ γ_∞^{V-(c-1)} Σ_{anchored trees} Π |γ_{μν}|`.
pub fn verify_rhot_bound(
    counts: VertexCounts,
    cluster_graphs: &[Vec<(usize, usize)>],
    clusters: &[Vec<usize>],
    positions: &[Point],
    k: &Kernels,
) -> Result<BoundCheck> {
    let lhs = truncated_correlation(counts, cluster_graphs, clusters, positions, k)?.norm();
    let gam = gamma_matrix(counts, positions, k);
    let t = counts.total();
    let sizes: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
    let flat: Vec<usize> = clusters.iter().flatten().copied().collect();
    let trees = enumerate_anchored_trees(&sizes, 8)?;
    let sum = kahan_sum(trees.iter().map(|a| a.edges.iter().map(|&(u, v)| gam[flat[u] * t + flat[v]].norm()).product::<f64>()));
    let gamma_inf = k.density(Color::Black).max(k.density(Color::White));
    let rhs = gamma_inf.powi((t + 1 - clusters.len()) as i32) * sum;
    Ok(BoundCheck { lhs, rhs })
}

/// Inputs of the absolute-convergence condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInputs {
    /// `Σ_k |γ̂(k)|`, the larger spin density
    pub gamma_inf: f64,
    /// `sup_e ∫|g_e|`
    pub i_g: f64,
    /// `sup_σ ∫|γ_σ|`
    pub i_gamma: f64,
    /// tree-graph stability constant; 1 for `0 ≤ f ≤ 1`
    pub c_tg: f64,
}

impl ConvergenceInputs {
    /// `∫|γ|` by quadrature on a grid of `m³` points (needs `m > 2·max index`).
    pub fn compute(up: &MomentumSet, dn: &MomentumSet, sol: Option<&ScatteringSolution>, m: usize) -> Result<Self> {
        let torus = Torus::new(up.l, m)?;
        let k = Kernels::free(torus, up.clone(), dn.clone())?;
        let i_g = match sol {
            Some(s) => {
                let gi = g_integrals(s);
                gi.i_gs.max(gi.i_gp)
            }
            None => 0.0,
        };
        Ok(ConvergenceInputs {
            gamma_inf: up.density().max(dn.density()),
            i_g,
            i_gamma: k.gamma_l1(Color::Black).max(k.gamma_l1(Color::White)),
            c_tg: 1.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagrams::{enumerate_diagrams, enumerate_b2, GGraph};
    use crate::scattering::{solve_with_cutoff, Potential};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn ball(l: f64, r2: i64) -> MomentumSet {
        let mut pts = vec![];
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                for c in -3i64..=3 {
                    if a * a + b * b + c * c <= r2 {
                        pts.push(Momentum([a, b, c]));
                    }
                }
            }
        }
        MomentumSet::new(l, pts).unwrap()
    }

    fn kernels(l: f64, m: usize, up: i64, dn: i64) -> (Kernels, ScatteringSolution) {
        let torus = Torus::new(l, m).unwrap();
        let sol = solve_with_cutoff(&Potential::HardCore { radius: 0.4 }, 1.5, &torus).unwrap();
        (Kernels::from_solution(torus, ball(l, up), ball(l, dn), &sol).unwrap(), sol)
    }

    #[test]
    fn small_determinants() {
        let mut a: Vec<Complex64> = [2.0, 1.0, 1.0, 3.0].iter().map(|&x| Complex64::new(x, 0.0)).collect();
        assert!((det_small(&mut a, 2) - Complex64::new(5.0, 0.0)).norm() < 1e-14);
        let mut b: Vec<Complex64> =
            [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0].iter().map(|&x| Complex64::new(x, 0.0)).collect();
        assert!((det_small(&mut b, 3) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert_eq!(det_small(&mut [], 0), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn density_matrix_is_a_projection() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        let rho = k.density(Color::Black);
        assert!((k.gamma_grid(Color::Black, 0).re - rho).abs() < 1e-14);
        let g = k.torus.grid_len();
        let h3 = k.torus.cell_volume();
        for (x, z) in [(0usize, 5usize), (17, 3), (100, 200)] {
            let conv: Complex64 = (0..g)
                .map(|y| k.gamma_grid(Color::White, k.diff(x, y)) * k.gamma_grid(Color::White, k.diff(y, z)))
                .sum::<Complex64>()
                * h3;
            assert!((conv - k.gamma_grid(Color::White, k.diff(x, z))).norm() < 1e-13);
            // Hermitian
            let a = k.gamma_grid(Color::White, k.diff(x, z));
            let b = k.gamma_grid(Color::White, k.diff(z, x));
            assert!((a - b.conj()).norm() < 1e-14);
        }
        // grid table agrees with the direct sum
        let x = k.torus.grid_point(37);
        let direct = k.gamma_at(Color::Black, &x, &[0.0; 3]);
        assert!((direct - k.gamma_grid(Color::Black, 37)).norm() < 1e-13);
    }

    #[test]
    fn aliasing_grid_is_rejected() {
        let torus = Torus::new(4.0, 4).unwrap();
        assert!(Kernels::free(torus, ball(4.0, 4), ball(4.0, 1)).is_err());
    }

    #[test]
    fn unique_closed_pair_diagram() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        let d = &enumerate_diagrams(VertexCounts::new(1, 1, 0, 0), true, 8).unwrap()[0];
        let v = diagram_value(d, &[], &k, DEFAULT_BUDGET).unwrap();
        let int_g: f64 = (0..k.torus.grid_len()).map(|i| k.g_grid(false, i)).sum::<f64>() * k.torus.cell_volume();
        let expect = k.density(Color::Black) * k.density(Color::White) * int_g * k.torus.volume();
        assert!((v.re - expect).abs() < 1e-12 * expect.abs() && v.im.abs() < 1e-12);
    }

    #[test]
    fn zero_g_kills_internal_diagrams() {
        let torus = Torus::new(4.0, 6).unwrap();
        let k = Kernels::free(torus, ball(4.0, 1), ball(4.0, 0)).unwrap();
        for d in enumerate_diagrams(VertexCounts::new(1, 1, 1, 0), false, 8).unwrap() {
            assert_eq!(diagram_value(&d, &[3], &k, DEFAULT_BUDGET).unwrap(), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn rank_kills_full_sums_beyond_particle_number() {
        // one up particle: every sum over black permutations with two blacks vanishes
        let (k, _) = kernels(4.0, 6, 0, 1);
        let c = VertexCounts::new(2, 0, 0, 0);
        let mut total = Complex64::new(0.0, 0.0);
        let mut any_nonzero = false;
        for d in enumerate_diagrams(c, false, 8).unwrap() {
            let v = diagram_value(&d, &[], &k, DEFAULT_BUDGET).unwrap();
            any_nonzero |= v.norm() > 1e-12;
            total += v;
        }
        assert!(any_nonzero);
        assert!(total.norm() < 1e-15);
        assert!(full_sum(&k, c, &[], DEFAULT_BUDGET).unwrap().norm() < 1e-15);
    }

    #[test]
    fn value_factorizes_over_linked_components() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        // a closed pair plus an external black vertex joined to an internal white one
        let d = Diagram::parse_dump("1 2 1 0 | b2-w1 b1-w2 | 1 2 | 1 2").unwrap();
        assert_eq!(d.linked_components().len(), 2);
        let whole = diagram_value(&d, &[11], &k, DEFAULT_BUDGET).unwrap();
        let a = Diagram::parse_dump("1 1 0 0 | b1-w1 | 1 | 1").unwrap();
        let b = Diagram::parse_dump("0 1 1 0 | b1-w1 | 1 | 1").unwrap();
        let va = diagram_value(&a, &[], &k, DEFAULT_BUDGET).unwrap();
        let vb = diagram_value(&b, &[11], &k, DEFAULT_BUDGET).unwrap();
        assert!((whole - va * vb).norm() <= 1e-10 * whole.norm());
    }

    fn per_diagram(k: &Kernels, c: VertexCounts, ext: &[usize], linked: bool) -> Complex64 {
        enumerate_diagrams(c, linked, 8)
            .unwrap()
            .iter()
            .map(|d| diagram_value(d, ext, k, DEFAULT_BUDGET).unwrap())
            .sum()
    }

    #[test]
    fn subset_sums_match_enumerated_diagrams() {
        let (k, _) = kernels(4.0, 4, 1, 1);
        let cases: &[(VertexCounts, Vec<usize>)] = &[
            (VertexCounts::new(1, 1, 0, 0), vec![]),
            (VertexCounts::new(2, 1, 0, 0), vec![]),
            (VertexCounts::new(1, 0, 1, 1), vec![5, 9]),
            (VertexCounts::new(1, 1, 1, 0), vec![7]),
            (VertexCounts::new(0, 1, 2, 0), vec![1, 22]),
            (VertexCounts::new(0, 0, 2, 0), vec![1, 22]),
        ];
        for (c, ext) in cases {
            for linked in [false, true] {
                let direct = per_diagram(&k, *c, ext, linked);
                let s = if linked { linked_sum(&k, *c, ext, DEFAULT_BUDGET) } else { full_sum(&k, *c, ext, DEFAULT_BUDGET) }.unwrap();
                assert!((direct - s).norm() <= 1e-11 * (1.0 + direct.norm()), "{c:?} linked={linked}: {direct} vs {s}");
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let (k, _) = kernels(4.0, 6, 1, 1);
        let d = &enumerate_diagrams(VertexCounts::new(2, 2, 0, 0), true, 8).unwrap()[0];
        assert!(matches!(diagram_value(d, &[], &k, 1e6), Err(GgrError::Budget(_))));
    }

    fn grid_g_hat(k: &Kernels) -> impl Fn(&Momentum) -> Complex64 + Sync + '_ {
        let table = k.g_fourier_grid(false);
        move |q: &Momentum| table[k.momentum_slot(q)]
    }

    #[test]
    fn smallest_matching_diagram_fourier_equals_grid() {
        let (k, _) = kernels(4.0, 4, 1, 1);
        let d = &enumerate_b2(1, 8).unwrap()[0];
        let b2 = B2Diagram::from_diagram(d).unwrap();
        let gh = grid_g_hat(&k);
        for (xi, yi) in [(0usize, 0usize), (5, 9), (21, 63)] {
            let grid = diagram_value(d, &[xi, yi], &k, DEFAULT_BUDGET).unwrap();
            let x1 = k.torus.grid_point(xi);
            let y1 = k.torus.grid_point(yi);
            let four = b2_value_fourier(&b2, &k.up, &k.dn, &gh, MomentumArithmetic::Modulo(4), ExternalMode::At(x1, y1)).unwrap();
            assert!((grid - four).norm() <= 1e-10 * grid.norm(), "{grid} vs {four}");
        }
    }

    #[test]
    fn transfer_sum_equals_direct_zero_mode() {
        let l = 5.0;
        let up = ball(l, 2);
        let dn = ball(l, 1);
        let domain = transfer_domain(&up, &dn);
        let g_hat = |q: &Momentum| -> f64 { (-0.3 * q.norm_sq_index() as f64).exp() - 0.7 };
        let gc = |q: &Momentum| Complex64::new(g_hat(q), 0.0);
        for k in 1..=2 {
            for (b2, _) in b2_orbits(k) {
                let direct = b2_value_fourier(&b2, &up, &dn, &gc, MomentumArithmetic::Exact, ExternalMode::ZeroMode).unwrap();
                let mut counters = (OverlapCounter::new(), OverlapCounter::new());
                let fast = b2_integrated(&b2, &up, &dn, &domain, &g_hat, &mut counters).unwrap();
                assert!(direct.im.abs() < 1e-12 * (1.0 + direct.re.abs()));
                assert!((direct.re - fast).abs() <= 1e-10 * (1e-30 + fast.abs()), "{b2:?}: {direct} vs {fast}");
            }
        }
    }

    #[test]
    fn orbit_sizes_cover_all_pairs() {
        for k in 1..=3 {
            let total: usize = b2_orbits(k).iter().map(|(_, n)| n).sum();
            assert_eq!(total, b2_permutation_pairs(k).len());
            assert_eq!(total * factorial(k) as usize, enumerate_b2(k, 8).unwrap().len());
        }
    }

    #[test]
    fn overlap_counts() {
        let set = ball(3.0, 1);
        let mut c = OverlapCounter::new();
        assert_eq!(c.count(&set, &[]), 7);
        assert_eq!(c.count(&set, &[Momentum([1, 0, 0])]), 2);
        assert_eq!(c.count(&set, &[Momentum([1, 0, 0]), Momentum::ZERO]), 2);
        assert_eq!(c.count(&set, &[Momentum([2, 0, 0])]), 1);
        assert_eq!(c.count(&set, &[Momentum([3, 0, 0])]), 0);
    }

    #[test]
    fn single_cluster_correlation_is_a_determinant_product() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        let c = VertexCounts::new(2, 1, 0, 0);
        let pos = [[0.1, 0.2, 0.3], [0.9, 0.1, 0.0], [0.4, 0.8, 0.5]];
        let clusters = vec![vec![0, 1, 2]];
        let rt = truncated_correlation(c, &[vec![(0, 2), (1, 2)]], &clusters, &pos, &k).unwrap();
        let g = |a: usize, b: usize| k.gamma_at(Color::Black, &pos[a], &pos[b]);
        let det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
        let expect = det * k.gamma_at(Color::White, &pos[2], &pos[2]);
        assert!((rt - expect).norm() < 1e-14);
    }

    #[test]
    fn two_singletons_correlation() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        let c = VertexCounts::new(2, 0, 0, 0);
        let pos = [[0.1, 0.2, 0.3], [0.9, 0.1, 1.0]];
        let rt = truncated_correlation(c, &[vec![], vec![]], &[vec![0], vec![1]], &pos, &k).unwrap();
        let expect = -k.gamma_at(Color::Black, &pos[0], &pos[1]) * k.gamma_at(Color::Black, &pos[1], &pos[0]);
        assert!((rt - expect).norm() < 1e-15);
        let b = verify_rhot_bound(c, &[vec![], vec![]], &[vec![0], vec![1]], &pos, &k).unwrap();
        assert!(b.holds());
    }

    #[test]
    fn tree_graph_small_cases() {
        let (k, _) = kernels(4.0, 6, 1, 2);
        let c = VertexCounts::new(1, 1, 0, 0);
        let pos = [[0.0; 3], [0.5, 0.3, 0.0]];
        let r = verify_tree_graph(c, &pos, &k, 1.0).unwrap();
        assert!((r.lhs - r.rhs).abs() < 1e-15 && r.lhs > 0.0);
        let free = Kernels::free(k.torus, k.up.clone(), k.dn.clone()).unwrap();
        let r = verify_tree_graph(VertexCounts::new(2, 1, 0, 0), &[[0.0; 3], [0.2, 0.0, 0.0], [0.0, 0.3, 0.0]], &free, 1.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn convergence_inputs_for_single_mode() {
        let set = ball(4.0, 0);
        let ci = ConvergenceInputs::compute(&set, &set, None, 4).unwrap();
        assert!((ci.gamma_inf - 1.0 / 64.0).abs() < 1e-15);
        assert!((ci.i_gamma - 1.0).abs() < 1e-12);
        assert_eq!((ci.i_g, ci.c_tg), (0.0, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn tree_graph_inequality_three_vertices(seed in any::<u64>()) {
            let (k, _) = kernels(4.0, 6, 1, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos: Vec<Point> = (0..3).map(|_| [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)]).collect();
            let r = verify_tree_graph(VertexCounts::new(2, 1, 0, 0), &pos, &k, 1.0).unwrap();
            prop_assert!(r.holds(), "{:?}", r);
        }

        #[test]
        fn correlation_is_independent_of_connecting_graph(seed in any::<u64>()) {
            let (k, _) = kernels(4.0, 6, 1, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = VertexCounts::new(2, 2, 0, 0);
            let pos: Vec<Point> = (0..4).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();
            let clusters = vec![vec![0, 2, 3], vec![1]];
            let a = truncated_correlation(c, &[vec![(0, 2), (2, 3)], vec![]], &clusters, &pos, &k).unwrap();
            let b = truncated_correlation(c, &[vec![(0, 3), (2, 3), (0, 2)], vec![]], &clusters, &pos, &k).unwrap();
            prop_assert!((a - b).norm() <= 1e-10 * (1e-30 + a.norm()));
            let bound = verify_rhot_bound(c, &[vec![(0, 2), (2, 3)], vec![]], &clusters, &pos, &k).unwrap();
            prop_assert!(bound.holds());
        }
    }

    #[test]
    fn ggraph_based_b2_round_trip() {
        let g = GGraph::new(VertexCounts::new(2, 2, 1, 1), vec![(1, 5), (2, 4)]).unwrap();
        let d = Diagram::new(g, Permutation(vec![1, 2, 0]), Permutation(vec![2, 0, 1])).unwrap();
        if d.is_linked() {
            let b2 = B2Diagram::from_diagram(&d).unwrap();
            assert_eq!(b2.matching, vec![1, 0]);
            assert_eq!(b2.to_diagram().unwrap(), d);
        }
    }
}
