//! Series assembly: normalization constant, reduced densities, graded partial sums and
//! the convergence monitor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagrams::{enumerate_diagrams, enumerate_partitions, Color, VertexCounts};
use crate::error::{invalid, Result};
use crate::evaluation::{diagram_value, full_sum, linked_sum, ConvergenceInputs, Kernels, DEFAULT_BUDGET};
use crate::numerics::{factorial, kahan_sum, kahan_sum_complex};
use crate::polyhedron::{FermiPolyhedron, MomentumSet};
use crate::scattering::ScatteringSolution;
use crate::torus::Torus;

/// Truncation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    /// largest `p + q`
    pub max_internal: usize,
    /// largest number of internal-only clusters in graded tables
    pub max_k: usize,
    /// largest `n_g + n_g*` in graded tables
    pub max_ng: usize,
    /// grid-point budget per position-space integral
    pub budget: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { max_internal: 6, max_k: 2, max_ng: 2, budget: DEFAULT_BUDGET }
    }
}

impl Caps {
    pub fn with_internal(max_internal: usize) -> Self {
        Caps { max_internal, ..Caps::default() }
    }
}

/// Everything defining the trial state: occupied momenta per spin, the correlation
/// functions and the torus (whose grid is used by position-space evaluations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStateSpec {
    pub torus: Torus,
    pub up: MomentumSet,
    pub dn: MomentumSet,
    /// corner count of the Fermi polyhedra (larger of the two spins)
    pub s: usize,
    pub scattering: ScatteringSolution,
}

impl TrialStateSpec {
    pub fn new(torus: Torus, up: MomentumSet, dn: MomentumSet, s: usize, scattering: ScatteringSolution) -> Result<Self> {
        if up.l != torus.l || dn.l != torus.l {
            return invalid(format!("momentum sets live on L = {}, {} but the torus has L = {}", up.l, dn.l, torus.l));
        }
        if scattering.b > 0.5 * torus.l {
            return invalid(format!("cutoff b = {} exceeds L/2 = {}", scattering.b, 0.5 * torus.l));
        }
        Ok(TrialStateSpec { torus, up, dn, s, scattering })
    }

    pub fn from_polyhedra(pf_up: &FermiPolyhedron, pf_dn: &FermiPolyhedron, scattering: ScatteringSolution, torus: Torus) -> Result<Self> {
        let s = pf_up.s().max(pf_dn.s());
        TrialStateSpec::new(torus, pf_up.momenta.clone(), pf_dn.momenta.clone(), s, scattering)
    }

    pub fn kernels(&self) -> Result<Kernels> {
        Kernels::from_solution(self.torus, self.up.clone(), self.dn.clone(), &self.scattering)
    }

    pub fn n_total(&self) -> usize {
        self.up.len() + self.dn.len()
    }

    pub fn rho(&self) -> f64 {
        self.up.density() + self.dn.density()
    }

    pub fn grading_params(&self) -> GradingParams {
        GradingParams {
            a: self.scattering.a,
            b: self.scattering.b,
            s: self.s as f64,
            n_total: self.n_total() as f64,
            rho: self.rho(),
        }
    }
}

/// One `(p, q)` order of the normalization series (values already divided by `p!q!`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationOrder {
    pub p: usize,
    pub q: usize,
    /// all diagrams; `None` when the order vanishes by rank (`p > N↑` or `q > N↓`)
    pub full: Option<f64>,
    pub linked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstant {
    pub finite_sum: f64,
    pub linked_exp: f64,
    /// estimated size of the omitted linked orders, in units of `C`
    pub tail: f64,
    pub gap: f64,
    pub orders: Vec<NormalizationOrder>,
}

/// Geometric extrapolation of the omitted orders from per-order magnitudes `a_r`
/// (ordered by `r`): ratio = largest consecutive ratio, tail = `a_R ρ̂/(1 − ρ̂)`.
pub fn geometric_tail(magnitudes: &[f64]) -> f64 {
    let Some(&last) = magnitudes.last() else { return 0.0 };
    if last == 0.0 {
        return 0.0;
    }
    let ratio = magnitudes.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).fold(f64::NAN, f64::max);
    if ratio.is_nan() {
        // a single order gives no rate; take the last term itself
        return last;
    }
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    last * ratio / (1.0 - ratio)
}

pub fn normalization_constant(k: &Kernels, caps: &Caps) -> Result<NormalizationConstant> {
    let (nu, nd) = (k.up.len(), k.dn.len());
    let mut orders = vec![];
    let mut per_r = vec![0.0; caps.max_internal + 1];
    for r in 2..=caps.max_internal {
        for p in 0..=r {
            let q = r - p;
            let c = VertexCounts::new(p, q, 0, 0);
            let w = 1.0 / (factorial(p) * factorial(q));
            let full = if p <= nu && q <= nd { Some(full_sum(k, c, &[], caps.budget)?.re * w) } else { None };
            let linked = linked_sum(k, c, &[], caps.budget)?.re * w;
            per_r[r] += linked.abs();
            orders.push(NormalizationOrder { p, q, full, linked });
        }
    }
    let prefactor = factorial(nu) * factorial(nd);
    let finite = 1.0 + kahan_sum(orders.iter().filter_map(|o| o.full));
    let linked = kahan_sum(orders.iter().map(|o| o.linked));
    let finite_sum = prefactor * finite;
    let linked_exp = prefactor * linked.exp();
    let mags: Vec<f64> = per_r.get(2..).unwrap_or_default().to_vec();
    let tail = linked_exp * geometric_tail(&mags);
    Ok(NormalizationConstant { finite_sum, linked_exp, tail, gap: (finite_sum - linked_exp).abs(), orders })
}

/// A block of external vertices: black and white external labels (0-based).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Block {
    pub black: Vec<usize>,
    pub white: Vec<usize>,
}

impl Block {
    pub fn size(&self) -> usize {
        self.black.len() + self.white.len()
    }
}

/// `S(B*, W*) = Σ_{p,q} (1/p!q!) Σ_{D ∈ ℒ_{p,q}^{B*,W*}} Γ_D` per order `p + q`.
pub fn block_series(k: &Kernels, black_pos: &[usize], white_pos: &[usize], caps: &Caps) -> Result<Vec<Complex64>> {
    let mut out = vec![];
    let ext: Vec<usize> = black_pos.iter().chain(white_pos).copied().collect();
    for r in 0..=caps.max_internal {
        let mut acc = vec![];
        for p in 0..=r {
            let q = r - p;
            let c = VertexCounts::new(p, q, black_pos.len(), white_pos.len());
            acc.push(linked_sum(k, c, &ext, caps.budget)? / (factorial(p) * factorial(q)));
        }
        out.push(kahan_sum_complex(acc));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockValue {
    pub block: Block,
    /// per-order partial sums (order = number of internal vertices)
    pub orders: Vec<Complex64>,
    /// value used: the truncated series, or the exact density for one-vertex blocks
    pub value: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedDensity {
    pub n: usize,
    pub m: usize,
    pub value: f64,
    pub imag: f64,
    /// same formula with single-external blocks taken from their truncated series
    pub raw_value: f64,
    pub prefactor: f64,
    /// geometric estimate of omitted orders, in the units of `value`
    pub tail: f64,
    pub blocks: Vec<BlockValue>,
}

/// Reduced density from the sum over external partitions of products of linked block
/// series, times the product of `f²` over external pairs. One-vertex blocks are replaced
/// by the exact spin density (translation invariance).
pub fn reduced_density(k: &Kernels, n: usize, m: usize, externals: &[usize], caps: &Caps) -> Result<ReducedDensity> {
    if n + m == 0 {
        return invalid("need at least one external vertex");
    }
    if externals.len() != n + m {
        return invalid(format!("expected {} external positions", n + m));
    }
    let black_pos = &externals[..n];
    let white_pos = &externals[n..];
    let mut prefactor = 1.0;
    let all: Vec<(Color, usize)> =
        black_pos.iter().map(|&x| (Color::Black, x)).chain(white_pos.iter().map(|&x| (Color::White, x))).collect();
    for a in 0..all.len() {
        for b in (a + 1)..all.len() {
            let same = all[a].0 == all[b].0;
            prefactor *= 1.0 + k.g_grid(same, k.diff(all[a].1, all[b].1));
        }
    }
    let mut memo: BTreeMap<Block, BlockValue> = BTreeMap::new();
    let mut total = Complex64::new(0.0, 0.0);
    let mut raw = Complex64::new(0.0, 0.0);
    let mut tail_mag = 0.0;
    for kappa in 1..=(n + m) {
        let w = 1.0 / factorial(kappa);
        for (bparts, wparts) in enumerate_partitions(n, m, kappa)? {
            let mut prod = Complex64::new(w, 0.0);
            let mut prod_raw = Complex64::new(w, 0.0);
            let mut keys = vec![];
            for (bl, wl) in bparts.iter().zip(&wparts) {
                let block = Block { black: bl.clone(), white: wl.clone() };
                if !memo.contains_key(&block) {
                    let bp: Vec<usize> = bl.iter().map(|&i| black_pos[i]).collect();
                    let wp: Vec<usize> = wl.iter().map(|&j| white_pos[j]).collect();
                    let orders = block_series(k, &bp, &wp, caps)?;
                    let series = kahan_sum_complex(orders.iter().copied());
                    let value = match (bl.len(), wl.len()) {
                        (1, 0) => Complex64::new(k.density(Color::Black), 0.0),
                        (0, 1) => Complex64::new(k.density(Color::White), 0.0),
                        _ => series,
                    };
                    memo.insert(block.clone(), BlockValue { block: block.clone(), orders, value });
                }
                keys.push(block);
            }
            let vals: Vec<&BlockValue> = keys.iter().map(|b| &memo[b]).collect();
            for bv in &vals {
                prod *= bv.value;
                prod_raw *= kahan_sum_complex(bv.orders.iter().copied());
            }
            // first-order sensitivity of the product to each block's omitted orders
            for (i, bv) in vals.iter().enumerate() {
                if bv.block.size() == 1 {
                    continue;
                }
                let mags: Vec<f64> = bv.orders.iter().skip(1).map(|z| z.norm()).collect();
                let others: f64 = vals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.value.norm()).product();
                tail_mag += w * others * geometric_tail(&mags);
            }
            total += prod;
            raw += prod_raw;
        }
    }
    Ok(ReducedDensity {
        n,
        m,
        value: prefactor * total.re,
        imag: prefactor * total.im,
        raw_value: prefactor * raw.re,
        prefactor,
        tail: prefactor * tail_mag,
        blocks: memo.into_values().collect(),
    })
}

/// Physical parameters entering the grading bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradingParams {
    pub a: f64,
    pub b: f64,
    pub s: f64,
    /// `N = N↑ + N↓`
    pub n_total: f64,
    /// `ρ = ρ↑ + ρ↓`
    pub rho: f64,
}

impl GradingParams {
    /// `a b² ρ`
    pub fn x0(&self) -> f64 {
        self.a * self.b * self.b * self.rho
    }

    /// `s (log N)³`
    pub fn y0(&self) -> f64 {
        self.s * self.n_total.ln().powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedCell {
    pub p: usize,
    pub q: usize,
    /// `A`, `B1`, `B2` for one external vertex of each colour, `-` otherwise
    pub class: String,
    pub k: usize,
    pub ng_total: usize,
    pub diagrams: usize,
    pub sum: Complex64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedTable {
    pub n: usize,
    pub m: usize,
    pub cells: Vec<GradedCell>,
    /// fitted constant of the grading bound
    pub fitted_c: f64,
    /// bound on every cell outside the table; infinite when the geometric series diverges
    pub tail: f64,
    /// largest deviation between the per-diagram sums and the subset-sum evaluation
    pub consistency: f64,
}

/// Fitted constant making `|cell| ≤ ρ^{n+m} (C x₀)^{e+k}(C y₀)^{k}` tight on the given cells,
/// where `e = n_g + n_g*`. Cells of zero grade carry no constant.
pub fn fit_grading_constant(cells: &[(usize, usize, f64)], n_ext: usize, params: &GradingParams) -> f64 {
    let base = params.rho.powi(n_ext as i32);
    let mut c: f64 = 0.0;
    for &(k0, e, mag) in cells {
        let power = e + 2 * k0;
        if power == 0 || mag == 0.0 {
            continue;
        }
        let scale = base * params.x0().powi((e + k0) as i32) * params.y0().powi(k0 as i32);
        c = c.max((mag / scale).powf(1.0 / power as f64));
    }
    c
}

pub fn grading_bound(k0: usize, e: usize, n_ext: usize, c: f64, params: &GradingParams) -> f64 {
    params.rho.powi(n_ext as i32) * (c * params.x0()).powi((e + k0) as i32) * (c * params.y0()).powi(k0 as i32)
}

/// `Σ_{k₀, e} ρ^{n+m} x^{e+k₀} (x y)^{k₀}`-type total minus the included cells.
pub fn grading_tail(included: &[(usize, usize)], n_ext: usize, c: f64, params: &GradingParams) -> f64 {
    let x = c * params.x0();
    let y = c * params.y0();
    if x >= 1.0 || x * y >= 1.0 {
        return f64::INFINITY;
    }
    let total = params.rho.powi(n_ext as i32) / ((1.0 - x) * (1.0 - x * y));
    let inside: f64 = included.iter().map(|&(k0, e)| grading_bound(k0, e, n_ext, c, params)).sum();
    (total - inside).max(0.0)
}

/// Per-diagram partial sums of the linked series with all externals in one block,
/// resolved by `(p, q, class, k, n_g + n_g*)`; values carry the `1/p!q!` weight.
pub fn graded_partial_sums(
    k: &Kernels,
    n: usize,
    m: usize,
    externals: &[usize],
    caps: &Caps,
    params: &GradingParams,
) -> Result<GradedTable> {
    if externals.len() != n + m {
        return invalid(format!("expected {} external positions", n + m));
    }
    let mut cells: BTreeMap<(usize, usize, String, usize, usize), (usize, Complex64)> = BTreeMap::new();
    let mut consistency: f64 = 0.0;
    for r in 0..=caps.max_internal {
        for p in 0..=r {
            let q = r - p;
            let c = VertexCounts::new(p, q, n, m);
            let diagrams = enumerate_diagrams(c, true, 8)?;
            let w = 1.0 / (factorial(p) * factorial(q));
            let values: Vec<Complex64> =
                diagrams.par_iter().map(|d| diagram_value(d, externals, k, caps.budget)).collect::<Result<_>>()?;
            let mut all = vec![];
            for (d, v) in diagrams.iter().zip(&values) {
                let dec = d.decompose();
                let e = dec.n_g + dec.n_g_star;
                all.push(*v);
                if dec.k > caps.max_k || e > caps.max_ng {
                    continue;
                }
                let class = if n == 1 && m == 1 { format!("{:?}", d.classify_11()?) } else { "-".to_string() };
                let entry = cells.entry((p, q, class, dec.k, e)).or_insert((0, Complex64::new(0.0, 0.0)));
                entry.0 += 1;
                entry.1 += v * w;
            }
            let direct = kahan_sum_complex(all);
            let mobius = linked_sum(k, c, externals, caps.budget)?;
            consistency = consistency.max((direct - mobius).norm() / (1.0 + direct.norm()));
        }
    }
    // grade-resolved magnitudes, summed over (p, q, class)
    let mut by_grade: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    for ((_, _, _, k0, e), (_, v)) in &cells {
        *by_grade.entry((*k0, *e)).or_default() += v;
    }
    let fit_cells: Vec<(usize, usize, f64)> = by_grade.iter().map(|(&(k0, e), v)| (k0, e, v.norm())).collect();
    let fitted_c = fit_grading_constant(&fit_cells, n + m, params);
    let included: Vec<(usize, usize)> = by_grade.keys().copied().collect();
    let tail = grading_tail(&included, n + m, fitted_c, params);
    let cells = cells
        .into_iter()
        .map(|((p, q, class, k0, e), (count, sum))| GradedCell {
            p,
            q,
            class,
            k: k0,
            ng_total: e,
            diagrams: count,
            sum,
            bound: grading_bound(k0, e, n + m, fitted_c, params),
        })
        .collect();
    Ok(GradedTable { n, m, cells, fitted_c, tail, consistency })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    /// `γ_∞ · I_g · I_γ`
    pub kernel_product: f64,
    /// `s a b² ρ (log N)³`
    pub schedule_product: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Advisory check of the two smallness conditions; `s`, `N`, `ρ` are the spin maxima/sums.
pub fn convergence_monitor(inputs: &ConvergenceInputs, s: f64, n_total: f64, a: f64, b: f64, rho: f64, threshold: f64) -> MonitorReport {
    let kernel_product = inputs.gamma_inf * inputs.i_g * inputs.i_gamma;
    let schedule_product = s * a * b * b * rho * n_total.ln().powi(3);
    MonitorReport { kernel_product, schedule_product, threshold, pass: kernel_product < threshold && schedule_product < threshold }
}

pub const SERIES_CSV_HEADER: &str = "target,p,q,class,k,n_g_total,partial_sum_re,partial_sum_im,bound";

fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12e}")
    } else {
        "inf".to_string()
    }
}

pub fn normalization_csv(c: &NormalizationConstant) -> String {
    let mut out = String::new();
    for o in &c.orders {
        if let Some(f) = o.full {
            let _ = writeln!(out, "normalization,{},{},full,,,{},0,", o.p, o.q, fmt_float(f));
        }
        let _ = writeln!(out, "normalization,{},{},linked,,,{},0,", o.p, o.q, fmt_float(o.linked));
    }
    out
}

pub fn graded_csv(t: &GradedTable) -> String {
    let mut out = String::new();
    for c in &t.cells {
        let _ = writeln!(
            out,
            "rho({};{}),{},{},{},{},{},{},{},{}",
            t.n,
            t.m,
            c.p,
            c.q,
            c.class,
            c.k,
            c.ng_total,
            fmt_float(c.sum.re),
            fmt_float(c.sum.im),
            fmt_float(c.bound)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering::{solve_with_cutoff, Potential};
    use crate::torus::Momentum;

    fn set(l: f64, pts: &[[i64; 3]]) -> MomentumSet {
        MomentumSet::new(l, pts.iter().map(|&p| Momentum(p)).collect()).unwrap()
    }

    fn kernels(m: usize, up: &[[i64; 3]], dn: &[[i64; 3]]) -> Kernels {
        let l = 4.0;
        let torus = Torus::new(l, m).unwrap();
        let sol = solve_with_cutoff(&Potential::HardCore { radius: 0.4 }, 1.5, &torus).unwrap();
        Kernels::from_solution(torus, set(l, up), set(l, dn), &sol).unwrap()
    }

    #[test]
    fn geometric_tail_cases() {
        assert_eq!(geometric_tail(&[]), 0.0);
        assert_eq!(geometric_tail(&[0.5]), 0.5);
        assert!((geometric_tail(&[1.0, 0.1, 0.01]) - 0.01 * 0.1 / 0.9).abs() < 1e-15);
        assert!(geometric_tail(&[1.0, 2.0]).is_infinite());
    }

    #[test]
    fn one_particle_each_normalization_is_exact() {
        let k = kernels(6, &[[0, 0, 0]], &[[0, 0, 0]]);
        let c = normalization_constant(&k, &Caps::with_internal(2)).unwrap();
        let int_g: f64 = (0..k.torus.grid_len()).map(|i| k.g_grid(false, i)).sum::<f64>() * k.torus.cell_volume();
        let expect = 1.0 + int_g / k.torus.volume();
        assert!((c.finite_sum - expect).abs() < 1e-13, "{} vs {}", c.finite_sum, expect);
        // exp(x) against 1 + x, up to the linked orders beyond p = q = 1
        assert!(c.gap < 0.05 * (expect - 1.0).abs());
    }

    #[test]
    fn free_normalization_is_factorial() {
        let torus = Torus::new(4.0, 4).unwrap();
        let k = Kernels::free(torus, set(4.0, &[[0, 0, 0], [1, 0, 0]]), set(4.0, &[[0, 0, 0]])).unwrap();
        let c = normalization_constant(&k, &Caps::with_internal(3)).unwrap();
        assert_eq!(c.finite_sum, 2.0);
        assert_eq!(c.linked_exp, 2.0);
        assert_eq!(c.tail, 0.0);
    }

    #[test]
    fn one_body_density_is_exact() {
        let k = kernels(6, &[[0, 0, 0], [1, 0, 0], [-1, 0, 0]], &[[0, 0, 0]]);
        let r = reduced_density(&k, 1, 0, &[17], &Caps::with_internal(1)).unwrap();
        assert!((r.value - 3.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn free_pair_density() {
        let torus = Torus::new(4.0, 6).unwrap();
        let k = Kernels::free(torus, set(4.0, &[[0, 0, 0], [1, 0, 0]]), set(4.0, &[[0, 0, 0]])).unwrap();
        let r = reduced_density(&k, 1, 1, &[3, 50], &Caps::with_internal(2)).unwrap();
        assert!((r.value - 2.0 / 64.0 / 64.0).abs() < 1e-18);
        let r = reduced_density(&k, 2, 0, &[0, 7], &Caps::with_internal(2)).unwrap();
        let g = k.gamma_grid(Color::Black, 7).norm_sqr();
        assert!((r.value - ((2.0f64 / 64.0).powi(2) - g)).abs() < 1e-16);
        let swapped = reduced_density(&k, 2, 0, &[7, 0], &Caps::with_internal(2)).unwrap();
        assert!((r.value - swapped.value).abs() < 1e-18);
    }

    #[test]
    fn graded_cells_for_pair_densities() {
        let k = kernels(4, &[[0, 0, 0], [1, 0, 0]], &[[0, 0, 0], [0, 1, 0]]);
        let params = GradingParams { a: 0.4, b: 1.5, s: 8.0, n_total: 4.0, rho: 4.0 / 64.0 };
        let t = graded_partial_sums(&k, 2, 0, &[0, 5], &Caps { max_internal: 1, ..Caps::default() }, &params).unwrap();
        let zero = t.cells.iter().find(|c| c.p == 0 && c.q == 0).unwrap();
        let g = k.gamma_grid(Color::Black, 5).norm_sqr();
        assert!((zero.sum.re + g).abs() < 1e-15);
        assert!(t.consistency < 1e-12);
        let t = graded_partial_sums(&k, 1, 1, &[0, 5], &Caps { max_internal: 2, ..Caps::default() }, &params).unwrap();
        assert!(t.consistency < 1e-12);
        assert!(t.cells.iter().any(|c| c.class == "B2" && c.k == 1));
        assert!(t.cells.iter().all(|c| c.sum.norm() <= c.bound * (1.0 + 1e-9) || c.k + c.ng_total == 0));
    }

    #[test]
    fn monitor_products() {
        let inputs = ConvergenceInputs { gamma_inf: 1e-3, i_g: 0.0, i_gamma: 3.0, c_tg: 1.0 };
        let r = convergence_monitor(&inputs, 32.0, 1000.0, 0.0, 10.0, 1e-3, 1.0);
        assert_eq!((r.kernel_product, r.schedule_product, r.pass), (0.0, 0.0, true));
        let r1 = convergence_monitor(&ConvergenceInputs { i_g: 1.0, ..inputs }, 32.0, 1000.0, 1.0, 10.0, 1e-3, 1.0);
        let r2 = convergence_monitor(&ConvergenceInputs { i_g: 2.0, ..inputs }, 32.0, 1000.0, 2.0, 10.0, 1e-3, 1.0);
        assert!(r2.kernel_product > r1.kernel_product && r2.schedule_product > r1.schedule_product);
        assert!((r1.schedule_product - 32.0 * 0.1 * 1000f64.ln().powi(3)).abs() < 1e-9);
    }

    #[test]
    fn tails_shrink_as_more_cells_are_included() {
        let params = GradingParams { a: 1.0, b: 2.0, s: 1.0, n_total: 3.0, rho: 0.01 };
        let small = grading_tail(&[(0, 0)], 2, 1.0, &params);
        let large = grading_tail(&[(0, 0), (0, 1), (1, 0)], 2, 1.0, &params);
        assert!(large < small);
    }
}
