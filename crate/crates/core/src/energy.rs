//! Trial-state energy: kinetic baseline, the opposite-spin pair term with its exact
//! matching-type series, bound-based estimates for the remaining terms, and box arithmetic.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::{b2_series, radial_g_hat, transfer_domain, B2Order};
use crate::expansion::TrialStateSpec;
use crate::numerics::{integrate_piecewise, kahan_sum};
use crate::polyhedron::{FermiPolyhedron, MomentumSet, DEFAULT_PRIMES};
use crate::scattering::{cutoff_energy_integral, g_integrals, solve_with_cutoff, Channel, Potential, Weight};
use crate::torus::Torus;

/// Largest series order accepted by [`term_11`].
pub const MAX_ORDER: usize = 5;

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Opposite-spin pair term `∬ρ^{(1,1)}[|∇f_s|²/f_s² + v/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term11 {
    pub value: f64,
    /// `∫_{|x|≤b} (|∇f_s|² + v f_s²/2)`
    pub energy_integral: f64,
    pub series: Vec<B2Order>,
    /// fitted constant in `|S_k| ≤ ρ²(C a b² ρ)^k`
    pub fitted_c: f64,
    /// `None` when the bounding series diverges
    pub tail_a: Option<f64>,
    pub tail_b1: f64,
    pub tail_b2k: Option<f64>,
    /// geometric extrapolation of the measured orders beyond `K`
    pub tail_b2k_measured: Option<f64>,
}

/// Shared size parameters: `ρ = ρ↑ + ρ↓`, `N = N↑ + N↓`.
fn sizes(spec: &TrialStateSpec) -> (f64, f64, f64, f64) {
    let sol = &spec.scattering;
    (spec.rho(), spec.n_total() as f64, sol.a, sol.b)
}

/// `C = max_k (|S_k|/ρ²)^{1/k} / (a b² ρ)`.
pub fn fit_series_constant(series: &[B2Order], rho: f64, x0: f64) -> f64 {
    if x0 == 0.0 {
        return 0.0;
    }
    series
        .iter()
        .filter(|o| o.sum != 0.0)
        .map(|o| (o.sum.abs() / (rho * rho)).powf(1.0 / o.k as f64) / x0)
        .fold(0.0, f64::max)
}

pub fn term_11(spec: &TrialStateSpec, order: usize) -> Result<Term11> {
    if order == 0 {
        return invalid("series order K must be at least 1");
    }
    if order > MAX_ORDER {
        return Err(crate::GgrError::CapExceeded { what: "series order K", cap: MAX_ORDER, requested: order });
    }
    let sol = &spec.scattering;
    let l = spec.torus.l;
    let e_s = cutoff_energy_integral(sol, Channel::S, Weight::One);
    let (rho, n, a, b) = sizes(spec);
    let (rho_up, rho_dn) = (spec.up.density(), spec.dn.density());
    let series = if sol.a == 0.0 {
        (1..=order).map(|k| B2Order { k, diagrams: 0, orbits: 0, sum: 0.0 }).collect()
    } else {
        let domain = transfer_domain(&spec.up, &spec.dn);
        let table = radial_g_hat(sol, l, &domain);
        let g_hat = move |q: &crate::torus::Momentum| table[&q.norm_sq_index()];
        b2_series(&spec.up, &spec.dn, &g_hat, order)?
    };
    let bracket = rho_up * rho_dn + kahan_sum(series.iter().map(|o| o.sum));
    let scale = l.powi(3) * e_s;
    let x0 = a * b * b * rho;
    let c = fit_series_constant(&series, rho, x0);
    let logn = n.ln().max(0.0);
    let x = c * x0;
    let y = c * spec.s as f64 * logn.powi(3);
    let tail_a = if x < 1.0 && x * y < 1.0 { scale * rho * rho * x / ((1.0 - x) * (1.0 - x * y)) } else { f64::INFINITY };
    let tail_b1 = if sol.p_wave && a > 0.0 {
        c * l.powi(3) * spec.s as f64 * a.powi(3) * rho.powi(3) * (b / a).ln() * logn.powi(3)
    } else {
        0.0
    };
    let tail_b2k = scale * rho * rho * (x * y).powi(order as i32 + 1);
    let mags: Vec<f64> = series.iter().map(|o| o.sum.abs()).collect();
    let tail_measured = scale * crate::expansion::geometric_tail(&mags);
    Ok(Term11 {
        value: scale * bracket,
        energy_integral: e_s,
        series,
        fitted_c: c,
        tail_a: finite(tail_a),
        tail_b1,
        tail_b2k: finite(tail_b2k),
        tail_b2k_measured: finite(tail_measured),
    })
}

/// `⟨|γ(x)|²⟩` over the sphere `|x| = r`: `L⁻⁶ Σ_{k,k'} sinc(|k−k'| r)`.
pub struct PairProfile {
    l: f64,
    /// pair counts per `|k − k'|²` index norm
    counts: Vec<(i64, f64)>,
}

impl PairProfile {
    pub fn new(set: &MomentumSet) -> Self {
        let mut counts: BTreeMap<i64, f64> = BTreeMap::new();
        for k in &set.points {
            for k2 in &set.points {
                *counts.entry(k.sub(k2).norm_sq_index()).or_default() += 1.0;
            }
        }
        PairProfile { l: set.l, counts: counts.into_iter().collect() }
    }

    pub fn gamma_sq(&self, r: f64) -> f64 {
        let scale = 2.0 * PI / self.l;
        let sum = kahan_sum(self.counts.iter().map(|&(n2, c)| {
            let x = scale * (n2 as f64).sqrt() * r;
            c * if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x }
        }));
        sum / self.l.powi(6)
    }
}

/// Equal-spin pair term: a direct lowest-order value and a fitted bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    /// `L³ ∫ (|∇f_p|² + v f_p²/2)(ρ_σ² − ⟨|γ_σ|²⟩)` over `|x| ≤ b`
    pub direct: f64,
    pub bound: f64,
    /// `sup_r (ρ_σ² − ⟨|γ_σ|²⟩)/(ρ_σ^{8/3} r²)`, fitted
    pub fitted_c2: f64,
}

pub fn term_20(spec: &TrialStateSpec, set: &MomentumSet, fitted_c1: f64) -> PairTerm {
    let sol = &spec.scattering;
    let rho_s = set.density();
    let n_s = set.len() as f64;
    let l = spec.torus.l;
    let profile = PairProfile::new(set);
    let hole = |r: f64| (rho_s * rho_s - profile.gamma_sq(r)).max(0.0);
    let breaks = sol.radial_breaks();
    let direct = if sol.p_wave {
        l.powi(3) * integrate_piecewise(|r| 4.0 * PI * r * r * sol.energy_density(Channel::P, r) * hole(r), &breaks, 24, 16)
    } else {
        0.0
    };
    let c2 = (1..=200)
        .map(|i| sol.b * i as f64 / 200.0)
        .map(|r| hole(r) / (rho_s.powf(8.0 / 3.0) * r * r))
        .fold(0.0, f64::max);
    let (rho, n, a, b) = sizes(spec);
    let x0 = a * b * b * rho;
    let e_p = cutoff_energy_integral(sol, Channel::P, Weight::One);
    let e_p2 = cutoff_energy_integral(sol, Channel::P, Weight::RadiusSquared);
    let schedule = spec.s as f64 * x0 * n.ln().max(0.0).powi(4);
    let bound = n_s * rho_s * (fitted_c1 * x0 * e_p + c2 * rho_s.powf(2.0 / 3.0) * (1.0 + schedule) * e_p2);
    PairTerm { direct, bound, fitted_c2: c2 }
}

/// Least-squares fit of `value ≈ c₁ a b² ρ³ + c₂ ρ^{8/3} r²` on samples `(r, value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairProfileFit {
    pub c1: f64,
    pub c2: f64,
    /// largest `|fit − value| / |value|` over the samples
    pub max_rel_residual: f64,
}

pub fn fit_pair_profile(samples: &[(f64, f64)], a: f64, b: f64, rho: f64) -> Result<PairProfileFit> {
    if samples.len() < 2 {
        return invalid("need at least two samples");
    }
    let u = a * b * b * rho.powi(3);
    let w = rho.powf(8.0 / 3.0);
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(r, v) in samples {
        let (f1, f2) = (u, w * r * r);
        s11 += f1 * f1;
        s12 += f1 * f2;
        s22 += f2 * f2;
        t1 += f1 * v;
        t2 += f2 * v;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-14 * s11 * s22 {
        return invalid("degenerate sample radii");
    }
    let c1 = (t1 * s22 - t2 * s12) / det;
    let c2 = (s11 * t2 - s12 * t1) / det;
    let max_rel_residual =
        samples.iter().map(|&(r, v)| ((c1 * u + c2 * w * r * r) - v).abs() / v.abs()).fold(0.0, f64::max);
    Ok(PairProfileFit { c1, c2, max_rel_residual })
}

/// Three-particle terms, bounded through the uniform `ρ³` density bound (constant 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeBodyBounds {
    pub term_21: f64,
    pub term_12: f64,
    pub term_30: f64,
    pub term_03: f64,
}

pub fn three_body_bounds(spec: &TrialStateSpec) -> ThreeBodyBounds {
    let gi = g_integrals(&spec.scattering);
    let v = spec.torus.volume();
    let (ru, rd) = (spec.up.density(), spec.dn.density());
    let mixed = gi.i_fs_grad * gi.i_fs_grad + gi.i_fs_grad * gi.i_fp_grad;
    let same = gi.i_fp_grad * gi.i_fp_grad;
    ThreeBodyBounds {
        term_21: v * ru * ru * rd * mixed,
        term_12: v * ru * rd * rd * mixed,
        term_30: v * ru.powi(3) * same,
        term_03: v * rd.powi(3) * same,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParameters {
    pub a: f64,
    pub a_p: f64,
    pub b: f64,
    pub rho_up: f64,
    pub rho_dn: f64,
    pub s: usize,
    pub n_up: usize,
    pub n_dn: usize,
    pub l: f64,
    pub order: usize,
    /// exponent loss `2/K` in the residual scale
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub parameters: EnergyParameters,
    pub e0_up: f64,
    pub e0_dn: f64,
    pub term_11: Term11,
    pub term_20: PairTerm,
    pub term_02: PairTerm,
    pub three_body: ThreeBodyBounds,
    /// `(3/5)(6π²)^{2/3}(ρ↑^{5/3}+ρ↓^{5/3}) + 8πaρ↑ρ↓`
    pub leading: f64,
    /// `8πaρ↑ρ↓`
    pub leading_interaction: f64,
    /// `E0↑ + E0↓ + 2·term_11 + term_20 + term_02` (direct values)
    pub estimate: f64,
    /// `(estimate − E0↑ − E0↓)/L³`
    pub interaction_density: f64,
    /// `interaction_density / 8πaρ↑ρ↓`; `None` without interaction
    pub interaction_ratio: Option<f64>,
    pub residual: f64,
    /// `a ρ² (a³ρ)^{1/3 − 2/K}`
    pub residual_scale: f64,
}

pub fn leading_order(rho_up: f64, rho_dn: f64, a: f64) -> f64 {
    0.6 * (6.0 * PI * PI).powf(2.0 / 3.0) * (rho_up.powf(5.0 / 3.0) + rho_dn.powf(5.0 / 3.0)) + 8.0 * PI * a * rho_up * rho_dn
}

pub fn assemble(spec: &TrialStateSpec, order: usize) -> Result<EnergyBreakdown> {
    let (t11, (t20, t02)) = rayon::join(
        || term_11(spec, order),
        || {
            // the equal-spin bounds need the fitted constant; a K = 1 fit is enough
            let c1 = term_11(spec, 1).map(|t| t.fitted_c).unwrap_or(0.0);
            rayon::join(|| term_20(spec, &spec.up, c1), || term_20(spec, &spec.dn, c1))
        },
    );
    let t11 = t11?;
    let sol = &spec.scattering;
    let (rho_up, rho_dn) = (spec.up.density(), spec.dn.density());
    let e0_up = spec.up.kinetic_energy();
    let e0_dn = spec.dn.kinetic_energy();
    let volume = spec.torus.volume();
    let estimate = e0_up + e0_dn + 2.0 * t11.value + t20.direct + t02.direct;
    let interaction_density = (estimate - e0_up - e0_dn) / volume;
    let leading_interaction = 8.0 * PI * sol.a * rho_up * rho_dn;
    let rho = rho_up + rho_dn;
    let delta = 2.0 / order as f64;
    let residual_scale = if sol.a > 0.0 { sol.a * rho * rho * (sol.a.powi(3) * rho).powf(1.0 / 3.0 - delta) } else { 0.0 };
    Ok(EnergyBreakdown {
        parameters: EnergyParameters {
            a: sol.a,
            a_p: sol.a_p,
            b: sol.b,
            rho_up,
            rho_dn,
            s: spec.s,
            n_up: spec.up.len(),
            n_dn: spec.dn.len(),
            l: spec.torus.l,
            order,
            delta,
        },
        e0_up,
        e0_dn,
        three_body: three_body_bounds(spec),
        term_11: t11,
        term_20: t20,
        term_02: t02,
        leading: leading_order(rho_up, rho_dn, sol.a),
        leading_interaction,
        estimate,
        interaction_density,
        interaction_ratio: (leading_interaction > 0.0).then(|| interaction_density / leading_interaction),
        residual: (interaction_density - leading_interaction).abs(),
        residual_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxExtrapolation {
    pub e_dirichlet_bound: f64,
    pub density_ratio: f64,
}

/// Glue periodic boxes with Dirichlet margins `d` and spacing `b`.
pub fn box_extrapolate(e_periodic: f64, n: f64, l: f64, d: f64, b: f64) -> Result<BoxExtrapolation> {
    if !(d > 0.0) {
        return invalid(format!("margin d must be positive, got {d}"));
    }
    Ok(BoxExtrapolation { e_dirichlet_bound: e_periodic + 6.0 * n / (d * d), density_ratio: (l / (l + 2.0 * d + b)).powi(3) })
}

/// Hard core of radius 1 with equal spin populations at total density `a³ρ`, cutoff
/// `b = ρ^{-1/3}` and the box side fixing the realized density.
pub fn desk_configuration(a3rho: f64, kf_ratio: Ratio<i64>, corners: usize) -> Result<TrialStateSpec> {
    if !(a3rho > 0.0) {
        return invalid("a³ρ must be positive");
    }
    let pf = FermiPolyhedron::build(corners, DEFAULT_PRIMES, kf_ratio, 1.0)?;
    let l = (2.0 * pf.n() as f64 / a3rho).cbrt();
    let b = a3rho.powf(-1.0 / 3.0);
    let pf = FermiPolyhedron::build(corners, DEFAULT_PRIMES, kf_ratio, l)?;
    let m = (2 * pf.momenta.max_abs_index() as usize + 2).max(4);
    let torus = Torus::new(l, m)?;
    let sol = solve_with_cutoff(&Potential::HardCore { radius: 1.0 }, b, &torus)?;
    TrialStateSpec::from_polyhedra(&pf, &pf, sol, torus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::Momentum;

    fn tiny(potential: Potential, p_wave: bool) -> TrialStateSpec {
        let l = 8.0;
        let torus = Torus::new(l, 8).unwrap();
        let mut pts = vec![Momentum([0, 0, 0])];
        for i in 0..3 {
            let mut e = [0; 3];
            e[i] = 1;
            pts.push(Momentum(e));
            e[i] = -1;
            pts.push(Momentum(e));
        }
        let set = MomentumSet::new(l, pts).unwrap();
        let mut sol = solve_with_cutoff(&potential, 2.0, &torus).unwrap();
        if !p_wave {
            sol = sol.without_p_wave();
        }
        TrialStateSpec::new(torus, set.clone(), set, 8, sol).unwrap()
    }

    #[test]
    fn free_state_energy_is_kinetic() {
        let spec = tiny(Potential::Zero, true);
        let e = assemble(&spec, 2).unwrap();
        assert_eq!(e.estimate, e.e0_up + e.e0_dn);
        assert_eq!(e.term_11.value, 0.0);
        assert_eq!((e.term_20.bound, e.three_body.term_21, e.three_body.term_30), (0.0, 0.0, 0.0));
        assert!(e.interaction_ratio.is_none());
    }

    #[test]
    fn leading_is_closed_form() {
        let spec = tiny(Potential::HardCore { radius: 0.3 }, true);
        let e = assemble(&spec, 1).unwrap();
        let (ru, rd, a) = (e.parameters.rho_up, e.parameters.rho_dn, e.parameters.a);
        let expect = 0.6 * (6.0 * PI * PI).powf(2.0 / 3.0) * (ru.powf(5.0 / 3.0) + rd.powf(5.0 / 3.0)) + 8.0 * PI * a * ru * rd;
        assert!((e.leading - expect).abs() < 1e-15 * expect);
        assert!(e.term_20.bound >= 0.0 && e.term_11.tail_b1 >= 0.0);
    }

    #[test]
    fn no_p_wave_means_no_equal_spin_energy() {
        let spec = tiny(Potential::HardCore { radius: 0.3 }, false);
        let t = term_20(&spec, &spec.up, 1.0);
        assert_eq!((t.direct, t.bound), (0.0, 0.0));
    }

    #[test]
    fn equal_spin_direct_value_below_bound() {
        let spec = tiny(Potential::HardCore { radius: 0.3 }, true);
        let t = term_20(&spec, &spec.up, 0.0);
        assert!(t.direct > 0.0 && t.direct <= t.bound * (1.0 + 1e-9));
    }

    #[test]
    fn pair_profile_limits() {
        let spec = tiny(Potential::Zero, true);
        let p = PairProfile::new(&spec.up);
        let rho = spec.up.density();
        assert!((p.gamma_sq(0.0) - rho * rho).abs() < 1e-15);
        assert!(p.gamma_sq(1.0) < rho * rho);
    }

    #[test]
    fn three_body_ratio_is_small() {
        let spec = tiny(Potential::HardCore { radius: 0.2 }, true);
        let t = three_body_bounds(&spec);
        assert!(t.term_30 < 0.1 * t.term_21);
        let gi = g_integrals(&spec.scattering);
        let v = spec.torus.volume();
        let r = spec.up.density();
        assert!((t.term_21 - v * r.powi(3) * (gi.i_fs_grad.powi(2) + gi.i_fs_grad * gi.i_fp_grad)).abs() < 1e-12 * t.term_21);
    }

    #[test]
    fn box_arithmetic() {
        let b = box_extrapolate(3.0, 100.0, 50.0, 10.0, 2.0).unwrap();
        assert_eq!(b.e_dirichlet_bound, 9.0);
        assert!((b.density_ratio - (50.0f64 / 72.0).powi(3)).abs() < 1e-15);
        assert!((box_extrapolate(3.0, 100.0, 50.0, 1e9, 0.0).unwrap().e_dirichlet_bound - 3.0).abs() < 1e-15);
        assert!(box_extrapolate(0.0, 1.0, 1.0, 0.0, 0.0).is_err());
        // second-order Taylor agreement for small d, b
        let (l, d, bb) = (1000.0, 1.0, 0.5);
        let eps = (2.0 * d + bb) / l;
        let taylor = 1.0 - 3.0 * eps + 6.0 * eps * eps;
        assert!((box_extrapolate(0.0, 1.0, l, d, bb).unwrap().density_ratio - taylor).abs() < 20.0 * eps.powi(3));
    }

    #[test]
    fn pair_profile_fit_recovers_coefficients() {
        let (a, b, rho) = (1.0f64, 5.0f64, 0.01f64);
        let samples: Vec<(f64, f64)> =
            (1..6).map(|i| i as f64 * 0.5).map(|r| (r, 2.0 * a * b * b * rho.powi(3) + 0.7 * rho.powf(8.0 / 3.0) * r * r)).collect();
        let f = fit_pair_profile(&samples, a, b, rho).unwrap();
        assert!((f.c1 - 2.0).abs() < 1e-9 && (f.c2 - 0.7).abs() < 1e-9 && f.max_rel_residual < 1e-9);
    }

    #[test]
    fn order_bounds() {
        let spec = tiny(Potential::Zero, true);
        assert!(term_11(&spec, 0).is_err());
        assert!(term_11(&spec, MAX_ORDER + 1).is_err());
    }
}
