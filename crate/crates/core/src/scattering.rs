//! Zero-energy s- and p-wave scattering for radial potentials of compact support.
//!
//! Units are those of `H = -Δ + v`, so the radial equations carry the coupling `v/2`.
//! The s channel solves `Δf = v f / 2` in three dimensions; the p channel solves the
//! Euler–Lagrange equation of the `|x|²`-weighted functional, which is the same radial
//! equation in five dimensions. Outside the range the profiles are `1 - a/r` and
//! `1 - a_p³/r³`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GgrError, Result};
use crate::numerics::{integrate_piecewise, rk4_adaptive};
use crate::torus::Torus;

const ODE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Potential {
    Zero,
    /// `v = +∞` for `r < radius`, zero beyond.
    HardCore { radius: f64 },
    /// `v = height` for `r < radius`, zero beyond.
    SquareWell { height: f64, radius: f64 },
    /// Piecewise-linear `v` through the nodes, zero beyond the last node.
    Tabulated { r: Vec<f64>, v: Vec<f64> },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Zero => Ok(()),
            Potential::HardCore { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return invalid(format!("hard-core radius must be positive, got {radius}"));
                }
                Ok(())
            }
            Potential::SquareWell { height, radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return invalid(format!("well radius must be positive, got {radius}"));
                }
                if !(height.is_finite() && *height >= 0.0) {
                    return invalid(format!("potential must be non-negative and finite, got {height}"));
                }
                Ok(())
            }
            Potential::Tabulated { r, v } => {
                if r.len() < 2 || r.len() != v.len() {
                    return invalid("tabulated potential needs at least two (r, v) rows");
                }
                if r[0] < 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
                    return invalid("tabulated radii must be non-negative and strictly ascending");
                }
                if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return invalid("tabulated potential must be finite and non-negative");
                }
                Ok(())
            }
        }
    }

    /// Range `R0`: `v = 0` for `r > R0`.
    pub fn range(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::HardCore { radius } => *radius,
            Potential::SquareWell { radius, .. } => *radius,
            Potential::Tabulated { r, .. } => *r.last().unwrap(),
        }
    }

    pub fn core_radius(&self) -> f64 {
        match self {
            Potential::HardCore { radius } => *radius,
            _ => 0.0,
        }
    }

    /// Finite part of the potential (zero on and outside a hard core).
    pub fn value(&self, r: f64) -> f64 {
        match self {
            Potential::Zero | Potential::HardCore { .. } => 0.0,
            Potential::SquareWell { height, radius } => {
                if r < *radius {
                    *height
                } else {
                    0.0
                }
            }
            Potential::Tabulated { r: rs, v } => {
                if r > *rs.last().unwrap() {
                    return 0.0;
                }
                if r <= rs[0] {
                    return v[0];
                }
                let i = rs.partition_point(|x| *x <= r).min(rs.len() - 1);
                let (r0, r1) = (rs[i - 1], rs[i]);
                let t = (r - r0) / (r1 - r0);
                v[i - 1] * (1.0 - t) + v[i] * t
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Potential::Zero => true,
            Potential::SquareWell { height, .. } => *height == 0.0,
            Potential::Tabulated { v, .. } => v.iter().all(|x| *x == 0.0),
            Potential::HardCore { .. } => false,
        }
    }

    /// Radii where the potential is not smooth, restricted to `(lo, hi)`.
    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = match self {
            Potential::Tabulated { r, .. } => r.clone(),
            _ => vec![],
        };
        pts.retain(|x| *x > lo && *x < hi);
        pts
    }

    /// Parse whitespace-separated `r v` rows; `#` starts a comment.
    pub fn parse_table(text: &str) -> Result<Potential> {
        let mut r = Vec::new();
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(GgrError::Parse { line: i + 1, msg: "expected two columns".into() });
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| GgrError::Parse { line: i + 1, msg: format!("{s}: {e}") })
            };
            r.push(parse(cols[0])?);
            v.push(parse(cols[1])?);
        }
        let pot = Potential::Tabulated { r, v };
        pot.validate()?;
        Ok(pot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    S,
    P,
}

impl Channel {
    /// Dimension in which the channel equation is a radial Laplacian.
    fn dim(self) -> i32 {
        match self {
            Channel::S => 3,
            Channel::P => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    One,
    RadiusSquared,
}

impl Weight {
    fn eval(self, r: f64) -> f64 {
        match self {
            Weight::One => 1.0,
            Weight::RadiusSquared => r * r,
        }
    }
}

/// Solution of one channel, normalized so that the exterior is `1 - c / r^{d-2}`
/// with `c = a` (s) or `c = a_p³` (p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub channel: Channel,
    /// Scattering length `a` or `a_p`.
    pub length: f64,
    pub range: f64,
    pub core: f64,
    pub r_max: f64,
    potential: Potential,
    /// Interior samples `(r, f, f')` from `core` (or a tiny start radius) up to `range`.
    nodes: Vec<[f64; 3]>,
    /// Small-r series `f ≈ c0 (1 + c2 r²)` used below the first node when there is no core.
    series: (f64, f64),
    /// Interior energy `∫ 4π r² (f'² + v f²/2) w dr` for `w = 1` and `w = r²`.
    interior_energy: [f64; 2],
}

impl RadialProfile {
    /// The exterior coefficient `a` (s) or `a_p³` (p).
    pub fn exterior_coefficient(&self) -> f64 {
        match self.channel {
            Channel::S => self.length,
            Channel::P => self.length.powi(3),
        }
    }

    fn exterior(&self, r: f64) -> (f64, f64) {
        let c = self.exterior_coefficient();
        let d = self.channel.dim();
        let rp = r.powi(d - 2);
        (1.0 - c / rp, (d - 2) as f64 * c / (rp * r))
    }

    /// Value and radial derivative of the unscaled profile.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        if r < self.core {
            return (0.0, 0.0);
        }
        if r >= self.range || self.nodes.is_empty() {
            if r == 0.0 {
                return (1.0, 0.0);
            }
            return self.exterior(r);
        }
        let first = self.nodes[0];
        if r <= first[0] {
            let (c0, c2) = self.series;
            return (c0 * (1.0 + c2 * r * r), 2.0 * c0 * c2 * r);
        }
        let i = self.nodes.partition_point(|n| n[0] <= r).clamp(1, self.nodes.len() - 1);
        let [x0, f0, d0] = self.nodes[i - 1];
        let [x1, f1, d1] = self.nodes[i];
        let h = x1 - x0;
        let t = (r - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let f = h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1;
        let df = ((6.0 * t2 - 6.0 * t) * f0 + (3.0 * t2 - 4.0 * t + 1.0) * h * d0 + (-6.0 * t2 + 6.0 * t) * f1
            + (3.0 * t2 - 2.0 * t) * h * d1)
            / h;
        (f, df)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    /// Radii carrying the solver output plus exterior samples up to `r_max`.
    pub fn solver_grid(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self.nodes.iter().map(|n| (n[0], n[1])).collect();
        let start = self.range.max(1e-12);
        let n_ext = 200;
        for i in 0..=n_ext {
            let r = start + (self.r_max - start) * i as f64 / n_ext as f64;
            out.push((r, self.value(r)));
        }
        if self.core > 0.0 {
            for i in 0..20 {
                let r = self.core * i as f64 / 20.0;
                out.push((r, 0.0));
            }
        }
        out
    }

    /// `∫_{|x| ≤ upper} (|∇f|² + v f²/2) w dx` of the unscaled profile; `upper` may be infinite.
    pub fn energy_to(&self, weight: Weight, upper: f64) -> f64 {
        let interior = match weight {
            Weight::One => self.interior_energy[0],
            Weight::RadiusSquared => self.interior_energy[1],
        };
        let c = self.exterior_coefficient();
        if c == 0.0 {
            return interior;
        }
        let d = self.channel.dim();
        // exterior integrand 4π r² w(r) ((d-2) c)² r^{-2(d-1)}
        let e = 2 + 2 * matches!(weight, Weight::RadiusSquared) as i32 - 2 * (d - 1);
        let pref = 4.0 * PI * ((d - 2) as f64 * c).powi(2);
        let lo = self.range;
        let integral = if e == -1 {
            (upper / lo).ln()
        } else if upper.is_infinite() {
            if e + 1 < 0 {
                -lo.powi(e + 1) / (e + 1) as f64
            } else {
                f64::INFINITY
            }
        } else {
            (upper.powi(e + 1) - lo.powi(e + 1)) / (e + 1) as f64
        };
        interior + pref * integral
    }
}

/// Solve the zero-energy radial problem of one channel by integrating outward and
/// matching to the exterior form at the range of the potential.
pub fn solve_scattering(v: &Potential, channel: Channel, r_max: f64) -> Result<RadialProfile> {
    v.validate()?;
    let range = v.range();
    if !(r_max > range) {
        return invalid(format!("r_max = {r_max} must exceed the potential range {range}"));
    }
    let core = v.core_radius();
    let d = channel.dim();
    let dm1 = d - 1;
    let base = RadialProfile {
        channel,
        length: 0.0,
        range,
        core,
        r_max,
        potential: v.clone(),
        nodes: vec![],
        series: (1.0, 0.0),
        interior_energy: [0.0, 0.0],
    };
    if v.is_zero() {
        return Ok(RadialProfile { range: 0.0, ..base });
    }
    if range <= core {
        // pure hard core
        let length = core;
        return Ok(RadialProfile { length, ..base });
    }

    // y = [f, r^{d-1} f', ∫4πr²(f'²+vf²/2), ∫4πr⁴(f'²+vf²/2)]
    let rhs = |r: f64, y: &[f64; 4]| -> [f64; 4] {
        let vr = v.value(r);
        let df = y[1] / r.powi(dm1);
        let dens = 4.0 * PI * r * r * (df * df + 0.5 * vr * y[0] * y[0]);
        [df, 0.5 * vr * r.powi(dm1) * y[0], dens, dens * r * r]
    };
    let (r0, y0, series) = if core > 0.0 {
        (core, [0.0, core.powi(dm1), 0.0, 0.0], (0.0, 0.0))
    } else {
        let r0 = 1e-7 * range;
        let c2 = v.value(0.0) / (4.0 * d as f64);
        let f = 1.0 + c2 * r0 * r0;
        let e1 = 4.0 * PI * 0.5 * v.value(0.0) * r0.powi(3) / 3.0;
        (r0, [f, r0.powi(dm1) * 2.0 * c2 * r0, e1, e1 * 0.6 * r0 * r0], (1.0, c2))
    };
    let mut breaks = vec![r0];
    breaks.extend(v.kinks(r0, range));
    breaks.push(range);

    let mut nodes: Vec<[f64; 3]> = vec![];
    let mut y = y0;
    for seg in breaks.windows(2) {
        let pts = rk4_adaptive(rhs, seg[0], y, seg[1], ODE_TOL)
            .ok_or_else(|| GgrError::Unmatched(format!("step size collapsed on [{}, {}]", seg[0], seg[1])))?;
        for (i, p) in pts.iter().enumerate() {
            if i == 0 && !nodes.is_empty() {
                continue;
            }
            nodes.push([p.x, p.y[0], p.y[1] / p.x.powi(dm1)]);
        }
        y = pts.last().unwrap().y;
    }

    let (f_end, flux) = (y[0], y[1]);
    let denom = f_end + flux / ((d - 2) as f64 * range.powi(d - 2));
    if !(denom.is_finite() && denom > 0.0 && flux >= 0.0) {
        return Err(GgrError::Unmatched(format!(
            "cannot match interior solution (f = {f_end}, flux = {flux}) to the exterior form"
        )));
    }
    let scale = 1.0 / denom;
    let c = scale * flux / (d - 2) as f64;
    if !(c.is_finite() && c >= 0.0 && c <= range.powi(d - 2) * (1.0 + 1e-12)) {
        return Err(GgrError::Unmatched(format!("matched exterior coefficient {c} out of range")));
    }
    for n in &mut nodes {
        n[1] *= scale;
        n[2] *= scale;
    }
    let length = match channel {
        Channel::S => c,
        Channel::P => c.cbrt(),
    };
    Ok(RadialProfile {
        length,
        nodes,
        series: (series.0 * scale, series.1),
        interior_energy: [y[2] * scale * scale, y[3] * scale * scale],
        ..base
    })
}

/// Scattering data for both channels, rescaled and cut off at `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringSolution {
    pub s: RadialProfile,
    pub p: RadialProfile,
    pub a: f64,
    pub a_p: f64,
    pub b: f64,
    /// `false` for the toy setting with `f_p ≡ 1`.
    pub p_wave: bool,
}

/// Rescale both channel profiles by their value at `b` and set them to one beyond `b`.
pub fn build_cutoff(s: RadialProfile, p: RadialProfile, b: f64, torus: &Torus) -> Result<ScatteringSolution> {
    if s.channel != Channel::S || p.channel != Channel::P {
        return invalid("build_cutoff expects an s profile and a p profile");
    }
    let range = s.range.max(p.range);
    if !(b > range) {
        return invalid(format!("cutoff b = {b} must exceed the potential range {range}"));
    }
    if b > 0.5 * torus.l {
        return invalid(format!("cutoff b = {b} exceeds half the box side {}", 0.5 * torus.l));
    }
    Ok(ScatteringSolution { a: s.length, a_p: p.length, s, p, b, p_wave: true })
}

/// Solve both channels and cut off at `b`.
pub fn solve_with_cutoff(v: &Potential, b: f64, torus: &Torus) -> Result<ScatteringSolution> {
    if !(b > v.range()) {
        return invalid(format!("cutoff b = {b} must exceed the potential range {}", v.range()));
    }
    let s = solve_scattering(v, Channel::S, b)?;
    let p = solve_scattering(v, Channel::P, b)?;
    build_cutoff(s, p, b, torus)
}

impl ScatteringSolution {
    /// Replace the same-spin correlation by `f_p ≡ 1`.
    pub fn without_p_wave(mut self) -> Self {
        self.p_wave = false;
        self.a_p = 0.0;
        self
    }

    fn profile(&self, channel: Channel) -> &RadialProfile {
        match channel {
            Channel::S => &self.s,
            Channel::P => &self.p,
        }
    }

    /// `1 - c/b^{d-2}`, the value of the unscaled profile at the cutoff.
    pub fn cutoff_norm(&self, channel: Channel) -> f64 {
        if channel == Channel::P && !self.p_wave {
            return 1.0;
        }
        self.profile(channel).eval(self.b).0
    }

    pub fn range(&self) -> f64 {
        self.s.range
    }

    pub fn core(&self) -> f64 {
        self.s.core
    }

    /// Cut-off function and its radial derivative.
    pub fn f(&self, channel: Channel, r: f64) -> (f64, f64) {
        if r >= self.b || (channel == Channel::P && !self.p_wave) {
            return (1.0, 0.0);
        }
        let n = self.cutoff_norm(channel);
        let (f, df) = self.profile(channel).eval(r);
        (f / n, df / n)
    }

    pub fn f_s(&self, r: f64) -> f64 {
        self.f(Channel::S, r).0
    }

    pub fn f_p(&self, r: f64) -> f64 {
        self.f(Channel::P, r).0
    }

    pub fn g(&self, channel: Channel, r: f64) -> f64 {
        let f = self.f(channel, r).0;
        (f * f - 1.0).clamp(-1.0, 0.0)
    }

    pub fn g_s(&self, r: f64) -> f64 {
        self.g(Channel::S, r)
    }

    pub fn g_p(&self, r: f64) -> f64 {
        self.g(Channel::P, r)
    }

    /// Energy density `|∇f|² + v f²/2` of the cut-off function.
    pub fn energy_density(&self, channel: Channel, r: f64) -> f64 {
        let (f, df) = self.f(channel, r);
        df * df + 0.5 * self.s.potential.value(r) * f * f
    }

    /// Breakpoints for radial quadrature on `[0, b]`.
    pub fn radial_breaks(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        let core = self.core();
        if core > 0.0 {
            pts.push(core);
        }
        pts.extend(self.s.potential.kinks(core, self.range()));
        if self.range() > core {
            pts.push(self.range());
        }
        pts.push(self.b);
        pts.dedup();
        pts
    }

    /// `∫_{|x|≤b} h(|x|) dx` by composite Gauss–Legendre in the radius.
    pub fn radial_integral(&self, h: impl Fn(f64) -> f64) -> f64 {
        integrate_piecewise(|r| 4.0 * PI * r * r * h(r), &self.radial_breaks(), 24, 16)
    }

    /// `∫ g(|x|) e^{-iq·x} dx` for a momentum of length `q` (real by radial symmetry).
    pub fn fourier_g(&self, channel: Channel, q: f64) -> f64 {
        self.radial_integral(|r| {
            let qr = q * r;
            let sinc = if qr.abs() < 1e-8 { 1.0 - qr * qr / 6.0 } else { qr.sin() / qr };
            self.g(channel, r) * sinc
        })
    }
}

/// All-space integral `∫_{R³} (|∇F|² + v F²/2) w dx` of the rescaled profile
/// `F = f_{c0} / (1 - c/b^{d-2})` without cutoff. For the s channel with unit weight it
/// equals `4πa/(1-a/b)²`; for the s channel with weight `|x|²` it diverges.
pub fn energy_integral(sol: &ScatteringSolution, channel: Channel, weight: Weight) -> f64 {
    if channel == Channel::P && !sol.p_wave {
        return 0.0;
    }
    let n = sol.cutoff_norm(channel);
    sol.profile(channel).energy_to(weight, f64::INFINITY) / (n * n)
}

/// `∫_{|x|≤b} (|∇f|² + v f²/2) w dx` of the cut-off function itself, which is what the
/// trial state actually carries. For the s channel with unit weight it equals `4πa/(1-a/b)`.
pub fn cutoff_energy_integral(sol: &ScatteringSolution, channel: Channel, weight: Weight) -> f64 {
    if channel == Channel::P && !sol.p_wave {
        return 0.0;
    }
    let n = sol.cutoff_norm(channel);
    sol.profile(channel).energy_to(weight, sol.b) / (n * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GIntegrals {
    pub i_gs: f64,
    pub i_gp: f64,
    pub i_fs_grad: f64,
    pub i_fp_grad: f64,
}

pub fn g_integrals(sol: &ScatteringSolution) -> GIntegrals {
    let grad = |c: Channel| {
        sol.radial_integral(|r| {
            let (f, df) = sol.f(c, r);
            f * df.abs()
        })
    };
    GIntegrals {
        i_gs: sol.radial_integral(|r| sol.g_s(r).abs()),
        i_gp: sol.radial_integral(|r| sol.g_p(r).abs()),
        i_fs_grad: grad(Channel::S),
        i_fp_grad: grad(Channel::P),
    }
}

impl Weight {
    pub fn weight_at(self, r: f64) -> f64 {
        self.eval(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_well_length(v0: f64, r0: f64) -> f64 {
        let k = (v0 / 2.0).sqrt();
        r0 - (k * r0).tanh() / k
    }

    fn square_well_p_cube(v0: f64, r0: f64) -> f64 {
        // regular interior solution i_1(κr)/(κr); log-derivative κ i_2/i_1
        let k = (v0 / 2.0).sqrt();
        let x = k * r0;
        let i1 = (x * x.cosh() - x.sinh()) / (x * x);
        let i2 = ((x * x + 3.0) * x.sinh() - 3.0 * x * x.cosh()) / x.powi(3);
        let lam = k * i2 / i1;
        r0.powi(3) * (r0 * lam) / (3.0 + r0 * lam)
    }

    fn torus() -> Torus {
        Torus::new(100.0, 8).unwrap()
    }

    #[test]
    fn hard_core_lengths() {
        let v = Potential::HardCore { radius: 1.0 };
        let s = solve_scattering(&v, Channel::S, 5.0).unwrap();
        let p = solve_scattering(&v, Channel::P, 5.0).unwrap();
        assert!((s.length - 1.0).abs() < 1e-12);
        assert!((p.length - 1.0).abs() < 1e-12);
        assert!((s.value(2.0) - 0.5).abs() < 1e-14);
        assert_eq!(s.value(0.5), 0.0);
    }

    #[test]
    fn zero_potential() {
        let sol = solve_with_cutoff(&Potential::Zero, 3.0, &torus()).unwrap();
        assert_eq!(sol.a, 0.0);
        assert_eq!(sol.a_p, 0.0);
        for r in [0.0, 0.5, 2.0, 4.0] {
            assert_eq!(sol.f_s(r), 1.0);
            assert_eq!(sol.g_s(r), 0.0);
            assert_eq!(sol.g_p(r), 0.0);
        }
        assert_eq!(energy_integral(&sol, Channel::S, Weight::One), 0.0);
        let gi = g_integrals(&sol);
        assert_eq!((gi.i_gs, gi.i_gp, gi.i_fs_grad, gi.i_fp_grad), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn square_well_matches_closed_form() {
        for (v0, r0) in [(2.0, 1.0), (50.0, 1.0), (0.3, 2.0), (800.0, 0.5)] {
            let v = Potential::SquareWell { height: v0, radius: r0 };
            let s = solve_scattering(&v, Channel::S, 3.0).unwrap();
            let expect = square_well_length(v0, r0);
            assert!(((s.length - expect) / expect).abs() < 1e-9, "{v0} {r0}: {} vs {expect}", s.length);
            let p = solve_scattering(&v, Channel::P, 3.0).unwrap();
            let cube = square_well_p_cube(v0, r0);
            assert!(((p.length.powi(3) - cube) / cube).abs() < 1e-8, "{} vs {cube}", p.length.powi(3));
        }
    }

    #[test]
    fn sandwich_bounds_hold() {
        let pots = [
            Potential::HardCore { radius: 0.7 },
            Potential::SquareWell { height: 10.0, radius: 1.0 },
            Potential::Tabulated { r: vec![0.0, 0.5, 1.0, 1.5], v: vec![8.0, 4.0, 1.0, 0.0] },
        ];
        for v in &pots {
            for ch in [Channel::S, Channel::P] {
                let prof = solve_scattering(v, ch, 4.0).unwrap();
                let c = prof.exterior_coefficient();
                let pw = if ch == Channel::S { 1 } else { 3 };
                for (r, f) in prof.solver_grid() {
                    let lower = if r > 0.0 { (1.0 - c / r.powi(pw)).max(0.0) } else { 0.0 };
                    assert!(f >= lower - 1e-9 && f <= 1.0 + 1e-12, "{v:?} {ch:?} r={r} f={f} lower={lower}");
                    if r >= prof.range && r > 0.0 {
                        assert!((f - lower).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn energy_identity_hard_core() {
        let v = Potential::HardCore { radius: 1.0 };
        let sol = solve_with_cutoff(&v, 10.0, &Torus::new(40.0, 4).unwrap()).unwrap();
        let e = energy_integral(&sol, Channel::S, Weight::One);
        assert!((e - 4.0 * PI / 0.81).abs() < 1e-12);
        let cut = cutoff_energy_integral(&sol, Channel::S, Weight::One);
        assert!((cut - 4.0 * PI / 0.9).abs() < 1e-12);
        assert!(energy_integral(&sol, Channel::S, Weight::RadiusSquared).is_infinite());
    }

    #[test]
    fn energy_identity_soft_potentials() {
        let pots = [
            Potential::SquareWell { height: 3.0, radius: 1.0 },
            Potential::SquareWell { height: 300.0, radius: 0.8 },
            Potential::Tabulated { r: vec![0.0, 0.4, 0.9, 1.2], v: vec![20.0, 12.0, 3.0, 0.5] },
        ];
        for v in &pots {
            let sol = solve_with_cutoff(v, 6.0, &Torus::new(20.0, 4).unwrap()).unwrap();
            let e = energy_integral(&sol, Channel::S, Weight::One);
            let a = e * (1.0 - sol.a / sol.b).powi(2) / (4.0 * PI);
            assert!(((a - sol.a) / sol.a).abs() < 1e-7, "{v:?}: {a} vs {}", sol.a);
            let ep = sol.p.energy_to(Weight::RadiusSquared, f64::INFINITY);
            let ap3 = sol.a_p.powi(3);
            assert!(((ep / (12.0 * PI) - ap3) / ap3).abs() < 1e-7);
        }
    }

    #[test]
    fn cutoff_profiles() {
        let v = Potential::HardCore { radius: 1.0 };
        let b = 10.0;
        let sol = solve_with_cutoff(&v, b, &Torus::new(40.0, 4).unwrap()).unwrap();
        for r in [1.5, 3.0, 9.9] {
            assert!((sol.f_s(r) - (1.0 - 1.0 / r) / (1.0 - 1.0 / b)).abs() < 1e-14);
            assert!((sol.f_p(r) - (1.0 - 1.0 / r.powi(3)) / (1.0 - 1.0 / b.powi(3))).abs() < 1e-14);
        }
        assert_eq!(sol.f_s(10.0), 1.0);
        assert_eq!(sol.f_s(12.0), 1.0);
        assert!((sol.f_s(b - 1e-9) - 1.0).abs() < 1e-9);
        assert!(build_cutoff(sol.s.clone(), sol.p.clone(), 1.0, &torus()).is_err());
        assert!(build_cutoff(sol.s.clone(), sol.p.clone(), 60.0, &torus()).is_err());
    }

    #[test]
    fn g_integral_closed_form() {
        let (a, b) = (1.0f64, 10.0f64);
        let sol = solve_with_cutoff(&Potential::HardCore { radius: a }, b, &Torus::new(40.0, 4).unwrap()).unwrap();
        let dd = (1.0 - a / b).powi(2);
        let inner = (b.powi(3) - a.powi(3)) / 3.0
            - ((b.powi(3) - a.powi(3)) / 3.0 - a * (b * b - a * a) + a * a * (b - a)) / dd;
        let exact = 4.0 * PI * (a.powi(3) / 3.0 + inner);
        let gi = g_integrals(&sol);
        assert!(((gi.i_gs - exact) / exact).abs() < 1e-10, "{} vs {exact}", gi.i_gs);
        // ∫ f_s |∇f_s| = 4πa/(1-a/b)² [(b-a) - a ln(b/a)]
        let fs_grad = 4.0 * PI * a / dd * ((b - a) - a * (b / a).ln());
        assert!(((gi.i_fs_grad - fs_grad) / fs_grad).abs() < 1e-10);
    }

    #[test]
    fn g_scaling_with_single_constant() {
        let a = 1.0;
        let mut ratios = vec![];
        for b in [5.0, 10.0, 20.0] {
            let sol = solve_with_cutoff(&Potential::HardCore { radius: a }, b, &Torus::new(50.0, 4).unwrap()).unwrap();
            let gi = g_integrals(&sol);
            ratios.push(gi.i_gs / (a * b * b));
            assert!(gi.i_fs_grad / (a * b) < 4.0 * PI);
            assert!(gi.i_fp_grad / (a * a) < 12.0 * PI);
        }
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(ratios.iter().all(|r| *r <= c && *r > 0.2 * c), "{ratios:?}");
    }

    #[test]
    fn p_weighted_energy_scales_with_cube() {
        let mut cs = vec![];
        for r0 in [0.5, 1.0, 2.0] {
            let sol =
                solve_with_cutoff(&Potential::HardCore { radius: r0 }, 10.0 * r0, &Torus::new(60.0, 4).unwrap())
                    .unwrap();
            cs.push(energy_integral(&sol, Channel::P, Weight::RadiusSquared) / sol.a_p.powi(3));
        }
        for c in &cs {
            assert!((c - cs[0]).abs() < 1e-9 && *c < 12.0 * PI * 1.01);
        }
    }

    #[test]
    fn rejects_bad_potentials() {
        assert!(solve_scattering(&Potential::SquareWell { height: -1.0, radius: 1.0 }, Channel::S, 2.0).is_err());
        assert!(solve_scattering(&Potential::HardCore { radius: 1.0 }, Channel::S, 0.5).is_err());
        assert!(Potential::parse_table("0 1\n0.5 -2\n").is_err());
        assert!(Potential::parse_table("0 1\n0.5\n").is_err());
        let t = Potential::parse_table("# r v\n0 4\n0.5 2 # mid\n1.0 0\n").unwrap();
        assert!((t.value(0.25) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn fourier_transform_at_zero_is_integral() {
        let sol = solve_with_cutoff(&Potential::HardCore { radius: 1.0 }, 4.0, &Torus::new(10.0, 4).unwrap()).unwrap();
        let gi = g_integrals(&sol);
        assert!((sol.fourier_g(Channel::S, 0.0) + gi.i_gs).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn g_values_in_range(r0 in 0.2..2.0f64, h in 0.0..200.0f64, r in 0.0..8.0f64) {
            let t = Torus::new(20.0, 4).unwrap();
            for v in [Potential::HardCore { radius: r0 }, Potential::SquareWell { height: h, radius: r0 }] {
                let sol = solve_with_cutoff(&v, 4.0 * r0 + 0.5, &t).unwrap();
                for c in [Channel::S, Channel::P] {
                    let g = sol.g(c, r);
                    prop_assert!((-1.0..=0.0).contains(&g));
                    let f = sol.f(c, r).0;
                    prop_assert!(f <= 1.0 + 1e-9 && f >= 0.0);
                }
            }
        }
    }
}
