//! Rational-corner polyhedral Fermi surfaces and their lattice momentum sets.
//!
//! Corners have coordinates `p_i / Q_i` with distinct prime denominators. Scaling the
//! `i`-th coordinate by `Q1 Q2 Q3` turns every corner into an integer vector, so the
//! hull facets carry exact integer normals and offsets.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use num_rational::Ratio;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GgrError, Result};
use crate::numerics::{kahan_sum, KahanSum};
use crate::torus::{Momentum, Torus};

pub const DEFAULT_PRIMES: [i64; 3] = [1009, 1013, 1019];

fn is_prime(n: i64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn cross(a: [i128; 3], b: [i128; 3]) -> [i128; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [i128; 3], b: [i128; 3]) -> i128 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [i128; 3], b: [i128; 3]) -> [i128; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// A supporting plane `normal · x = offset` of the scaled integer hull, with `offset > 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub normal: [i128; 3],
    pub offset: i128,
    pub vertices: Vec<usize>,
}

/// Unit polyhedron: rational corners, exact facets, and the volume-fixing scale `zeta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPolyhedron {
    pub primes: [i64; 3],
    /// Corner numerators `(p1, p2, p3)`; the unscaled corner is `(p1/Q1, p2/Q2, p3/Q3)`.
    pub corners: Vec<[i64; 3]>,
    pub faces: Vec<Face>,
    /// Volume of the hull before scaling.
    pub hull_volume: f64,
    pub zeta: f64,
}

/// Well-spread directions in the open positive octant (Fibonacci lattice in `(z, φ)`).
pub fn octant_directions(count: usize) -> Vec<[f64; 3]> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    (0..count)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / count as f64;
            let phi = 0.5 * PI * ((i as f64 + 0.5) * golden).fract();
            let rho = (1.0 - z * z).sqrt();
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

impl UnitPolyhedron {
    /// Build from about `s` corners: `s/8` octant seeds rounded to the prime grid and
    /// closed under the eight coordinate reflections. `seeds` overrides the Fibonacci
    /// directions.
    pub fn build(s: usize, primes: [i64; 3], seeds: Option<&[[f64; 3]]>) -> Result<Self> {
        if s < 8 {
            return invalid(format!("corner count must be at least 8, got {s}"));
        }
        if primes.iter().any(|q| *q < 101 || !is_prime(*q))
            || primes[0] == primes[1]
            || primes[1] == primes[2]
            || primes[0] == primes[2]
        {
            return invalid(format!("denominators {primes:?} must be distinct primes ≥ 101"));
        }
        let dirs = match seeds {
            Some(d) => d.to_vec(),
            None => octant_directions(((s as f64 / 8.0).round() as usize).max(1)),
        };
        let mut set = BTreeSet::new();
        for d in &dirs {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !(n > 0.0) {
                return invalid("seed direction must be nonzero");
            }
            let p: Vec<i64> = (0..3).map(|i| ((d[i].abs() / n) * primes[i] as f64).round().max(1.0) as i64).collect();
            for sx in [1, -1] {
                for sy in [1, -1] {
                    for sz in [1, -1] {
                        set.insert([sx * p[0], sy * p[1], sz * p[2]]);
                    }
                }
            }
        }
        let points: Vec<[i64; 3]> = set.into_iter().collect();
        Self::from_corner_candidates(points, primes)
    }

    fn scaled(primes: [i64; 3], p: &[i64; 3]) -> [i128; 3] {
        let q = primes.map(|x| x as i128);
        [p[0] as i128 * q[1] * q[2], p[1] as i128 * q[0] * q[2], p[2] as i128 * q[0] * q[1]]
    }

    fn q_product(&self) -> i128 {
        self.primes.iter().map(|q| *q as i128).product()
    }

    fn from_corner_candidates(points: Vec<[i64; 3]>, primes: [i64; 3]) -> Result<Self> {
        let scaled: Vec<[i128; 3]> = points.iter().map(|p| Self::scaled(primes, p)).collect();
        let n = scaled.len();
        let mut planes: BTreeSet<([i128; 3], i128)> = BTreeSet::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let e1 = sub(scaled[j], scaled[i]);
                for k in (j + 1)..n {
                    let mut w = cross(e1, sub(scaled[k], scaled[i]));
                    if w == [0, 0, 0] {
                        continue;
                    }
                    let g = gcd(gcd(w[0], w[1]), w[2]);
                    w = w.map(|c| c / g);
                    let h = dot(w, scaled[i]);
                    let (mut above, mut below) = (false, false);
                    for p in &scaled {
                        let t = dot(w, *p) - h;
                        above |= t > 0;
                        below |= t < 0;
                        if above && below {
                            break;
                        }
                    }
                    if above && below {
                        continue;
                    }
                    let (w, h) = if above { (w.map(|c| -c), -h) } else { (w, h) };
                    planes.insert((w, h));
                }
            }
        }
        if planes.len() < 4 || planes.iter().any(|(_, h)| *h <= 0) {
            return Err(GgrError::Degenerate("corners do not span a solid containing the origin".into()));
        }
        let mut used = vec![false; n];
        let mut faces: Vec<Face> = planes
            .into_iter()
            .map(|(normal, offset)| {
                let vertices: Vec<usize> = (0..n).filter(|&l| dot(normal, scaled[l]) == offset).collect();
                for &v in &vertices {
                    used[v] = true;
                }
                Face { normal, offset, vertices }
            })
            .collect();
        // keep only hull vertices and renumber
        let remap: Vec<Option<usize>> = {
            let mut next = 0;
            used.iter()
                .map(|&u| {
                    if u {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let corners: Vec<[i64; 3]> = points.iter().zip(&used).filter(|(_, u)| **u).map(|(p, _)| *p).collect();
        for f in &mut faces {
            f.vertices = f.vertices.iter().map(|v| remap[*v].unwrap()).collect();
        }
        let mut poly = UnitPolyhedron { primes, corners, faces, hull_volume: 0.0, zeta: 1.0 };
        poly.hull_volume = poly.unscaled_volume();
        if !(poly.hull_volume > 0.0) {
            return Err(GgrError::Degenerate("hull has zero volume".into()));
        }
        poly.zeta = (4.0 * PI / 3.0 / poly.hull_volume).cbrt();
        Ok(poly)
    }

    /// Unscaled corner as a real vector.
    pub fn corner_vector(&self, j: usize) -> [f64; 3] {
        let p = self.corners[j];
        [0, 1, 2].map(|i| p[i] as f64 / self.primes[i] as f64)
    }

    pub fn corner_count(&self) -> usize {
        self.corners.len()
    }

    fn unscaled_volume(&self) -> f64 {
        let mut vol = KahanSum::new();
        for f in &self.faces {
            let pts: Vec<[f64; 3]> = f.vertices.iter().map(|&v| self.corner_vector(v)).collect();
            let nrm = f.normal.map(|c| c as f64);
            let c = [0, 1, 2].map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / pts.len() as f64);
            // in-plane basis
            let u0 = [pts[0][0] - c[0], pts[0][1] - c[1], pts[0][2] - c[2]];
            let un = (u0[0] * u0[0] + u0[1] * u0[1] + u0[2] * u0[2]).sqrt();
            let u = u0.map(|x| x / un);
            let vv = [
                nrm[1] * u[2] - nrm[2] * u[1],
                nrm[2] * u[0] - nrm[0] * u[2],
                nrm[0] * u[1] - nrm[1] * u[0],
            ];
            let mut order: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                    let x = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
                    let y = d[0] * vv[0] + d[1] * vv[1] + d[2] * vv[2];
                    (y.atan2(x), i)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let p0 = pts[order[0].1];
            for w in order[1..].windows(2) {
                let (a, b) = (pts[w[0].1], pts[w[1].1]);
                let det = p0[0] * (a[1] * b[2] - a[2] * b[1]) - p0[1] * (a[0] * b[2] - a[2] * b[0])
                    + p0[2] * (a[0] * b[1] - a[1] * b[0]);
                vol.add(det.abs() / 6.0);
            }
        }
        vol.value()
    }

    /// Volume after scaling by `zeta`.
    pub fn volume(&self) -> f64 {
        self.hull_volume * self.zeta.powi(3)
    }

    /// Radial coordinates `ζ|κ_j|` of the scaled corners.
    pub fn corner_radii(&self) -> Vec<f64> {
        (0..self.corners.len())
            .map(|j| {
                let c = self.corner_vector(j);
                self.zeta * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            })
            .collect()
    }

    /// Largest ratio `(w·x) / (ζ h)` over the faces for a real point of the unit body;
    /// the point is inside iff it is at most one.
    pub fn gauge(&self, x: &[f64; 3]) -> f64 {
        let qp = self.q_product() as f64;
        self.faces
            .iter()
            .map(|f| {
                let w = f.normal.map(|c| c as f64);
                (w[0] * x[0] + w[1] * x[1] + w[2] * x[2]) * qp / (self.zeta * f.offset as f64)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership of the lattice index `n` in `radius · zeta · hull`, with `radius`
    /// rational. The face products are exact integers; only the comparison with the
    /// irrational scale is done in floating point. Returns the membership and the
    /// smallest relative distance to a face.
    pub fn lattice_contains(&self, n: [i64; 3], radius: Ratio<i64>, zeta: f64) -> (bool, f64) {
        let qp = self.q_product();
        let nn = n.map(|c| c as i128);
        let mut inside = true;
        let mut margin = f64::INFINITY;
        for f in &self.faces {
            let lhs = dot(f.normal, nn) * qp * *radius.denom() as i128;
            if lhs <= 0 {
                continue;
            }
            let rhs_unit = f.offset * *radius.numer() as i128;
            let t = lhs as f64 / rhs_unit as f64;
            margin = margin.min((t / zeta - 1.0).abs());
            if t > zeta {
                inside = false;
            }
        }
        (inside, margin)
    }

    /// Per-axis bound on lattice indices inside `radius · zeta · hull`.
    fn index_bound(&self, radius: Ratio<i64>, zeta: f64) -> i64 {
        let r = *radius.numer() as f64 / *radius.denom() as f64;
        let m = (0..self.corners.len())
            .flat_map(|j| self.corner_vector(j))
            .map(f64::abs)
            .fold(0.0, f64::max);
        (r * zeta * m).ceil() as i64 + 1
    }

    /// Lattice indices inside the scaled body by per-column intervals.
    pub fn lattice_indices(&self, radius: Ratio<i64>, zeta: f64) -> (Vec<[i64; 3]>, f64) {
        let bound = self.index_bound(radius, zeta);
        let r = *radius.numer() as f64 / *radius.denom() as f64;
        let qp = self.q_product() as f64;
        let mut out = vec![];
        let mut margin = f64::INFINITY;
        for a in -bound..=bound {
            for b in -bound..=bound {
                let (mut lo, mut hi) = (-(bound as f64), bound as f64);
                let mut empty = false;
                for f in &self.faces {
                    let w = f.normal.map(|c| c as f64);
                    let rest = r * zeta * f.offset as f64 / qp - w[0] * a as f64 - w[1] * b as f64;
                    if w[2] > 0.0 {
                        hi = hi.min(rest / w[2]);
                    } else if w[2] < 0.0 {
                        lo = lo.max(rest / w[2]);
                    } else if rest < 0.0 {
                        empty = true;
                    }
                }
                let inside = |c: i64| self.lattice_contains([a, b, c], radius, zeta);
                let (mut lo, mut hi) = if empty || lo > hi + 1.0 {
                    (1, 0)
                } else {
                    (lo.ceil() as i64, hi.floor() as i64)
                };
                // settle the floating endpoints with the exact test
                while lo <= hi && !inside(lo).0 {
                    lo += 1;
                }
                while hi >= lo && !inside(hi).0 {
                    hi -= 1;
                }
                if lo <= hi {
                    while inside(lo - 1).0 {
                        lo -= 1;
                    }
                    while inside(hi + 1).0 {
                        hi += 1;
                    }
                    for c in lo..=hi {
                        margin = margin.min(inside(c).1);
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out.sort();
        (out, margin)
    }

    /// Exhaustive scan of the bounding box; reference for [`Self::lattice_indices`].
    pub fn lattice_indices_scan(&self, radius: Ratio<i64>, zeta: f64) -> Vec<[i64; 3]> {
        let bound = self.index_bound(radius, zeta) + 1;
        let mut out = vec![];
        for a in -bound..=bound {
            for b in -bound..=bound {
                for c in -bound..=bound {
                    if self.lattice_contains([a, b, c], radius, zeta).0 {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out
    }
}

/// Occupied lattice momenta of one spin species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumSet {
    pub l: f64,
    pub points: Vec<Momentum>,
    bound: i64,
    occupancy: Vec<bool>,
}

impl MomentumSet {
    pub fn new(l: f64, mut points: Vec<Momentum>) -> Result<Self> {
        if !(l > 0.0) {
            return invalid("box side must be positive");
        }
        points.sort();
        points.dedup();
        let bound = points.iter().map(|k| k.max_abs_index()).max().unwrap_or(0);
        let side = (2 * bound + 1) as usize;
        let mut occupancy = vec![false; side * side * side];
        for k in &points {
            let idx = Self::slot(bound, k);
            occupancy[idx] = true;
        }
        Ok(MomentumSet { l, points, bound, occupancy })
    }

    fn slot(bound: i64, k: &Momentum) -> usize {
        let side = 2 * bound + 1;
        (((k.0[0] + bound) * side + k.0[1] + bound) * side + k.0[2] + bound) as usize
    }

    pub fn contains(&self, k: &Momentum) -> bool {
        if k.max_abs_index() > self.bound {
            return false;
        }
        self.occupancy[Self::slot(self.bound, k)]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_abs_index(&self) -> i64 {
        self.bound
    }

    pub fn density(&self) -> f64 {
        self.points.len() as f64 / self.l.powi(3)
    }

    /// `Σ |k|²` with compensated summation.
    pub fn kinetic_energy(&self) -> f64 {
        let s = 2.0 * PI / self.l;
        s * s * kahan_sum(self.points.iter().map(|k| k.norm_sq_index() as f64))
    }

    pub fn is_sign_symmetric(&self) -> bool {
        self.points.iter().all(|k| {
            [[1, 1, -1], [1, -1, 1], [-1, 1, 1]]
                .iter()
                .all(|s| self.contains(&Momentum([s[0] * k.0[0], s[1] * k.0[1], s[2] * k.0[2]])))
        })
    }

    pub fn is_inversion_symmetric(&self) -> bool {
        self.points.iter().all(|k| self.contains(&k.neg()))
    }

    /// Fraction of points whose image under some coordinate permutation is missing.
    pub fn permutation_asymmetry(&self) -> f64 {
        let perms = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let bad = self
            .points
            .iter()
            .filter(|k| perms.iter().any(|p| !self.contains(&Momentum([k.0[p[0]], k.0[p[1]], k.0[p[2]]]))))
            .count();
        bad as f64 / self.points.len() as f64
    }
}

/// Monomials in the Dirichlet-kernel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monomial {
    One,
    Linear(usize),
    Quadratic(usize, usize),
}

impl Monomial {
    pub fn degree(self) -> i32 {
        match self {
            Monomial::One => 0,
            Monomial::Linear(_) => 1,
            Monomial::Quadratic(..) => 2,
        }
    }

    fn eval(self, k: [f64; 3]) -> f64 {
        match self {
            Monomial::One => 1.0,
            Monomial::Linear(j) => k[j],
            Monomial::Quadratic(i, j) => k[i] * k[j],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletReport {
    pub l1: f64,
    /// `s ρ^{deg/3} (log N)^{3 or 4}`.
    pub comparison: f64,
}

/// The Fermi polyhedron `k_F P ∩ (2π/L) Z³` together with its construction data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiPolyhedron {
    pub unit: UnitPolyhedron,
    /// `k_F L / 2π`.
    pub kf_ratio: Ratio<i64>,
    pub momenta: MomentumSet,
    /// Smallest relative distance of an occupied lattice point to a face.
    pub boundary_margin: f64,
}

pub fn lattice_points(unit: &UnitPolyhedron, kf_ratio: Ratio<i64>, l: f64) -> Result<FermiPolyhedron> {
    if *kf_ratio.numer() <= 0 || *kf_ratio.denom() <= 0 {
        return invalid(format!("k_F L/2π must be a positive rational, got {kf_ratio}"));
    }
    let (idx, margin) = unit.lattice_indices(kf_ratio, unit.zeta);
    if idx.is_empty() {
        return invalid("no lattice momentum inside the Fermi polyhedron");
    }
    let momenta = MomentumSet::new(l, idx.into_iter().map(Momentum).collect())?;
    Ok(FermiPolyhedron { unit: unit.clone(), kf_ratio, momenta, boundary_margin: margin })
}

impl FermiPolyhedron {
    pub fn build(s: usize, primes: [i64; 3], kf_ratio: Ratio<i64>, l: f64) -> Result<Self> {
        let unit = UnitPolyhedron::build(s, primes, None)?;
        lattice_points(&unit, kf_ratio, l)
    }

    pub fn n(&self) -> usize {
        self.momenta.len()
    }

    pub fn s(&self) -> usize {
        self.unit.corner_count()
    }

    pub fn l(&self) -> f64 {
        self.momenta.l
    }

    pub fn k_f(&self) -> f64 {
        *self.kf_ratio.numer() as f64 / *self.kf_ratio.denom() as f64 * 2.0 * PI / self.l()
    }

    pub fn density(&self) -> f64 {
        self.momenta.density()
    }

    /// `ρ / (k_F³ / 6π²)`.
    pub fn density_ratio(&self) -> f64 {
        self.density() / (self.k_f().powi(3) / (6.0 * PI * PI))
    }

    /// Continuum kinetic energy `(3/5)(6π²)^{2/3} ρ^{5/3} L³` at the realized density.
    pub fn kinetic_reference(&self) -> f64 {
        0.6 * (6.0 * PI * PI).powf(2.0 / 3.0) * self.density().powf(5.0 / 3.0) * self.l().powi(3)
    }

    /// Text serialization: header, corner numerators, lattice indices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let q = self.unit.primes;
        writeln!(out, "# ggr-polyhedron v1").unwrap();
        writeln!(out, "s {}", self.s()).unwrap();
        writeln!(out, "zeta {:.17e}", self.unit.zeta).unwrap();
        writeln!(out, "primes {} {} {}", q[0], q[1], q[2]).unwrap();
        writeln!(out, "kF_ratio {}", self.kf_ratio).unwrap();
        writeln!(out, "kF {:.17e}", self.k_f()).unwrap();
        writeln!(out, "L {:.17e}", self.l()).unwrap();
        writeln!(out, "corners {}", self.unit.corners.len()).unwrap();
        for c in &self.unit.corners {
            writeln!(out, "{} {} {}", c[0], c[1], c[2]).unwrap();
        }
        writeln!(out, "points {}", self.n()).unwrap();
        for k in &self.momenta.points {
            writeln!(out, "{} {} {}", k.0[0], k.0[1], k.0[2]).unwrap();
        }
        out
    }

    /// Parse [`Self::to_text`] output; the hull is rebuilt from the stored corners.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: &str| GgrError::Parse { line: line + 1, msg: msg.to_string() };
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (i, l) = lines.next().ok_or_else(|| perr(0, "unexpected end of input"))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(perr(i, &format!("expected `{key}`")));
            }
            Ok((i, it.map(String::from).collect()))
        };
        let num = |i: usize, s: &str| s.parse::<f64>().map_err(|_| perr(i, "bad number"));
        let int = |i: usize, s: &str| s.parse::<i64>().map_err(|_| perr(i, "bad integer"));
        let _ = field("s")?;
        let (iz, zeta) = field("zeta")?;
        let zeta = num(iz, &zeta[0])?;
        let (ip, q) = field("primes")?;
        let primes = [int(ip, &q[0])?, int(ip, &q[1])?, int(ip, &q[2])?];
        let (ik, kr) = field("kF_ratio")?;
        let kf_ratio: Ratio<i64> = kr[0].parse().map_err(|_| perr(ik, "bad rational"))?;
        let _ = field("kF")?;
        let (il, lv) = field("L")?;
        let l = num(il, &lv[0])?;
        let (ic, nc) = field("corners")?;
        let nc = int(ic, &nc[0])? as usize;
        let triple = |lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<[i64; 3]> {
            let (i, l) = lines.next().ok_or_else(|| perr(0, "unexpected end of input"))?;
            let v: Vec<&str> = l.split_whitespace().collect();
            if v.len() != 3 {
                return Err(perr(i, "expected three integers"));
            }
            Ok([int(i, v[0])?, int(i, v[1])?, int(i, v[2])?])
        };
        let mut rest: Vec<(usize, &str)> = vec![];
        for x in lines.by_ref() {
            rest.push(x);
        }
        let mut it = rest.into_iter();
        let corners = (0..nc).map(|_| triple(&mut it)).collect::<Result<Vec<_>>>()?;
        let (ipt, head) = it.next().ok_or_else(|| perr(0, "missing points header"))?;
        let np: usize = head
            .strip_prefix("points")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| perr(ipt, "expected `points N`"))?;
        let pts = (0..np).map(|_| triple(&mut it).map(Momentum)).collect::<Result<Vec<_>>>()?;
        let mut unit = UnitPolyhedron::from_corner_candidates(corners, primes)?;
        unit.zeta = zeta;
        let momenta = MomentumSet::new(l, pts)?;
        Ok(FermiPolyhedron { unit, kf_ratio, momenta, boundary_margin: f64::NAN })
    }
}

/// `∫ |Σ_{k∈P_F} m(k) e^{ik·x}| dx` on the grid, with the kernel evaluated by FFT.
pub fn dirichlet_l1(set: &MomentumSet, monomial: Monomial, torus: &Torus, s: usize) -> Result<DirichletReport> {
    let m = torus.m;
    let need = 4 * set.max_abs_index().max(1) as usize;
    if m < need {
        return Err(GgrError::InvalidParameter(format!(
            "grid M = {m} does not resolve the kernel; need M ≥ {need}"
        )));
    }
    let values = dirichlet_kernel_fft(set, monomial, torus);
    let l1 = torus.cell_volume() * kahan_sum(values.iter().map(|z| z.norm()));
    let n = set.len() as f64;
    let logn = n.ln();
    let pow = if monomial.degree() == 2 { 4 } else { 3 };
    let comparison = s as f64 * set.density().powf(monomial.degree() as f64 / 3.0) * logn.powi(pow);
    Ok(DirichletReport { l1, comparison })
}

/// Grid values of `Σ_k m(k) e^{ik·x}` via a three-dimensional inverse DFT.
pub fn dirichlet_kernel_fft(set: &MomentumSet, monomial: Monomial, torus: &Torus) -> Vec<Complex64> {
    let m = torus.m;
    let mut data = vec![Complex64::new(0.0, 0.0); m * m * m];
    for k in &set.points {
        let w = |c: i64| c.rem_euclid(m as i64) as usize;
        let idx = (w(k.0[0]) * m + w(k.0[1])) * m + w(k.0[2]);
        data[idx] += monomial.eval(k.vector(set.l));
    }
    fft3_inverse(&mut data, m);
    data
}

/// In-place unnormalized inverse DFT along all three axes of an `m³` array.
pub fn fft3_inverse(data: &mut [Complex64], m: usize) {
    fft3(data, m, true)
}

/// In-place unnormalized forward DFT (`e^{-2πi n·j/m}`) along all three axes.
pub fn fft3_forward(data: &mut [Complex64], m: usize) {
    fft3(data, m, false)
}

fn fft3(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    // last axis is contiguous
    fft.process(data);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for stride in [m, m * m] {
        for base in 0..m * m * m {
            // base enumerates lines whose index along this axis is zero
            if (base / stride) % m != 0 {
                continue;
            }
            for (t, b) in buf.iter_mut().enumerate() {
                *b = data[base + t * stride];
            }
            fft.process(&mut buf);
            for (t, b) in buf.iter().enumerate() {
                data[base + t * stride] = *b;
            }
        }
    }
}
