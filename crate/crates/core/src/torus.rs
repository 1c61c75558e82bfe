//! Periodic box geometry, the dual momentum lattice and uniform-grid quadrature.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GgrError, Result};
use crate::numerics::{ComplexKahan, KahanSum};

pub type Point = [f64; 3];

/// A lattice momentum `2π n / L`, stored by its integer index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Momentum(pub [i64; 3]);

impl Momentum {
    pub const ZERO: Momentum = Momentum([0, 0, 0]);

    /// Recover the lattice index of a real momentum, rejecting off-lattice input.
    pub fn from_vector(k: [f64; 3], l: f64) -> Result<Self> {
        let mut n = [0i64; 3];
        for i in 0..3 {
            let t = k[i] * l / (2.0 * PI);
            let r = t.round();
            if (t - r).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(GgrError::InvalidParameter(format!(
                    "momentum component {} is not on the lattice 2π/L·Z",
                    k[i]
                )));
            }
            n[i] = r as i64;
        }
        Ok(Momentum(n))
    }

    pub fn vector(&self, l: f64) -> [f64; 3] {
        let s = 2.0 * PI / l;
        [self.0[0] as f64 * s, self.0[1] as f64 * s, self.0[2] as f64 * s]
    }

    pub fn norm_sq_index(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn max_abs_index(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn neg(&self) -> Momentum {
        Momentum([-self.0[0], -self.0[1], -self.0[2]])
    }

    pub fn add(&self, o: &Momentum) -> Momentum {
        Momentum([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }

    pub fn sub(&self, o: &Momentum) -> Momentum {
        Momentum([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }

    /// Phase `k·x` for this momentum at a real point.
    pub fn phase(&self, x: &Point, l: f64) -> f64 {
        let k = self.vector(l);
        k[0] * x[0] + k[1] * x[1] + k[2] * x[2]
    }
}

/// Cubic torus of side `l` carrying a uniform `m × m × m` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub l: f64,
    pub m: usize,
}

impl Torus {
    pub fn new(l: f64, m: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return invalid(format!("box side must be positive, got {l}"));
        }
        if m < 2 {
            return invalid(format!("grid needs at least 2 points per axis, got {m}"));
        }
        Ok(Torus { l, m })
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(3)
    }

    pub fn spacing(&self) -> f64 {
        self.l / self.m as f64
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn grid_len(&self) -> usize {
        self.m * self.m * self.m
    }

    pub fn with_grid(&self, m: usize) -> Result<Self> {
        Torus::new(self.l, m)
    }

    /// Minimum-image displacement `x - y` over the 27 nearest images.
    pub fn displacement(&self, x: &Point, y: &Point) -> [f64; 3] {
        let l = self.l;
        let mut z = [0.0; 3];
        for i in 0..3 {
            let d = (x[i] - y[i]).rem_euclid(l);
            z[i] = if d > 0.5 * l { d - l } else { d };
        }
        let mut best = z;
        let mut best_n = f64::INFINITY;
        for a in -1..=1 {
            for b in -1..=1 {
                for c in -1..=1 {
                    let w = [z[0] + a as f64 * l, z[1] + b as f64 * l, z[2] + c as f64 * l];
                    let n = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
                    if n < best_n {
                        best_n = n;
                        best = w;
                    }
                }
            }
        }
        best
    }

    pub fn periodic_distance(&self, x: &Point, y: &Point) -> f64 {
        let d = self.displacement(x, y);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn grid_coords(&self, idx: usize) -> [usize; 3] {
        let m = self.m;
        [idx / (m * m), (idx / m) % m, idx % m]
    }

    pub fn grid_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.m + c[1]) * self.m + c[2]
    }

    pub fn grid_point(&self, idx: usize) -> Point {
        let c = self.grid_coords(idx);
        let h = self.spacing();
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Grid index of the displacement `a - b` (periodic).
    #[inline]
    pub fn grid_difference(&self, a: usize, b: usize) -> usize {
        let m = self.m;
        let (ca, cb) = (self.grid_coords(a), self.grid_coords(b));
        let d = |i: usize| (ca[i] + m - cb[i]) % m;
        (d(0) * m + d(1)) * m + d(2)
    }

    /// Grid index of `a + b` (periodic).
    #[inline]
    pub fn grid_sum(&self, a: usize, b: usize) -> usize {
        let m = self.m;
        let (ca, cb) = (self.grid_coords(a), self.grid_coords(b));
        let s = |i: usize| (ca[i] + cb[i]) % m;
        (s(0) * m + s(1)) * m + s(2)
    }

    /// Nearest grid point to a real point.
    pub fn snap(&self, x: &Point) -> usize {
        let h = self.spacing();
        let m = self.m as i64;
        let c = |v: f64| ((v / h).round() as i64).rem_euclid(m) as usize;
        self.grid_index([c(x[0]), c(x[1]), c(x[2])])
    }

    /// Minimum-image length of a grid displacement index.
    pub fn grid_length(&self, idx: usize) -> f64 {
        self.periodic_distance(&self.grid_point(idx), &[0.0; 3])
    }

    /// Plane wave `L^{-3/2} e^{ik·x}`.
    pub fn plane_wave(&self, k: &Momentum, x: &Point) -> Complex64 {
        Complex64::from_polar(self.l.powf(-1.5), k.phase(x, self.l))
    }
}

/// `L^{-3/2} e^{ik·x}` for a real momentum vector; rejects off-lattice `k`.
pub fn plane_wave(k: [f64; 3], x: &Point, l: f64) -> Result<Complex64> {
    let n = Momentum::from_vector(k, l)?;
    Ok(Complex64::from_polar(l.powf(-1.5), n.phase(x, l)))
}

/// Values on every grid point of a torus.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    pub torus: Torus,
    pub values: Vec<T>,
}

impl<T: Copy> GridFunction<T> {
    pub fn from_fn(torus: Torus, f: impl Fn(Point) -> T) -> Self {
        let values = (0..torus.grid_len()).map(|i| f(torus.grid_point(i))).collect();
        GridFunction { torus, values }
    }

    pub fn get(&self, idx: usize) -> T {
        self.values[idx]
    }
}

impl GridFunction<f64> {
    pub fn quadrature(&self) -> f64 {
        self.torus.cell_volume() * self.values.iter().copied().collect::<KahanSum>().value()
    }
}

impl GridFunction<Complex64> {
    pub fn quadrature(&self) -> Complex64 {
        self.torus.cell_volume() * self.values.iter().copied().collect::<ComplexKahan>().value()
    }
}
