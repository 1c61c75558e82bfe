//! Brute-force ground truth for tiny systems: Slater determinants and direct grid sums of
//! `|ψ|²` over every particle coordinate.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, GgrError, Result};
use crate::evaluation::det_small;
use crate::numerics::{falling_factorial, kahan_sum, KahanSum};
use crate::polyhedron::MomentumSet;
use crate::scattering::ScatteringSolution;
use crate::torus::{Point, Torus};

/// Hard cap on the total quadrature dimension `3(N↑ + N↓)`.
pub const MAX_DIMENSION: usize = 12;

/// `det[u_k(z_i)]` with `u_k(z) = L^{-3/2} e^{ik·z}`, momenta in sorted order.
pub fn slater(set: &MomentumSet, coords: &[Point]) -> Result<Complex64> {
    let n = set.len();
    if coords.len() != n {
        return invalid(format!("{} coordinates for {} momenta", coords.len(), n));
    }
    let l = set.l;
    let norm = l.powf(-1.5);
    let m = DMatrix::from_fn(n, n, |i, j| Complex64::from_polar(norm, set.points[j].phase(&coords[i], l)));
    Ok(m.determinant())
}

type Radial = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tabulated trial state on a grid.
pub struct Oracle {
    pub torus: Torus,
    pub up: MomentumSet,
    pub dn: MomentumSet,
    /// `f²` at grid displacements; index 0 opposite spins, 1 equal spins
    f2: [Vec<f64>; 2],
    /// plane waves per spin, `[grid point][momentum]`
    waves: [Vec<Complex64>; 2],
}

impl Oracle {
    pub fn new(
        torus: Torus,
        up: MomentumSet,
        dn: MomentumSet,
        f_s: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_p: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let dim = 3 * (up.len() + dn.len());
        if dim > MAX_DIMENSION {
            return Err(GgrError::CapExceeded { what: "oracle quadrature dimension", cap: MAX_DIMENSION, requested: dim });
        }
        let fs: [Radial; 2] = [Arc::new(f_s), Arc::new(f_p)];
        let lengths: Vec<f64> = (0..torus.grid_len()).map(|i| torus.grid_length(i)).collect();
        let f2 = [0, 1].map(|c| lengths.iter().map(|&r| fs[c](r).powi(2)).collect());
        let wave = |set: &MomentumSet| -> Vec<Complex64> {
            (0..torus.grid_len())
                .flat_map(|i| {
                    let x = torus.grid_point(i);
                    set.points.iter().map(move |k| torus.plane_wave(k, &x)).collect::<Vec<_>>()
                })
                .collect()
        };
        let waves = [wave(&up), wave(&dn)];
        Ok(Oracle { torus, up, dn, f2, waves })
    }

    pub fn from_solution(torus: Torus, up: MomentumSet, dn: MomentumSet, sol: &ScatteringSolution) -> Result<Self> {
        let (s, p) = (sol.clone(), sol.clone());
        Oracle::new(torus, up, dn, move |r| s.f_s(r), move |r| p.f_p(r))
    }

    /// `f ≡ 1`.
    pub fn free(torus: Torus, up: MomentumSet, dn: MomentumSet) -> Result<Self> {
        Oracle::new(torus, up, dn, |_| 1.0, |_| 1.0)
    }

    fn n(&self) -> (usize, usize) {
        (self.up.len(), self.dn.len())
    }

    fn slater_sq(&self, spin: usize, pos: &[usize]) -> f64 {
        let n = pos.len();
        let w = &self.waves[spin];
        let cols = n;
        let mut mat = [Complex64::new(0.0, 0.0); 16];
        for (i, &x) in pos.iter().enumerate() {
            for j in 0..cols {
                mat[i * n + j] = w[x * cols + j];
            }
        }
        det_small(&mut mat[..n * n], n).norm_sqr()
    }

    /// `Π f² |D↑|² |D↓|²` at grid positions (up particles first).
    fn density(&self, pos: &[usize]) -> f64 {
        let (nu, _) = self.n();
        let t = &self.torus;
        let mut prod = 1.0;
        for a in 0..pos.len() {
            for b in (a + 1)..pos.len() {
                let same = (a < nu) == (b < nu);
                prod *= self.f2[same as usize][t.grid_difference(pos[a], pos[b])];
                if prod == 0.0 {
                    return 0.0;
                }
            }
        }
        prod * self.slater_sq(0, &pos[..nu]) * self.slater_sq(1, &pos[nu..])
    }

    /// Sum of `density` over the free particles, the rest fixed by `fixed` (slot, grid index).
    fn marginal(&self, fixed: &[(usize, usize)], pin_first: bool, budget: f64) -> Result<f64> {
        let (nu, nd) = self.n();
        let total = nu + nd;
        let grid = self.torus.grid_len();
        let mut base = vec![0usize; total];
        let mut is_fixed = vec![false; total];
        for &(slot, x) in fixed {
            base[slot] = x;
            is_fixed[slot] = true;
        }
        if pin_first && total > 0 {
            is_fixed[0] = true;
            base[0] = 0;
        }
        let free: Vec<usize> = (0..total).filter(|&s| !is_fixed[s]).collect();
        let cost = (grid as f64).powi(free.len() as i32);
        if cost > budget {
            return Err(GgrError::Budget(format!("oracle needs {cost:.3e} grid points (budget {budget:.1e})")));
        }
        if free.is_empty() {
            return Ok(self.density(&base));
        }
        let parts: Vec<f64> = (0..grid)
            .into_par_iter()
            .map(|x| {
                let mut pos = base.clone();
                pos[free[0]] = x;
                let rest = &free[1..];
                let mut acc = KahanSum::new();
                let mut odo = vec![0usize; rest.len()];
                loop {
                    for (v, &s) in odo.iter().zip(rest) {
                        pos[s] = *v;
                    }
                    acc.add(self.density(&pos));
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
        Ok(kahan_sum(parts))
    }

    /// `∫ Π f² |D↑|²|D↓|²` with the first particle pinned (exact on the grid by translation
    /// invariance).
    pub fn brute_normalization(&self, budget: f64) -> Result<f64> {
        let (nu, nd) = self.n();
        let total = nu + nd;
        if total == 0 {
            return Ok(1.0);
        }
        let sum = self.marginal(&[], true, budget)?;
        Ok(sum * self.torus.volume() * self.torus.cell_volume().powi(total as i32 - 1))
    }

    /// `N↑!/(N↑-n)! N↓!/(N↓-m)! ∫|ψ|²` over the unfixed coordinates; externals are grid
    /// indices, `n` up positions then `m` down positions.
    pub fn brute_reduced_density(&self, n: usize, m: usize, externals: &[usize], normalization: f64, budget: f64) -> Result<f64> {
        let (nu, nd) = self.n();
        if n > nu || m > nd {
            return invalid(format!("({n},{m}) exceeds the particle numbers ({nu},{nd})"));
        }
        if externals.len() != n + m || externals.iter().any(|&x| x >= self.torus.grid_len()) {
            return invalid("one grid index per external coordinate required");
        }
        let mut fixed: Vec<(usize, usize)> = (0..n).map(|i| (i, externals[i])).collect();
        fixed.extend((0..m).map(|j| (nu + j, externals[n + j])));
        let free = nu + nd - n - m;
        let sum = self.marginal(&fixed, false, budget)?;
        let weight = self.torus.cell_volume().powi(free as i32);
        Ok(falling_factorial(nu, n) * falling_factorial(nd, m) * sum * weight / normalization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::Momentum;

    fn set(l: f64, pts: &[[i64; 3]]) -> MomentumSet {
        MomentumSet::new(l, pts.iter().map(|&p| Momentum(p)).collect()).unwrap()
    }

    #[test]
    fn single_mode_slater() {
        let s = set(3.0, &[[0, 0, 0]]);
        let d = slater(&s, &[[0.3, 1.0, 2.0]]).unwrap();
        assert!((d - Complex64::new(3f64.powf(-1.5), 0.0)).norm() < 1e-15);
        assert!(slater(&s, &[]).is_err());
    }

    #[test]
    fn equal_coordinates_vanish() {
        let s = set(3.0, &[[0, 0, 0], [1, 0, 0], [0, -1, 0]]);
        let x = [0.4, 0.1, 2.2];
        assert!(slater(&s, &[x, [1.0, 1.0, 1.0], x]).unwrap().norm() < 1e-15);
    }

    #[test]
    fn free_normalization_is_factorial() {
        let t = Torus::new(3.0, 4).unwrap();
        let up = set(3.0, &[[0, 0, 0], [1, 0, 0]]);
        let dn = set(3.0, &[[0, 0, 0], [0, 0, 1]]);
        let o = Oracle::free(t, up, dn).unwrap();
        let c = o.brute_normalization(1e9).unwrap();
        assert!((c - 4.0).abs() < 1e-10, "{c}");
    }

    #[test]
    fn one_body_density_is_uniform() {
        let t = Torus::new(3.0, 4).unwrap();
        let up = set(3.0, &[[0, 0, 0], [1, 0, 0]]);
        let dn = set(3.0, &[[0, 0, 0]]);
        let o = Oracle::new(t, up, dn, |r| if r < 0.5 { 0.0 } else { (1.0 - 0.5 / r) / 0.7 }.min(1.0), |r| r.min(1.0)).unwrap();
        let c = o.brute_normalization(1e9).unwrap();
        let vals: Vec<f64> = [0usize, 5, 17, 63].iter().map(|&x| o.brute_reduced_density(1, 0, &[x], c, 1e9).unwrap()).collect();
        for v in &vals {
            assert!((v - 2.0 / 27.0).abs() < 1e-12, "{v}");
        }
        let total: f64 = (0..64).map(|x| o.brute_reduced_density(1, 0, &[x], c, 1e9).unwrap()).sum::<f64>() * t.cell_volume();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_cap() {
        let t = Torus::new(3.0, 4).unwrap();
        let big = set(3.0, &[[0, 0, 0], [1, 0, 0], [0, 1, 0]]);
        assert!(matches!(Oracle::free(t, big.clone(), big), Err(GgrError::CapExceeded { .. })));
    }
}
