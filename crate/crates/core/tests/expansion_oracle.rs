//! Cross-module checks of the truncated expansion against brute-force quadrature.

use ggr_core::evaluation::{Kernels, DEFAULT_BUDGET};
use ggr_core::expansion::{normalization_constant, reduced_density, Caps};
use ggr_core::oracle::Oracle;
use ggr_core::polyhedron::MomentumSet;
use ggr_core::scattering::{solve_with_cutoff, Potential};
use ggr_core::torus::{Momentum, Torus};
use proptest::prelude::*;

const L: f64 = 4.0;

fn set(pts: &[[i64; 3]]) -> MomentumSet {
    MomentumSet::new(L, pts.iter().map(|&p| Momentum(p)).collect()).unwrap()
}

fn kernels(m: usize, up: &[[i64; 3]], dn: &[[i64; 3]]) -> (Kernels, Oracle) {
    let torus = Torus::new(L, m).unwrap();
    let sol = solve_with_cutoff(&Potential::HardCore { radius: 0.4 }, 1.5, &torus).unwrap();
    let k = Kernels::from_solution(torus, set(up), set(dn), &sol).unwrap();
    let o = Oracle::from_solution(torus, set(up), set(dn), &sol).unwrap();
    (k, o)
}

#[test]
fn free_state_needs_no_correction() {
    let torus = Torus::new(L, 6).unwrap();
    let up = set(&[[0, 0, 0], [1, 0, 0]]);
    let dn = set(&[[0, 0, 0]]);
    let o = Oracle::free(torus, up, dn).unwrap();
    // orthonormal plane waves: ∫|det|² = N↑! N↓! exactly
    let c = o.brute_normalization(DEFAULT_BUDGET).unwrap();
    assert!((c - 2.0).abs() < 1e-10, "{c}");
}

#[test]
fn full_sum_matches_oracle_for_three_particles() {
    let (k, o) = kernels(6, &[[0, 0, 0], [0, 0, 1]], &[[0, 0, 0]]);
    let c = normalization_constant(&k, &Caps::with_internal(3)).unwrap();
    let brute = o.brute_normalization(DEFAULT_BUDGET).unwrap();
    assert!(((c.finite_sum - brute) / brute).abs() < 1e-9, "{} vs {brute}", c.finite_sum);
}

#[test]
fn common_momentum_shift_leaves_normalization_unchanged() {
    let caps = Caps::with_internal(2);
    let (k0, _) = kernels(8, &[[0, 0, 0], [1, 0, 0]], &[[0, 0, 0]]);
    let (k1, _) = kernels(8, &[[0, 1, 0], [1, 1, 0]], &[[0, 0, 0]]);
    let a = normalization_constant(&k0, &caps).unwrap();
    let b = normalization_constant(&k1, &caps).unwrap();
    assert!(((a.finite_sum - b.finite_sum) / a.finite_sum).abs() < 1e-10);
    assert!(((a.linked_exp - b.linked_exp) / a.linked_exp).abs() < 1e-10);
}

#[test]
fn linked_exponential_differs_from_finite_sum_by_unlinked_overcount() {
    let (k, o) = kernels(6, &[[0, 0, 0]], &[[0, 0, 0]]);
    let c = normalization_constant(&k, &Caps::with_internal(2)).unwrap();
    let brute = o.brute_normalization(DEFAULT_BUDGET).unwrap();
    // with two particles the full sum is exact; the exponential is not
    assert!(((c.finite_sum - brute) / brute).abs() < 1e-12);
    assert!(c.gap > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pair_density_is_translation_invariant(x in 0usize..216, y in 0usize..216, t in 0usize..216) {
        let (k, _) = kernels(6, &[[0, 0, 0], [1, 0, 0]], &[[0, 0, 0]]);
        let caps = Caps::with_internal(1);
        let torus = k.torus;
        let a = reduced_density(&k, 1, 1, &[x, y], &caps).unwrap();
        let b = reduced_density(&k, 1, 1, &[torus.grid_sum(x, t), torus.grid_sum(y, t)], &caps).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs().max(1e-30));
    }
}
