//! Norm-Sub, tree consistency and grid consistency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSet;
use crate::tree::DecompositionTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSubResult {
    pub normalized: Vec<f64>,
    pub delta: f64,
}

/// Find `δ` with `Σ max(f_i - δ, 0) = 1` and clip.
///
/// Sorts descending and takes the longest prefix whose smallest member still
/// sits above the prefix threshold `(S_k - 1) / k`.
pub fn norm_sub(f: &[f64]) -> Result<NormSubResult> {
    let delta = norm_sub_delta(f)?;
    Ok(NormSubResult { normalized: f.iter().map(|x| (x - delta).max(0.0)).collect(), delta })
}

pub fn norm_sub_delta(f: &[f64]) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::EmptyInput("Norm-Sub needs a non-empty vector"));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("Norm-Sub input has non-finite entries"));
    }
    let mut sorted = f.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut delta = sorted[0] - 1.0;
    for (k, &x) in sorted.iter().enumerate() {
        prefix += x;
        let d = (prefix - 1.0) / (k + 1) as f64;
        if x > d {
            delta = d;
        } else {
            break;
        }
    }
    Ok(delta)
}

/// Bisection on the non-increasing map `δ ↦ Σ max(f_i - δ, 0)`.
pub fn norm_sub_bisect(f: &[f64], tol: f64) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::EmptyInput("Norm-Sub needs a non-empty vector"));
    }
    let mass = |d: f64| f.iter().map(|x| (x - d).max(0.0)).sum::<f64>();
    let mut lo = f.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bottom-up weighted averaging, `λ = k / (k + 1)` for `k` children.
pub fn tree_consistency(tree: &mut DecompositionTree) {
    for depth in (0..tree.layers().len()).rev() {
        for i in 0..tree.layer(depth).len() {
            let id = tree.layer(depth)[i];
            let node = tree.node(id);
            let f_tilde = if node.is_leaf() {
                node.f_hat
            } else {
                let k = node.children.len() as f64;
                let lambda = k / (k + 1.0);
                let kids: f64 = node.children.iter().map(|c| tree.node(*c).f_tilde).sum();
                lambda * node.f_hat + (1.0 - lambda) * kids
            };
            tree.node_mut(id).f_tilde = f_tilde;
        }
    }
}

/// One pass of cross-grid consistency, attributes ascending, fractions
/// ascending.
///
/// For each fraction, the grids carrying the attribute are pulled to the
/// `1/S`-weighted mean of their fraction sums. Adjusting one attribute moves
/// another attribute's fraction sums only through a change in total grid
/// mass, so the pass is exact for every attribute when all grids carry the
/// same total mass, and exact for the last attribute otherwise.
pub fn grid_consistency(grids: &mut GridSet) {
    let layout = grids.layout;
    for attr in 0..layout.d {
        let kinds = grids.grids_with(attr);
        for j in 0..layout.g2 {
            let sums: Vec<f64> = kinds.iter().map(|k| grids.fraction_sum(*k, attr, j)).collect();
            let sizes: Vec<f64> =
                kinds.iter().map(|k| layout.cells_per_fraction(*k) as f64).collect();
            let num: f64 = sums.iter().zip(&sizes).map(|(f, s)| f / s).sum();
            let den: f64 = sizes.iter().map(|s| 1.0 / s).sum();
            let target = num / den;
            for ((kind, f), s) in kinds.iter().zip(&sums).zip(&sizes) {
                let shift = (target - f) / s;
                let cells = layout.fraction_cells(*kind, attr, j);
                let g = grids.grid_mut(*kind);
                for c in cells {
                    g.freqs[c] += shift;
                }
            }
        }
    }
}

/// Norm-Sub every grid in place.
pub fn norm_sub_grids(grids: &mut GridSet) -> Result<()> {
    for g in &mut grids.grids {
        g.freqs = norm_sub(&g.freqs)?.normalized;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fo::HashFamily;
    use crate::grid::{GridKind, GridLayout};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn already_normalized() {
        let r = norm_sub(&[0.5, 0.5]).unwrap();
        assert!(r.delta.abs() < 1e-15);
        assert!(close(&r.normalized, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn single_survivor() {
        let r = norm_sub(&[1.5, -0.5]).unwrap();
        assert!((r.delta - 0.5).abs() < 1e-15);
        assert!(close(&r.normalized, &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn negative_delta_spreads_mass() {
        let r = norm_sub(&[0.0, 0.0]).unwrap();
        assert!((r.delta + 0.5).abs() < 1e-15);
        assert!(close(&r.normalized, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn empty_and_non_finite() {
        assert!(norm_sub(&[]).is_err());
        assert!(norm_sub(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn matches_bisection_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(1..200);
            let scale = rng.random_range(0.01..3.0);
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
            let exact = norm_sub_delta(&f).unwrap();
            let oracle = norm_sub_bisect(&f, 1e-13).unwrap();
            assert!((exact - oracle).abs() < 1e-9, "{exact} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn output_is_distribution(f in prop::collection::vec(-2.0f64..2.0, 1..64)) {
            let r = norm_sub(&f).unwrap();
            prop_assert!(r.normalized.iter().all(|x| *x >= 0.0));
            prop_assert!((r.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn idempotent(f in prop::collection::vec(-2.0f64..2.0, 1..64)) {
            let once = norm_sub(&f).unwrap().normalized;
            let twice = norm_sub(&once).unwrap();
            prop_assert!(twice.delta.abs() < 1e-9);
            prop_assert!(close(&once, &twice.normalized, 1e-9));
        }

        #[test]
        fn permutation_equivariant(f in prop::collection::vec(-2.0f64..2.0, 2..32), rot in 0usize..32) {
            let r = rot % f.len();
            let mut g = f.clone();
            g.rotate_left(r);
            let mut a = norm_sub(&f).unwrap().normalized;
            a.rotate_left(r);
            prop_assert!(close(&a, &norm_sub(&g).unwrap().normalized, 1e-12));
        }

        #[test]
        fn shift_moves_threshold(f in prop::collection::vec(-2.0f64..2.0, 1..32), c in -3.0f64..3.0) {
            let base = norm_sub(&f).unwrap();
            let g: Vec<f64> = f.iter().map(|x| x + c).collect();
            let shifted = norm_sub(&g).unwrap();
            prop_assert!((shifted.delta - base.delta - c).abs() < 1e-9);
            prop_assert!(close(&base.normalized, &shifted.normalized, 1e-9));
        }
    }

    #[test]
    fn leaf_passthrough_and_single_step() {
        let mut t = DecompositionTree::complete(4, 4, 1).unwrap();
        let root = t.root();
        t.node_mut(root).f_hat = 0.5;
        for (i, id) in t.layer(1).to_vec().into_iter().enumerate() {
            t.node_mut(id).f_hat = [0.3, 0.0, 0.0, 0.0][i];
        }
        tree_consistency(&mut t);
        let leaf = t.layer(1)[0];
        assert!((t.node(leaf).f_tilde - 0.3).abs() < 1e-15);
        assert!((t.node(root).f_tilde - 0.46).abs() < 1e-12);
    }

    fn recursive_oracle(t: &DecompositionTree, id: usize) -> f64 {
        let n = t.node(id);
        if n.is_leaf() {
            return n.f_hat;
        }
        let k = n.children.len() as f64;
        let kids: f64 = n.children.iter().map(|c| recursive_oracle(t, *c)).sum();
        k / (k + 1.0) * n.f_hat + kids / (k + 1.0)
    }

    #[test]
    fn consistency_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut t = DecompositionTree::new(27);
            for _ in 0..3 {
                let split: Vec<_> = t
                    .layer(t.height())
                    .iter()
                    .map(|&id| {
                        let iv = t.node(id).interval;
                        if rng.random_bool(0.6) {
                            crate::tree::split_interval(iv, 3)
                        } else {
                            vec![iv]
                        }
                    })
                    .collect();
                t.grow_layer(&split).unwrap();
            }
            for id in 0..t.len() {
                t.node_mut(id).f_hat = rng.random_range(0.0..0.5);
            }
            let leaves: Vec<(usize, f64)> =
                (0..t.len()).filter(|&i| t.node(i).is_leaf()).map(|i| (i, t.node(i).f_hat)).collect();
            tree_consistency(&mut t);
            for id in 0..t.len() {
                assert!((t.node(id).f_tilde - recursive_oracle(&t, id)).abs() < 1e-12);
            }
            for (i, f) in leaves {
                assert_eq!(t.node(i).f_tilde, f);
            }
        }
    }

    fn random_grids(rng: &mut ChaCha8Rng, d: usize) -> GridSet {
        let layout = GridLayout::new(d, 64, 16, 4).unwrap();
        let mut gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        for g in &mut gs.grids {
            let raw: Vec<f64> = g.freqs.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            g.freqs = raw.iter().map(|x| x / s).collect();
        }
        gs
    }

    #[test]
    fn consistent_grids_are_a_fixed_point() {
        let layout = GridLayout::new(3, 64, 16, 4).unwrap();
        let gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        let mut after = gs.clone();
        grid_consistency(&mut after);
        for (a, b) in gs.grids.iter().zip(&after.grids) {
            assert!(close(&a.freqs, &b.freqs, 1e-15));
        }
    }

    #[test]
    fn two_grid_hand_example() {
        // one 1-D grid and one 2-D grid share the fraction; 1-D sum 0.4, 2-D sum 0.2
        let layout = GridLayout::new(2, 64, 16, 4).unwrap();
        let mut gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        let one = GridKind::OneD { attr: 0 };
        let two = GridKind::TwoD { a: 0, b: 1 };
        for c in layout.fraction_cells(one, 0, 0) {
            gs.grid_mut(one).freqs[c] = 0.1;
        }
        for c in layout.fraction_cells(two, 0, 0) {
            gs.grid_mut(two).freqs[c] = 0.05;
        }
        let before = gs.grid(one).freqs[0];
        grid_consistency(&mut gs);
        // second implementation of the weighted mean
        let f_c: f64 = (0.4 / 4.0 + 0.2 / 4.0) / (1.0 / 4.0 + 1.0 / 4.0);
        assert!((f_c - 0.3).abs() < 1e-15);
        assert!((gs.grid(one).freqs[0] - (before - 0.025)).abs() < 1e-12);
        assert!((gs.fraction_sum(one, 0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn one_pass_equalizes_fraction_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for d in [2, 3, 5] {
            let mut gs = random_grids(&mut rng, d);
            grid_consistency(&mut gs);
            for attr in 0..d {
                for j in 0..4 {
                    let sums: Vec<f64> =
                        gs.grids_with(attr).iter().map(|k| gs.fraction_sum(*k, attr, j)).collect();
                    for s in &sums {
                        assert!((s - sums[0]).abs() < 1e-9, "d={d} attr={attr} j={j} {sums:?}");
                    }
                }
            }
        }
    }
}
