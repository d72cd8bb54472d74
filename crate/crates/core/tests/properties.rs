//! Property tests for trees, level-set trees, Horton orders and pruning maps.

use dendroflow::chains::{gen_gw_tree, EhmcParams, GwParams};
use dendroflow::dynamics::{a_gamma_step, ehmc_prune_params, ehmc_to_gw, gw_p2_step, iterate};
use dendroflow::horton::{assign_orders, pruning_orders, tokunaga_matrix};
use dendroflow::level_set::{
    extrema_with_boundary, extreme_function, level_set_tree, level_set_tree_annotated,
    local_extrema, prune_series, pseudo_distance, ExtremumKind, Series,
};
use dendroflow::tree::{binary_shape_codes, catalan_count, harris_path, Tree};
use proptest::prelude::*;

/// Random walk with continuous increments, so minima are a.s. distinct.
fn walk(max_len: usize) -> impl Strategy<Value = Series> {
    prop::collection::vec(-10.0..10.0f64, 1..max_len).prop_map(|steps| {
        let mut x = 0.0;
        let v = steps
            .into_iter()
            .map(|d| {
                x += d;
                x
            })
            .collect();
        Series::new(v).unwrap()
    })
}

/// A positive excursion: 0, positive values, 0.
fn excursion(max_len: usize) -> impl Strategy<Value = Series> {
    prop::collection::vec(0.01..10.0f64, 1..max_len).prop_map(|mut v| {
        v.insert(0, 0.0);
        v.push(0.0);
        Series::new(v).unwrap()
    })
}

/// Critical binary Galton-Watson tree with exponential edge lengths, so node
/// depths are a.s. distinct.
fn gw_tree(max_nodes: usize) -> impl Strategy<Value = Tree> {
    any::<u64>().prop_filter_map("tree too large", move |seed| {
        gen_gw_tree(&GwParams::new(0.5, 1.0).unwrap(), max_nodes, seed).ok()
    })
}

fn distinct_minima(s: &Series) -> bool {
    let mut m: Vec<f64> = local_extrema(s)
        .iter()
        .filter(|e| e.kind == ExtremumKind::Min)
        .map(|e| e.value)
        .collect();
    m.sort_by(f64::total_cmp);
    m.windows(2).all(|w| w[0] != w[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn monotone_transforms_keep_the_shape(s in walk(120)) {
        let base = level_set_tree(&s).unwrap();
        for f in [|x: f64| x + 10.0, |x: f64| 3.0 * x, |x: f64| x * x * x] {
            prop_assert!(level_set_tree(&s.map(f)).unwrap().same_shape(&base));
        }
    }

    #[test]
    fn extreme_function_breakpoints_give_the_same_tree(s in walk(120)) {
        // A single point has no slope to rebuild the extreme function from.
        prop_assume!(s.len() >= 2);
        let t = level_set_tree(&s).unwrap();
        let f = extreme_function(&s).unwrap();
        let u = level_set_tree(&Series::new(f.heights()).unwrap()).unwrap();
        prop_assert!(t.same_shape(&u));
        for (a, b) in t.nodes().iter().zip(u.nodes()) {
            prop_assert!((a.length - b.length).abs() <= 1e-9 * (1.0 + a.length.abs()));
        }
    }

    #[test]
    fn distinct_minima_give_a_binary_tree(s in walk(150)) {
        prop_assume!(distinct_minima(&s));
        prop_assert!(level_set_tree(&s).unwrap().is_binary());
    }

    #[test]
    fn pseudo_distance_axioms(s in walk(80), u in prop::array::uniform3(0.0..1.0f64)) {
        let f = extreme_function(&s).unwrap();
        let (lo, hi) = (f.start_abscissa(), f.end_abscissa());
        let [a, b, c] = u.map(|t| lo + t * (hi - lo));
        let d = |x, y| pseudo_distance(&f, x, y).unwrap();
        prop_assert_eq!(d(a, a), 0.0);
        prop_assert!((d(a, b) - d(b, a)).abs() < 1e-9);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-9);
        prop_assert!(d(a, b) >= 0.0);
    }

    #[test]
    fn leaf_distances_match_the_tree(s in excursion(60)) {
        let lst = level_set_tree_annotated(&s).unwrap();
        let f = extreme_function(&s).unwrap();
        let ext = extrema_with_boundary(s.values());
        let abscissa = |pos: usize| {
            let k = ext.iter().position(|e| e.index == pos).unwrap();
            f.breakpoints[k].0
        };
        let leaves: Vec<usize> = (0..lst.tree.len()).filter(|&v| lst.tree.node(v).is_leaf()).collect();
        for &a in &leaves {
            for &b in &leaves {
                let d = pseudo_distance(&f, abscissa(lst.position[a]), abscissa(lst.position[b])).unwrap();
                prop_assert!((d - lst.tree.path_length(a, b)).abs() < 1e-9 * (1.0 + d));
            }
        }
    }

    #[test]
    fn harris_path_invariants(t in gw_tree(400)) {
        let h = harris_path(&t);
        let bp = &h.breakpoints;
        prop_assert_eq!(bp[0], (0.0, 0.0));
        prop_assert_eq!(bp[bp.len() - 1].1, 0.0);
        prop_assert!((h.span() - 2.0 * t.length()).abs() < 1e-9 * (1.0 + h.span()));
        for w in bp.windows(2) {
            let (ds, dh) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(ds > 0.0);
            prop_assert!((ds - dh.abs()).abs() < 1e-9 * (1.0 + ds));
        }
        for w in bp.windows(3) {
            // Slopes alternate between breakpoints.
            prop_assert!((w[1].1 > w[0].1) != (w[2].1 > w[1].1));
        }
        prop_assert!(bp.iter().all(|p| p.1 >= -1e-9));
        let peaks = bp.windows(3).filter(|w| w[1].1 > w[0].1 && w[1].1 > w[2].1).count();
        prop_assert_eq!(peaks, t.leaf_count());
    }

    #[test]
    fn harris_round_trip(t in gw_tree(400)) {
        let heights = harris_path(&t).heights();
        let back = level_set_tree(&Series::new(heights).unwrap()).unwrap();
        prop_assert!(back.same_shape(&t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pruning_commutes_with_the_level_set_tree(s in walk(200)) {
        let pruned = prune_series(&s);
        let rhs = level_set_tree(&s).unwrap().prune().suppress_unary();
        if pruned.is_empty() {
            prop_assert!(rhs.is_empty());
        } else {
            prop_assert!(level_set_tree(&pruned).unwrap().same_shape(&rhs));
        }
    }

    #[test]
    fn recursive_orders_equal_pruning_orders(t in gw_tree(400)) {
        prop_assert_eq!(assign_orders(&t).order, pruning_orders(&t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pruning_lowers_the_order_by_one(t in gw_tree(400)) {
        let omega = assign_orders(&t).omega;
        let pruned = t.prune();
        if omega == 1 {
            prop_assert!(pruned.is_empty());
        } else {
            prop_assert_eq!(assign_orders(&pruned).omega, omega - 1);
        }
    }

    #[test]
    fn merges_are_twice_the_next_branch_count(t in gw_tree(400)) {
        let tm = tokunaga_matrix(&assign_orders(&t), false).unwrap();
        for i in 1..tm.omega as usize {
            prop_assert_eq!(tm.merge_counts[i - 1], 2 * tm.branch_counts[i]);
        }
    }

    #[test]
    fn branch_side_counts_sum_to_the_matrix(s in walk(400), complete in any::<bool>()) {
        prop_assume!(distinct_minima(&s));
        let t = level_set_tree(&s).unwrap();
        let tm = tokunaga_matrix(&assign_orders(&t), complete).unwrap();
        for (&(i, j), &n) in &tm.side_counts {
            let total: u64 = tm
                .tau
                .iter()
                .filter(|b| b.order == j)
                .map(|b| b.counts.get(i as usize - 1).copied().unwrap_or(0))
                .sum();
            prop_assert_eq!(total, n);
        }
    }

    #[test]
    fn a_gamma_product_is_one(a in 1e-3..1e3f64, g in 1e-3..1e3f64) {
        let (a1, g1) = a_gamma_step(a, g);
        prop_assert!((a1 * g1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gw_step_is_increasing_into_itself(x in 0.0..0.5f64, y in 0.0..0.5f64) {
        let (fx, fy) = (gw_p2_step(x).unwrap(), gw_p2_step(y).unwrap());
        prop_assert!((0.0..=0.5).contains(&fx));
        if x < y {
            prop_assert!(fx < fy);
        }
        if x > 0.0 {
            // Only 0 and 1/2 are fixed.
            prop_assert!(fx < x);
        }
    }
}

#[test]
fn gw_step_fixed_points() {
    assert_eq!(gw_p2_step(0.0), Ok(0.0));
    assert_eq!(gw_p2_step(0.5), Ok(0.5));
}

#[test]
fn gw_step_commutes_with_the_chain_map() {
    for a in 1..=20 {
        for b in 1..=20 {
            let p = a as f64 / 21.0;
            let gamma = 0.1 * b as f64;
            let e = EhmcParams::new(p, 1.0, gamma).unwrap();
            let p2 = ehmc_to_gw(&e).p2;
            let after = ehmc_to_gw(&ehmc_prune_params(&e)).p2;
            if p2 <= 0.5 {
                assert!((gw_p2_step(p2).unwrap() - after).abs() < 1e-12, "p={p} gamma={gamma}");
            } else {
                // Supercritical excursions are the mirror image of subcritical ones.
                let q = 1.0 - p2;
                let mirrored = 1.0 - gw_p2_step(q).unwrap();
                assert!((mirrored - after).abs() < 1e-12, "p={p} gamma={gamma}");
            }
        }
    }
}

#[test]
fn asymmetric_dynamics_lose_their_minima() {
    for e in [
        EhmcParams::new(1.0 / 3.0, 1.0, 1.0).unwrap(),
        EhmcParams::new(0.7, 2.0, 1.0).unwrap(),
        EhmcParams::new(0.5, 1.0, 3.0).unwrap(),
    ] {
        let rows = iterate(&e, 12);
        let last = rows.last().unwrap();
        assert!(last.p < 1e-6 || last.p > 1.0 - 1e-6, "{e:?}: p = {}", last.p);
        assert!(last.p_min < 1e-6);
    }
    // Mean zero: one pruning lands on A = γ = 1.
    let rows = iterate(&EhmcParams::new(1.0 / 3.0, 1.0, 2.0).unwrap(), 3);
    for r in &rows[1..] {
        assert!((r.a - 1.0).abs() < 1e-12 && (r.gamma - 1.0).abs() < 1e-12);
    }
}

#[test]
fn catalan_enumeration() {
    for n in 1..=6 {
        let codes = binary_shape_codes(n);
        assert_eq!(codes.len() as u128, catalan_count(n as u64).unwrap());
        let mut unique = codes.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), codes.len());
    }
}
