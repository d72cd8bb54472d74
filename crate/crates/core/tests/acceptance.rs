//! Acceptance criteria at full scale. Runs without the test harness so the
//! PASS/FAIL line of every criterion is always printed; exits nonzero if any
//! criterion fails. Tolerances are pinned here and mirror the bundled configs.

use dendroflow::chains::{gen_chain, gen_gw_tree, EhmcParams, GwParams, KernelSpec};
use dendroflow::dynamics::{a_gamma_step, dss_residual, default_grid, iterate, CharacteristicFn};
use dendroflow::experiments::{
    minima_jump_test, pruning_commutation_failures, run, Check, ExperimentConfig, ExperimentKind,
    ExperimentReport, ProcessSpec,
};
use dendroflow::horton::{assign_orders, pruning_orders, tokunaga_matrix};
use dendroflow::level_set::{extreme_function, level_set_tree, pseudo_distance, Series};
use dendroflow::tree::{binary_shape_codes, catalan_count, harris_path};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn experiment(
    kind: ExperimentKind,
    process: ProcessSpec,
    seed: u64,
    setup: impl FnOnce(&mut ExperimentConfig),
) -> ExperimentReport {
    let mut cfg = ExperimentConfig::new(kind, process);
    cfg.seed = seed;
    setup(&mut cfg);
    cfg.validate().unwrap();
    run(&cfg).unwrap()
}

/// Evaluates checks against a report and renders the values compared.
fn judge(report: &ExperimentReport, checks: &[Check]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in checks {
        let est = report.estimate(&c.quantity);
        let ok = est.is_some_and(|e| c.holds(e.value));
        pass &= ok;
        let shown = match est {
            Some(e) => match e.se {
                Some(se) => format!("{}={:.4}±{:.4}", c.quantity, e.value, se),
                None => format!("{}={:.4}", c.quantity, e.value),
            },
            None => format!("{}=missing", c.quantity),
        };
        let bound = match (c.target, c.tolerance, c.min, c.max) {
            (Some(t), Some(tol), _, _) => format!(" [{t}±{tol}]"),
            (_, _, Some(lo), None) => format!(" [>{lo}]"),
            (_, _, None, Some(hi)) => format!(" [<{hi}]"),
            (_, _, Some(lo), Some(hi)) => format!(" [{lo},{hi}]"),
            _ => String::new(),
        };
        parts.push(shown + &bound);
    }
    (pass, parts.join(" "))
}

fn horton_and_tokunaga() -> [Outcome; 2] {
    let r = experiment(ExperimentKind::HortonTokunaga, ProcessSpec::Gaussian { sigma: 1.0 }, 1, |c| {
        c.length = Some(1_000_000);
        c.replicates = 20;
        c.batches = 20;
        c.complete_only = true;
        c.max_order = 4;
    });
    let (p1, d1) = judge(
        &r,
        &[Check::within("eta_1", 4.0, 0.2), Check::within("eta_2", 4.0, 0.2), Check::within("eta_3", 4.0, 0.2)],
    );
    let (p2, d2) = judge(
        &r,
        &[
            Check::within("T_1_2", 1.0, 0.1),
            Check::within("T_2_3", 1.0, 0.1),
            Check::within("T_1_3", 2.0, 0.2),
            Check::within("T_1_4", 4.0, 0.4),
        ],
    );
    [
        Outcome { id: 1, name: "Horton law", pass: p1, detail: d1 },
        Outcome { id: 2, name: "Tokunaga law", pass: p2, detail: d2 },
    ]
}

fn local_maxima() -> Outcome {
    let r = experiment(ExperimentKind::HortonTokunaga, ProcessSpec::Gaussian { sigma: 1.0 }, 3, |c| {
        c.length = Some(1002);
        c.replicates = 1000;
        c.batches = 20;
    });
    let (pass, detail) =
        judge(&r, &[Check::within("N_1_mean", 250.0, 2.0), Check::within("local_maxima_mean", 250.0, 2.0)]);
    Outcome { id: 3, name: "Local-maximum density", pass, detail }
}

fn basins() -> Outcome {
    let r = experiment(ExperimentKind::BasinCounts, ProcessSpec::Gaussian { sigma: 1.0 }, 4, |c| {
        c.length = Some(1_000_000);
        c.replicates = 4;
        c.basin_pairs = vec![(2, 1), (3, 1)];
    });
    let (pass, detail) = judge(
        &r,
        &[
            Check::within("basins_1_per_2", 4.0, 0.1),
            Check::within("basins_1_per_3", 16.0, 0.5),
            Check::within("minima_per_basin_2", 3.0, 0.05),
        ],
    );
    Outcome { id: 4, name: "Basin counts", pass, detail }
}

fn commutation() -> Outcome {
    let failures =
        pruning_commutation_failures(&KernelSpec::Gaussian { sigma: 1.0 }, 2000, 1000, 5).unwrap();
    Outcome {
        id: 5,
        name: "Pruning commutation",
        pass: failures == 0,
        detail: format!("failures={failures}/1000 [=0]"),
    }
}

fn ehmc_dynamics() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (e, seed) in [
        (EhmcParams::new(0.5, 1.0, 1.0).unwrap(), 6),
        (EhmcParams::new(1.0 / 3.0, 1.0, 1.0).unwrap(), 7),
    ] {
        let t = minima_jump_test(&e, 100_000, seed).unwrap();
        pass &= t.jumps == 100_000 && t.p_value > 0.01;
        parts.push(format!("ks_p({:.3})={:.3} [>0.01]", e.p, t.p_value));
    }
    let mut worst: f64 = 0.0;
    for a in [1e-3, 0.1, 0.5, 2.0, 7.0, 1e3] {
        for g in [1e-3, 0.3, 1.0, 4.0, 1e3] {
            let (a1, g1) = a_gamma_step(a, g);
            worst = worst.max((a1 * g1 - 1.0).abs());
        }
    }
    pass &= worst < 1e-12;
    parts.push(format!("max|A*gamma-1|={worst:.1e} [<1e-12]"));
    let fixed = a_gamma_step(1.0, 1.0) == (1.0, 1.0);
    let rows = iterate(&EhmcParams::new(0.5, 1.0, 1.0).unwrap(), 5);
    let stays = rows.iter().all(|r| r.a == 1.0 && r.gamma == 1.0);
    pass &= fixed && stays;
    parts.push(format!("fixed_point={}", fixed && stays));
    Outcome { id: 6, name: "EHMC dynamics", pass, detail: parts.join(" ") }
}

fn dss() -> Outcome {
    let grid = default_grid();
    let exp = dss_residual(&CharacteristicFn::Exponential { lambda: 1.0 }, &grid).unwrap();
    let uni = dss_residual(&CharacteristicFn::Uniform { width: 1.0 }, &grid).unwrap();
    Outcome {
        id: 7,
        name: "DSS residual",
        pass: exp < 1e-12 && uni > 1e-2,
        detail: format!("exponential={exp:.1e} [<1e-12] uniform={uni:.3e} [>1e-2]"),
    }
}

fn gw() -> Outcome {
    let e = EhmcParams::new(0.5, 1.0, 1.0).unwrap();
    let r = experiment(ExperimentKind::GwEquivalence, ProcessSpec::ExpMixture(e), 8, |c| {
        c.excursions = Some(100_000);
        c.max_leaves = 4;
        c.min_expected = 20.0;
    });
    let (pass, detail) =
        judge(&r, &[Check::at_least("chi2_p_tree", 0.01), Check::at_least("chi2_p_pruned", 0.01)]);
    Outcome { id: 8, name: "GW correspondence", pass, detail }
}

fn forest() -> Outcome {
    let r = experiment(ExperimentKind::Forest, ProcessSpec::Rademacher { jitter: 0.1 }, 9, |c| {
        c.excursions = Some(100_000);
        c.max_excursion_steps = 1_000_000;
    });
    let (pass, detail) = judge(&r, &[Check::within("eta_1", 4.0, 0.2), Check::within("T_1_2", 1.0, 0.05)]);
    Outcome { id: 9, name: "Brownian forest", pass: pass && !r.partial, detail }
}

fn asymmetry() -> Outcome {
    let chain = |lambda_d: f64, seed: u64| {
        let e = EhmcParams::new(1.0 / 3.0, 1.0, lambda_d).unwrap();
        experiment(ExperimentKind::AsymmetricDecay, ProcessSpec::ExpMixture(e), seed, |c| {
            c.length = Some(1_000_000);
            c.replicates = 20;
            c.max_order = 5;
        })
    };
    let (p1, d1) = judge(&chain(1.0, 10), &[Check::at_least("eta_gap_z", 3.0)]);
    let (p2, d2) =
        judge(&chain(2.0, 11), &[Check::within("eta_2", 4.0, 0.2), Check::within("eta_3", 4.0, 0.2)]);
    Outcome { id: 10, name: "Asymmetry breaks Horton", pass: p1 && p2, detail: format!("{d1} mean_zero: {d2}") }
}

fn structure() -> Outcome {
    let gw = GwParams::new(0.5, 1.0).unwrap();
    let trees: Vec<_> = (0..2000u64).filter_map(|seed| gen_gw_tree(&gw, 400, seed).ok()).collect();
    let mut order_fail = 0;
    let mut merge_fail = 0;
    let mut harris_fail = 0;
    for t in &trees {
        let orders = assign_orders(t);
        order_fail += (orders.order != pruning_orders(t)) as usize;
        let tm = tokunaga_matrix(&orders, false).unwrap();
        merge_fail += (1..tm.omega as usize)
            .any(|i| tm.merge_counts[i - 1] != 2 * tm.branch_counts[i]) as usize;
        let back = level_set_tree(&Series::new(harris_path(t).heights()).unwrap()).unwrap();
        harris_fail += !back.same_shape(t) as usize;
    }
    let mut metric_fail = 0;
    for seed in 0..300u64 {
        let s = gen_chain(&KernelSpec::Gaussian { sigma: 1.0 }, 200, seed).unwrap();
        let f = extreme_function(&s).unwrap();
        let (lo, hi) = (f.start_abscissa(), f.end_abscissa());
        let pts: Vec<f64> = (0..8).map(|i| lo + (hi - lo) * (i as f64 + 0.37) / 8.0).collect();
        let d = |x, y| pseudo_distance(&f, x, y).unwrap();
        for &a in &pts {
            for &b in &pts {
                let ok = d(a, a) == 0.0
                    && d(a, b) >= 0.0
                    && (d(a, b) - d(b, a)).abs() < 1e-9
                    && pts.iter().all(|&c| d(a, c) <= d(a, b) + d(b, c) + 1e-9);
                metric_fail += !ok as usize;
            }
        }
    }
    let catalan_fail = (1..=6)
        .filter(|&n| {
            let mut codes = binary_shape_codes(n);
            let total = codes.len();
            codes.sort();
            codes.dedup();
            codes.len() != total || total as u128 != catalan_count(n as u64).unwrap()
        })
        .count();
    let failures = order_fail + merge_fail + harris_fail + metric_fail + catalan_fail;
    Outcome {
        id: 11,
        name: "Structural suite",
        pass: failures == 0 && trees.len() >= 1000,
        detail: format!(
            "trees={} orders={order_fail} N_ii={merge_fail} harris={harris_fail} metric={metric_fail} catalan={catalan_fail} [all 0]",
            trees.len()
        ),
    }
}

fn fbm() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (hurst, seed) in [(0.3, 13), (0.5, 12), (0.7, 14)] {
        let r = experiment(ExperimentKind::FbmConjecture, ProcessSpec::Fbm { hurst }, seed, |c| {
            c.length = Some(1 << 20);
            c.replicates = 10;
            c.max_order = 6;
            c.max_k = 3;
        });
        let c_hat = r.estimate("c_hat").unwrap();
        let se = c_hat.se.unwrap_or(f64::NAN);
        if hurst == 0.5 {
            pass &= Check::within("c_hat", 2.0, 0.15).holds(c_hat.value);
            parts.push(format!("H=0.5 c_hat={:.3}±{se:.3} [2±0.15]", c_hat.value));
        } else {
            // Informative only: compared against 2H+1, no pass/fail.
            pass &= c_hat.value.is_finite();
            parts.push(format!("H={hurst} c_hat={:.3}±{se:.3} (2H+1={:.1})", c_hat.value, 2.0 * hurst + 1.0));
        }
    }
    Outcome { id: 12, name: "fBm conjecture", pass, detail: parts.join(" ") }
}

fn main() {
    let mut outcomes = Vec::new();
    outcomes.extend(horton_and_tokunaga());
    outcomes.push(local_maxima());
    outcomes.push(basins());
    outcomes.push(commutation());
    outcomes.push(ehmc_dynamics());
    outcomes.push(dss());
    outcomes.push(gw());
    outcomes.push(forest());
    outcomes.push(asymmetry());
    outcomes.push(structure());
    outcomes.push(fbm());
    for o in &outcomes {
        println!("{} {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
