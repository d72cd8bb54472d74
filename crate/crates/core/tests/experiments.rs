//! Reproducibility and internal consistency of the Monte Carlo harness.

use dendroflow::chains::{sample_excursion, EhmcParams, JumpSampler, KernelSpec};
use dendroflow::experiments::{
    run, series_counts, Check, ExperimentConfig, ExperimentError, ExperimentKind, ProcessSpec,
};
use dendroflow::level_set::Series;
use dendroflow::rng::stream_rng;

fn config(kind: ExperimentKind, process: ProcessSpec) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, process);
    c.seed = 42;
    c
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let mut configs = Vec::new();
    let mut h = config(ExperimentKind::HortonTokunaga, ProcessSpec::Gaussian { sigma: 1.0 });
    h.length = Some(4000);
    h.replicates = 6;
    h.batches = 3;
    configs.push(h);
    let mut f = config(ExperimentKind::Forest, ProcessSpec::Rademacher { jitter: 0.1 });
    f.excursions = Some(500);
    f.batches = 5;
    f.max_excursion_steps = 10_000;
    configs.push(f);
    let mut g = config(
        ExperimentKind::GwEquivalence,
        ProcessSpec::ExpMixture(EhmcParams::new(0.5, 1.0, 1.0).unwrap()),
    );
    g.excursions = Some(2000);
    configs.push(g);
    let mut b = config(ExperimentKind::BasinCounts, ProcessSpec::Laplace { lambda: 1.0 });
    b.length = Some(20_000);
    b.replicates = 3;
    configs.push(b);
    let mut fb = config(ExperimentKind::FbmConjecture, ProcessSpec::Fbm { hurst: 0.6 });
    fb.length = Some(1 << 12);
    fb.replicates = 3;
    configs.push(fb);
    for cfg in configs {
        let one = in_pool(1, || run(&cfg).unwrap());
        let three = in_pool(3, || run(&cfg).unwrap());
        assert_eq!(one, three, "{:?}", cfg.experiment);
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&run(&cfg).unwrap()).unwrap()
        );
    }
}

#[test]
fn single_excursion_forest_equals_its_tree() {
    let mut cfg = config(ExperimentKind::Forest, ProcessSpec::Gaussian { sigma: 1.0 });
    cfg.excursions = Some(1);
    cfg.seed = 5;
    let rep = run(&cfg).unwrap();
    let sampler = JumpSampler::new(&KernelSpec::Gaussian { sigma: 1.0 }).unwrap();
    let mut buf = Vec::new();
    let mut rng = stream_rng(5, 0);
    assert!(sample_excursion(&sampler, &mut rng, cfg.max_excursion_steps, &mut buf));
    let counts = series_counts(&Series::new(buf).unwrap()).unwrap();
    let table = rep.table("horton").unwrap();
    let n_r: Vec<u64> = table.rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(n_r, counts.branches);
    let tok = counts.tokunaga(false);
    for row in &rep.table("tokunaga").unwrap().rows {
        let (i, j): (u32, u32) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        assert_eq!(row[2].parse::<u64>().unwrap(), tok.side_count(i, j));
    }
}

#[test]
fn forest_and_chain_estimators_agree() {
    let mut chain = config(ExperimentKind::HortonTokunaga, ProcessSpec::Gaussian { sigma: 1.0 });
    chain.length = Some(200_000);
    chain.replicates = 10;
    chain.complete_only = false;
    let mut forest = config(ExperimentKind::Forest, ProcessSpec::Gaussian { sigma: 1.0 });
    forest.excursions = Some(20_000);
    forest.max_excursion_steps = 100_000;
    let (a, b) = (run(&chain).unwrap(), run(&forest).unwrap());
    let (ea, eb) = (a.estimate("eta_1").unwrap(), b.estimate("eta_1").unwrap());
    let joint = (ea.se.unwrap().powi(2) + eb.se.unwrap().powi(2)).sqrt();
    assert!((ea.value - eb.value).abs() < 3.0 * joint, "{} vs {} (se {joint})", ea.value, eb.value);
}

#[test]
fn checks_are_evaluated() {
    let mut cfg = config(ExperimentKind::HortonTokunaga, ProcessSpec::Gaussian { sigma: 1.0 });
    cfg.length = Some(20_000);
    cfg.replicates = 2;
    cfg.checks = vec![
        Check::within("eta_1", 4.0, 0.5),
        Check::at_least("local_max_density", 0.9),
        Check::within("no_such_quantity", 0.0, 1.0),
    ];
    let rep = run(&cfg).unwrap();
    let passed: Vec<bool> = rep.checks.iter().map(|c| c.passed).collect();
    assert_eq!(passed, [true, false, false]);
    assert!(!rep.passed());
}

#[test]
fn estimates_carry_sample_sizes() {
    let mut cfg = config(ExperimentKind::BasinCounts, ProcessSpec::Gaussian { sigma: 1.0 });
    cfg.length = Some(50_000);
    cfg.replicates = 4;
    let rep = run(&cfg).unwrap();
    assert!(rep.estimates.iter().all(|e| e.n > 0));
    assert!(rep.estimate("basins_1_per_2").unwrap().se.is_some());
}

#[test]
fn asymmetric_chain_warns_but_runs() {
    let mut cfg = config(
        ExperimentKind::HortonTokunaga,
        ProcessSpec::ExpMixture(EhmcParams::new(0.4, 1.0, 1.0).unwrap()),
    );
    cfg.length = Some(10_000);
    let rep = run(&cfg).unwrap();
    assert!(rep.notes.iter().any(|n| n.contains("not symmetric")));
    assert!(rep.estimate("eta_1").unwrap().reference.is_none());
}

#[test]
fn config_validation_lists_every_problem() {
    let text = r#"
        experiment = "gw_equivalence"
        replicates = 0
        max_leaves = 9
        [process]
        kind = "exp_mixture"
        p = 0.5
        lambda_u = 1.0
        lambda_d = 3.0
    "#;
    let Err(ExperimentError::Invalid(errs)) = ExperimentConfig::from_toml(text) else {
        panic!("expected a validation error");
    };
    let joined = errs.join("\n");
    for field in ["p2", "excursions", "replicates", "max_leaves"] {
        assert!(joined.contains(field), "{field} missing from {joined}");
    }
    assert!(matches!(
        ExperimentConfig::from_toml("experiment = \"forest\"\nbogus = 1\n"),
        Err(ExperimentError::Parse(_))
    ));
}

#[test]
fn forest_reports_a_partial_run_when_the_budget_runs_out() {
    let mut cfg = config(ExperimentKind::Forest, ProcessSpec::Gaussian { sigma: 1.0 });
    cfg.excursions = Some(10_000);
    cfg.batches = 2;
    cfg.step_budget = Some(2_000);
    let rep = run(&cfg).unwrap();
    assert!(rep.partial);
    assert!(rep.counters["completed_excursions"] < 10_000);
}
