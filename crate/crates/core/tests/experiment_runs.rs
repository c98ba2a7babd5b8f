use csgd::experiment::*;
use csgd::inference::Regime;
use csgd::ising::IsingModel;
use csgd::rng::{Purpose, StreamKey};
use csgd::sampling::SchemeKind;

fn small_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(ModelKind::Ising, 300, 4, 1.0, 4);
    plan.checkpoints = vec![1.0, 2.0];
    plan.gd_baseline = true;
    plan
}

#[test]
fn mse_accounting() {
    let plan = small_plan();
    let out = run_mse_experiment(&plan).unwrap();
    // 3 schemes + gd, 2 checkpoints, 4 replications.
    assert_eq!(out.records.len(), 4 * 2 * 4);
    assert_eq!(out.summary.len(), 4 * 2);
    for s in &out.summary {
        assert_eq!(s.used + s.diverged, 4);
        assert!(s.mse.is_finite() && s.mse >= 0.0);
        // mse is per coordinate (d = 10); the variance trace sums coordinates.
        assert!(s.var_trace >= 0.0 && s.var_trace <= 10.0 * s.mse * 4.0 / 3.0 + 1e-12);
    }
    let gd1 = out.find("gd", 1.0).unwrap();
    let gd2 = out.find("gd", 2.0).unwrap();
    assert_eq!(gd1.mse, gd2.mse);
    assert_eq!(out.find("hyper", 2.0).unwrap().t_n, 600);
    for r in &out.records {
        assert_eq!(r.diverged, r.theta_bar.is_none());
    }
}

#[test]
fn experiments_are_deterministic() {
    let plan = small_plan();
    let csv = |plan: &ExperimentPlan| {
        let out = run_mse_experiment(plan).unwrap();
        let mut a = Vec::new();
        write_mse_csv(&mut a, &out).unwrap();
        let mut b = Vec::new();
        write_mse_records_csv(&mut b, &out).unwrap();
        (a, b)
    };
    assert_eq!(csv(&plan), csv(&plan));
    let mut other = plan.clone();
    other.base_seed = 2;
    assert_ne!(csv(&plan).0, csv(&other).0);

    let cov = |plan: &ExperimentPlan| {
        let out = run_coverage_experiment(plan, &Regime::ALL).unwrap();
        let mut a = Vec::new();
        write_coverage_csv(&mut a, &out).unwrap();
        a
    };
    let mut cplan = plan.clone();
    cplan.gd_baseline = false;
    assert_eq!(cov(&cplan), cov(&cplan));
}

#[test]
fn coverage_rows_are_complete() {
    let mut plan = small_plan();
    plan.gd_baseline = false;
    plan.schemes = vec![SchemeSetting::plain(SchemeKind::Hyper)];
    let out = run_coverage_experiment(&plan, &[Regime::R1, Regime::R3]).unwrap();
    let d = 4 + 6;
    assert_eq!(out.rows.len(), 2 * 2 * d);
    for r in &out.rows {
        assert!((0.0..=1.0).contains(&r.coverage));
        assert_eq!(r.used + r.failed, 4);
    }
    // Regime 3 intervals contain the Regime 1 intervals.
    for (a, b) in out.rows.iter().filter(|r| r.regime == Regime::R1).zip(out.rows.iter().filter(|r| r.regime == Regime::R3)) {
        assert_eq!(a.param_index, b.param_index);
        assert!(b.coverage >= a.coverage);
    }
    assert!(out.median_coverage("hyper", 2.0, Regime::R3).is_some());
    assert!(out.median_coverage("bernoulli", 2.0, Regime::R3).is_none());
}

#[test]
fn tuner_picks_from_the_halving_chain() {
    let p = 6;
    let data = simulate(ModelKind::Ising, p, 2000, StreamKey::new(3, 0, Purpose::Data))
        .unwrap()
        .with_random_holdout(0.2, 3)
        .unwrap();
    let model = IsingModel::new(p).unwrap();
    let cfg = TuneConfig { max_halvings: 6, ..TuneConfig::default() };
    let out = tune_eta0(&model, &data, SchemeSetting::plain(SchemeKind::Hyper), &cfg).unwrap();
    assert!(!out.evaluated.is_empty());
    for (i, (eta, _)) in out.evaluated.iter().enumerate() {
        assert_eq!(*eta, 8.0 / 2f64.powi(i as i32));
    }
    assert!(out.evaluated.iter().any(|(eta, v)| *eta == out.eta0 && v.is_some()));
    let again = tune_eta0(&model, &data, SchemeSetting::plain(SchemeKind::Hyper), &cfg).unwrap();
    assert_eq!(out, again);

    let no_holdout = simulate(ModelKind::Ising, p, 100, StreamKey::new(3, 0, Purpose::Data)).unwrap();
    assert!(tune_eta0(&model, &no_holdout, SchemeSetting::plain(SchemeKind::Hyper), &cfg).is_err());
}

#[test]
fn nesarc_style_pipeline_controls_false_discoveries() {
    let config = NesarcConfig {
        p: 16,
        n_total: 6000,
        recycle: 200,
        max_passes: 10.0,
        tune: TuneConfig { max_halvings: 5, ..TuneConfig::default() },
        ..NesarcConfig::default()
    };
    let report = run_nesarc_style(&config).unwrap();
    assert_eq!(report.edges.len(), 16 * 15 / 2);
    assert_eq!(report.false_discoveries(), 0);
    // The strong within-block chain edges are found.
    let strong = report.edges.iter().filter(|e| e.true_value.abs() >= 1.0).collect::<Vec<_>>();
    assert!(!strong.is_empty());
    assert!(strong.iter().all(|e| e.significant));
    for e in &report.edges {
        assert!(e.p_holm >= e.p_value);
    }
    let mut csv = Vec::new();
    write_edge_csv(&mut csv, &report).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 120);
    assert!(text.starts_with("node_a,node_b,name,"));
}
