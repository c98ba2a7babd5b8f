use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use csgd::config::RunConfig;
use csgd::experiment::{
    build_model, fmt_f64, run_coverage_experiment, run_mse_experiment, run_nesarc_style, simulate, tune_eta0,
    write_coverage_csv, write_edge_csv, write_mse_csv, write_mse_records_csv, DynModel, ExperimentPlan, ModelKind,
    NesarcConfig, SchemeSetting, TuneConfig,
};
use csgd::frailty::{self, frailty_truth, FrailtyParams};
use csgd::gd::{gd_fit, GdConfig};
use csgd::inference::{confidence_intervals, sandwich, wald_tests, Regime};
use csgd::ising::{exact_sample, grid_truth, symptom_network_truth};
use csgd::rng::{Purpose, StreamKey};
use csgd::sgd::{fit as sgd_fit, FitResult, StepTimings};
use csgd::{DataKind, Dataset, ParamVector};
use serde_json::json;

use crate::manifest::Manifest;
use crate::{
    CoverageArgs, DataArgs, FitArgs, InferArgs, IsingTruth, ModelArg, MseArgs, NesarcArgs, OptimizerArg,
    SimulateFrailtyArgs, SimulateIsingArgs, StudyArgs, TuneArgs,
};

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Ising => ModelKind::Ising,
        ModelArg::Frailty => ModelKind::Frailty,
    }
}

fn data_kind(m: ModelArg) -> DataKind {
    match m {
        ModelArg::Ising => DataKind::Binary,
        ModelArg::Frailty => DataKind::Count,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_config(args: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_data(args: &DataArgs, cfg: &RunConfig) -> Result<Dataset> {
    let file = File::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
    let data = Dataset::read_csv(file, Some(data_kind(args.model)))
        .with_context(|| format!("reading {}", args.data.display()))?;
    Ok(match cfg.holdout_frac {
        Some(frac) => data.with_random_holdout(frac, cfg.seed)?,
        None => data,
    })
}

fn report_timings(t: &StepTimings) {
    eprintln!(
        "time: sampling {:.3}s, approximation {:.3}s, update {:.3}s",
        t.sampling.as_secs_f64(),
        t.approximation.as_secs_f64(),
        t.update.as_secs_f64()
    );
}

fn run_sgd(model: &DynModel, data: &Dataset, cfg: &RunConfig) -> Result<FitResult> {
    let n = data.train_rows().len();
    let spec = cfg.scheme_setting()?.spec(n, model.n_components())?;
    let opt = cfg.optimizer(n)?;
    let result = sgd_fit(
        model.as_ref(),
        data,
        spec,
        opt,
        &ParamVector::zeros(model.dim()),
        StreamKey::new(cfg.seed, 0, Purpose::Optimizer(0)),
    )?;
    report_timings(&result.timings);
    Ok(result)
}

fn write_estimates(path: &Path, names: &[String], theta: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["param_index", "name", "estimate"])?;
    for (i, (name, v)) in names.iter().zip(theta).enumerate() {
        w.write_record([i.to_string(), name.clone(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate_ising(args: &SimulateIsingArgs) -> Result<()> {
    let truth = match args.truth {
        IsingTruth::Grid => grid_truth(args.p)?,
        IsingTruth::Symptom => symptom_network_truth(args.p)?,
    };
    let mut rng = StreamKey::new(args.seed, 0, Purpose::Data).rng();
    let data = exact_sample(&truth, args.n, &mut rng)?;
    let mut out = create(&args.out)?;
    data.write_csv(&mut out, true)?;
    out.flush()?;
    Manifest::new("simulate-ising", args.seed, args)
        .output(&args.out)
        .write_beside(&args.out)?;
    Ok(())
}

pub fn simulate_frailty(args: &SimulateFrailtyArgs) -> Result<()> {
    let default = frailty_truth(args.p)?;
    let lambdas = match &args.lambda {
        Some(l) if l.len() != args.p => bail!("--lambda has {} values but p = {}", l.len(), args.p),
        Some(l) => l.clone(),
        None => default.lambdas.clone(),
    };
    let params = FrailtyParams::new(lambdas, args.xi.unwrap_or(default.xi), args.rho.unwrap_or(default.rho))?;
    let mut rng = StreamKey::new(args.seed, 0, Purpose::Data).rng();
    let data = frailty::simulate_frailty(&params, args.n, &mut rng)?;
    let mut out = create(&args.out)?;
    data.write_csv(&mut out, true)?;
    out.flush()?;
    Manifest::new("simulate-frailty", args.seed, args)
        .output(&args.out)
        .write_beside(&args.out)?;
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let cfg = load_config(&args.data)?;
    let data = load_data(&args.data, &cfg)?;
    let model = build_model(model_kind(args.data.model), data.n_cols())?;
    let (theta, summary) = match args.optimizer {
        OptimizerArg::Sgd => {
            let r = run_sgd(&model, &data, &cfg)?;
            let summary = json!({
                "optimizer": "sgd",
                "scheme": r.scheme.label(),
                "iterations": r.iterations_run,
                "stopped_early": r.stopped_early,
            });
            (r.theta_bar, summary)
        }
        OptimizerArg::Gd => {
            let gd = GdConfig {
                grad_tol: args.grad_tol,
                max_iters: args.max_iters,
                ..GdConfig::default()
            };
            let r = gd_fit(model.as_ref(), &data, &gd, &ParamVector::zeros(model.dim()))?;
            if !r.converged {
                eprintln!("warning: gradient ascent stopped at {} before reaching the tolerance", fmt_f64(r.final_grad_norm));
            }
            let summary = json!({
                "optimizer": "gd",
                "iterations": r.iterations,
                "converged": r.converged,
                "final_grad_norm": fmt_f64(r.final_grad_norm),
            });
            (r.theta, summary)
        }
    };
    write_estimates(&args.out, &model.param_names(), theta.as_slice())?;
    Manifest::new("fit", cfg.seed, args)
        .config(&cfg)
        .output(&args.out)
        .summary(summary)
        .write_beside(&args.out)?;
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let regime: Regime = args.regime.parse()?;
    let cfg = load_config(&args.data)?;
    let data = load_data(&args.data, &cfg)?;
    let model = build_model(model_kind(args.data.model), data.n_cols())?;
    let p = data.n_cols();
    let family: Option<Vec<usize>> = match (args.edges_only, args.data.model) {
        (false, _) => None,
        (true, ModelArg::Ising) => Some((p..model.dim()).collect()),
        (true, ModelArg::Frailty) => bail!("--edges-only applies to the Ising model only"),
    };

    let r = run_sgd(&model, &data, &cfg)?;
    let theta = r.theta_bar.as_slice();
    let est = sandwich(model.as_ref(), theta, &data, &r.scheme.moments(), regime, r.iterations_run)?;
    let ci = confidence_intervals(theta, &est.cov_theta_bar, args.level)?;
    let tests = wald_tests(theta, &est.cov_theta_bar, family.as_deref(), 1.0 - args.level)?;
    let all = wald_tests(theta, &est.cov_theta_bar, None, 1.0 - args.level)?;
    let mut holm = vec![None; theta.len()];
    match &family {
        Some(idx) => idx.iter().zip(&tests).for_each(|(&i, t)| holm[i] = Some(t.p_adjusted)),
        None => tests.iter().enumerate().for_each(|(i, t)| holm[i] = Some(t.p_adjusted)),
    }

    let names = model.param_names();
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record([
        "param_index", "name", "estimate", "std_error", "z", "p_value", "p_holm", "ci_low", "ci_high", "regime",
    ])?;
    for i in 0..theta.len() {
        w.write_record([
            i.to_string(),
            names[i].clone(),
            fmt_f64(theta[i]),
            fmt_f64(all[i].std_error),
            fmt_f64(all[i].z),
            fmt_f64(all[i].p_value),
            holm[i].map(fmt_f64).unwrap_or_default(),
            fmt_f64(ci[i].0),
            fmt_f64(ci[i].1),
            regime.to_string(),
        ])?;
    }
    w.flush()?;
    let rejected = tests.iter().filter(|t| t.reject).count();
    Manifest::new("infer", cfg.seed, args)
        .config(&cfg)
        .output(&args.out)
        .summary(json!({
            "scheme": r.scheme.label(),
            "iterations": r.iterations_run,
            "stopped_early": r.stopped_early,
            "n_train": est.n,
            "regime": regime.to_string(),
            "holm_family_size": tests.len(),
            "holm_rejections": rejected,
        }))
        .write_beside(&args.out)?;
    Ok(())
}

fn plan(study: &StudyArgs) -> Result<ExperimentPlan> {
    let schemes = study
        .schemes
        .iter()
        .map(|s| s.parse::<SchemeSetting>())
        .collect::<csgd::Result<Vec<_>>>()?;
    let mut plan = ExperimentPlan::new(model_kind(study.model), study.n[0], study.p[0], study.eta0[0], study.replications);
    plan.n_list = study.n.clone();
    plan.p_list = study.p.clone();
    plan.eta0_grid = study.eta0.clone();
    plan.schemes = schemes;
    plan.checkpoints = study.checkpoints.clone();
    plan.base_seed = study.seed;
    Ok(plan)
}

pub fn experiment_mse(args: &MseArgs) -> Result<()> {
    let mut plan = plan(&args.study)?;
    plan.gd_baseline = args.gd_baseline;
    let out = run_mse_experiment(&plan)?;
    let mut w = create(&args.study.out)?;
    write_mse_csv(&mut w, &out)?;
    w.flush()?;
    let mut manifest = Manifest::new("experiment mse", args.study.seed, args).output(&args.study.out);
    if let Some(path) = &args.records {
        let mut w = create(path)?;
        write_mse_records_csv(&mut w, &out)?;
        w.flush()?;
        manifest = manifest.output(path);
    }
    let diverged: usize = out.summary.iter().map(|s| s.diverged).sum();
    manifest
        .summary(json!({ "rows": out.summary.len(), "diverged": diverged }))
        .write_beside(&args.study.out)?;
    Ok(())
}

pub fn experiment_coverage(args: &CoverageArgs) -> Result<()> {
    let regimes = args
        .regimes
        .iter()
        .map(|r| r.parse::<Regime>())
        .collect::<csgd::Result<Vec<_>>>()?;
    let mut plan = plan(&args.study)?;
    plan.level = args.level;
    let out = run_coverage_experiment(&plan, &regimes)?;
    let mut w = create(&args.study.out)?;
    write_coverage_csv(&mut w, &out)?;
    w.flush()?;
    Manifest::new("experiment coverage", args.study.seed, args)
        .output(&args.study.out)
        .summary(json!({ "rows": out.rows.len() }))
        .write_beside(&args.study.out)?;
    Ok(())
}

pub fn experiment_tune(args: &TuneArgs) -> Result<()> {
    let kind = model_kind(args.model);
    let data = match (&args.data, args.n, args.p) {
        (Some(path), _, _) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Dataset::read_csv(file, Some(data_kind(args.model)))?
        }
        (None, Some(n), Some(p)) => simulate(kind, p, n, StreamKey::new(args.seed, 0, Purpose::Data))?,
        (None, _, _) => bail!("pass either --data or both --n and --p"),
    };
    let data = data.with_random_holdout(args.holdout_frac, args.seed)?;
    let model = build_model(kind, data.n_cols())?;
    let scheme: SchemeSetting = args.scheme.parse()?;
    let outcome = tune_eta0(model.as_ref(), &data, scheme, &TuneConfig {
        initial: args.initial,
        max_halvings: args.max_halvings,
        rel_tol: args.rel_tol,
        passes: args.passes,
        seed: args.seed,
        ..TuneConfig::default()
    })?;

    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["eta0", "holdout_criterion", "diverged", "selected"])?;
    for &(eta, value) in &outcome.evaluated {
        w.write_record([
            fmt_f64(eta),
            value.map(fmt_f64).unwrap_or_default(),
            (value.is_none() as u8).to_string(),
            ((eta == outcome.eta0) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Manifest::new("experiment tune", args.seed, args)
        .output(&args.out)
        .summary(json!({ "eta0": fmt_f64(outcome.eta0) }))
        .write_beside(&args.out)?;
    eprintln!("selected eta0 = {}", outcome.eta0);
    Ok(())
}

pub fn experiment_nesarc(args: &NesarcArgs) -> Result<()> {
    let report = run_nesarc_style(&NesarcConfig {
        p: args.p,
        n_total: args.n,
        holdout_frac: args.holdout_frac,
        recycle: args.recycle,
        level: args.level,
        max_passes: args.max_passes,
        seed: args.seed,
        ..NesarcConfig::default()
    })?;
    report_timings(&report.timings);
    let mut w = create(&args.out)?;
    write_edge_csv(&mut w, &report)?;
    w.flush()?;
    Manifest::new("experiment nesarc", args.seed, args)
        .output(&args.out)
        .summary(json!({
            "eta0": fmt_f64(report.eta0),
            "n_train": report.n_train,
            "iterations": report.iterations,
            "stopped_early": report.stopped_early,
            "edges": report.edges.len(),
            "significant_fraction": fmt_f64(report.significant_fraction()),
            "false_discoveries": report.false_discoveries(),
        }))
        .write_beside(&args.out)?;
    Ok(())
}
