use std::io::Write;

use super::csv_out::{finish, fmt_f64, write_row, writer};
use super::{tune_eta0, SchemeSetting, TuneConfig};
use crate::error::{Error, Result};
use crate::inference::{sandwich, wald_tests, Regime};
use crate::ising::{edge_index, exact_sample, symptom_network_truth, IsingModel};
use crate::model::{CompositeModel, ParamVector};
use crate::rng::{Purpose, StreamKey};
use crate::sampling::SchemeKind;
use crate::sgd::{fit, OptimizerConfig, StepTimings, DEFAULT_HOLDOUT_PERIOD_FRAC, DEFAULT_HOLDOUT_REL_TOL};

/// Settings of the end-to-end network run on synthetic survey-like data.
#[derive(Debug, Clone, PartialEq)]
pub struct NesarcConfig {
    pub p: usize,
    pub n_total: usize,
    pub holdout_frac: f64,
    pub recycle: usize,
    pub tune: TuneConfig,
    /// Upper bound on the run length, in multiples of the training size.
    pub max_passes: f64,
    pub holdout_period_frac: f64,
    pub holdout_rel_tol: f64,
    /// Familywise error level of the Holm-adjusted edge tests.
    pub level: f64,
    pub seed: u64,
}

impl Default for NesarcConfig {
    fn default() -> Self {
        Self {
            p: 32,
            n_total: 31_826,
            holdout_frac: 0.1,
            recycle: 1000,
            tune: TuneConfig::default(),
            max_passes: 20.0,
            holdout_period_frac: DEFAULT_HOLDOUT_PERIOD_FRAC,
            holdout_rel_tol: DEFAULT_HOLDOUT_REL_TOL,
            level: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReport {
    /// 1-based node numbers, `a < b`.
    pub a: usize,
    pub b: usize,
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub p_holm: f64,
    pub significant: bool,
    pub true_value: f64,
}

#[derive(Debug, Clone)]
pub struct NesarcReport {
    pub eta0: f64,
    pub tuning: Vec<(f64, Option<f64>)>,
    pub n_train: usize,
    pub iterations: usize,
    pub stopped_early: bool,
    pub holdout_curve: Vec<(usize, f64)>,
    pub theta_bar: ParamVector,
    pub edges: Vec<EdgeReport>,
    pub timings: StepTimings,
}

impl NesarcReport {
    pub fn significant_fraction(&self) -> f64 {
        self.edges.iter().filter(|e| e.significant).count() as f64 / self.edges.len() as f64
    }

    /// Rejected edges whose true weight is zero.
    pub fn false_discoveries(&self) -> usize {
        self.edges.iter().filter(|e| e.significant && e.true_value == 0.0).count()
    }
}

/// Simulate from a sparse block graph, tune `eta0`, fit with recycled
/// hypergeometric sampling and holdout stopping, and test every edge with
/// Holm-adjusted Wald tests under the compound-noise covariance.
pub fn run_nesarc_style(config: &NesarcConfig) -> Result<NesarcReport> {
    if !(config.holdout_frac > 0.0 && config.holdout_frac < 1.0) {
        return Err(Error::Config("holdout fraction must lie in (0, 1)".into()));
    }
    let truth = symptom_network_truth(config.p)?;
    let mut rng = StreamKey::new(config.seed, 0, Purpose::Data).rng();
    let data = exact_sample(&truth, config.n_total, &mut rng)?.with_random_holdout(config.holdout_frac, config.seed)?;
    let model = IsingModel::new(config.p)?;
    let scheme = SchemeSetting::recycled(SchemeKind::Hyper, config.recycle);
    let n = data.train_rows().len();

    let tuned = tune_eta0(&model, &data, scheme, &TuneConfig {
        seed: config.seed,
        ..config.tune.clone()
    })?;
    let period = ((config.holdout_period_frac * n as f64).round() as usize).max(1);
    let opt = OptimizerConfig::for_passes(n, tuned.eta0, config.max_passes).with_holdout(period, config.holdout_rel_tol);
    let spec = scheme.spec(n, model.n_components())?;
    let result = fit(
        &model,
        &data,
        spec.clone(),
        opt,
        &ParamVector::zeros(model.dim()),
        StreamKey::new(config.seed, 0, Purpose::Optimizer(0)),
    )?;
    let est = sandwich(&model, &result.theta_bar, &data, &spec.moments(), Regime::R3, result.iterations_run)?;
    let p = config.p;
    let edge_idx: Vec<usize> = (p..model.dim()).collect();
    let tests = wald_tests(&result.theta_bar, &est.cov_theta_bar, Some(&edge_idx), config.level)?;
    let names = model.param_names();
    let mut edges = Vec::with_capacity(tests.len());
    for a in 0..p {
        for b in a + 1..p {
            let idx = edge_index(p, a, b);
            let t = &tests[idx - p];
            edges.push(EdgeReport {
                a: a + 1,
                b: b + 1,
                name: names[idx].clone(),
                estimate: t.estimate,
                std_error: t.std_error,
                z: t.z,
                p_value: t.p_value,
                p_holm: t.p_adjusted,
                significant: t.reject,
                true_value: truth.edge(a, b),
            });
        }
    }
    Ok(NesarcReport {
        eta0: tuned.eta0,
        tuning: tuned.evaluated,
        n_train: n,
        iterations: result.iterations_run,
        stopped_early: result.stopped_early,
        holdout_curve: result.holdout_curve.unwrap_or_default(),
        theta_bar: result.theta_bar,
        edges,
        timings: result.timings,
    })
}

/// Columns: node_a, node_b, name, estimate, std_error, z, p_value, p_holm,
/// significant, true_value.
pub fn write_edge_csv<W: Write>(out: W, report: &NesarcReport) -> Result<()> {
    let mut w = writer(out);
    write_row(
        &mut w,
        &["node_a", "node_b", "name", "estimate", "std_error", "z", "p_value", "p_holm", "significant", "true_value"]
            .map(String::from),
    )?;
    for e in &report.edges {
        write_row(
            &mut w,
            &[
                e.a.to_string(),
                e.b.to_string(),
                e.name.clone(),
                fmt_f64(e.estimate),
                fmt_f64(e.std_error),
                fmt_f64(e.z),
                fmt_f64(e.p_value),
                fmt_f64(e.p_holm),
                (e.significant as u8).to_string(),
                fmt_f64(e.true_value),
            ],
        )?;
    }
    finish(w)
}
