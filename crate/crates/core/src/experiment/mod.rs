//! Replicated simulation studies: MSE and coverage trajectories, step-size
//! tuning, and an end-to-end network-estimation run.
//!
//! Each replication draws one dataset, shared by every scheme and step size,
//! and makes a single optimiser pass per scheme with snapshots of the
//! averaged iterate at the checkpoints. Replications run in parallel; all
//! outputs are collected in replication order, so CSVs are byte-identical
//! across reruns with the same plan.

mod csv_out;
mod nesarc;
mod tune;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use csv_out::{fmt_f64, write_coverage_csv, write_mse_csv, write_mse_records_csv};
pub use nesarc::{run_nesarc_style, write_edge_csv, EdgeReport, NesarcConfig, NesarcReport};
pub use tune::{select_eta0, tune_eta0, TuneConfig, TuneOutcome};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::frailty::{frailty_truth, simulate_frailty, FrailtyModel};
use crate::gd::{gd_fit, GdConfig};
use crate::inference::{confidence_intervals, cov_theta_bar, estimate_h_j, v_p, Regime};
use crate::ising::{exact_sample, grid_truth, IsingModel};
use crate::model::{CompositeModel, ParamVector};
use crate::rng::{splitmix64, Purpose, StreamKey};
use crate::sampling::{SchemeKind, SchemeSpec};
use crate::sgd::{OptimizerConfig, SgdRunner, DEFAULT_BURN_IN_FRAC, DEFAULT_C};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ising,
    Frailty,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ising => "ising",
            ModelKind::Frailty => "frailty",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ising" => Ok(ModelKind::Ising),
            "frailty" => Ok(ModelKind::Frailty),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

pub type DynModel = Box<dyn CompositeModel + Send + Sync>;

/// Composite likelihood used for `kind` with `p` variables. The frailty
/// model uses the per-pair scaled objective.
pub fn build_model(kind: ModelKind, p: usize) -> Result<DynModel> {
    Ok(match kind {
        ModelKind::Ising => Box::new(IsingModel::new(p)?),
        ModelKind::Frailty => Box::new(FrailtyModel::scaled(p)?),
    })
}

/// True parameter in the optimiser's coordinates.
pub fn truth(kind: ModelKind, p: usize) -> Result<ParamVector> {
    Ok(match kind {
        ModelKind::Ising => grid_truth(p)?.to_param_vector(),
        ModelKind::Frailty => frailty_truth(p)?.to_unconstrained(),
    })
}

pub fn simulate(kind: ModelKind, p: usize, n: usize, key: StreamKey) -> Result<Dataset> {
    let mut rng = key.rng();
    match kind {
        ModelKind::Ising => exact_sample(&grid_truth(p)?, n, &mut rng),
        ModelKind::Frailty => simulate_frailty(&frailty_truth(p)?, n, &mut rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeSetting {
    pub kind: SchemeKind,
    pub recycle: Option<usize>,
}

impl SchemeSetting {
    pub fn plain(kind: SchemeKind) -> Self {
        Self { kind, recycle: None }
    }

    pub fn recycled(kind: SchemeKind, window: usize) -> Self {
        Self {
            kind,
            recycle: Some(window),
        }
    }

    pub fn spec(&self, n: usize, k: usize) -> Result<SchemeSpec> {
        SchemeSpec::with_recycling(self.kind, n, k, self.recycle)
    }

    pub fn label(&self) -> String {
        match self.recycle {
            Some(_) => format!("recycle_{}", self.kind),
            None => self.kind.to_string(),
        }
    }
}

impl FromStr for SchemeSetting {
    type Err = Error;

    /// `hyper`, `standard`, `bernoulli`, or `recycle_<kind>:<window>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("recycle_") {
            let (kind, window) = rest
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("recycled scheme `{s}` needs a window, e.g. recycle_hyper:100")))?;
            let window = window
                .parse()
                .map_err(|_| Error::Config(format!("bad recycling window in `{s}`")))?;
            Ok(Self::recycled(kind.parse()?, window))
        } else {
            Ok(Self::plain(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub model: ModelKind,
    pub n_list: Vec<usize>,
    pub p_list: Vec<usize>,
    pub schemes: Vec<SchemeSetting>,
    pub eta0_grid: Vec<f64>,
    /// Stopping times as multiples of `n`, ascending.
    pub checkpoints: Vec<f64>,
    pub replications: usize,
    pub level: f64,
    pub base_seed: u64,
    pub c_exponent: f64,
    pub burn_in_frac: f64,
    /// Fit the full-gradient reference estimate in each replication.
    pub gd_baseline: bool,
}

impl ExperimentPlan {
    /// Defaults: the three plain schemes, checkpoints `0.5n..3n` by `0.5n`,
    /// 95% level, `c = 0.501`, burn-in `0.25n`.
    pub fn new(model: ModelKind, n: usize, p: usize, eta0: f64, replications: usize) -> Self {
        Self {
            model,
            n_list: vec![n],
            p_list: vec![p],
            schemes: vec![
                SchemeSetting::plain(SchemeKind::Standard),
                SchemeSetting::plain(SchemeKind::Bernoulli),
                SchemeSetting::plain(SchemeKind::Hyper),
            ],
            eta0_grid: vec![eta0],
            checkpoints: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            replications,
            level: 0.95,
            base_seed: 1,
            c_exponent: DEFAULT_C,
            burn_in_frac: DEFAULT_BURN_IN_FRAC,
            gd_baseline: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.p_list.is_empty() || self.schemes.is_empty() || self.eta0_grid.is_empty() {
            return Err(Error::Config("plan needs at least one n, p, scheme and eta0".into()));
        }
        if self.checkpoints.is_empty()
            || self.checkpoints.iter().any(|c| !(*c > 0.0))
            || self.checkpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config("checkpoints must be positive and strictly ascending".into()));
        }
        if self.replications < 2 {
            return Err(Error::Config("at least two replications are needed".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return Err(Error::Config("burn-in fraction must lie in [0, 1)".into()));
        }
        for &n in &self.n_list {
            let last = self.max_iters(n);
            if self.burn_in(n) >= last {
                return Err(Error::Config(format!("burn-in exceeds the last checkpoint for n = {n}")));
            }
        }
        Ok(())
    }

    fn burn_in(&self, n: usize) -> usize {
        (self.burn_in_frac * n as f64).floor() as usize
    }

    fn checkpoint_iters(&self, n: usize) -> Vec<usize> {
        self.checkpoints.iter().map(|c| ((c * n as f64).round() as usize).max(1)).collect()
    }

    fn max_iters(&self, n: usize) -> usize {
        *self.checkpoint_iters(n).last().expect("validated")
    }

    fn optimizer(&self, n: usize, eta0: f64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(eta0, self.max_iters(n), self.burn_in(n));
        cfg.c_exponent = self.c_exponent;
        cfg
    }
}

/// Seed for one `(n, p)` setting, so different settings never share data.
fn setting_seed(base: u64, n: usize, p: usize) -> u64 {
    splitmix64(base ^ splitmix64(((n as u64) << 20) ^ p as u64))
}

/// Optimiser stream tag for a (scheme, step size) cell of the plan.
fn optimizer_purpose(scheme_index: usize, eta_index: usize) -> Purpose {
    Purpose::Optimizer(((scheme_index as u64) << 16) | eta_index as u64)
}

/// Averaged iterate of one replication at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub checkpoint: f64,
    pub t_n: usize,
    /// `None` when the run failed before reaching this checkpoint.
    pub theta_bar: Option<ParamVector>,
}

/// Key and payload shared by the per-replication records.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRecord {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub scheme: String,
    pub eta0: f64,
    pub checkpoint: f64,
    pub t_n: usize,
    pub replication: usize,
    pub diverged: bool,
    /// `||theta_bar - theta*||^2`; NaN when diverged.
    pub sq_error: f64,
    pub theta_bar: Option<ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub scheme: String,
    pub eta0: f64,
    pub checkpoint: f64,
    pub t_n: usize,
    pub used: usize,
    pub diverged: usize,
    /// `(1/(d R)) sum_r ||theta_bar_r - theta*||^2` over non-diverged runs.
    pub mse: f64,
    /// Trace of the across-replication covariance of `theta_bar`.
    pub var_trace: f64,
}

#[derive(Debug, Clone)]
pub struct MseOutput {
    pub records: Vec<MseRecord>,
    pub summary: Vec<MseSummary>,
}

impl MseOutput {
    pub fn find(&self, scheme: &str, checkpoint: f64) -> Option<&MseSummary> {
        self.summary
            .iter()
            .find(|s| s.scheme == scheme && s.checkpoint == checkpoint)
    }
}

/// `(1/(d R)) sum_r ||theta_r - truth||^2`.
pub fn mse(estimates: &[&[f64]], truth: &[f64]) -> f64 {
    let d = truth.len() as f64;
    let total: f64 = estimates
        .iter()
        .map(|e| e.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / (d * estimates.len() as f64)
}

/// Sum over coordinates of the unbiased sample variance across estimates.
pub fn variance_trace(estimates: &[&[f64]]) -> f64 {
    let r = estimates.len();
    if r < 2 {
        return f64::NAN;
    }
    let d = estimates[0].len();
    (0..d)
        .map(|j| {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / r as f64;
            estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (r - 1) as f64
        })
        .sum()
}

/// Single optimiser pass with snapshots of the averaged iterate. A
/// numerical failure marks this and all later checkpoints as missing.
pub fn run_with_checkpoints<M: CompositeModel + ?Sized>(
    model: &M,
    data: &Dataset,
    scheme: SchemeSpec,
    config: OptimizerConfig,
    theta0: &ParamVector,
    stream: StreamKey,
    checkpoints: &[(f64, usize)],
) -> Result<Vec<Snapshot>> {
    let mut runner = SgdRunner::new(model, data, scheme, config, theta0, stream)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut failed = false;
    for &(checkpoint, t_n) in checkpoints {
        if !failed {
            match runner.run_until(t_n) {
                Ok(()) => {}
                Err(e) if e.is_numerical_failure() => failed = true,
                Err(e) => return Err(e),
            }
        }
        out.push(Snapshot {
            checkpoint,
            t_n,
            theta_bar: if failed { None } else { Some(runner.theta_bar()) },
        });
    }
    Ok(out)
}

struct CellRun {
    scheme_index: usize,
    eta_index: usize,
    snapshots: Vec<Snapshot>,
}

struct ReplicationRun {
    data: Dataset,
    cells: Vec<CellRun>,
    gd: Option<Option<ParamVector>>,
}

fn run_replication(
    plan: &ExperimentPlan,
    model: &dyn CompositeModel,
    n: usize,
    p: usize,
    r: usize,
) -> Result<ReplicationRun> {
    let seed = setting_seed(plan.base_seed, n, p);
    let data = simulate(plan.model, p, n, StreamKey::new(seed, r as u64, Purpose::Data))?;
    let theta0 = ParamVector::zeros(model.dim());
    let checkpoints: Vec<(f64, usize)> = plan
        .checkpoints
        .iter()
        .copied()
        .zip(plan.checkpoint_iters(n))
        .collect();
    let mut cells = Vec::new();
    for (si, scheme) in plan.schemes.iter().enumerate() {
        for (ei, &eta0) in plan.eta0_grid.iter().enumerate() {
            let spec = scheme.spec(n, model.n_components())?;
            let stream = StreamKey::new(seed, r as u64, optimizer_purpose(si, ei));
            let snapshots = run_with_checkpoints(model, &data, spec, plan.optimizer(n, eta0), &theta0, stream, &checkpoints)?;
            cells.push(CellRun {
                scheme_index: si,
                eta_index: ei,
                snapshots,
            });
        }
    }
    let gd = if plan.gd_baseline {
        Some(match gd_fit(model, &data, &GdConfig::default(), &theta0) {
            Ok(res) => Some(res.theta),
            Err(e) if e.is_numerical_failure() => None,
            Err(e) => return Err(e),
        })
    } else {
        None
    };
    Ok(ReplicationRun { data, cells, gd })
}

fn replications_for(plan: &ExperimentPlan, model: &dyn CompositeModel, n: usize, p: usize) -> Result<Vec<ReplicationRun>> {
    (0..plan.replications)
        .into_par_iter()
        .map(|r| run_replication(plan, model, n, p, r))
        .collect()
}

fn sq_error(theta: &[f64], truth: &[f64]) -> f64 {
    theta.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Per-replication squared errors and their per-checkpoint MSE summary,
/// with the full-gradient estimate as a reference series (scheme `gd`,
/// repeated at every checkpoint) when the plan asks for it.
pub fn run_mse_experiment(plan: &ExperimentPlan) -> Result<MseOutput> {
    plan.validate()?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &n in &plan.n_list {
        for &p in &plan.p_list {
            let model = build_model(plan.model, p)?;
            let theta_star = truth(plan.model, p)?;
            let runs = replications_for(plan, model.as_ref(), n, p)?;
            let mut push_group = |scheme: String, eta0: f64, checkpoint: f64, t_n: usize, per_rep: Vec<Option<ParamVector>>| {
                let mut used: Vec<&[f64]> = Vec::new();
                for (r, est) in per_rep.iter().enumerate() {
                    let (diverged, err) = match est {
                        Some(th) => {
                            used.push(th.as_slice());
                            (false, sq_error(th, &theta_star))
                        }
                        None => (true, f64::NAN),
                    };
                    records.push(MseRecord {
                        model: plan.model,
                        n,
                        p,
                        scheme: scheme.clone(),
                        eta0,
                        checkpoint,
                        t_n,
                        replication: r,
                        diverged,
                        sq_error: err,
                        theta_bar: est.clone(),
                    });
                }
                let value = if used.is_empty() { f64::NAN } else { mse(&used, &theta_star) };
                summary.push(MseSummary {
                    model: plan.model,
                    n,
                    p,
                    scheme,
                    eta0,
                    checkpoint,
                    t_n,
                    used: used.len(),
                    diverged: per_rep.len() - used.len(),
                    mse: value,
                    var_trace: variance_trace(&used),
                });
            };
            let n_cells = runs.first().map_or(0, |r| r.cells.len());
            for c in 0..n_cells {
                let (si, ei) = (runs[0].cells[c].scheme_index, runs[0].cells[c].eta_index);
                for (k, &checkpoint) in plan.checkpoints.iter().enumerate() {
                    let t_n = runs[0].cells[c].snapshots[k].t_n;
                    let per_rep = runs.iter().map(|r| r.cells[c].snapshots[k].theta_bar.clone()).collect();
                    push_group(plan.schemes[si].label(), plan.eta0_grid[ei], checkpoint, t_n, per_rep);
                }
            }
            if plan.gd_baseline {
                let per_rep: Vec<Option<ParamVector>> = runs.iter().map(|r| r.gd.clone().flatten()).collect();
                for (&checkpoint, t_n) in plan.checkpoints.iter().zip(plan.checkpoint_iters(n)) {
                    push_group("gd".into(), f64::NAN, checkpoint, t_n, per_rep.clone());
                }
            }
        }
    }
    Ok(MseOutput { records, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub scheme: String,
    pub eta0: f64,
    pub checkpoint: f64,
    pub t_n: usize,
    pub regime: Regime,
    pub param_index: usize,
    pub name: String,
    /// Fraction of usable replications whose interval covers the truth.
    pub coverage: f64,
    pub used: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct CoverageOutput {
    pub rows: Vec<CoverageRow>,
}

impl CoverageOutput {
    /// Median per-parameter coverage for one cell.
    pub fn median_coverage(&self, scheme: &str, checkpoint: f64, regime: Regime) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && r.checkpoint == checkpoint && r.regime == regime)
            .map(|r| r.coverage)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len();
        Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
    }
}

/// Per-replication coverage flags of one snapshot, for each regime;
/// `None` when the run diverged or the covariance could not be formed.
fn coverage_flags(
    model: &dyn CompositeModel,
    data: &Dataset,
    spec: &SchemeSpec,
    snap: &Snapshot,
    regimes: &[Regime],
    theta_star: &[f64],
    level: f64,
) -> Result<Vec<Option<Vec<bool>>>> {
    let Some(theta_bar) = &snap.theta_bar else {
        return Ok(vec![None; regimes.len()]);
    };
    let (h, j) = match estimate_h_j(model, theta_bar, data) {
        Ok(hj) => hj,
        Err(e) if e.is_numerical_failure() => return Ok(vec![None; regimes.len()]),
        Err(e) => return Err(e),
    };
    let n = data.train_rows().len();
    let v = v_p(&spec.moments(), &h, &j, n);
    regimes
        .iter()
        .map(|&regime| {
            let cov = match cov_theta_bar(&h, &j, &v, regime, snap.t_n, n) {
                Ok(c) => c,
                Err(Error::Conditioning { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            match confidence_intervals(theta_bar, &cov, level) {
                Ok(ci) => Ok(Some(
                    ci.iter()
                        .zip(theta_star)
                        .map(|(&(lo, hi), &t)| lo <= t && t <= hi)
                        .collect(),
                )),
                Err(e) if e.is_numerical_failure() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Empirical coverage of the Wald intervals for each parameter, per scheme,
/// step size, checkpoint and regime.
pub fn run_coverage_experiment(plan: &ExperimentPlan, regimes: &[Regime]) -> Result<CoverageOutput> {
    plan.validate()?;
    if regimes.is_empty() {
        return Err(Error::Config("at least one regime is required".into()));
    }
    let mut rows = Vec::new();
    for &n in &plan.n_list {
        for &p in &plan.p_list {
            let model = build_model(plan.model, p)?;
            let theta_star = truth(plan.model, p)?;
            let names = model.param_names();
            let d = model.dim();
            // flags[rep][cell][checkpoint][regime]
            let flags: Vec<Vec<Vec<Vec<Option<Vec<bool>>>>>> = (0..plan.replications)
                .into_par_iter()
                .map(|r| {
                    let run = run_replication(plan, model.as_ref(), n, p, r)?;
                    run.cells
                        .iter()
                        .map(|cell| {
                            let spec = plan.schemes[cell.scheme_index].spec(n, model.n_components())?;
                            cell.snapshots
                                .iter()
                                .map(|snap| {
                                    coverage_flags(model.as_ref(), &run.data, &spec, snap, regimes, &theta_star, plan.level)
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut c = 0;
            for scheme in &plan.schemes {
                for &eta0 in &plan.eta0_grid {
                    for (k, (&checkpoint, t_n)) in plan.checkpoints.iter().zip(plan.checkpoint_iters(n)).enumerate() {
                        for (g, &regime) in regimes.iter().enumerate() {
                            let usable: Vec<&Vec<bool>> = flags.iter().filter_map(|rep| rep[c][k][g].as_ref()).collect();
                            for j in 0..d {
                                let hits = usable.iter().filter(|f| f[j]).count();
                                rows.push(CoverageRow {
                                    model: plan.model,
                                    n,
                                    p,
                                    scheme: scheme.label(),
                                    eta0,
                                    checkpoint,
                                    t_n,
                                    regime,
                                    param_index: j,
                                    name: names[j].clone(),
                                    coverage: if usable.is_empty() { f64::NAN } else { hits as f64 / usable.len() as f64 },
                                    used: usable.len(),
                                    failed: plan.replications - usable.len(),
                                });
                            }
                        }
                    }
                    c += 1;
                }
            }
        }
    }
    Ok(CoverageOutput { rows })
}
