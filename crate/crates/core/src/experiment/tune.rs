use super::SchemeSetting;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CompositeModel, ParamVector};
use crate::rng::{Purpose, StreamKey};
use crate::sgd::{holdout_objective, OptimizerConfig, SgdRunner, DEFAULT_BURN_IN_FRAC, DEFAULT_C};

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    /// Largest step size tried.
    pub initial: f64,
    /// Candidates are `initial / 2^i` for `i = 0..=max_halvings`.
    pub max_halvings: usize,
    /// Stop once halving improves the criterion by less than this fraction.
    pub rel_tol: f64,
    /// Run length, as a multiple of the number of training rows.
    pub passes: f64,
    pub c_exponent: f64,
    pub burn_in_frac: f64,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            initial: 8.0,
            max_halvings: 8,
            rel_tol: 0.001,
            passes: 1.0,
            c_exponent: DEFAULT_C,
            burn_in_frac: DEFAULT_BURN_IN_FRAC,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub eta0: f64,
    /// Candidates actually run, largest first; `None` marks divergence.
    pub evaluated: Vec<(f64, Option<f64>)>,
}

/// Walks the halving chain from the largest step, skipping diverged
/// candidates, and returns the index of the first candidate whose next
/// halving improves the criterion (lower is better) by less than `rel_tol`.
fn walk(m: usize, rel_tol: f64, mut eval: impl FnMut(usize) -> Result<Option<f64>>) -> Result<usize> {
    for i in 0..m {
        let Some(current) = eval(i)? else { continue };
        if i + 1 == m {
            return Ok(i);
        }
        match eval(i + 1)? {
            None => return Ok(i),
            Some(next) => {
                if (current - next) / current.abs() < rel_tol {
                    return Ok(i);
                }
            }
        }
    }
    Err(Error::Tuning(format!("all {m} candidate step sizes diverged")))
}

/// Applies the halving rule to precomputed `(eta0, criterion)` pairs, listed
/// from the largest step down.
pub fn select_eta0(candidates: &[(f64, Option<f64>)], rel_tol: f64) -> Result<f64> {
    let i = walk(candidates.len(), rel_tol, |i| Ok(candidates[i].1))?;
    Ok(candidates[i].0)
}

/// Chooses `eta0` by the halving rule, with the holdout negative composite
/// log-likelihood of the averaged iterate after `passes * n` iterations as
/// the criterion. Every candidate uses the same random stream.
pub fn tune_eta0<M: CompositeModel + ?Sized>(
    model: &M,
    data: &Dataset,
    scheme: SchemeSetting,
    config: &TuneConfig,
) -> Result<TuneOutcome> {
    if !(config.initial > 0.0 && config.initial.is_finite()) {
        return Err(Error::Config("initial step size must be positive".into()));
    }
    if !data.has_holdout() {
        return Err(Error::Config("step size tuning needs a dataset with holdout rows".into()));
    }
    let n = data.train_rows().len();
    let spec = scheme.spec(n, model.n_components())?;
    let theta0 = ParamVector::zeros(model.dim());
    let m = config.max_halvings + 1;
    let mut cache: Vec<Option<Option<f64>>> = vec![None; m];
    let eta_at = |i: usize| config.initial / 2f64.powi(i as i32);
    let chosen = walk(m, config.rel_tol, |i| {
        if let Some(v) = cache[i] {
            return Ok(v);
        }
        let mut opt = OptimizerConfig::new(
            eta_at(i),
            ((config.passes * n as f64).round() as usize).max(1),
            (config.burn_in_frac * n as f64).floor() as usize,
        );
        opt.c_exponent = config.c_exponent;
        let stream = StreamKey::new(config.seed, 0, Purpose::Misc(1));
        let mut runner = SgdRunner::new(model, data, spec.clone(), opt.clone(), &theta0, stream)?;
        let value = match runner.run_until(opt.max_iters) {
            Ok(()) => match holdout_objective(model, &runner.theta_bar(), data) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => None,
                Err(e) if e.is_numerical_failure() => None,
                Err(e) => return Err(e),
            },
            Err(e) if e.is_numerical_failure() => None,
            Err(e) => return Err(e),
        };
        cache[i] = Some(value);
        Ok(value)
    })?;
    let evaluated = cache
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|v| (eta_at(i), v)))
        .collect();
    Ok(TuneOutcome {
        eta0: eta_at(chosen),
        evaluated,
    })
}
