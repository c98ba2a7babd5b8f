//! Optimiser settings as read from a configuration file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::SchemeSetting;
use crate::sgd::{OptimizerConfig, DEFAULT_BURN_IN_FRAC, DEFAULT_C, DEFAULT_HOLDOUT_REL_TOL};

/// Keys accepted in a run configuration file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eta0: f64,
    pub c: f64,
    pub burn_in_frac: f64,
    /// `T_n = passes * n`.
    pub passes: f64,
    /// `standard`, `bernoulli` or `hyper`.
    pub scheme: String,
    /// Recycling window `l`; absent for fresh draws every iteration.
    pub recycle: Option<usize>,
    pub seed: u64,
    pub record_every: Option<usize>,
    /// Holdout evaluation period as a fraction of `n`; absent disables
    /// holdout stopping.
    pub holdout_period_frac: Option<f64>,
    pub holdout_rel_tol: f64,
    /// Fraction of rows set aside at random as holdout data; needed by
    /// holdout stopping.
    pub holdout_frac: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eta0: 1.0,
            c: DEFAULT_C,
            burn_in_frac: DEFAULT_BURN_IN_FRAC,
            passes: 3.0,
            scheme: "hyper".into(),
            recycle: None,
            seed: 1,
            record_every: None,
            holdout_period_frac: None,
            holdout_rel_tol: DEFAULT_HOLDOUT_REL_TOL,
            holdout_frac: None,
        }
    }
}

impl RunConfig {
    pub fn scheme_setting(&self) -> Result<SchemeSetting> {
        let kind = self.scheme.parse()?;
        Ok(SchemeSetting { kind, recycle: self.recycle })
    }

    /// Optimiser settings for `n` training rows.
    pub fn optimizer(&self, n: usize) -> Result<OptimizerConfig> {
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return Err(Error::Config("burn_in_frac must lie in [0, 1)".into()));
        }
        let mut cfg = OptimizerConfig::new(
            self.eta0,
            (self.passes * n as f64).round() as usize,
            (self.burn_in_frac * n as f64).floor() as usize,
        );
        cfg.c_exponent = self.c;
        cfg.record_every = self.record_every;
        if let Some(frac) = self.holdout_period_frac {
            cfg = cfg.with_holdout(((frac * n as f64).round() as usize).max(1), self.holdout_rel_tol);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
