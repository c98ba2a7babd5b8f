//! Composite stochastic gradient descent with trajectory averaging.

use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{rows_loglik, CompositeModel, ParamVector, SparseGrad};
use crate::rng::{seek_iteration, StreamKey};
use crate::sampling::{ComponentSelection, Sampler, SchemeSpec};

pub const DEFAULT_C: f64 = 0.501;
pub const DEFAULT_BURN_IN_FRAC: f64 = 0.25;
pub const DEFAULT_HOLDOUT_PERIOD_FRAC: f64 = 0.25;
pub const DEFAULT_HOLDOUT_REL_TOL: f64 = 0.001;
/// Iterates with any coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutCheck {
    /// Iterations between holdout evaluations.
    pub period: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub eta0: f64,
    pub c_exponent: f64,
    /// Iterations `1..=burn_in` are excluded from the average.
    pub burn_in: usize,
    /// `T_n`, in iterations.
    pub max_iters: usize,
    pub record_every: Option<usize>,
    pub holdout: Option<HoldoutCheck>,
}

impl OptimizerConfig {
    pub fn new(eta0: f64, max_iters: usize, burn_in: usize) -> Self {
        Self {
            eta0,
            c_exponent: DEFAULT_C,
            burn_in,
            max_iters,
            record_every: None,
            holdout: None,
        }
    }

    /// `T_n = passes * n` iterations with burn-in `floor(0.25 n)`.
    pub fn for_passes(n: usize, eta0: f64, passes: f64) -> Self {
        let max_iters = (passes * n as f64).round() as usize;
        let burn_in = (DEFAULT_BURN_IN_FRAC * n as f64).floor() as usize;
        Self::new(eta0, max_iters, burn_in)
    }

    pub fn with_holdout(mut self, period: usize, rel_tol: f64) -> Self {
        self.holdout = Some(HoldoutCheck { period, rel_tol });
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = Some(every);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.c_exponent > 0.5 && self.c_exponent < 1.0) {
            return Err(Error::Config(format!(
                "stepsize exponent must lie in (0.5, 1), got {}",
                self.c_exponent
            )));
        }
        if self.burn_in >= self.max_iters {
            return Err(Error::Config(format!(
                "burn-in ({}) must be shorter than the run ({} iterations)",
                self.burn_in, self.max_iters
            )));
        }
        if self.record_every == Some(0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if let Some(h) = self.holdout {
            if h.period == 0 || !(h.rel_tol >= 0.0) {
                return Err(Error::Config("holdout period must be positive and tolerance non-negative".into()));
            }
        }
        Ok(())
    }
}

/// `eta0 * t^(-c)`.
pub fn stepsize(config: &OptimizerConfig, t: usize) -> f64 {
    debug_assert!(t >= 1);
    config.eta0 * (t as f64).powf(-config.c_exponent)
}

/// `-(1/gamma1) sum_{selected} w_k grad l_k(theta; y_i)`. Observation
/// indices in `selection` refer to `rows` (all rows when `None`).
pub fn stochastic_gradient<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    rows: Option<&[usize]>,
    selection: &ComponentSelection,
    gamma1: f64,
) -> Result<ParamVector> {
    let mut out = vec![0.0; model.dim()];
    let mut scratch = SparseGrad::new();
    accumulate_selection(model, theta, data, rows, selection, -1.0 / gamma1, &mut out, &mut scratch)?;
    Ok(ParamVector::from_vec_unchecked(out))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_selection<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    rows: Option<&[usize]>,
    selection: &ComponentSelection,
    scale: f64,
    out: &mut [f64],
    scratch: &mut SparseGrad,
) -> Result<()> {
    for idx in &selection.pairs {
        let row = match rows {
            Some(r) => r[idx.observation],
            None => idx.observation,
        };
        scratch.clear();
        model.component_grad(theta, data.row(row), idx.component, scratch)?;
        scratch.add_scaled_to(out, scale * model.component_weight(idx.component));
    }
    Ok(())
}

/// True iff the last holdout value improves on the previous one by less
/// than `rel_tol` in relative terms.
pub fn holdout_stop_check(curve: &[(usize, f64)], rel_tol: f64) -> bool {
    match curve {
        [.., (_, prev), (_, last)] => (prev - last) / prev.abs() < rel_tol,
        _ => false,
    }
}

/// Wall-clock time spent in each part of an iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub sampling: Duration,
    pub approximation: Duration,
    pub update: Duration,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_bar: ParamVector,
    pub theta_last: ParamVector,
    pub iterations_run: usize,
    pub scheme: SchemeSpec,
    pub trajectory: Option<Vec<(usize, ParamVector)>>,
    pub holdout_curve: Option<Vec<(usize, f64)>>,
    pub stopped_early: bool,
    pub timings: StepTimings,
}

/// Mean holdout negative composite log-likelihood per observation.
pub fn holdout_objective<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<f64> {
    let rows = data.holdout_rows();
    if rows.is_empty() {
        return Err(Error::Config("holdout evaluation needs a dataset with holdout rows".into()));
    }
    Ok(-rows_loglik(model, theta, data, &rows)? / rows.len() as f64)
}

/// Iteration-by-iteration driver. [`fit`] runs it to completion; the
/// experiment harness reads averages at intermediate checkpoints.
pub struct SgdRunner<'a, M: CompositeModel + ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    rows: Option<Vec<usize>>,
    config: OptimizerConfig,
    sampler: Sampler,
    rng: ChaCha8Rng,
    theta: Vec<f64>,
    delta: Vec<f64>,
    /// Sum of `theta_t - anchor` over the averaged iterates.
    sum: Vec<f64>,
    anchor: Vec<f64>,
    averaged: usize,
    t: usize,
    selection: ComponentSelection,
    scratch: SparseGrad,
    trajectory: Option<Vec<(usize, ParamVector)>>,
    timings: StepTimings,
}

impl<'a, M: CompositeModel + ?Sized> SgdRunner<'a, M> {
    /// Sampling is over the training rows of `data`; the scheme's `n` must
    /// equal their number and its `k` the model's component count.
    pub fn new(
        model: &'a M,
        data: &'a Dataset,
        scheme: SchemeSpec,
        config: OptimizerConfig,
        theta0: &ParamVector,
        stream: StreamKey,
    ) -> Result<Self> {
        config.validate()?;
        model.check_data(data)?;
        if theta0.len() != model.dim() || !theta0.is_finite() {
            return Err(Error::Config(format!(
                "initial value must be a finite vector of length {}",
                model.dim()
            )));
        }
        let rows = if data.has_holdout() { Some(data.train_rows()) } else { None };
        let n = rows.as_ref().map_or(data.n_rows(), Vec::len);
        if scheme.n != n || scheme.k != model.n_components() {
            return Err(Error::Config(format!(
                "scheme is for n = {}, K = {} but the data has {} training rows and the model {} components",
                scheme.n,
                scheme.k,
                n,
                model.n_components()
            )));
        }
        if config.holdout.is_some() && !data.holdout_rows().iter().any(|_| true) {
            return Err(Error::Config("holdout stopping requires a dataset with a holdout mask".into()));
        }
        let d = model.dim();
        Ok(Self {
            model,
            data,
            rows,
            sampler: Sampler::new(scheme)?,
            rng: stream.rng(),
            theta: theta0.to_vec(),
            delta: vec![0.0; d],
            sum: vec![0.0; d],
            anchor: theta0.to_vec(),
            averaged: 0,
            t: 0,
            selection: ComponentSelection::default(),
            scratch: SparseGrad::new(),
            trajectory: config.record_every.map(|_| Vec::new()),
            timings: StepTimings::default(),
            config,
        })
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Mean of the post-burn-in iterates so far; the current iterate before
    /// the burn-in has elapsed.
    pub fn theta_bar(&self) -> ParamVector {
        if self.averaged == 0 {
            return ParamVector::from_vec_unchecked(self.theta.clone());
        }
        let c = self.averaged as f64;
        ParamVector::from_vec_unchecked(self.sum.iter().zip(&self.anchor).map(|(s, a)| a + s / c).collect())
    }

    /// One iteration of sample, approximate, update.
    pub fn step(&mut self) -> Result<()> {
        let t = self.t + 1;
        let clock = Instant::now();
        seek_iteration(&mut self.rng, t as u64);
        self.sampler.next_into(&mut self.rng, &mut self.selection)?;
        let sampled = Instant::now();

        let scheme = self.sampler.scheme();
        let n = scheme.n as f64;
        let scale = stepsize(&self.config, t) / (n * scheme.gamma1());
        self.delta.iter_mut().for_each(|v| *v = 0.0);
        accumulate_selection(
            self.model,
            &self.theta,
            self.data,
            self.rows.as_deref(),
            &self.selection,
            scale,
            &mut self.delta,
            &mut self.scratch,
        )?;
        let approximated = Instant::now();

        let mut bad = false;
        for (th, dv) in self.theta.iter().zip(&self.delta) {
            let next = th + dv;
            if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
                bad = true;
                break;
            }
        }
        if bad {
            return Err(Error::Divergence {
                iteration: t,
                last_finite: self.theta.clone(),
            });
        }
        for (th, dv) in self.theta.iter_mut().zip(&self.delta) {
            *th += dv;
        }
        if t > self.config.burn_in {
            for ((s, th), a) in self.sum.iter_mut().zip(&self.theta).zip(&self.anchor) {
                *s += th - a;
            }
            self.averaged += 1;
        }
        if let (Some(every), Some(traj)) = (self.config.record_every, self.trajectory.as_mut()) {
            if t % every == 0 {
                traj.push((t, ParamVector::from_vec_unchecked(self.theta.clone())));
            }
        }
        self.t = t;
        let done = Instant::now();
        self.timings.sampling += sampled - clock;
        self.timings.approximation += approximated - sampled;
        self.timings.update += done - approximated;
        Ok(())
    }

    /// Runs to iteration `t` (no-op if already there).
    pub fn run_until(&mut self, t: usize) -> Result<()> {
        while self.t < t {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to `max_iters`, or until the holdout rule fires.
    pub fn finish(mut self) -> Result<FitResult> {
        let mut curve = self.config.holdout.map(|_| Vec::new());
        let mut stopped_early = false;
        while self.t < self.config.max_iters {
            self.step()?;
            if let (Some(h), Some(curve)) = (self.config.holdout, curve.as_mut()) {
                if self.t % h.period == 0 {
                    let at = if self.t > self.config.burn_in {
                        self.theta_bar().into_vec()
                    } else {
                        self.theta.clone()
                    };
                    curve.push((self.t, holdout_objective(self.model, &at, self.data)?));
                    if holdout_stop_check(curve, h.rel_tol) && self.t < self.config.max_iters {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(FitResult {
            theta_bar: self.theta_bar(),
            theta_last: ParamVector::from_vec_unchecked(self.theta.clone()),
            iterations_run: self.t,
            scheme: self.sampler.scheme().clone(),
            trajectory: self.trajectory.take(),
            holdout_curve: curve,
            stopped_early,
            timings: self.timings,
        })
    }
}

/// Runs the optimiser for `config.max_iters` iterations, or until the
/// holdout rule stops it.
pub fn fit<M: CompositeModel + ?Sized>(
    model: &M,
    data: &Dataset,
    scheme: SchemeSpec,
    config: OptimizerConfig,
    theta0: &ParamVector,
    stream: StreamKey,
) -> Result<FitResult> {
    SgdRunner::new(model, data, scheme, config, theta0, stream)?.finish()
}
