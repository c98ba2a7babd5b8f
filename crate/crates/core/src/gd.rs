//! Deterministic full-gradient ascent, used as the numerical reference
//! estimate that the stochastic runs are compared against.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{full_grad, full_loglik, CompositeModel, ParamVector};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
/// Relative size below which objective differences are rounding noise.
const RESOLUTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `theta_t = theta_{t-1} + eta * grad`, on the per-observation objective.
    Fixed(f64),
    /// Barzilai-Borwein trial step, halved until the Armijo condition holds.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub step: StepRule,
    /// Tolerance on `max_j |d cl_n / d theta_j| / n`.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            step: StepRule::Backtracking,
            grad_tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GdResult {
    pub theta: ParamVector,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Per-observation objective at every accepted iterate, starting at theta0.
    pub objective_trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn objective<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, n: f64) -> Option<f64> {
    full_loglik(model, theta, data).ok().map(|v| v / n).filter(|v| v.is_finite())
}

fn gradient<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, n: f64) -> Result<Vec<f64>> {
    Ok(full_grad(model, theta, data)?.iter().map(|g| g / n).collect())
}

/// Gradient ascent on `cl_n(theta) / n` from `theta0`. Hitting `max_iters`
/// is reported through `converged = false`, not as an error.
pub fn gd_fit<M: CompositeModel + ?Sized>(
    model: &M,
    data: &Dataset,
    config: &GdConfig,
    theta0: &ParamVector,
) -> Result<GdResult> {
    if !(config.grad_tol > 0.0) {
        return Err(Error::Config("gradient tolerance must be positive".into()));
    }
    if let StepRule::Fixed(eta) = config.step {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("fixed step must be positive, got {eta}")));
        }
    }
    if theta0.len() != model.dim() || !theta0.is_finite() {
        return Err(Error::Config("initial value must be finite with the model's dimension".into()));
    }
    model.check_data(data)?;
    let n = data.train_rows().len() as f64;
    let mut theta = theta0.to_vec();
    let mut f = objective(model, &theta, data, n)
        .ok_or_else(|| Error::numeric(model.name(), "objective is not finite at the initial value"))?;
    let mut g = gradient(model, &theta, data, n)?;
    let mut trace = vec![f];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut stalled = false;

    while max_abs(&g) >= config.grad_tol && iterations < config.max_iters {
        match config.step {
            StepRule::Fixed(eta) => {
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t += eta * gi;
                }
                if !theta.iter().all(|t| t.is_finite()) {
                    return Err(Error::Divergence {
                        iteration: iterations + 1,
                        last_finite: theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect(),
                    });
                }
                f = objective(model, &theta, data, n).unwrap_or(f64::NEG_INFINITY);
            }
            StepRule::Backtracking => {
                let mut alpha = match &prev {
                    Some((tp, gp)) => {
                        let (mut ss, mut sy) = (0.0, 0.0);
                        for i in 0..theta.len() {
                            let s = theta[i] - tp[i];
                            let y = g[i] - gp[i];
                            ss += s * s;
                            sy += s * y;
                        }
                        if sy != 0.0 && ss > 0.0 {
                            (ss / sy.abs()).clamp(1e-10, 1e10)
                        } else {
                            1.0
                        }
                    }
                    None => 1.0,
                };
                let g2: f64 = g.iter().map(|x| x * x).sum();
                let mut accepted = None;
                for _ in 0..MAX_HALVINGS {
                    let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + alpha * gi).collect();
                    if let Some(ft) = objective(model, &trial, data, n) {
                        if ft >= f + ARMIJO * alpha * g2 {
                            accepted = Some((trial, ft, None));
                            break;
                        }
                        // Predicted gain below the resolution of the objective:
                        // accept if the trial has not passed the line maximum.
                        if alpha * g2 < RESOLUTION * (1.0 + f.abs()) {
                            let gt = gradient(model, &trial, data, n)?;
                            let slope: f64 = gt.iter().zip(&g).map(|(a, b)| a * b).sum();
                            if slope >= 0.0 {
                                accepted = Some((trial, ft, Some(gt)));
                                break;
                            }
                        }
                    }
                    alpha *= 0.5;
                }
                match accepted {
                    Some((trial, ft, gt)) => {
                        prev = Some((std::mem::replace(&mut theta, trial), g.clone()));
                        f = ft;
                        if let Some(gt) = gt {
                            g = gt;
                            trace.push(f);
                            iterations += 1;
                            continue;
                        }
                    }
                    None => {
                        stalled = true;
                        break;
                    }
                }
            }
        }
        g = gradient(model, &theta, data, n)?;
        trace.push(f);
        iterations += 1;
    }
    let final_grad_norm = max_abs(&g);
    Ok(GdResult {
        theta: ParamVector::new(theta)?,
        iterations,
        final_grad_norm,
        converged: !stalled && final_grad_norm < config.grad_tol,
        objective_trace: trace,
    })
}
