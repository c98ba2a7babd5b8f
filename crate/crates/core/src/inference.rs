//! Sandwich-type covariance of the averaged iterate, Wald tests and Holm
//! adjustment.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CompositeModel, SparseGrad, REDUCTION_CHUNK};
use crate::sampling::SchemeMoments;

/// Relative diagonal jitter tried once when `H` fails to factorise.
pub const JITTER_FRACTION: f64 = 1e-8;

/// Chunks reduced concurrently before being folded in order.
const CHUNKS_PER_BATCH: usize = 64;

/// Asymptotic setting for the covariance of the averaged iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Data noise only: `H^-1 J H^-1 / n`.
    R1,
    /// Optimisation noise only: `H^-1 V H^-1 / T_n`.
    R2,
    /// Both.
    R3,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::R1 => "R1",
            Regime::R2 => "R2",
            Regime::R3 => "R3",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "r1" | "regime1" => Ok(Regime::R1),
            "2" | "r2" | "regime2" => Ok(Regime::R2),
            "3" | "r3" | "regime3" => Ok(Regime::R3),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::R1, Regime::R2, Regime::R3];
}

struct Accum {
    h: Vec<f64>,
    j: Vec<f64>,
}

impl Accum {
    fn new(d: usize) -> Self {
        Self {
            h: vec![0.0; d * d],
            j: vec![0.0; d * d],
        }
    }

    fn add(&mut self, other: &Accum) {
        for (a, b) in self.h.iter_mut().zip(&other.h) {
            *a += b;
        }
        for (a, b) in self.j.iter_mut().zip(&other.j) {
            *a += b;
        }
    }
}

/// Upper-triangle outer-product accumulation of a sparse vector whose
/// indices may repeat.
fn add_outer(target: &mut [f64], d: usize, entries: &[(usize, f64)]) {
    for &(a, va) in entries {
        for &(b, vb) in entries {
            if a <= b {
                target[a * d + b] += va * vb;
            }
        }
    }
}

fn collapse(entries: &mut Vec<(usize, f64)>) {
    entries.sort_unstable_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for &(i, v) in entries.iter() {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => out.push((i, v)),
        }
    }
    *entries = out;
}

fn chunk_accum<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset, rows: &[usize]) -> Result<Accum> {
    let d = model.dim();
    let mut acc = Accum::new(d);
    let mut comp = SparseGrad::new();
    let mut total: Vec<(usize, f64)> = Vec::new();
    for &i in rows {
        let row = data.row(i);
        total.clear();
        for k in 0..model.n_components() {
            comp.clear();
            model.component_grad(theta, row, k, &mut comp)?;
            let mut e = comp.entries().to_vec();
            collapse(&mut e);
            add_outer(&mut acc.h, d, &e);
            total.extend_from_slice(&e);
        }
        collapse(&mut total);
        add_outer(&mut acc.j, d, &total);
    }
    Ok(acc)
}

fn symmetric_from_upper(upper: &[f64], d: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |a, b| {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        upper[i * d + j] * scale
    })
}

fn check_uniform_weights<M: CompositeModel + ?Sized>(model: &M) -> Result<()> {
    let w0 = model.component_weight(0);
    if (1..model.n_components()).any(|k| model.component_weight(k) != w0) {
        return Err(Error::Capability(
            "sandwich estimators assume uniform component weights".into(),
        ));
    }
    Ok(())
}

/// `(H_hat, J_hat)` over the training rows at `theta`:
/// `H_hat = (1/n) sum_i sum_k g_ik g_ik^T` and
/// `J_hat = (1/n) sum_i (sum_k g_ik)(sum_k g_ik)^T`, with `g_ik` the
/// unweighted component scores. Both are exactly symmetric.
pub fn estimate_h_j<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_uniform_weights(model)?;
    let rows = data.train_rows();
    let d = model.dim();
    let mut total = Accum::new(d);
    let chunks: Vec<&[usize]> = rows.chunks(REDUCTION_CHUNK).collect();
    for batch in chunks.chunks(CHUNKS_PER_BATCH) {
        let parts = batch
            .par_iter()
            .map(|c| chunk_accum(model, theta, data, c))
            .collect::<Result<Vec<_>>>()?;
        for p in &parts {
            total.add(p);
        }
    }
    let scale = 1.0 / rows.len() as f64;
    Ok((symmetric_from_upper(&total.h, d, scale), symmetric_from_upper(&total.j, d, scale)))
}

pub fn estimate_j<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    estimate_h_j(model, theta, data).map(|(_, j)| j)
}

pub fn estimate_h<M: CompositeModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    estimate_h_j(model, theta, data).map(|(h, _)| h)
}

/// Sampling-noise covariance
/// `gamma1^-2 n^-1 (gamma1 - gamma3) H + n^-1 (gamma1^-2 gamma3 - 1) J`,
/// keeping the finite-`n` factors.
pub fn v_p(moments: &SchemeMoments, h: &DMatrix<f64>, j: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let g1 = moments.gamma1;
    let g3 = moments.gamma3;
    let a = (g1 - g3) / (g1 * g1 * nf);
    let b = (g3 / (g1 * g1) - 1.0) / nf;
    h * a + j * b
}

/// Inverse of a symmetric positive-definite matrix by Cholesky, retrying
/// once with diagonal jitter.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(symmetrize(ch.inverse()));
    }
    let d = m.nrows();
    let mean_diag = m.diagonal().sum() / d.max(1) as f64;
    let jitter = JITTER_FRACTION * mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut jittered = m.clone();
    for i in 0..d {
        jittered[(i, i)] += jitter;
    }
    match jittered.cholesky() {
        Some(ch) => Ok(symmetrize(ch.inverse())),
        None => Err(Error::Conditioning { jitter }),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn sandwich_form(h_inv: &DMatrix<f64>, middle: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(h_inv * middle * h_inv)
}

/// Covariance of the averaged iterate under `regime`.
pub fn cov_theta_bar(
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    v: &DMatrix<f64>,
    regime: Regime,
    t_n: usize,
    n: usize,
) -> Result<DMatrix<f64>> {
    let h_inv = spd_inverse(h)?;
    let data_part = || sandwich_form(&h_inv, j) / n as f64;
    let opt_part = || sandwich_form(&h_inv, v) / t_n as f64;
    Ok(match regime {
        Regime::R1 => data_part(),
        Regime::R2 => opt_part(),
        Regime::R3 => opt_part() + data_part(),
    })
}

#[derive(Debug, Clone)]
pub struct SandwichEstimate {
    pub h_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    pub v_p: DMatrix<f64>,
    pub regime: Regime,
    pub cov_theta_bar: DMatrix<f64>,
    pub t_n: usize,
    pub n: usize,
}

impl SandwichEstimate {
    pub fn std_errors(&self) -> Result<Vec<f64>> {
        std_errors(&self.cov_theta_bar)
    }

    /// Covariance under another regime, reusing `H_hat`, `J_hat`, `V_P`.
    pub fn with_regime(&self, regime: Regime) -> Result<SandwichEstimate> {
        let cov = cov_theta_bar(&self.h_hat, &self.j_hat, &self.v_p, regime, self.t_n, self.n)?;
        Ok(SandwichEstimate {
            regime,
            cov_theta_bar: cov,
            ..self.clone()
        })
    }
}

/// Full plug-in pipeline at `theta` (normally the averaged iterate).
pub fn sandwich<M: CompositeModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    moments: &SchemeMoments,
    regime: Regime,
    t_n: usize,
) -> Result<SandwichEstimate> {
    let (h, j) = estimate_h_j(model, theta, data)?;
    let n = data.train_rows().len();
    let v = v_p(moments, &h, &j, n);
    let cov = cov_theta_bar(&h, &j, &v, regime, t_n, n)?;
    Ok(SandwichEstimate {
        h_hat: h,
        j_hat: j,
        v_p: v,
        regime,
        cov_theta_bar: cov,
        t_n,
        n,
    })
}

pub fn std_errors(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    cov.diagonal()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::numeric("covariance", format!("negative variance {v:e} for parameter {i}")))
            }
        })
        .collect()
}

/// Two-sided standard normal quantile for coverage `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Wald intervals `theta_j -+ z sqrt(cov_jj)`.
pub fn confidence_intervals(theta_bar: &[f64], cov: &DMatrix<f64>, level: f64) -> Result<Vec<(f64, f64)>> {
    let z = normal_critical_value(level)?;
    let se = std_errors(cov)?;
    Ok(theta_bar.iter().zip(&se).map(|(&t, &s)| (t - z * s, t + z * s)).collect())
}

/// Holm step-down adjusted p-values, returned in input order.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub reject: bool,
}

/// Two-sided Wald tests of `theta_j = 0` with Holm adjustment over the
/// listed coordinates (all when `subset` is `None`).
pub fn wald_tests(theta_bar: &[f64], cov: &DMatrix<f64>, subset: Option<&[usize]>, level: f64) -> Result<Vec<TestResult>> {
    let se = std_errors(cov)?;
    let idx: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..theta_bar.len()).collect(),
    };
    let raw: Vec<(f64, f64, f64)> = idx
        .iter()
        .map(|&i| {
            let z = theta_bar[i] / se[i];
            let p = if z.is_nan() { 1.0 } else { erfc(z.abs() / std::f64::consts::SQRT_2) };
            (theta_bar[i], se[i], p.clamp(0.0, 1.0))
        })
        .collect();
    let adjusted = holm_adjust(&raw.iter().map(|r| r.2).collect::<Vec<_>>());
    Ok(raw
        .iter()
        .zip(adjusted)
        .map(|(&(estimate, std_error, p_value), p_adjusted)| TestResult {
            estimate,
            std_error,
            z: estimate / std_error,
            p_value,
            p_adjusted,
            reject: p_adjusted < level,
        })
        .collect())
}
