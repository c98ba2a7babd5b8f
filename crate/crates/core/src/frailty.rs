//! Correlated gamma-frailty Poisson model for count vectors, fitted through
//! its closed-form bivariate margins.
//!
//! `Y_j | V_j ~ Poisson(V_j exp(lambda_j))` with `V_j ~ Gamma(1/xi, 1/xi)`
//! and exchangeable frailty correlation `rho`. Components are the `p(p-1)/2`
//! pairwise log-margins, ordered lexicographically by pair.
//!
//! Unconstrained layout: `(lambda_1, .., lambda_p, theta_xi, theta_rho)` with
//! `xi = exp(theta_xi)` and `rho = tanh(theta_rho)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::model::{CompositeModel, ParamVector, SparseGrad};
use crate::numerics::compensated_sum;

/// Largest count accepted in either margin of a pair.
pub const MAX_PAIR_COUNT: u32 = 170;

/// Series whose sum falls below this fraction of its largest term are
/// treated as lost to cancellation.
const CANCELLATION_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FrailtyParams {
    pub lambdas: Vec<f64>,
    pub xi: f64,
    pub rho: f64,
}

impl FrailtyParams {
    pub fn new(lambdas: Vec<f64>, xi: f64, rho: f64) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::Config("frailty model needs p >= 2".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("baseline log-rates must be finite".into()));
        }
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::Config(format!("frailty variance must be positive, got {xi}")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::Config(format!("frailty correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { lambdas, xi, rho })
    }

    pub fn p(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        self.p() + 2
    }

    pub fn to_unconstrained(&self) -> ParamVector {
        let mut v = self.lambdas.clone();
        v.push(self.xi.ln());
        v.push(self.rho.atanh());
        ParamVector::from_vec_unchecked(v)
    }

    pub fn from_unconstrained(p: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != p + 2 {
            return Err(Error::Config(format!(
                "frailty model with p = {p} has {} parameters, got {}",
                p + 2,
                theta.len()
            )));
        }
        let rho = theta[p + 1].tanh();
        if rho.abs() >= 1.0 {
            return Err(Error::numeric("frailty", format!("correlation parameter {} saturates", theta[p + 1])));
        }
        Self::new(theta[..p].to_vec(), theta[p].exp(), rho)
    }
}

/// Parameter names: `lambda1..lambdap`, `log_xi`, `atanh_rho`.
pub fn frailty_param_names(p: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=p).map(|j| format!("lambda{j}")).collect();
    names.push("log_xi".into());
    names.push("atanh_rho".into());
    names
}

/// `lambda_j = 0.25` for even and `-0.25` for odd 1-based `j`, `xi = 0.25`,
/// `rho = 0.5`.
pub fn frailty_truth(p: usize) -> Result<FrailtyParams> {
    let lambdas = (1..=p).map(|j| if j % 2 == 0 { 0.25 } else { -0.25 }).collect();
    FrailtyParams::new(lambdas, 0.25, 0.5)
}

/// Uniform pair weight `2 / (p (p - 1))`, which turns the pairwise objective
/// into an average over pairs.
pub fn scaled_pair_weight(p: usize) -> f64 {
    assert!(p >= 2, "pair weight needs p >= 2");
    2.0 / (p as f64 * (p as f64 - 1.0))
}

/// Value and gradient of one bivariate log-margin. The gradient is with
/// respect to `(lambda_a, lambda_b, theta_xi, theta_rho)`.
#[derive(Debug, Clone, Copy)]
pub struct PairEval {
    pub value: f64,
    pub grad: [f64; 4],
}

struct Pieces {
    delta: f64,
    d_a: f64,
    d_b: f64,
    /// Partial derivatives along (lambda_a, lambda_b, xi, rho).
    delta_v: [f64; 4],
    d_a_v: [f64; 4],
    d_b_v: [f64; 4],
}

fn pieces(lam_a: f64, lam_b: f64, xi: f64, rho: f64) -> Pieces {
    let (u_a, u_b) = (lam_a.exp(), lam_b.exp());
    let q = 1.0 - rho;
    let uu = u_a * u_b;
    Pieces {
        delta: 1.0 + xi * u_a + xi * u_b + xi * xi * uu * q,
        d_a: 1.0 + xi * u_b * q,
        d_b: 1.0 + xi * u_a * q,
        delta_v: [
            xi * u_a + xi * xi * uu * q,
            xi * u_b + xi * xi * uu * q,
            u_a + u_b + 2.0 * xi * uu * q,
            -xi * xi * uu,
        ],
        d_a_v: [0.0, xi * u_b * q, u_b * q, -xi * u_b],
        d_b_v: [xi * u_a * q, 0.0, u_a * q, -xi * u_a],
    }
}

/// Bivariate log-margin `log P(Y_a = a, Y_b = b)` in constrained
/// coordinates. Accepts the shared-frailty limit `rho = 1`.
pub fn pair_loglik_constrained(lam_a: f64, lam_b: f64, xi: f64, rho: f64, a: u32, b: u32) -> Result<f64> {
    pair_eval_inner(lam_a, lam_b, xi, rho, a, b, false).map(|e| e.value)
}

/// Value and unconstrained-coordinate gradient of one pair.
pub fn pair_eval(lam_a: f64, lam_b: f64, xi: f64, rho: f64, a: u32, b: u32) -> Result<PairEval> {
    pair_eval_inner(lam_a, lam_b, xi, rho, a, b, true)
}

fn pair_eval_inner(lam_a: f64, lam_b: f64, xi: f64, rho: f64, a: u32, b: u32, want_grad: bool) -> Result<PairEval> {
    if a > MAX_PAIR_COUNT || b > MAX_PAIR_COUNT {
        return Err(Error::numeric(
            "frailty pair",
            format!("counts ({a}, {b}) exceed the supported maximum {MAX_PAIR_COUNT}"),
        ));
    }
    if !(xi > 0.0 && rho > -1.0 && rho <= 1.0 && lam_a.is_finite() && lam_b.is_finite()) {
        return Err(Error::numeric(
            "frailty pair",
            format!("parameters outside the domain: xi = {xi}, rho = {rho}"),
        ));
    }
    let pc = pieces(lam_a, lam_b, xi, rho);
    let (af, bf) = (a as f64, b as f64);
    let (m1, m2) = (a.min(b) as usize, a.max(b) as usize);
    let inv_xi = 1.0 / xi;
    let log_delta = pc.delta.ln();

    let mut value = af * lam_a + bf * lam_b - ln_gamma(af + 1.0) - ln_gamma(bf + 1.0);
    let mut rising_grad = 0.0;
    value += compensated_sum((0..m2).map(|s| {
        let t = s as f64;
        rising_grad += t / (1.0 + t * xi);
        (1.0 + t * xi).ln()
    }));
    value += af * pc.d_a.ln() + bf * pc.d_b.ln() - (af + bf + inv_xi) * log_delta;

    // The finite alternating sum over s is a terminating 2F1 in
    // f = delta q / (d_a d_b). Moved to argument g = 1 - f = rho / (d_a d_b)
    // it reads prod_{i<m1} (1 + i xi) * sum_j C(m1,j) C(m2,j) j! g^j / ((alpha)_j j!),
    // whose terms share one sign for rho >= 0.
    let alpha = inv_xi;
    let g = rho / (pc.d_a * pc.d_b);
    let n_terms = if g == 0.0 { 1 } else { m1 + 1 };
    let mut log_mag = [0.0f64; MAX_PAIR_COUNT as usize + 1];
    // d log t_j / d alpha
    let mut dlog_alpha = [0.0f64; MAX_PAIR_COUNT as usize + 1];
    let log_g = g.abs().ln();
    for j in 0..n_terms.saturating_sub(1) {
        let jf = j as f64;
        let ratio = ((m1 - j) * (m2 - j)) as f64 / ((jf + 1.0) * (alpha + jf));
        log_mag[j + 1] = log_mag[j] + ratio.ln() + log_g;
        dlog_alpha[j + 1] = dlog_alpha[j] - 1.0 / (alpha + jf);
    }
    let scale = log_mag[..n_terms].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights = [0.0f64; MAX_PAIR_COUNT as usize + 1];
    let mut largest = 0.0f64;
    for j in 0..n_terms {
        let w = (log_mag[j] - scale).exp();
        largest = largest.max(w);
        weights[j] = if g < 0.0 && j % 2 == 1 { -w } else { w };
    }
    let scaled = compensated_sum(weights[..n_terms].iter().copied());
    if !(scaled > 0.0) && scaled.abs() >= CANCELLATION_FLOOR * largest {
        return Err(Error::numeric(
            "frailty pair",
            format!("negative pair probability at counts ({a}, {b}), xi = {xi}, rho = {rho}; the margin is not a distribution there"),
        ));
    }
    if !(scaled > 0.0) || scaled < CANCELLATION_FLOOR * largest {
        return Err(Error::numeric(
            "frailty pair",
            format!("alternating series lost to cancellation at counts ({a}, {b}), xi = {xi}, rho = {rho}"),
        ));
    }
    let mut lead_grad = 0.0;
    value += compensated_sum((0..m1).map(|i| {
        let t = i as f64;
        lead_grad += t / (1.0 + t * xi);
        (1.0 + t * xi).ln()
    }));
    value += scale + scaled.ln();
    if !value.is_finite() {
        return Err(Error::numeric(
            "frailty pair",
            format!("non-finite log-margin at counts ({a}, {b}), xi = {xi}, rho = {rho}"),
        ));
    }
    if !want_grad {
        return Ok(PairEval { value, grad: [0.0; 4] });
    }

    // Series sums for d/dg (as sum_j j t_j / g) and d/dalpha.
    let mut s_g = 0.0;
    let mut s_alpha = 0.0;
    for j in 0..n_terms {
        s_g += weights[j] * j as f64;
        s_alpha += weights[j] * dlog_alpha[j];
    }
    s_g /= scaled;
    s_alpha /= scaled;

    // Constrained partials along (lambda_a, lambda_b, xi, rho).
    let mut gr = [0.0f64; 4];
    for v in 0..4 {
        let dlog_delta = pc.delta_v[v] / pc.delta;
        let dlog_da = pc.d_a_v[v] / pc.d_a;
        let dlog_db = pc.d_b_v[v] / pc.d_b;
        let mut gv = af * dlog_da + bf * dlog_db - (af + bf + inv_xi) * dlog_delta;
        // Along rho g itself may vanish, so differentiate g directly.
        let series = if v == 3 {
            let dg = (1.0 - rho * (dlog_da + dlog_db)) / (pc.d_a * pc.d_b);
            let dlog_f_dg = if g != 0.0 { s_g / g } else { (m1 * m2) as f64 / alpha };
            dlog_f_dg * dg
        } else {
            -s_g * (dlog_da + dlog_db)
        };
        gv += series;
        gr[v] = gv;
    }
    gr[0] += af;
    gr[1] += bf;
    gr[2] += rising_grad + lead_grad + inv_xi * inv_xi * log_delta - s_alpha * inv_xi * inv_xi;
    let g = gr;
    // Chain rule to (theta_xi, theta_rho).
    let grad = [g[0], g[1], g[2] * xi, g[3] * (1.0 - rho * rho)];
    Ok(PairEval { value, grad })
}

/// Log-margin of the pair `(j, k)` at observed counts `(y_j, y_k)`.
pub fn pair_loglik(params: &FrailtyParams, y_j: u32, y_k: u32, j: usize, k: usize) -> Result<f64> {
    pair_loglik_constrained(params.lambdas[j], params.lambdas[k], params.xi, params.rho, y_j, y_k)
}

/// Dense unconstrained-coordinate gradient of [`pair_loglik`]; only the
/// entries of `lambda_j`, `lambda_k`, `theta_xi` and `theta_rho` are
/// non-zero.
pub fn pair_grad(params: &FrailtyParams, y_j: u32, y_k: u32, j: usize, k: usize) -> Result<ParamVector> {
    let p = params.p();
    let e = pair_eval(params.lambdas[j], params.lambdas[k], params.xi, params.rho, y_j, y_k)?;
    let mut out = vec![0.0; p + 2];
    out[j] += e.grad[0];
    out[k] += e.grad[1];
    out[p] = e.grad[2];
    out[p + 1] = e.grad[3];
    Ok(ParamVector::from_vec_unchecked(out))
}

/// Exchangeable multivariate gamma frailties with unit mean, variance `xi`
/// and pairwise correlation `rho`, built so that the bivariate margins of
/// the resulting counts are exactly [`pair_loglik`]: with `r = sqrt(rho)`
/// and `alpha = 1 / xi`, `G ~ Gamma(alpha, 1)`,
/// `N_j | G ~ Poisson(r G / (1 - r))` and
/// `V_j | N_j ~ xi (1 - r) Gamma(alpha + N_j, 1)`. For integer `2 / xi`
/// this is a scaled diagonal of a Wishart matrix with equicorrelated
/// Gaussian columns.
#[derive(Debug, Clone)]
pub struct FrailtySampler {
    xi: f64,
    alpha: f64,
    r: f64,
    mix: f64,
    shared: Gamma<f64>,
}

impl FrailtySampler {
    pub fn new(xi: f64, rho: f64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::Config(format!("frailty variance must be positive, got {xi}")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("simulation needs frailty correlation in [0, 1), got {rho}")));
        }
        let alpha = 1.0 / xi;
        let r = rho.sqrt();
        Ok(Self {
            xi,
            alpha,
            r,
            mix: r / (1.0 - r),
            shared: Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    /// Fills `out` with one draw of the frailty vector.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let g = self.shared.sample(rng);
        let rate = self.mix * g;
        for v in out.iter_mut() {
            let extra = if rate > 0.0 {
                Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(rng)
            } else {
                0.0
            };
            let gamma = Gamma::new(self.alpha + extra, 1.0).map_err(|e| Error::Config(e.to_string()))?;
            *v = self.xi * (1.0 - self.r) * gamma.sample(rng);
        }
        Ok(())
    }
}

/// `n` draws of the count vector: frailties from [`FrailtySampler`], then
/// `Y_j | V_j ~ Poisson(V_j exp(lambda_j))`.
pub fn simulate_frailty<R: Rng + ?Sized>(params: &FrailtyParams, n: usize, rng: &mut R) -> Result<Dataset> {
    let sampler = FrailtySampler::new(params.xi, params.rho)?;
    let p = params.p();
    let rates: Vec<f64> = params.lambdas.iter().map(|l| l.exp()).collect();
    let mut frailty = vec![0.0; p];
    let mut values = Vec::with_capacity(n * p);
    for _ in 0..n {
        sampler.draw(rng, &mut frailty)?;
        for (v, u) in frailty.iter().zip(&rates) {
            let rate = v * u;
            let y = if rate > 0.0 {
                Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(rng)
            } else {
                0.0
            };
            values.push(y as u32);
        }
    }
    Dataset::new(values, n, p, DataKind::Count)
}

/// Pairwise composite likelihood of the frailty model.
#[derive(Debug, Clone)]
pub struct FrailtyModel {
    p: usize,
    pairs: Vec<(usize, usize)>,
    weight: f64,
}

impl FrailtyModel {
    /// Unit pair weights.
    pub fn new(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::Config(format!("frailty model needs p >= 2, got {p}")));
        }
        let pairs = (0..p).flat_map(|j| (j + 1..p).map(move |k| (j, k))).collect();
        Ok(Self { p, pairs, weight: 1.0 })
    }

    /// Pair weights `2 / (p (p - 1))`, so the objective is a per-pair average.
    pub fn scaled(p: usize) -> Result<Self> {
        let mut m = Self::new(p)?;
        m.weight = scaled_pair_weight(p);
        Ok(m)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    fn unpack(&self, theta: &[f64]) -> Result<(f64, f64)> {
        let xi = theta[self.p].exp();
        let rho = theta[self.p + 1].tanh();
        if !(xi > 0.0 && xi.is_finite() && rho.abs() < 1.0) {
            return Err(Error::numeric(
                "frailty",
                format!("unconstrained dispersion/correlation ({}, {}) out of range", theta[self.p], theta[self.p + 1]),
            ));
        }
        Ok((xi, rho))
    }
}

impl CompositeModel for FrailtyModel {
    fn name(&self) -> &str {
        "frailty"
    }

    fn dim(&self) -> usize {
        self.p + 2
    }

    fn n_components(&self) -> usize {
        self.pairs.len()
    }

    fn n_vars(&self) -> usize {
        self.p
    }

    fn param_names(&self) -> Vec<String> {
        frailty_param_names(self.p)
    }

    fn component_weight(&self, _k: usize) -> f64 {
        self.weight
    }

    fn component_loglik(&self, theta: &[f64], row: &[u32], k: usize) -> Result<f64> {
        let (xi, rho) = self.unpack(theta)?;
        let (j, l) = self.pairs[k];
        pair_loglik_constrained(theta[j], theta[l], xi, rho, row[j], row[l])
    }

    fn component_grad(&self, theta: &[f64], row: &[u32], k: usize, out: &mut SparseGrad) -> Result<()> {
        let (xi, rho) = self.unpack(theta)?;
        let (j, l) = self.pairs[k];
        let e = pair_eval(theta[j], theta[l], xi, rho, row[j], row[l])?;
        out.push(j, e.grad[0]);
        out.push(l, e.grad[1]);
        out.push(self.p, e.grad[2]);
        out.push(self.p + 1, e.grad[3]);
        Ok(())
    }
}
