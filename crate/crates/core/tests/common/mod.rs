//! Independent oracles and toy models shared by the integration tests.
#![allow(dead_code)]

use csgd::error::Result;
use csgd::model::{CompositeModel, SparseGrad};

/// Central difference with one Richardson step, error O(h^4).
pub fn fd_derivative(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-4 * x[i].abs().max(1.0);
    let central = |step: f64| {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += step;
        down[i] -= step;
        (f(&up) - f(&down)) / (2.0 * step)
    };
    let (d1, d2) = (central(h), central(h / 2.0));
    (4.0 * d2 - d1) / 3.0
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| fd_derivative(f, x, i)).collect()
}

/// `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// `l(theta; y) = -(theta - y_1)^2 / 2`, one parameter, one component. The
/// second column is ignored.
pub struct QuadToy;

impl CompositeModel for QuadToy {
    fn name(&self) -> &str {
        "quad"
    }
    fn dim(&self) -> usize {
        1
    }
    fn n_components(&self) -> usize {
        1
    }
    fn n_vars(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }
    fn component_loglik(&self, theta: &[f64], row: &[u32], _k: usize) -> Result<f64> {
        Ok(-0.5 * (theta[0] - row[0] as f64).powi(2))
    }
    fn component_grad(&self, theta: &[f64], row: &[u32], _k: usize, out: &mut SparseGrad) -> Result<()> {
        out.push(0, row[0] as f64 - theta[0]);
        Ok(())
    }
}

/// Poisson-type components: `l_k = y_k eta - exp(eta)` with
/// `eta = theta_a + 0.5 theta_b`, `a = k mod d`, `b = (k + 1) mod d`, and
/// optional non-uniform weights `1 + 0.1 k`.
pub struct PoissonToy {
    pub k: usize,
    pub d: usize,
    pub weighted: bool,
}

impl PoissonToy {
    fn eta(&self, theta: &[f64], k: usize) -> (usize, usize, f64) {
        let a = k % self.d;
        let b = (k + 1) % self.d;
        (a, b, theta[a] + 0.5 * theta[b])
    }
}

impl CompositeModel for PoissonToy {
    fn name(&self) -> &str {
        "poisson-toy"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn n_components(&self) -> usize {
        self.k
    }
    fn n_vars(&self) -> usize {
        self.k
    }
    fn param_names(&self) -> Vec<String> {
        (0..self.d).map(|i| format!("t{i}")).collect()
    }
    fn component_weight(&self, k: usize) -> f64 {
        if self.weighted {
            1.0 + 0.1 * k as f64
        } else {
            1.0
        }
    }
    fn component_loglik(&self, theta: &[f64], row: &[u32], k: usize) -> Result<f64> {
        let (_, _, eta) = self.eta(theta, k);
        Ok(row[k] as f64 * eta - eta.exp())
    }
    fn component_grad(&self, theta: &[f64], row: &[u32], k: usize, out: &mut SparseGrad) -> Result<()> {
        let (a, b, eta) = self.eta(theta, k);
        let r = row[k] as f64 - eta.exp();
        out.push(a, r);
        out.push(b, 0.5 * r);
        Ok(())
    }
}

/// Every component is constant in theta.
pub struct ZeroToy;

impl CompositeModel for ZeroToy {
    fn name(&self) -> &str {
        "zero"
    }
    fn dim(&self) -> usize {
        2
    }
    fn n_components(&self) -> usize {
        3
    }
    fn n_vars(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }
    fn component_loglik(&self, _theta: &[f64], _row: &[u32], _k: usize) -> Result<f64> {
        Ok(-1.0)
    }
    fn component_grad(&self, _theta: &[f64], _row: &[u32], _k: usize, _out: &mut SparseGrad) -> Result<()> {
        Ok(())
    }
}

/// Holm adjustment by brute force: the adjusted p-value of hypothesis `i`
/// is the smallest level at which the sequential step-down procedure
/// rejects it. Candidate levels are the products `(m - j + 1) p_(j)`
/// capped at one.
pub fn holm_brute_force(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..m).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut candidates: Vec<f64> = sorted
        .iter()
        .enumerate()
        .map(|(j, &(v, _))| ((m - j) as f64 * v).min(1.0))
        .collect();
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    let rejects_at = |alpha: f64| -> Vec<bool> {
        let mut out = vec![false; m];
        for (j, &(v, i)) in sorted.iter().enumerate() {
            if (m - j) as f64 * v <= alpha {
                out[i] = true;
            } else {
                break;
            }
        }
        out
    };
    let mut adjusted = vec![1.0; m];
    let mut done = vec![false; m];
    for &alpha in &candidates {
        let r = rejects_at(alpha);
        for i in 0..m {
            if r[i] && !done[i] {
                adjusted[i] = alpha;
                done[i] = true;
            }
        }
    }
    adjusted
}

/// Ising energy straight from the definition, with flat layout
/// `[b_1..b_p, b_12, b_13, .., b_(p-1)p]`.
pub fn ising_energy(p: usize, theta: &[f64], y: &[u32]) -> f64 {
    let mut e = 0.0;
    let mut idx = p;
    for j in 0..p {
        e += theta[j] * y[j] as f64;
    }
    for j in 0..p {
        for k in j + 1..p {
            e += theta[idx] * (y[j] * y[k]) as f64;
            idx += 1;
        }
    }
    e
}

pub fn bits(state: usize, p: usize) -> Vec<u32> {
    (0..p).map(|j| ((state >> j) & 1) as u32).collect()
}

/// Exact pmf over all `2^p` states by direct enumeration.
pub fn ising_pmf(p: usize, theta: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = (0..1usize << p).map(|s| ising_energy(p, theta, &bits(s, p))).collect();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|v| (v - max).exp()).sum();
    e.iter().map(|v| (v - max).exp() / z).collect()
}

/// Flat index of edge `(j, k)` by counting, for `j < k`.
pub fn ising_edge_slot(p: usize, j: usize, k: usize) -> usize {
    let mut idx = p;
    for a in 0..p {
        for b in a + 1..p {
            if (a, b) == (j, k) {
                return idx;
            }
            idx += 1;
        }
    }
    unreachable!()
}

/// Design vector of node `j`'s logistic conditional as `(index, value)`.
pub fn ising_design(p: usize, y: &[u32], j: usize) -> Vec<(usize, f64)> {
    let mut x = vec![(j, 1.0)];
    for k in 0..p {
        if k != j {
            let (a, b) = if j < k { (j, k) } else { (k, j) };
            x.push((ising_edge_slot(p, a, b), y[k] as f64));
        }
    }
    x
}

/// Exact `E[-Hessian]` of the summed node conditionals (curvature route)
/// and exact `E[G G^T]` of the summed scores, by enumeration.
pub fn ising_exact_h_j(p: usize, theta: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = p + p * (p - 1) / 2;
    let pmf = ising_pmf(p, theta);
    let mut h = vec![vec![0.0; d]; d];
    let mut jm = vec![vec![0.0; d]; d];
    for (s, &prob) in pmf.iter().enumerate() {
        let y = bits(s, p);
        let mut g = vec![0.0; d];
        for node in 0..p {
            let x = ising_design(p, &y, node);
            let eta: f64 = x.iter().map(|&(i, v)| theta[i] * v).sum();
            let sig = 1.0 / (1.0 + (-eta).exp());
            for &(a, va) in &x {
                g[a] += (y[node] as f64 - sig) * va;
                for &(b, vb) in &x {
                    h[a][b] += prob * sig * (1.0 - sig) * va * vb;
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                jm[a][b] += prob * g[a] * g[b];
            }
        }
    }
    (h, jm)
}

fn ln_factorial(k: u32) -> f64 {
    statrs::function::factorial::ln_factorial(k as u64)
}

/// Negative-binomial log-pmf with mean `exp(lambda)` and dispersion `xi`.
pub fn nb_logpmf(y: u32, lambda: f64, xi: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let a = 1.0 / xi;
    let m = lambda.exp();
    ln_gamma(y as f64 + a) - ln_gamma(a) - ln_factorial(y) + y as f64 * (xi * m / (1.0 + xi * m)).ln()
        - a * (1.0 + xi * m).ln()
}

/// Bivariate pmf through the latent construction: with `r = sqrt(rho)`,
/// `c = r / (1 - r)`, `alpha = 1/xi`, mixing counts `N_a, N_b` are
/// conditionally Poisson(`c G`) given `G ~ Gamma(alpha)`, and
/// `Y_j | N_j` is negative binomial with shape `alpha + N_j` and scale
/// `xi (1 - r) u_j`. The gamma integral is done in closed form and the
/// double series over `(N_a, N_b)` summed until its terms vanish.
pub fn frailty_pair_mixture(ya: u32, yb: u32, lam_a: f64, lam_b: f64, xi: f64, rho: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    assert!((0.0..1.0).contains(&rho));
    let alpha = 1.0 / xi;
    let r = rho.sqrt();
    let c = r / (1.0 - r);
    let nb = |y: u32, shape: f64, lam: f64| {
        let s = xi * (1.0 - r) * lam.exp();
        ln_gamma(shape + y as f64) - ln_gamma(shape) - ln_factorial(y) + y as f64 * (s / (1.0 + s)).ln()
            - shape * (1.0 + s).ln()
    };
    let limit = if rho == 0.0 { 1 } else { 20_000 };
    let mut total = 0.0;
    let mut prev_row = 0.0;
    for na in 0..limit {
        let mut row = 0.0;
        let mut prev = 0.0;
        for nb_ in 0..limit {
            let (fa, fb) = (na as f64, nb_ as f64);
            let log_mix = if rho == 0.0 {
                0.0
            } else {
                (fa + fb) * c.ln() + ln_gamma(alpha + fa + fb) - ln_gamma(alpha) - ln_factorial(na) - ln_factorial(nb_)
                    - (alpha + fa + fb) * (1.0 + 2.0 * c).ln()
            };
            let term = (log_mix + nb(ya, alpha + fa, lam_a) + nb(yb, alpha + fb, lam_b)).exp();
            row += term;
            // Stop only past the mode, once terms are falling and negligible.
            if term < prev && term < 1e-22 * (total + row) {
                break;
            }
            prev = term;
        }
        total += row;
        if row < prev_row && row < 1e-22 * total {
            break;
        }
        prev_row = row;
    }
    total
}
