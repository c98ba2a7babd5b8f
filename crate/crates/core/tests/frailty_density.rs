mod common;

use common::{fd_gradient, frailty_pair_mixture, nb_logpmf, rel_err};
use csgd::frailty::*;
use csgd::model::{sub_grad, sub_loglik, CompositeModel, ComponentIndex};
use csgd::rng::{Purpose, StreamKey};
use csgd::{DataKind, Dataset};
use rand::Rng;

#[test]
fn matches_laplace_transform_derivatives() {
    // log P(y_a, y_b) from mixed derivatives of the bivariate Laplace
    // transform (1 + xi s1 + xi s2 + xi^2 (1 - rho) s1 s2)^(-1/xi),
    // evaluated in 40-digit arithmetic.
    let cases = [
        (2, 3, -0.25, 0.25, 0.25, 0.5, -4.241_601_898_268_904_386_5),
        (5, 1, 0.3, -0.1, 1.0, 0.9, -5.025_034_100_246_895_384_3),
        (12, 9, 0.5, 0.7, 0.1, 0.2, -18.650_855_009_428_964_902),
        (0, 7, 0.0, 0.0, 2.0, -0.3, -5.162_502_787_254_004_478_7),
    ];
    for (a, b, la, lb, xi, rho, expect) in cases {
        let v = pair_loglik_constrained(la, lb, xi, rho, a, b).unwrap();
        assert!((v - expect).abs() < 1e-11, "({a},{b}): {v} vs {expect}");
    }
}

#[test]
fn matches_latent_mixture_oracle() {
    for &(xi, rho) in &[(0.25, 0.5), (1.0, 0.3), (0.1, 0.9), (0.5, 0.0)] {
        for &(a, b) in &[(0u32, 0u32), (1, 0), (0, 3), (2, 5), (7, 7), (15, 4)] {
            let (la, lb) = (-0.25, 0.4);
            let got = pair_loglik_constrained(la, lb, xi, rho, a, b).unwrap();
            let oracle = frailty_pair_mixture(a, b, la, lb, xi, rho).ln();
            assert!(
                (got - oracle).abs() < 1e-9,
                "xi={xi} rho={rho} y=({a},{b}): {got} vs {oracle}"
            );
        }
    }
}

#[test]
fn independence_factorization() {
    for &xi in &[0.1, 0.25, 1.0, 3.0] {
        for a in 0..=30u32 {
            for b in (0..=30u32).step_by(3) {
                let (la, lb) = (0.3, -0.6);
                let joint = pair_loglik_constrained(la, lb, xi, 0.0, a, b).unwrap();
                let product = nb_logpmf(a, la, xi) + nb_logpmf(b, lb, xi);
                assert!((joint - product).abs() < 1e-8, "xi={xi} y=({a},{b})");
            }
        }
    }
}

#[test]
fn truncated_normalization_grid() {
    for &xi in &[0.1, 0.25, 1.0] {
        for &rho in &[0.0, 0.5, 0.9] {
            for &lam in &[0.0, -0.5] {
                let mut total = 0.0;
                for a in 0..=50 {
                    for b in 0..=50 {
                        total += pair_loglik_constrained(lam, lam, xi, rho, a, b).unwrap().exp();
                    }
                }
                let tail = 1.0 - total;
                assert!((0.0..1e-8).contains(&tail) || tail.abs() < 1e-12, "xi={xi} rho={rho}: tail {tail}");
            }
        }
    }
}

#[test]
fn shared_frailty_limit() {
    for &xi in &[0.5, 1.0, 2.0] {
        let v = pair_loglik_constrained(0.0, 0.0, xi, 1.0, 0, 0).unwrap();
        let expect = -(1.0 + 2.0 * xi).ln() / xi;
        assert!((v - expect).abs() < 1e-13);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = StreamKey::new(11, 0, Purpose::Misc(0)).rng();
    for _ in 0..200 {
        let theta = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-2.3..0.7),
            rng.random_range(0.0..1.5),
        ];
        let (a, b) = (rng.random_range(0..=10u32), rng.random_range(0..=10u32));
        let f = |t: &[f64]| pair_loglik_constrained(t[0], t[1], t[2].exp(), t[3].tanh(), a, b).unwrap();
        let fd = fd_gradient(&f, &theta);
        let e = pair_eval(theta[0], theta[1], theta[2].exp(), theta[3].tanh(), a, b).unwrap();
        for i in 0..4 {
            assert!(rel_err(e.grad[i], fd[i], 1e-3) < 1e-5, "coord {i}: {} vs {}", e.grad[i], fd[i]);
        }
    }
}

#[test]
fn negative_correlation_gradient_where_valid() {
    for &(a, b) in &[(0u32, 0u32), (1, 2), (3, 0), (2, 2)] {
        let theta = [0.1, -0.2, -1.0, -0.3];
        let f = |t: &[f64]| pair_loglik_constrained(t[0], t[1], t[2].exp(), t[3].tanh(), a, b).unwrap();
        let fd = fd_gradient(&f, &theta);
        let e = pair_eval(theta[0], theta[1], theta[2].exp(), theta[3].tanh(), a, b).unwrap();
        for i in 0..4 {
            assert!(rel_err(e.grad[i], fd[i], 1e-3) < 1e-5);
        }
    }
}

#[test]
fn negative_probability_is_an_error() {
    let err = pair_loglik_constrained(0.0, 0.0, 0.9030449609712159, -0.35145677082095783, 6, 4).unwrap_err();
    assert!(err.is_numerical_failure());
}

#[test]
fn swap_symmetry() {
    let e1 = pair_eval(0.2, -0.4, 0.3, 0.6, 4, 1).unwrap();
    let e2 = pair_eval(-0.4, 0.2, 0.3, 0.6, 1, 4).unwrap();
    assert!((e1.value - e2.value).abs() < 1e-14);
    assert!((e1.grad[0] - e2.grad[1]).abs() < 1e-13);
    assert!((e1.grad[1] - e2.grad[0]).abs() < 1e-13);
    assert!((e1.grad[2] - e2.grad[2]).abs() < 1e-13);
    assert!((e1.grad[3] - e2.grad[3]).abs() < 1e-13);
}

#[test]
fn model_components_use_pair_order_and_weights() {
    let p = 4;
    let model = FrailtyModel::scaled(p).unwrap();
    assert_eq!(model.pair(0), (0, 1));
    assert_eq!(model.pair(5), (2, 3));
    assert!((model.component_weight(3) - 1.0 / 6.0).abs() < 1e-16);
    let data = Dataset::from_rows(&[vec![1, 0, 3, 2]], DataKind::Count).unwrap();
    let theta = frailty_truth(p).unwrap().to_unconstrained();
    let v = sub_loglik(&model, &theta, &data, ComponentIndex::new(0, 4)).unwrap();
    let t = frailty_truth(p).unwrap();
    assert!((v - pair_loglik(&t, 0, 2, 1, 3).unwrap()).abs() < 1e-15);
    let g = sub_grad(&model, &theta, &data, ComponentIndex::new(0, 4)).unwrap();
    let direct = pair_grad(&t, 0, 2, 1, 3).unwrap();
    for (x, y) in g.iter().zip(direct.iter()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn frailty_moments() {
    let (xi, rho) = (0.25, 0.5);
    let sampler = FrailtySampler::new(xi, rho).unwrap();
    let mut rng = StreamKey::new(5, 0, Purpose::Data).rng();
    let n = 1_000_000;
    let mut v = [0.0; 2];
    let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        sampler.draw(&mut rng, &mut v).unwrap();
        s1 += v[0];
        s2 += v[1];
        s11 += v[0] * v[0];
        s22 += v[1] * v[1];
        s12 += v[0] * v[1];
    }
    let nf = n as f64;
    let (m1, m2) = (s1 / nf, s2 / nf);
    let var1 = s11 / nf - m1 * m1;
    let var2 = s22 / nf - m2 * m2;
    let corr = (s12 / nf - m1 * m2) / (var1 * var2).sqrt();
    // MC standard errors: mean ~ sqrt(0.25/n) = 5e-4, variance and
    // correlation ~ 1e-3 at this n.
    assert!((m1 - 1.0).abs() < 2.5e-3 && (m2 - 1.0).abs() < 2.5e-3);
    assert!((var1 - xi).abs() < 5e-3 && (var2 - xi).abs() < 5e-3, "{var1} {var2}");
    assert!((corr - rho).abs() < 5e-3, "{corr}");
}

#[test]
fn simulator_marginals() {
    let params = FrailtyParams::new(vec![0.3, -0.2, 0.0], 0.25, 0.5).unwrap();
    let mut rng = StreamKey::new(9, 0, Purpose::Data).rng();
    let n = 200_000;
    let data = simulate_frailty(&params, n, &mut rng).unwrap();
    for j in 0..3 {
        let zeros = data.rows().filter(|r| r[j] == 0).count() as f64 / n as f64;
        let expect = (1.0 + params.xi * params.lambdas[j].exp()).powf(-1.0 / params.xi);
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((zeros - expect).abs() < 4.0 * se, "node {j}: {zeros} vs {expect}");
    }
    // Near-Poisson regime: sample means approach exp(lambda).
    let calm = FrailtyParams::new(vec![0.5, -0.5], 1e-4, 0.0).unwrap();
    let data = simulate_frailty(&calm, n, &mut rng).unwrap();
    for j in 0..2 {
        let mean = data.rows().map(|r| r[j] as f64).sum::<f64>() / n as f64;
        let mu = calm.lambdas[j].exp();
        assert!((mean - mu).abs() < 4.0 * (mu / n as f64).sqrt());
    }
}

#[test]
fn simulator_rejects_negative_correlation() {
    let params = FrailtyParams::new(vec![0.0, 0.0], 0.5, -0.2).unwrap();
    let mut rng = StreamKey::new(1, 0, Purpose::Data).rng();
    assert!(simulate_frailty(&params, 5, &mut rng).is_err());
}
