mod common;

use common::{PoissonToy, QuadToy, ZeroToy};
use csgd::gd::*;
use csgd::ising::{exact_sample, grid_truth, IsingModel};
use csgd::model::{full_grad, ParamVector};
use csgd::rng::{Purpose, StreamKey};
use csgd::{DataKind, Dataset};
use rand::Rng;

fn quad_data(n: usize) -> (Dataset, f64) {
    let mut rng = StreamKey::new(5, 0, Purpose::Data).rng();
    let ys: Vec<u32> = (0..n).map(|_| rng.random_range(0..20u32)).collect();
    let mean = ys.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
    let values = ys.iter().flat_map(|&y| [y, 0]).collect();
    (Dataset::new(values, n, 2, DataKind::Count).unwrap(), mean)
}

#[test]
fn quadratic_converges_to_the_mean() {
    let (data, mean) = quad_data(500);
    for step in [StepRule::Fixed(0.5), StepRule::Backtracking] {
        let cfg = GdConfig { step, ..GdConfig::default() };
        let res = gd_fit(&QuadToy, &data, &cfg, &ParamVector::zeros(1)).unwrap();
        assert!(res.converged);
        assert!((res.theta[0] - mean).abs() < 1e-7, "{step:?}: {} vs {mean}", res.theta[0]);
        assert!(res.final_grad_norm <= cfg.grad_tol);
    }
}

#[test]
fn zero_gradient_converges_immediately() {
    let data = Dataset::new(vec![0; 9], 3, 3, DataKind::Count).unwrap();
    let theta0 = ParamVector::new(vec![1.0, 2.0]).unwrap();
    let res = gd_fit(&ZeroToy, &data, &GdConfig::default(), &theta0).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 0);
    assert_eq!(res.theta, theta0);
}

#[test]
fn ising_fit_is_stationary_and_idempotent() {
    let p = 6;
    let truth = grid_truth(p).unwrap();
    let mut rng = StreamKey::new(2, 0, Purpose::Data).rng();
    let data = exact_sample(&truth, 1500, &mut rng).unwrap();
    let model = IsingModel::new(p).unwrap();
    let cfg = GdConfig::default();
    let res = gd_fit(&model, &data, &cfg, &ParamVector::zeros(truth.flat().len())).unwrap();
    assert!(res.converged);
    let g = full_grad(&model, &res.theta, &data).unwrap();
    assert!(g.max_abs() / 1500.0 <= cfg.grad_tol);

    // Objective is non-decreasing up to rounding.
    for w in res.objective_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert_eq!(res.objective_trace.len(), res.iterations + 1);

    let again = gd_fit(&model, &data, &cfg, &res.theta).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.theta, res.theta);
}

#[test]
fn weighted_components_use_their_weights() {
    let model = PoissonToy { k: 3, d: 2, weighted: true };
    let mut rng = StreamKey::new(3, 0, Purpose::Data).rng();
    let values = (0..300).map(|_| rng.random_range(0..6u32)).collect();
    let data = Dataset::new(values, 100, 3, DataKind::Count).unwrap();
    let res = gd_fit(&model, &data, &GdConfig::default(), &ParamVector::zeros(2)).unwrap();
    assert!(res.converged);
    let g = full_grad(&model, &res.theta, &data).unwrap();
    assert!(g.max_abs() / 100.0 <= 1e-8);
}

#[test]
fn invalid_configs_are_rejected() {
    let (data, _) = quad_data(10);
    let bad = GdConfig { step: StepRule::Fixed(-1.0), ..GdConfig::default() };
    assert!(gd_fit(&QuadToy, &data, &bad, &ParamVector::zeros(1)).is_err());
    let bad = GdConfig { grad_tol: 0.0, ..GdConfig::default() };
    assert!(gd_fit(&QuadToy, &data, &bad, &ParamVector::zeros(1)).is_err());
    assert!(gd_fit(&QuadToy, &data, &GdConfig::default(), &ParamVector::zeros(2)).is_err());
}
