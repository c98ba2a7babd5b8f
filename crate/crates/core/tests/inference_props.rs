mod common;

use common::{holm_brute_force, PoissonToy, QuadToy};
use csgd::inference::*;
use csgd::ising::{exact_sample, grid_truth, IsingModel};
use csgd::rng::{Purpose, StreamKey};
use csgd::sampling::{SchemeKind, SchemeMoments, SchemeSpec};
use csgd::{DataKind, Dataset, Error};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn min_eigen(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn random_matrix(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = StreamKey::new(seed, 0, Purpose::Misc(9)).rng();
    DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn h_and_j_are_symmetric_and_psd() {
    let p = 6;
    let truth = grid_truth(p).unwrap();
    let mut rng = StreamKey::new(1, 0, Purpose::Data).rng();
    let data = exact_sample(&truth, 700, &mut rng).unwrap();
    let model = IsingModel::new(p).unwrap();
    let (h, j) = estimate_h_j(&model, truth.flat(), &data).unwrap();
    for m in [&h, &j] {
        assert_eq!(m, &m.transpose());
        let scale = m.diagonal().iter().copied().fold(0.0, f64::max);
        assert!(min_eigen(m) >= -1e-10 * scale);
    }
}

#[test]
fn single_component_gives_h_equal_j() {
    let mut rng = StreamKey::new(2, 0, Purpose::Data).rng();
    let values = (0..200).flat_map(|_| [rng.random_range(0..9u32), 0]).collect();
    let data = Dataset::new(values, 200, 2, DataKind::Count).unwrap();
    let (h, j) = estimate_h_j(&QuadToy, &[3.3], &data).unwrap();
    assert_eq!(h, j);
}

#[test]
fn non_uniform_weights_are_a_capability_error() {
    let model = PoissonToy { k: 3, d: 2, weighted: true };
    let data = Dataset::new(vec![1; 12], 4, 3, DataKind::Count).unwrap();
    assert!(matches!(estimate_h_j(&model, &[0.0, 0.0], &data), Err(Error::Capability(_))));
}

#[test]
fn v_p_limits() {
    let a = random_matrix(4, 3);
    let b = random_matrix(4, 4);
    let h = &a * a.transpose() + DMatrix::identity(4, 4);
    let j = &h + &b * b.transpose();
    let k = 5;
    let mut last: Option<[f64; 3]> = None;
    for n in [100usize, 1_000, 10_000, 100_000] {
        let err = |kind: SchemeKind, target: &DMatrix<f64>| {
            let m = SchemeSpec::new(kind, n, k).unwrap().moments();
            (v_p(&m, &h, &j, n) - target).norm()
        };
        let now = [
            err(SchemeKind::Standard, &j),
            err(SchemeKind::Bernoulli, &h),
            err(SchemeKind::Hyper, &h),
        ];
        if let Some(prev) = last {
            for (p, c) in prev.iter().zip(&now) {
                // O(1/n): a tenfold n cuts the error about tenfold.
                assert!(*c < p / 8.0, "{prev:?} -> {now:?}");
            }
        }
        last = Some(now);
    }
}

#[test]
fn regimes_add_up() {
    let a = random_matrix(3, 5);
    let h = &a * a.transpose() + DMatrix::identity(3, 3);
    let j = &h * 2.0;
    let m = SchemeSpec::new(SchemeKind::Hyper, 50, 3).unwrap().moments();
    let v = v_p(&m, &h, &j, 50);
    let r1 = cov_theta_bar(&h, &j, &v, Regime::R1, 150, 50).unwrap();
    let r2 = cov_theta_bar(&h, &j, &v, Regime::R2, 150, 50).unwrap();
    let r3 = cov_theta_bar(&h, &j, &v, Regime::R3, 150, 50).unwrap();
    assert!((&r1 + &r2 - &r3).norm() < 1e-12 * r3.norm());
    let hinv = h.clone().try_inverse().unwrap();
    assert!((&hinv * &j * &hinv / 50.0 - &r1).norm() < 1e-10 * r1.norm());
}

fn moments(kind: SchemeKind, n: usize, k: usize) -> SchemeMoments {
    SchemeSpec::new(kind, n, k).unwrap().moments()
}

proptest! {
    #[test]
    fn loewner_ordering(seed in 0u64..10_000, n in 5usize..400, k in 1usize..12, t_mult in 1usize..4) {
        let d = 4;
        let a = random_matrix(d, seed);
        let b = random_matrix(d, seed + 1);
        let h = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let j = &h + &b * b.transpose();
        prop_assume!(min_eigen(&(&j - &h)) >= -1e-8);
        let t_n = t_mult * n;
        let cov = |kind| {
            let v = v_p(&moments(kind, n, k), &h, &j, n);
            cov_theta_bar(&h, &j, &v, Regime::R3, t_n, n).unwrap()
        };
        let c1 = cov(SchemeKind::Standard);
        let scale = c1.norm();
        for kind in [SchemeKind::Bernoulli, SchemeKind::Hyper] {
            let diff = &c1 - cov(kind);
            prop_assert!(min_eigen(&diff) >= -1e-10 * scale, "{kind}");
        }
    }

    #[test]
    fn holm_properties(ps in prop::collection::vec(0.0f64..1.0, 1..25)) {
        let adj = holm_adjust(&ps);
        let brute = holm_brute_force(&ps);
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        for i in 0..ps.len() {
            prop_assert!(adj[i] >= ps[i]);
            prop_assert!(adj[i] <= 1.0);
            prop_assert!((adj[i] - brute[i]).abs() < 1e-12, "{} vs {}", adj[i], brute[i]);
        }
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }

    #[test]
    fn wald_rejections_follow_adjusted_values(seed in 0u64..1000, level in 0.001f64..0.2) {
        let mut rng = StreamKey::new(seed, 0, Purpose::Misc(4)).rng();
        let d = 8;
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| rng.random_range(0.1..2.0)));
        let tests = wald_tests(&theta, &cov, None, level).unwrap();
        for t in &tests {
            prop_assert_eq!(t.reject, t.p_adjusted < level);
            prop_assert!(t.p_adjusted >= t.p_value);
        }
        let subset = [1usize, 4, 6];
        let sub = wald_tests(&theta, &cov, Some(&subset), level).unwrap();
        prop_assert_eq!(sub.len(), 3);
        for (t, &i) in sub.iter().zip(&subset) {
            prop_assert_eq!(t.p_value, tests[i].p_value);
        }
    }
}
