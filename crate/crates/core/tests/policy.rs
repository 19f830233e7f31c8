use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use taco_core::dynamics::MavParams;
use taco_core::env::ObservationMode;
use taco_core::error::PolicyError;
use taco_core::policy::{
    max_singular_value, Linear, Mlp, MlpCache, MlpGrads, PolicyConfig, PolicyNet, PowerIteration,
};

fn svd_max(w: &[f64], rows: usize, cols: usize) -> f64 {
    DMatrix::from_row_slice(rows, cols, w)
        .singular_values()
        .max()
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn policy(mode: ObservationMode, k_lip: Option<f64>, seed: u64) -> PolicyNet {
    let cfg = PolicyConfig {
        k_lip,
        ..PolicyConfig::default()
    };
    PolicyNet::new(
        mode,
        &cfg,
        &MavParams::default(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Mlp::new(5, &[7, 6], 3, 1.3, 0.8, &mut rng);
    for l in &mut net.layers {
        l.bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    let batch = 4;
    let x: Vec<f64> = (0..batch * 5)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let coef: Vec<f64> = (0..batch * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    // loss = Σ coef ⊙ output, so dL/dy = coef
    let loss = |n: &Mlp| {
        let mut c = MlpCache::default();
        n.forward_batch(&x, batch, &mut c);
        c.output()
            .iter()
            .zip(&coef)
            .map(|(y, k)| y * k)
            .sum::<f64>()
    };
    let mut cache = MlpCache::default();
    net.forward_batch(&x, batch, &mut cache);
    let mut grads = MlpGrads::zeros_like(&net);
    net.backward_batch(&cache, &coef, &mut grads);

    let h = 1e-6;
    for l in 0..net.layers.len() {
        for i in 0..net.layers[l].weight.len() {
            let mut plus = net.clone();
            plus.layers[l].weight[i] += h;
            let mut minus = net.clone();
            minus.layers[l].weight[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - grads.weight[l][i]).abs() < 1e-6,
                "layer {l} weight {i}: {fd} vs {}",
                grads.weight[l][i]
            );
        }
        for i in 0..net.layers[l].bias.len() {
            let mut plus = net.clone();
            plus.layers[l].bias[i] += h;
            let mut minus = net.clone();
            minus.layers[l].bias[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grads.bias[l][i]).abs() < 1e-6);
        }
    }
}

#[test]
fn power_iteration_agrees_with_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (rows, cols) in [(128, 26), (128, 128), (4, 128), (30, 21)] {
        let w = random_matrix(rows, cols, 0.3, &mut rng);
        let mut l = Linear::from_weights(rows, cols, w.clone(), vec![0.0; rows]);
        let est = l.spectral_norm(PowerIteration::default());
        let exact = svd_max(&w, rows, cols);
        assert!(
            (est - exact).abs() <= 1e-8 * exact,
            "{rows}x{cols}: {est} vs {exact}"
        );
    }
}

#[test]
fn diagonal_projection_oracle() {
    let mut l = Linear::from_weights(2, 2, vec![2.0, 0.0, 0.0, 0.5], vec![0.0; 2]);
    let sigma = taco_core::policy::spectral_project(&mut l, 1.0, PowerIteration::default());
    assert!((sigma - 2.0).abs() < 1e-12);
    assert!((l.weight[0] - 1.0).abs() < 1e-12);
    assert!((l.weight[3] - 0.25).abs() < 1e-12);
}

#[test]
fn projected_network_respects_budget() {
    for k in [1.0, 1.5] {
        let mut net = policy(ObservationMode::Matrix, Some(k), 3);
        for l in &mut net.mlp.layers {
            let mut rng = ChaCha8Rng::seed_from_u64(l.rows as u64 * 31 + l.cols as u64);
            l.weight = random_matrix(l.rows, l.cols, 0.5, &mut rng);
        }
        net.project();
        for l in &net.mlp.layers {
            let s = svd_max(&l.weight, l.rows, l.cols);
            assert!(s <= k + 1e-6, "σ = {s} > {k}");
            assert!(s >= k - 1e-6, "layer was over-shrunk to {s}");
        }
        let bound = net.lipschitz_bound();
        assert!(bound <= net.nominal_lipschitz_bound().unwrap() * (1.0 + 1e-6));
    }
}

#[test]
fn nominal_bound_is_k_to_the_depth() {
    let net = policy(ObservationMode::Matrix, Some(1.5), 0);
    assert_eq!(net.mlp.depth(), 4);
    let b = net.nominal_lipschitz_bound().unwrap();
    assert!((b / (net.input_scale_norm() * net.output_scale_norm()) - 5.0625).abs() < 1e-12);
}

#[test]
fn empirical_lipschitz_ratio_below_certificate() {
    for (k, mode) in [
        (1.0, ObservationMode::Matrix),
        (1.5, ObservationMode::Quaternion),
    ] {
        let mut net = policy(mode, Some(k), 5);
        // random large weights so the budget binds
        for l in &mut net.mlp.layers {
            let mut rng = ChaCha8Rng::seed_from_u64(l.cols as u64);
            l.weight = random_matrix(l.rows, l.cols, 0.4, &mut rng);
        }
        net.project();
        let bound = net.lipschitz_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dim = mode.dim();
        for _ in 0..10_000 {
            let s1: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s2: Vec<f64> = if rng.random_bool(0.5) {
                s1.iter()
                    .map(|x| x + rng.random_range(-0.05..0.05))
                    .collect()
            } else {
                (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
            };
            let a1 = net.act(&s1).unwrap().to_array();
            let a2 = net.act(&s2).unwrap().to_array();
            let da: f64 = a1
                .iter()
                .zip(&a2)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let ds: f64 = s1
                .iter()
                .zip(&s2)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(da <= bound * ds * (1.0 + 1e-9), "{da} > {bound} * {ds}");
        }
    }
}

#[test]
fn sample_statistics_match_gaussian() {
    let mut net = policy(ObservationMode::Matrix, None, 2);
    net.log_std = [-0.5, 0.0, -1.0, 0.3];
    let obs = vec![0.1; 26];
    let mean = net.mean(&obs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 40_000;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let s = net.sample_from_mean(mean, &mut rng);
        assert!((s.log_prob - net.log_prob(&mean, &s.pre_squash)).abs() < 1e-12);
        for i in 0..4 {
            let d = s.pre_squash[i] - mean[i];
            sum[i] += d;
            sq[i] += d * d;
        }
    }
    for i in 0..4 {
        let sd = net.log_std[i].exp();
        assert!((sum[i] / n as f64).abs() < 4.0 * sd / (n as f64).sqrt());
        assert!(((sq[i] / n as f64).sqrt() / sd - 1.0).abs() < 0.02);
    }
}

#[test]
fn action_density_integrates_to_one_along_throttle() {
    // 1-D slice: fix the rate components at their sampled values and integrate over throttle
    let mut net = policy(ObservationMode::Matrix, None, 2);
    net.log_std = [-0.7; 4];
    let obs = vec![0.0; 26];
    let mean = net.mean(&obs).unwrap();
    let rates: [f64; 3] = std::array::from_fn(|i| net.squash(&mean).to_array()[i + 1]);
    let rate_density: f64 = (1..4)
        .map(|i| {
            let t = rates[i - 1] / net.output_scale[i];
            let u = t.atanh();
            let sd = net.log_std[i].exp();
            (-(u - mean[i]).powi(2) / (2.0 * sd * sd)).exp()
                / (sd * (2.0 * PI).sqrt())
                / (net.output_scale[i] * (1.0 - t * t))
        })
        .product();
    let n = 200_000;
    let h = 1000.0 / n as f64;
    let mut total = 0.0;
    for k in 0..n {
        let thr = (k as f64 + 0.5) * h;
        let a = taco_core::dynamics::Action::new(
            thr,
            nalgebra::Vector3::new(rates[0], rates[1], rates[2]),
        );
        total += net.action_log_prob(&obs, &a).unwrap().exp() * h;
    }
    assert!(
        (total / rate_density - 1.0).abs() < 1e-3,
        "{}",
        total / rate_density
    );
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let mut net = policy(ObservationMode::Quaternion, Some(1.5), 8);
    net.log_std = [-0.123456789012345, 0.1, 1.0 / 3.0, -2.0];
    net.save(&a).unwrap();
    let back = PolicyNet::load(&a).unwrap();
    assert!(back == net, "loaded network differs");
    back.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let obs: Vec<f64> = (0..21).map(|i| i as f64 * 0.1 - 1.0).collect();
    assert_eq!(net.act(&obs).unwrap(), back.act(&obs).unwrap());
}

#[test]
fn checkpoint_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let net = policy(ObservationMode::Matrix, None, 1);
    net.save(&path).unwrap();
    assert!(matches!(
        PolicyNet::load_for(&path, ObservationMode::Quaternion),
        Err(PolicyError::ObservationMode { .. })
    ));

    let text =
        std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"version\": 1", "\"version\": 9", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        PolicyNet::load(&path),
        Err(PolicyError::Version { version: 9, .. })
    ));

    std::fs::write(&path, "{ not json").unwrap();
    assert!(matches!(
        PolicyNet::load(&path),
        Err(PolicyError::Parse { .. })
    ));
    assert!(matches!(
        PolicyNet::load(&dir.path().join("missing.json")),
        Err(PolicyError::Io { .. })
    ));
}

#[test]
fn truncated_layer_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mut net = policy(ObservationMode::Matrix, None, 1);
    net.mlp.layers[1].weight.pop();
    net.save(&path).unwrap();
    assert!(matches!(
        PolicyNet::load(&path),
        Err(PolicyError::Invalid(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_never_exceeds_budget(
        rows in 1usize..12,
        cols in 1usize..12,
        seed in any::<u64>(),
        scale in 0.01f64..5.0,
        k in 0.5f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(rows, cols, scale, &mut rng);
        let mut l = Linear::from_weights(rows, cols, w.clone(), vec![0.0; rows]);
        let before = svd_max(&w, rows, cols);
        taco_core::policy::spectral_project(&mut l, k, PowerIteration::default());
        let after = svd_max(&l.weight, rows, cols);
        prop_assert!(after <= k + 1e-6);
        if before <= k {
            prop_assert_eq!(&l.weight, &w);
        }
    }

    #[test]
    fn warm_start_matches_cold_start(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(9, 6, 1.0, &mut rng);
        let mut u = vec![0.3; 9];
        let mut v: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let warm = max_singular_value(&w, 9, 6, &mut u, &mut v, PowerIteration::default());
        prop_assert!((warm - svd_max(&w, 9, 6)).abs() < 1e-6);
    }
}
