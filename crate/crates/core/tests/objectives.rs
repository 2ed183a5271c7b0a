mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdanet::objectives::*;
use sdanet::tensor::{Graph, Shape, Tensor};

fn hand_metrics(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    let mut abs = 0.0;
    let mut sq = 0.0;
    for i in 0..pred.len() {
        let e = truth[i] - pred[i];
        abs += e.abs();
        sq += e * e;
    }
    let n = pred.len() as f64;
    (abs / n, (sq / n).sqrt())
}

#[test]
fn metrics_match_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let n = rng.random_range(1..40);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0..500) as f64).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0)).collect();
        let pairs: Vec<(f64, f64)> = pred.iter().copied().zip(truth.iter().copied()).collect();
        let m = evaluate_metrics(&pairs).unwrap();
        let (mae, mse) = hand_metrics(&pred, &truth);
        assert_eq!(m.mae, mae);
        assert_eq!(m.mse, mse);
        assert_eq!(m.n, n);
        assert!(m.mse >= m.mae);
    }
}

#[test]
fn metric_examples() {
    let m = evaluate_metrics(&[(110.0, 100.0), (90.0, 100.0)]).unwrap();
    assert_eq!((m.mae, m.mse), (10.0, 10.0));
    let m = evaluate_metrics(&[
        (100.0, 100.0),
        (120.0, 100.0),
        (90.0, 100.0),
        (115.0, 100.0),
    ])
    .unwrap();
    assert_eq!(m.mae, 11.25);
    assert!((m.mse - 181.25f64.sqrt()).abs() < 1e-12);
    assert!(matches!(evaluate_metrics(&[]), Err(ObjectiveError::Empty)));
}

fn rand_map(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    random_tensor(Shape::new(n, 1, h, w), seed, 0.05).map(f64::abs)
}

#[test]
fn empty_scene_count_term() {
    let mut g = Graph::new();
    let truth = Tensor::zeros(Shape::new(1, 1, 4, 4));
    let mut pred = Tensor::zeros(Shape::new(1, 1, 4, 4));
    pred.data_mut()[5] = 1.0;
    let p = g.param(pred);
    let (_, l_c, _) = loss_map(&mut g, p, &truth, &LossConfig::default()).unwrap();
    let v = g.value(l_c).data()[0];
    assert!(v.is_finite());
    assert!((v - 1e8).abs() < 1e-6 * 1e8);
}

#[test]
fn breakdown_identity() {
    let cfg = LossConfig::default();
    for seed in 0..5 {
        let truth = rand_map(3, 6, 5, seed);
        let mut g = Graph::new();
        let p = g.param(rand_map(3, 6, 5, seed + 100));
        let (l_e, l_c, l_map) = loss_map(&mut g, p, &truth, &cfg).unwrap();
        let (e, c, m) = (
            g.value(l_e).data()[0],
            g.value(l_c).data()[0],
            g.value(l_map).data()[0],
        );
        assert!((m - (e + 0.01 * c)).abs() <= 1e-15 * m.abs().max(1.0));
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let p = g.param(Tensor::zeros(Shape::new(1, 1, 4, 4)));
    let truth = Tensor::zeros(Shape::new(1, 1, 4, 5));
    assert!(matches!(
        loss_att(&mut g, p, &truth, &LossConfig::default()),
        Err(ObjectiveError::ShapeMismatch { .. })
    ));
    let bad = LossConfig {
        eps: 0.0,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn fd_attention_loss() {
    let truth = rand_map(2, 5, 4, 1);
    let cfg = LossConfig::default();
    let err = check_graph_gradients(
        |g, v| loss_att(g, v[0], &truth, &cfg).unwrap(),
        &[rand_map(2, 5, 4, 2)],
    );
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn fd_map_loss() {
    let truth = rand_map(2, 5, 4, 3);
    let cfg = LossConfig::default();
    let err = check_graph_gradients(
        |g, v| loss_map(g, v[0], &truth, &cfg).unwrap().2,
        &[rand_map(2, 5, 4, 4)],
    );
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn stacked_truth_matches_maps() {
    let a = sdanet::data::DensityMap::from_grid(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let b = sdanet::data::DensityMap::zeros(2, 2);
    let t = stack_density(&[&a, &b]).unwrap();
    assert_eq!(t.shape(), Shape::new(2, 1, 2, 2));
    assert_eq!(t.plane(0, 0), a.grid());
    assert!(t.plane(1, 0).iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((0.0f64..1e3, 0.0f64..1e3), 1..64)) {
        let m = evaluate_metrics(&pairs).unwrap();
        prop_assert!(m.mse >= m.mae * (1.0 - 1e-12));
        prop_assert!(m.mae >= 0.0);
    }

    #[test]
    fn losses_are_nonnegative_and_zero_at_truth(seed in 0u64..200) {
        let truth = rand_map(2, 4, 4, seed);
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let p = g.param(truth.clone());
        let att = loss_att(&mut g, p, &truth, &cfg).unwrap();
        let (_, _, map) = loss_map(&mut g, p, &truth, &cfg).unwrap();
        prop_assert_eq!(g.value(att).data()[0], 0.0);
        prop_assert_eq!(g.value(map).data()[0], 0.0);
        let q = g.param(rand_map(2, 4, 4, seed + 1));
        let att = loss_att(&mut g, q, &truth, &cfg).unwrap();
        prop_assert!(g.value(att).data()[0] >= 0.0);
    }
}
