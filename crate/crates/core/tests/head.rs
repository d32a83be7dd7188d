use proptest::prelude::*;
use rgnet_core::head::{classify, image_probabilities, lse_aggregate, regress_score};
use rgnet_tensor::{Graph, Tensor};

#[test]
fn lse_worked_value() {
    // (1/4) ln((1 + e^4) / 2)
    let want = ((1.0 + 4f64.exp()) / 2.0).ln() / 4.0;
    let got = lse_aggregate(&[0.0, 1.0], 4.0).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.83125).abs() < 1e-5);
}

#[test]
fn lse_constant_map_is_the_constant() {
    for r in [0.01, 1.0, 4.0, 100.0] {
        let got = lse_aggregate(&[0.3; 9], r).unwrap();
        assert!((got - 0.3).abs() < 1e-12);
    }
}

#[test]
fn lse_rejects_bad_arguments() {
    assert!(lse_aggregate(&[0.5], 0.0).is_err());
    assert!(lse_aggregate(&[0.5], -1.0).is_err());
    assert!(lse_aggregate(&[], 4.0).is_err());
}

#[test]
fn graph_pooling_matches_scalar_aggregate() {
    let values = [0.1, 0.9, 0.4, 0.7];
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(vec![1, 1, 2, 2], &values).unwrap());
    let p = g.lse_pool(x, 4.0).unwrap();
    let want = lse_aggregate(&values, 4.0).unwrap();
    assert!((g.value(p).data()[0] - want).abs() < 1e-12);
}

#[test]
fn two_cell_limits() {
    assert!((lse_aggregate(&[0.0, 1.0], 100.0).unwrap() - 1.0).abs() < 1e-2);
    assert!((lse_aggregate(&[0.0, 1.0], 0.01).unwrap() - 0.5).abs() < 1e-2);
}

#[test]
fn region_scores_match_pixel_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let (d, h, w) = (5, 3, 4);
    let x: Vec<f64> = (0..2 * d * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
    let k: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = [0.3, -0.2];
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::from_f64(vec![2, d, h, w], &x).unwrap());
    let kv = g.constant(Tensor::from_f64(vec![2, d, 1, 1], &k).unwrap());
    let bv = g.constant(Tensor::from_f64(vec![2], &b).unwrap());
    let s = rgnet_core::head::region_scores(&mut g, xv, kv, bv).unwrap();
    let out = g.value(s).data().to_vec();
    for n in 0..2 {
        for p in 0..h * w {
            let logit = |c: usize| b[c] + (0..d).map(|ch| k[c * d + ch] * x[(n * d + ch) * h * w + p]).sum::<f64>();
            let (l0, l1) = (logit(0), logit(1));
            let m = l0.max(l1);
            let z = (l0 - m).exp() + (l1 - m).exp();
            let want = [(l0 - m).exp() / z, (l1 - m).exp() / z];
            for c in 0..2 {
                assert!((out[(n * 2 + c) * h * w + p] - want[c]).abs() < 1e-10);
            }
        }
    }

    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::from_f64(vec![2, d, h, w], &x).unwrap());
    let kv = g.constant(Tensor::zeros(vec![2, d, 1, 1]));
    let bv = g.constant(Tensor::zeros(vec![2]));
    let s = rgnet_core::head::region_scores(&mut g, xv, kv, bv).unwrap();
    assert!(g.value(s).data().iter().all(|&v| v == 0.5));
}

#[test]
fn image_probabilities_and_ties() {
    let (p0, p1) = image_probabilities(0.2, 0.2 + 3f64.ln());
    assert!((p0 - 0.25).abs() < 1e-15 && (p1 - 0.75).abs() < 1e-15);
    let (q0, q1) = image_probabilities(10.2, 10.2 + 3f64.ln());
    assert!((p0 - q0).abs() < 1e-9 && (p1 - q1).abs() < 1e-9);
    assert_eq!(classify(0.3, 0.7), 1);
    assert_eq!(classify(0.7, 0.3), 0);
    let (p0, p1) = image_probabilities(0.0, 1.0);
    assert!((p0 - 0.2689414213699951).abs() < 1e-15);
    assert!((p1 - 0.7310585786300049).abs() < 1e-15);
    assert_eq!(classify(p0, p1), 1);
    let (p0, p1) = image_probabilities(0.5, 0.5);
    assert_eq!((p0, p1), (0.5, 0.5));
    assert_eq!(classify(p0, p1), 0);
}

#[test]
fn regression_score_is_pooled_sigmoid() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(vec![1, 2, 1, 2], &[1.0, -1.0, 0.5, 2.0]).unwrap());
    let k = g.constant(Tensor::from_f64(vec![1, 2, 1, 1], &[1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::from_f64(vec![1], &[-0.5]).unwrap());
    let s = regress_score(&mut g, x, k, b, 4.0).unwrap();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let cells = [sig(1.0 + 1.0 - 0.5), sig(-1.0 + 4.0 - 0.5)];
    let want = lse_aggregate(&cells, 4.0).unwrap();
    assert_eq!(g.shape(s), &[1]);
    assert!((g.value(s).data()[0] - want).abs() < 1e-12);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lse_lies_between_mean_and_max(values in prop::collection::vec(0.0f64..1.0, 1..400), r in 0.01f64..100.0) {
        let l = lse_aggregate(&values, r).unwrap();
        prop_assert!(l >= mean(&values) - 1e-12);
        prop_assert!(l <= max(&values) + 1e-12);
        // a single maximal cell already contributes exp(r max) / n
        prop_assert!(l >= max(&values) - (values.len() as f64).ln() / r - 1e-12);
    }

    #[test]
    fn lse_small_r_approaches_mean(values in prop::collection::vec(0.0f64..1.0, 1..400)) {
        prop_assert!((lse_aggregate(&values, 0.01).unwrap() - mean(&values)).abs() < 1e-2);
    }

    #[test]
    fn lse_large_r_approaches_max_on_two_cells(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let values = [a, b];
        prop_assert!((lse_aggregate(&values, 100.0).unwrap() - max(&values)).abs() < 1e-2);
        prop_assert!((lse_aggregate(&values, 0.01).unwrap() - mean(&values)).abs() < 1e-2);
    }
}
