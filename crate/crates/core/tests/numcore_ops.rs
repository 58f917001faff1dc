use proptest::prelude::*;
use sidgen_core::numcore::{mha, Graph, MhaWeights, Tensor};

fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, d).unwrap()
}

fn eye(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

#[test]
fn mha_single_key_returns_projected_value() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(t(&[1, 3, 2], &[0.3, -1.0, 5.0, 2.0, -7.0, 0.1]));
    let k = g.constant(t(&[1, 1, 2], &[0.9, 0.4]));
    let v = g.constant(t(&[1, 1, 2], &[1.5, -2.5]));
    let wo = g.constant(t(&[2, 2], &[2.0, 0.0, 1.0, 1.0]));
    let out = mha(&mut g, q, k, v, 1, None, &MhaWeights { wo, bo: None }).unwrap();
    // [1.5, -2.5] . wo = [3 - 2.5, -2.5]
    for row in g.value(out).data().chunks(2) {
        assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] + 2.5).abs() < 1e-12);
    }
}

#[test]
fn mha_negative_infinity_bias_selects_key() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(t(&[1, 2, 2], &[1.0, 2.0, -3.0, 0.5]));
    let k = g.constant(t(&[1, 3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
    let v = g.constant(t(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let wo = g.constant(eye(2));
    let ninf = f64::NEG_INFINITY;
    let bias = g.constant(t(&[1, 1, 1, 3], &[ninf, 0.0, ninf]));
    let out = mha(&mut g, q, k, v, 2, Some(bias), &MhaWeights { wo, bo: None }).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 4.0, 3.0, 4.0]);
}

#[test]
fn mha_hand_computed_two_by_two() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let k = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let v = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let wo = g.constant(eye(2));
    let out = mha(&mut g, q, k, v, 1, None, &MhaWeights { wo, bo: None }).unwrap();
    // scores = diag(1/sqrt 2); weight on the matching key is e^s / (e^s + 1)
    let s = 0.5f64.sqrt();
    let p = s.exp() / (s.exp() + 1.0);
    let want = [
        p * 1.0 + (1.0 - p) * 3.0,
        p * 2.0 + (1.0 - p) * 4.0,
        (1.0 - p) * 1.0 + p * 3.0,
        (1.0 - p) * 2.0 + p * 4.0,
    ];
    for (a, b) in g.value(out).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0f64..50.0, 1..40), w in 1usize..8) {
        let n = (v.len() / w).max(1) * w;
        let data: Vec<f64> = v.iter().cycle().take(n).copied().collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[n / w, w], data).unwrap());
        let s = g.softmax(x).unwrap();
        for row in g.value(s).data().chunks(w) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
