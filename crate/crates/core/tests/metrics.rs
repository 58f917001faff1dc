mod common;
mod oracles;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use sidgen_core::exec::Exec;
use oracles::metrics::{auc_oracle, bedroc_oracle, random_list};
use sidgen_core::metrics::{
    bedroc, ef_at, gen_quality, regression_stats, roc_auc, spearman, GenSet, RankedList,
};

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn gen_quality_examples() {
    let reference = strings(&["CCO", "c1ccccc1", "CC(=O)O"]);
    let g = GenSet::new(&reference, &reference);
    let q = gen_quality(&g, Exec::Sequential).unwrap();
    assert_eq!((q.validity, q.uniqueness, q.novelty), (1.0, 1.0, 0.0));
    assert!((q.max_tanimoto_mean - 1.0).abs() < 1e-12);

    let gen = strings(&["CCN", "CCCC", "c1ccncc1", "OCCO"]);
    let q = gen_quality(&GenSet::new(&gen, &reference), Exec::Sequential).unwrap();
    assert_eq!((q.validity, q.uniqueness, q.novelty), (1.0, 1.0, 1.0));

    let twice = strings(&["CCO", "OCC"]);
    let q = gen_quality(&GenSet::new(&twice, &reference), Exec::Sequential).unwrap();
    assert_eq!(q.intdiv, 0.0);
    assert_eq!(q.uniqueness, 0.5);

    let mixed = strings(&["CCO", "C1CC", "CCO", "xyz"]);
    let q = gen_quality(&GenSet::new(&mixed, &reference), Exec::Sequential).unwrap();
    assert_eq!((q.validity, q.uniqueness), (0.5, 0.5));
    assert!(gen_quality(&GenSet::new(&[] as &[String], &reference), Exec::Sequential).is_err());
}

#[test]
fn gen_quality_paths_agree() {
    let all: Vec<String> = sidgen_core::chemkit::corpus::DRUGS
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (gen, reference) = all.split_at(30);
    let g = GenSet::new(gen, reference);
    let a = gen_quality(&g, Exec::Sequential).unwrap();
    let b = gen_quality(&g, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    for v in [a.validity, a.uniqueness, a.novelty, a.intdiv, a.max_tanimoto_mean] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(a.intdiv > 0.5 && a.max_tanimoto_mean < 1.0);
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = common::rng(21);
    for _ in 0..50 {
        let r = random_list(&mut rng, 120);
        assert!((roc_auc(&r).unwrap() - auc_oracle(&r)).abs() < 1e-12);
    }
}

#[test]
fn ef_on_constructed_list() {
    // 100 actives among 10^4; 10 of them inside the top 100
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut labels = vec![false; n];
    (0..10).for_each(|i| labels[i * 10] = true);
    (0..90).for_each(|i| labels[5000 + i * 50] = true);
    let r = RankedList::new(scores, labels).unwrap();
    assert!((ef_at(&r, 1.0).unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn ef_random_ranking_is_near_one() {
    let mut rng = common::rng(8);
    let n = 1000;
    let mut labels: Vec<bool> = (0..n).map(|i| i < 100).collect();
    let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut total = 0.0;
    for _ in 0..1000 {
        labels.shuffle(&mut rng);
        total += ef_at(&RankedList::new(scores.clone(), labels.clone()).unwrap(), 10.0).unwrap();
    }
    assert!((total / 1000.0 - 1.0).abs() < 0.2);
}

#[test]
fn bedroc_extremes_and_oracle() {
    let n = 200;
    let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let top: Vec<bool> = (0..n).map(|i| i < 10).collect();
    let bottom: Vec<bool> = (0..n).map(|i| i >= n - 10).collect();
    let b_top = bedroc(&RankedList::new(scores.clone(), top).unwrap(), 80.5).unwrap();
    let b_bot = bedroc(&RankedList::new(scores, bottom).unwrap(), 80.5).unwrap();
    assert!((b_top - 1.0).abs() < 1e-9, "{b_top}");
    assert!(b_bot.abs() < 1e-9, "{b_bot}");

    let mut rng = common::rng(13);
    for _ in 0..100 {
        let r = random_list(&mut rng, 100);
        let (a, o) = (bedroc(&r, 80.5).unwrap(), bedroc_oracle(&r, 80.5));
        assert!((a - o).abs() < 1e-9, "{a} vs {o}");
        for alpha in [1.0, 20.0] {
            assert!((bedroc(&r, alpha).unwrap() - bedroc_oracle(&r, alpha)).abs() < 1e-9);
        }
    }
}

#[test]
fn regression_on_hand_computed_points() {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0];
    let p = [2.0, 1.0, 4.0, 3.0, 5.0];
    let s = regression_stats(&t, &p).unwrap();
    assert!((s.pearson - 0.8).abs() < 1e-12);
    assert!((s.spearman - 0.8).abs() < 1e-12);
    assert!((s.rmse - 0.8f64.sqrt()).abs() < 1e-12);
    assert!((s.mae - 0.8).abs() < 1e-12);

    let neg: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|x: &f64| -x).collect();
    let s = regression_stats(&[-2.0, -1.0, 0.0, 1.0, 2.0], &neg).unwrap();
    assert!((s.pearson + 1.0).abs() < 1e-12);
    // ties use average ranks: ranks [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]
    let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((rho - 4.5 / 5.0f64.sqrt() / 4.5f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn rank_metrics_ignore_monotone_transforms(seed in 0u64..1000, shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let mut rng = common::rng(seed);
        let r = random_list(&mut rng, 60);
        let t = RankedList::new(r.scores.iter().map(|s| (s * scale + shift).exp()).collect(), r.labels.clone()).unwrap();
        prop_assert!((roc_auc(&r).unwrap() - roc_auc(&t).unwrap()).abs() < 1e-12);
        prop_assert_eq!(ef_at(&r, 10.0).unwrap(), ef_at(&t, 10.0).unwrap());
        prop_assert!((bedroc(&r, 80.5).unwrap() - bedroc(&t, 80.5).unwrap()).abs() < 1e-12);
        let flipped = RankedList::new(r.scores.iter().map(|s| -s).collect(), r.labels.clone()).unwrap().higher_is_better(true);
        prop_assert!((roc_auc(&r).unwrap() - roc_auc(&flipped).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.5 + (i % 3) as f64).collect();
        if let Ok(rho) = spearman(&xs, &ys) {
            let tx: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
            prop_assert!((spearman(&tx, &ys).unwrap() - rho).abs() < 1e-12);
        }
    }
}
