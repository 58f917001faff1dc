//! Direct-definition references for ranking metrics.

use rand::Rng;
use sidgen_core::metrics::RankedList;

pub fn random_list(rng: &mut impl Rng, n: usize) -> RankedList {
    let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..40) as f64) / 4.0).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
    labels[0] = true;
    labels[1] = false;
    RankedList::new(scores, labels).unwrap()
}

/// Pairwise count over every active-decoy pair.
pub fn auc_oracle(r: &RankedList) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in r.labels.iter().enumerate() {
        for (j, &lj) in r.labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += match r.scores[i].partial_cmp(&r.scores[j]).unwrap() {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Greater => 0.0,
                };
            }
        }
    }
    num / den
}

/// RIE of a given active position set, min-max normalized.
pub fn bedroc_oracle(r: &RankedList, alpha: f64) -> f64 {
    let n = r.scores.len();
    // lower is better; ties keep input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r.scores[a].total_cmp(&r.scores[b]));
    let na = r.labels.iter().filter(|&&l| l).count();
    let rie = |positions: &mut dyn Iterator<Item = usize>| -> f64 {
        positions.map(|p| (-alpha * p as f64 / n as f64).exp()).sum()
    };
    let actual = rie(&mut order
        .iter()
        .enumerate()
        .filter(|(_, &i)| r.labels[i])
        .map(|(p, _)| p + 1));
    let best = rie(&mut (1..=na));
    let worst = rie(&mut (n - na + 1..=n));
    (actual - worst) / (best - worst)
}
