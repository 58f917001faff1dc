//! Evaluation metrics: generation quality, virtual screening and affinity
//! regression statistics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chemkit::{self, morgan_fp, parse, tanimoto, Fingerprint};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("empty input")]
    EmptySet,
    #[error("ranked list needs at least one active and one decoy")]
    OneClassOnly,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    DegenerateVariance(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Chem(#[from] chemkit::ChemError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Generated SMILES with their canonical valid subset and a reference set.
#[derive(Debug, Clone)]
pub struct GenSet {
    pub raw: Vec<String>,
    /// Canonical forms of the valid entries of `raw`, duplicates kept.
    pub valid: Vec<String>,
    pub reference: HashSet<String>,
    reference_fps: Vec<Fingerprint>,
}

impl GenSet {
    /// Invalid reference entries are ignored.
    pub fn new<S: AsRef<str>>(raw: &[S], reference: &[S]) -> Self {
        let valid = raw
            .iter()
            .filter_map(|s| parse(s.as_ref()).ok())
            .map(|m| chemkit::canonicalize(&m))
            .collect();
        let mut ref_set = HashSet::new();
        let mut reference_fps = Vec::new();
        for s in reference {
            if let Ok(m) = parse(s.as_ref()) {
                if ref_set.insert(chemkit::canonicalize(&m)) {
                    reference_fps.push(default_fp(&m));
                }
            }
        }
        Self {
            raw: raw.iter().map(|s| s.as_ref().to_string()).collect(),
            valid,
            reference: ref_set,
            reference_fps,
        }
    }

    /// Unique canonical valid molecules in first-seen order.
    pub fn unique(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.valid
            .iter()
            .filter(|s| seen.insert(s.as_str()))
            .map(|s| s.as_str())
            .collect()
    }
}

fn default_fp(m: &chemkit::MolGraph) -> Fingerprint {
    morgan_fp(m, chemkit::DEFAULT_RADIUS, chemkit::DEFAULT_BITS).expect("default width is a power of two")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenQuality {
    pub validity: f64,
    pub uniqueness: f64,
    /// Computed over the unique valid set.
    pub novelty: f64,
    pub intdiv: f64,
    pub max_tanimoto_mean: f64,
}

/// Mean of the full Tanimoto matrix, diagonal included.
pub fn mean_pairwise_tanimoto(fps: &[Fingerprint], exec: Exec) -> Result<f64> {
    if fps.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let rows: Vec<Result<f64>> = exec.map_range(fps.len(), |i| {
        fps.iter()
            .map(|f| tanimoto(&fps[i], f).map_err(MetricError::from))
            .sum()
    });
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok(total / (fps.len() * fps.len()) as f64)
}

/// Validity, uniqueness, novelty, internal diversity and mean nearest
/// reference similarity. Rates with an empty denominator are reported as 0.
pub fn gen_quality(g: &GenSet, exec: Exec) -> Result<GenQuality> {
    if g.raw.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let validity = g.valid.len() as f64 / g.raw.len() as f64;
    let unique = g.unique();
    if unique.is_empty() {
        return Ok(GenQuality {
            validity,
            uniqueness: 0.0,
            novelty: 0.0,
            intdiv: 0.0,
            max_tanimoto_mean: 0.0,
        });
    }
    let uniqueness = unique.len() as f64 / g.valid.len() as f64;
    let novel = unique.iter().filter(|s| !g.reference.contains(**s)).count();
    let novelty = novel as f64 / unique.len() as f64;
    let fps: Vec<Fingerprint> = unique
        .iter()
        .map(|s| parse(s).map(|m| default_fp(&m)))
        .collect::<std::result::Result<_, _>>()?;
    let intdiv = 1.0 - mean_pairwise_tanimoto(&fps, exec)?;
    let max_tanimoto_mean = if g.reference_fps.is_empty() {
        0.0
    } else {
        let best: Vec<Result<f64>> = exec.map_slice(&fps, |f| {
            g.reference_fps.iter().try_fold(0.0f64, |acc, r| {
                Ok(acc.max(tanimoto(f, r)?))
            })
        });
        let mut total = 0.0;
        for b in best {
            total += b?;
        }
        total / fps.len() as f64
    };
    Ok(GenQuality {
        validity,
        uniqueness,
        novelty,
        intdiv,
        max_tanimoto_mean,
    })
}

/// Scored items with activity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// Docking convention (lower is better) unless set.
    pub higher_is_better: bool,
}

impl RankedList {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(MetricError::InvalidArgument("NaN score".into()));
        }
        Ok(Self {
            scores,
            labels,
            higher_is_better: false,
        })
    }

    pub fn higher_is_better(mut self, yes: bool) -> Self {
        self.higher_is_better = yes;
        self
    }

    fn goodness(&self, i: usize) -> f64 {
        if self.higher_is_better {
            self.scores[i]
        } else {
            -self.scores[i]
        }
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let actives = self.labels.iter().filter(|&&l| l).count();
        let decoys = self.labels.len() - actives;
        if actives == 0 || decoys == 0 {
            return Err(MetricError::OneClassOnly);
        }
        Ok((actives, decoys))
    }

    /// Indices best first; ties keep input order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.goodness(b).total_cmp(&self.goodness(a)));
        idx
    }
}

/// 1-based average ranks of `x` in ascending order.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = avg);
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC: probability an active outranks a decoy, ties counting ½.
pub fn roc_auc(r: &RankedList) -> Result<f64> {
    let (na, nd) = r.counts()?;
    let good: Vec<f64> = (0..r.scores.len()).map(|i| r.goodness(i)).collect();
    let ranks = average_ranks(&good);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&r.labels)
        .filter(|(_, &l)| l)
        .map(|(rk, _)| rk)
        .sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    Ok(u / (na as f64 * nd as f64))
}

/// Enrichment factor in the top `x` percent, with `n = ceil(x N / 100)`.
pub fn ef_at(r: &RankedList, x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 100.0) {
        return Err(MetricError::InvalidArgument(format!("percent {x} not in (0, 100]")));
    }
    let (na, _) = r.counts()?;
    let total = r.scores.len();
    let n = ((x / 100.0 * total as f64).ceil() as usize).clamp(1, total);
    let hits = r.order()[..n].iter().filter(|&&i| r.labels[i]).count();
    Ok((hits as f64 / n as f64) / (na as f64 / total as f64))
}

/// BEDROC with exponential weight `alpha`, closed form.
pub fn bedroc(r: &RankedList, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MetricError::InvalidArgument(format!("alpha {alpha}")));
    }
    let (na, _) = r.counts()?;
    let n = r.scores.len() as f64;
    let na_f = na as f64;
    let s: f64 = r
        .order()
        .iter()
        .enumerate()
        .filter(|(_, &i)| r.labels[i])
        .map(|(pos, _)| (-alpha * (pos + 1) as f64 / n).exp())
        .sum();
    let ra = na_f / n;
    let rie = (s / na_f) / ((1.0 / n) * (1.0 - (-alpha).exp()) / ((alpha / n).exp() - 1.0));
    let scale = ra * (alpha / 2.0).sinh() / ((alpha / 2.0).cosh() - (alpha / 2.0 - alpha * ra).cosh());
    let shift = 1.0 / (1.0 - (alpha * (1.0 - ra)).exp());
    Ok(rie * scale + shift)
}

pub const GAS_CONSTANT_KCAL: f64 = 1.987e-3;

/// `-dG / (R T ln 10)` with `dG` in kcal/mol.
pub fn delta_g_to_pkd(dg: f64, temperature: f64) -> f64 {
    -dg / (GAS_CONSTANT_KCAL * temperature * std::f64::consts::LN_10)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub pearson: f64,
    pub spearman: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(MetricError::DegenerateVariance("first argument"));
    }
    if syy == 0.0 {
        return Err(MetricError::DegenerateVariance("second argument"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::EmptySet);
    }
    Ok(())
}

pub fn regression_stats(truth: &[f64], pred: &[f64]) -> Result<RegressionStats> {
    check_pair(truth, pred)?;
    let n = truth.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        se += (t - p) * (t - p);
        ae += (t - p).abs();
    }
    Ok(RegressionStats {
        pearson: pearson(truth, pred)?,
        spearman: spearman(truth, pred)?,
        rmse: (se / n).sqrt(),
        mae: ae / n,
    })
}

/// Keeps the lowest (most favorable) score per key.
pub fn aggregate_min<'a>(records: impl IntoIterator<Item = (&'a str, f64)>) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (k, v) in records {
        out.entry(k.to_string())
            .and_modify(|e| *e = e.min(v))
            .or_insert(v);
    }
    out
}
