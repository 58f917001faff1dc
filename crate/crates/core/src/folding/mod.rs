//! Coarse-stride pair processing and protein conditioning.
//!
//! Per-residue embeddings are projected to single features. Pair features are
//! built directly at the coarse positions `I = {0, s, 2s, ..} ∩ [0, L)`, so the
//! full `L x L` pair tensor never exists. A stack of triangle updates runs on
//! the coarse pair, the single track is refreshed from pooled pair rows, and
//! results are expanded back to length `L` by nearest-neighbor lookup.
//!
//! Two implementations share one parameter layout:
//!
//! * [`fold_block`] records every op on a [`Graph`](crate::numcore::Graph) and
//!   is used for training.
//! * [`fold_infer`] updates the coarse pair in place, row by row, and is what
//!   the memory accounting measures.

mod block;
mod context;
mod infer;

pub use block::{
    fold_block, init_fold_params, pair_init, tri_attn, tri_mult, FoldOutput, TriAxis, TriDirection,
};
pub use context::{
    init_context_params, make_context, select_context, stack_contexts, ContextConfig, ContextMode,
    ContextValues, ProteinContext,
};
pub use infer::{fold_infer, fold_pair_stage, measure_fold_memory, project_single};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Real, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("invalid folding config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FoldError>;

fn default_tri_heads() -> usize {
    4
}

fn default_tri_mult_hidden() -> usize {
    8
}

fn default_relpos_max() -> usize {
    32
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    /// Width of the incoming per-residue embeddings.
    pub d_seq: usize,
    pub c_single: usize,
    pub c_pair: usize,
    pub stride: usize,
    pub depth: usize,
    #[serde(default = "default_tri_heads")]
    pub tri_heads: usize,
    /// Channels of the gated triangle-multiplication projections.
    #[serde(default = "default_tri_mult_hidden")]
    pub tri_mult_hidden: usize,
    /// Relative offsets are clipped to `±relpos_max` residues.
    #[serde(default = "default_relpos_max")]
    pub relpos_max: usize,
    /// Off: triangle multiplication adds the raw product of its input.
    #[serde(default = "default_true")]
    pub tri_mult_projections: bool,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            d_seq: 1280,
            c_single: 64,
            c_pair: 32,
            stride: 4,
            depth: 2,
            tri_heads: 4,
            tri_mult_hidden: 8,
            relpos_max: 32,
            tri_mult_projections: true,
        }
    }
}

impl FoldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FoldError::Config(m));
        if self.d_seq == 0 || self.c_single == 0 || self.c_pair == 0 {
            return bad("widths must be positive".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.tri_heads == 0 || !self.c_pair.is_multiple_of(self.tri_heads) {
            return bad(format!(
                "c_pair {} is not divisible by tri_heads {}",
                self.c_pair, self.tri_heads
            ));
        }
        if self.tri_mult_projections && self.tri_mult_hidden == 0 {
            return bad("tri_mult_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn coarse_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }
}

/// Ascending multiples of `s` below `l`; always `ceil(l / s)` entries.
pub fn coarse_indices(l: usize, s: usize) -> Vec<usize> {
    assert!(s >= 1, "stride must be at least 1");
    (0..l).step_by(s).collect()
}

/// Coarse index read by each of the `l` full-resolution positions.
pub fn upsample_indices(l: usize, s: usize) -> Vec<usize> {
    assert!(s >= 1, "stride must be at least 1");
    (0..l).map(|i| i / s).collect()
}

/// Relative-position bucket of residues `i` and `j`, in `0..2 r + 1`.
pub fn relpos_bucket(i: usize, j: usize, r: usize) -> usize {
    let d = (i as i64 - j as i64).clamp(-(r as i64), r as i64);
    (d + r as i64) as usize
}

/// Pair features, coarse when `stride > 1`.
///
/// `tensor` has shape `[B, Lc, Lc, C]` with `Lc = ceil(len / stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeat<R> {
    pub tensor: Tensor<R>,
    pub stride: usize,
    pub len: usize,
}

impl<R: Real> PairFeat<R> {
    pub fn new(tensor: Tensor<R>, stride: usize, len: usize) -> Result<Self> {
        let lc = len.div_ceil(stride.max(1));
        let s = tensor.shape();
        if stride == 0 || s.len() != 4 || s[1] != lc || s[2] != lc {
            return Err(FoldError::ShapeMismatch(format!(
                "pair {s:?} for length {len} at stride {stride}"
            )));
        }
        Ok(Self {
            tensor,
            stride,
            len,
        })
    }

    pub fn coarse_len(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[3]
    }

    /// Block-constant expansion to `[B, L, L, C]`.
    pub fn upsample(&self) -> Tensor<R> {
        upsample_pair(&self.tensor, self.stride, self.len).expect("shape checked on construction")
    }
}

fn gather_rows<R: Real>(src: &[R], rows: &[usize], width: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
    out
}

/// Gathers `[B, L, L, C]` at `(idx[k], idx[l])`.
fn gather_pair<R: Real>(pair: &Tensor<R>, idx: &[usize]) -> Result<Tensor<R>> {
    let s = pair.shape();
    if s.len() != 4 || s[1] != s[2] {
        return Err(FoldError::ShapeMismatch(format!("pair must be [B, L, L, C], got {s:?}")));
    }
    let (b, l, c) = (s[0], s[1], s[3]);
    let n = idx.len();
    let mut out = Vec::with_capacity(b * n * n * c);
    for bi in 0..b {
        for &i in idx {
            let row = &pair.data()[(bi * l + i) * l * c..(bi * l + i + 1) * l * c];
            out.extend(gather_rows(row, idx, c));
        }
    }
    Ok(Tensor::new(&[b, n, n, c], out)?)
}

fn gather_single<R: Real>(single: &Tensor<R>, idx: &[usize]) -> Result<Tensor<R>> {
    let s = single.shape();
    if s.len() != 3 {
        return Err(FoldError::ShapeMismatch(format!("single must be [B, L, C], got {s:?}")));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(b * idx.len() * c);
    for bi in 0..b {
        out.extend(gather_rows(&single.data()[bi * l * c..(bi + 1) * l * c], idx, c));
    }
    Ok(Tensor::new(&[b, idx.len(), c], out)?)
}

/// Gathers single `[B, L, Cs]` and pair `[B, L, L, Cp]` at the coarse indices.
pub fn downsample<R: Real>(
    single: &Tensor<R>,
    pair: &Tensor<R>,
    s: usize,
) -> Result<(Tensor<R>, PairFeat<R>)> {
    let l = single.shape().get(1).copied().unwrap_or(0);
    if pair.shape().get(1) != Some(&l) {
        return Err(FoldError::ShapeMismatch(format!(
            "single {:?} vs pair {:?}",
            single.shape(),
            pair.shape()
        )));
    }
    let idx = coarse_indices(l, s);
    let sc = gather_single(single, &idx)?;
    let pc = gather_pair(pair, &idx)?;
    Ok((sc, PairFeat::new(pc, s, l)?))
}

fn upsample_pair<R: Real>(pair_c: &Tensor<R>, s: usize, l: usize) -> Result<Tensor<R>> {
    let lc = pair_c.shape().get(1).copied().unwrap_or(0);
    if lc != l.div_ceil(s) {
        return Err(FoldError::ShapeMismatch(format!(
            "coarse length {lc} does not match ceil({l}/{s})"
        )));
    }
    gather_pair(pair_c, &upsample_indices(l, s))
}

/// Nearest-neighbor expansion of coarse single and pair features to length `l`.
pub fn upsample<R: Real>(
    single_c: &Tensor<R>,
    pair_c: &Tensor<R>,
    s: usize,
    l: usize,
) -> Result<(Tensor<R>, Tensor<R>)> {
    if single_c.shape().get(1) != Some(&l.div_ceil(s)) {
        return Err(FoldError::ShapeMismatch(format!(
            "coarse single {:?} for length {l} at stride {s}",
            single_c.shape()
        )));
    }
    let up = upsample_indices(l, s);
    Ok((gather_single(single_c, &up)?, upsample_pair(pair_c, s, l)?))
}

/// Pair-tensor footprint of one protein at full and coarse resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub len: usize,
    pub stride: usize,
    pub coarse_len: usize,
    pub c_pair: usize,
    pub bytes_per_elem: usize,
    pub dense_elems: usize,
    pub coarse_elems: usize,
    /// `dense_elems / coarse_elems`, i.e. `(L / Lc)^2`.
    pub ratio: f64,
    /// Peak heap growth while folding, when measured.
    pub measured_peak_bytes: Option<usize>,
}

impl MemoryReport {
    pub fn coarse_bytes(&self) -> usize {
        self.coarse_elems * self.bytes_per_elem
    }
}

pub fn memory_estimate(l: usize, s: usize, c_pair: usize, bytes_per_elem: usize) -> MemoryReport {
    let lc = l.div_ceil(s);
    let dense = l * l * c_pair;
    let coarse = lc * lc * c_pair;
    MemoryReport {
        len: l,
        stride: s,
        coarse_len: lc,
        c_pair,
        bytes_per_elem,
        dense_elems: dense,
        coarse_elems: coarse,
        ratio: dense as f64 / coarse as f64,
        measured_peak_bytes: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_index_examples() {
        assert_eq!(coarse_indices(10, 4), vec![0, 4, 8]);
        assert_eq!(coarse_indices(8, 4), vec![0, 4]);
        assert_eq!(coarse_indices(5, 1), vec![0, 1, 2, 3, 4]);
        for l in 1..40 {
            for s in 1..9 {
                let idx = coarse_indices(l, s);
                assert_eq!(idx.len(), l.div_ceil(s));
                assert!(idx.iter().all(|&i| i < l && i % s == 0));
            }
        }
        assert_eq!(upsample_indices(5, 2)[4], 2);
    }

    #[test]
    fn gather_and_expand() {
        let pair = Tensor::<f64>::from_fn(&[1, 4, 4, 2], |i| i as f64);
        let single = Tensor::<f64>::from_fn(&[1, 4, 3], |i| i as f64);
        let (sc, pc) = downsample(&single, &pair, 2).unwrap();
        assert_eq!(pc.tensor.numel(), 2 * 2 * 2);
        for k in 0..2 {
            for l in 0..2 {
                for c in 0..2 {
                    assert_eq!(pc.tensor.at(&[0, k, l, c]), pair.at(&[0, 2 * k, 2 * l, c]));
                }
            }
        }
        let (s1, p1) = downsample(&single, &pair, 1).unwrap();
        assert_eq!((s1, p1.tensor), (single.clone(), pair.clone()));
        let (su, pu) = upsample(&sc, &pc.tensor, 2, 4).unwrap();
        assert_eq!(su.at(&[0, 3, 1]), sc.at(&[0, 1, 1]));
        assert_eq!(pu.at(&[0, 1, 3, 0]), pc.tensor.at(&[0, 0, 1, 0]));
        assert!(upsample(&sc, &pc.tensor, 2, 6).is_err());
    }

    #[test]
    fn memory_examples() {
        let r = memory_estimate(512, 4, 32, 4);
        assert_eq!((r.coarse_len, r.ratio), (128, 16.0));
        assert_eq!(memory_estimate(100, 1, 32, 4).ratio, 1.0);
        let r = memory_estimate(514, 4, 32, 4);
        assert_eq!(r.coarse_len, 129);
        assert!((r.ratio - (514.0f64 / 129.0).powi(2)).abs() < 1e-12);
        assert!((r.ratio - 15.87).abs() < 0.01);
    }

    #[test]
    fn relpos_clips() {
        assert_eq!(relpos_bucket(0, 0, 4), 4);
        assert_eq!(relpos_bucket(0, 100, 4), 0);
        assert_eq!(relpos_bucket(100, 0, 4), 8);
    }
}
