//! Transformer denoiser over `[timestep; conditioning; ligand]` sequences.
//!
//! Each layer is pre-norm: rotary self-attention over all positions,
//! cross-attention from every position to the protein residues, then a ReLU
//! feed-forward block. Logits are produced for the ligand slots only.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemkit::TokenSeq;
use crate::folding::{ContextMode, FoldError, ProteinContext};
use crate::numcore::{
    layer_norm, linear, mha, mha_with, mlp2, Bindings, Graph, MhaWeights, ParamStore, Real, Tensor,
    TensorError, Var,
};

/// Additive attention bias for padded keys.
pub const PAD_BIAS: f64 = -1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing context: {0}")]
    MissingContext(String),
    #[error("rotary embedding needs an even head width, got {0}")]
    OddHeadDim(usize),
    #[error("invalid decoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fold(#[from] FoldError),
}

pub type Result<T> = std::result::Result<T, DecoderError>;

fn default_ffn_mult() -> usize {
    4
}

fn default_rope_base() -> f64 {
    10000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// Vocabulary size; filled in from the token vocabulary when zero.
    #[serde(default)]
    pub vocab: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    /// Pooled conditioning tokens in streamlined mode.
    pub cond_tokens: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 4,
            layers: 2,
            ffn_mult: 4,
            vocab: 0,
            rope_base: 10000.0,
            cond_tokens: 4,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DecoderError::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 || self.ffn_mult == 0 {
            return bad("hidden, heads, layers and ffn_mult must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !(self.hidden / self.heads).is_multiple_of(2) {
            return Err(DecoderError::OddHeadDim(self.hidden / self.heads));
        }
        if self.vocab == 0 {
            return bad("vocab size is not set".into());
        }
        if !(self.rope_base > 1.0) {
            return bad(format!("rope_base must exceed 1, got {}", self.rope_base));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

pub fn init_decoder_params<R: Real>(cfg: &DecoderConfig, rng: &mut impl Rng) -> Result<ParamStore<R>> {
    cfg.validate()?;
    let (h, v, f) = (cfg.hidden, cfg.vocab, cfg.hidden * cfg.ffn_mult);
    let mut p = ParamStore::new();
    p.insert("dec.tok_emb", Tensor::uniform(&[v, h], 1.0, rng));
    p.insert("dec.time.w1", Tensor::fan_in(&[h, h], rng));
    p.insert("dec.time.b1", Tensor::zeros(&[h]));
    p.insert("dec.time.w2", Tensor::fan_in(&[h, h], rng));
    p.insert("dec.time.b2", Tensor::zeros(&[h]));
    for l in 0..cfg.layers {
        let pre = format!("dec.l{l}");
        for n in ["ln_self", "ln_cross", "ln_ffn"] {
            p.insert(format!("{pre}.{n}_g"), Tensor::ones(&[h]));
            p.insert(format!("{pre}.{n}_b"), Tensor::zeros(&[h]));
        }
        for a in ["self", "cross"] {
            for m in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("{pre}.{a}.{m}"), Tensor::fan_in(&[h, h], rng));
            }
            p.insert(format!("{pre}.{a}.bo"), Tensor::zeros(&[h]));
        }
        p.insert(format!("{pre}.ffn.w1"), Tensor::fan_in(&[h, f], rng));
        p.insert(format!("{pre}.ffn.b1"), Tensor::zeros(&[f]));
        p.insert(format!("{pre}.ffn.w2"), Tensor::fan_in(&[f, h], rng));
        p.insert(format!("{pre}.ffn.b2"), Tensor::zeros(&[h]));
    }
    p.insert("dec.ln_f_g", Tensor::ones(&[h]));
    p.insert("dec.ln_f_b", Tensor::zeros(&[h]));
    p.insert("dec.head_w", Tensor::zeros(&[h, v]));
    p.insert("dec.head_b", Tensor::zeros(&[v]));
    Ok(p)
}

/// Sinusoidal encoding of `x`: `sin(x w_i)` at even and `cos(x w_i)` at odd
/// slots, `w_i = 10000^(-2i/dim)`.
pub fn sinusoidal(x: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let w = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
            if j % 2 == 0 {
                (x * w).sin()
            } else {
                (x * w).cos()
            }
        })
        .collect()
}

/// Timestep tokens `[B, H]`: `SiLU(mlp2(PE(1000 t)))`.
pub fn timestep_embed<R: Real>(g: &mut Graph<R>, p: &Bindings, cfg: &DecoderConfig, t: &[f64]) -> Result<Var> {
    let h = cfg.hidden;
    let pe: Vec<f64> = t.iter().flat_map(|&ti| sinusoidal(ti * 1000.0, h)).collect();
    let pe = g.constant(Tensor::from_f64(&[t.len(), h], &pe)?);
    let (w1, b1) = (p.get("dec.time.w1")?, p.get("dec.time.b1")?);
    let (w2, b2) = (p.get("dec.time.w2")?, p.get("dec.time.b2")?);
    let y = mlp2(g, pe, w1, b1, w2, b2)?;
    Ok(g.silu(y))
}

/// Where each part of the decoder input lives along the sequence axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    /// Total length `1 + M + L_tok`.
    pub n: usize,
    pub cond_len: usize,
    pub ligand_offset: usize,
    pub ligand_len: usize,
}

/// `[t_tok; cond; lig]` along the sequence axis. `t_tok` is `[B, H]`, `cond`
/// `[B, M, H]` and `lig` `[B, L_tok, H]`.
pub fn build_input<R: Real>(
    g: &mut Graph<R>,
    t_tok: Var,
    cond: Option<Var>,
    lig: Var,
) -> Result<(Var, InputLayout)> {
    let (b, l, h) = match *g.shape(lig) {
        [b, l, h] => (b, l, h),
        ref s => return Err(DecoderError::ShapeMismatch(format!("ligand {s:?}"))),
    };
    if g.shape(t_tok) != [b, h] {
        return Err(DecoderError::ShapeMismatch(format!(
            "timestep token {:?} vs ligand {:?}",
            g.shape(t_tok),
            g.shape(lig)
        )));
    }
    let t3 = g.reshape(t_tok, &[b, 1, h])?;
    let mut parts = vec![t3];
    let mut m = 0;
    if let Some(c) = cond {
        match *g.shape(c) {
            [cb, cm, ch] if cb == b && ch == h => m = cm,
            ref s => return Err(DecoderError::ShapeMismatch(format!("conditioning {s:?}"))),
        }
        if m > 0 {
            parts.push(c);
        }
    }
    parts.push(lig);
    let x = g.concat(&parts, 1)?;
    Ok((
        x,
        InputLayout {
            n: 1 + m + l,
            cond_len: m,
            ligand_offset: 1 + m,
            ligand_len: l,
        },
    ))
}

/// Per-position `cos` and `sin` of the rotation angles, each `[n, d]` with
/// both members of a plane sharing one angle.
fn rope_tables(positions: &[usize], d: usize, base: f64) -> (Vec<f64>, Vec<f64>) {
    let mut cos = Vec::with_capacity(positions.len() * d);
    let mut sin = Vec::with_capacity(positions.len() * d);
    for &m in positions {
        for j in 0..d {
            let theta = base.powf(-((j / 2 * 2) as f64) / d as f64);
            let a = m as f64 * theta;
            cos.push(a.cos());
            sin.push(a.sin());
        }
    }
    (cos, sin)
}

/// Rotates each plane `(x[2i], x[2i+1])` of `x: [.., L, d]` by
/// `positions[l] * base^(-2i/d)`.
pub fn rope<R: Real>(g: &mut Graph<R>, x: Var, positions: &[usize], base: f64) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (l, d) = match s[..] {
        [.., l, d] => (l, d),
        _ => return Err(DecoderError::ShapeMismatch(format!("rope input {s:?}"))),
    };
    if d % 2 != 0 {
        return Err(DecoderError::OddHeadDim(d));
    }
    if positions.len() != l {
        return Err(DecoderError::ShapeMismatch(format!("{} positions for length {l}", positions.len())));
    }
    // (x R)[2i] = -x[2i+1], (x R)[2i+1] = x[2i]
    let mut rot = vec![0.0; d * d];
    for i in 0..d / 2 {
        rot[(2 * i + 1) * d + 2 * i] = -1.0;
        rot[2 * i * d + 2 * i + 1] = 1.0;
    }
    let (cos, sin) = rope_tables(positions, d, base);
    let rot = g.constant(Tensor::from_f64(&[d, d], &rot)?);
    let cos = g.constant(Tensor::from_f64(&[l, d], &cos)?);
    let sin = g.constant(Tensor::from_f64(&[l, d], &sin)?);
    let swapped = g.matmul(x, rot)?;
    let a = g.mul(x, cos)?;
    let b = g.mul(swapped, sin)?;
    Ok(g.add(a, b)?)
}

/// Pads every sequence to the longest one with `pad_id`.
pub fn pad_batch(seqs: &[TokenSeq], pad_id: usize) -> Vec<TokenSeq> {
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut s = s.clone();
            while s.ids.len() < len {
                s.ids.push(pad_id);
                s.pad_mask.push(false);
            }
            s
        })
        .collect()
}

fn expand_batch<R: Real>(g: &mut Graph<R>, v: Var, b: usize, what: &str) -> Result<Var> {
    match g.shape(v)[0] {
        n if n == b => Ok(v),
        1 => Ok(g.index_select(v, 0, &vec![0; b])?),
        n => Err(DecoderError::ShapeMismatch(format!("{what} batch {n} vs {b}"))),
    }
}

/// Logits `[B, L_tok, V]` for equal-length token sequences `xt`.
pub fn forward<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &DecoderConfig,
    xt: &[TokenSeq],
    t: &[f64],
    ctx: &ProteinContext,
) -> Result<Var> {
    if t.len() != xt.len() {
        return Err(DecoderError::ShapeMismatch(format!("{} timesteps for {} sequences", t.len(), xt.len())));
    }
    let t_tok = timestep_embed(g, p, cfg, t)?;
    forward_with_timestep(g, p, cfg, xt, t_tok, ctx)
}

/// [`forward`] with a caller-supplied timestep token `[B, H]`.
pub fn forward_with_timestep<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &DecoderConfig,
    xt: &[TokenSeq],
    t_tok: Var,
    ctx: &ProteinContext,
) -> Result<Var> {
    cfg.validate()?;
    let b = xt.len();
    let l = xt.first().map_or(0, |s| s.len());
    if b == 0 || l == 0 || xt.iter().any(|s| s.len() != l || s.pad_mask.len() != l) {
        return Err(DecoderError::ShapeMismatch("token batch must be non-empty and equal-length".into()));
    }
    if let Some(&bad) = xt.iter().flat_map(|s| &s.ids).find(|&&id| id >= cfg.vocab) {
        return Err(DecoderError::ShapeMismatch(format!("token id {bad} outside vocab {}", cfg.vocab)));
    }
    if ctx.mode == ContextMode::Full && ctx.pair_bias.is_none() {
        return Err(DecoderError::MissingContext("full mode without a pair bias".into()));
    }
    let h = cfg.hidden;
    let ids: Vec<usize> = xt.iter().flat_map(|s| s.ids.iter().copied()).collect();
    let emb = g.index_select(p.get("dec.tok_emb")?, 0, &ids)?;
    let lig = g.reshape(emb, &[b, l, h])?;
    let cond = match ctx.pooled {
        Some(c) => Some(expand_batch(g, c, b, "pooled tokens")?),
        None => None,
    };
    let (mut x, layout) = build_input(g, t_tok, cond, lig)?;
    let n = layout.n;

    let self_bias = if xt.iter().any(|s| s.pad_mask.iter().any(|&m| !m)) {
        let mut bias = vec![0.0; b * n];
        for (bi, s) in xt.iter().enumerate() {
            for (j, &real) in s.pad_mask.iter().enumerate() {
                if !real {
                    bias[bi * n + layout.ligand_offset + j] = PAD_BIAS;
                }
            }
        }
        Some(g.constant(Tensor::from_f64(&[b, 1, 1, n], &bias)?))
    } else {
        None
    };
    let cross_bias = ctx.cross_bias(g)?;
    let residues = ctx.residues;
    if g.shape(residues).len() != 3 || g.shape(residues)[2] != h {
        return Err(DecoderError::ShapeMismatch(format!("residues {:?}", g.shape(residues))));
    }
    let positions: Vec<usize> = (0..n).collect();
    let base = cfg.rope_base;

    for li in 0..cfg.layers {
        let pre = format!("dec.l{li}");
        let w = |name: &str| p.get(&format!("{pre}.{name}"));

        let hx = layer_norm(g, x, w("ln_self_g")?, w("ln_self_b")?)?;
        let q = linear(g, hx, w("self.wq")?, None)?;
        let k = linear(g, hx, w("self.wk")?, None)?;
        let v = linear(g, hx, w("self.wv")?, None)?;
        let out = MhaWeights {
            wo: w("self.wo")?,
            bo: Some(w("self.bo")?),
        };
        let mut rope_err = None;
        let a = mha_with(g, q, k, v, cfg.heads, self_bias, &out, |g, q, k| {
            match (rope(g, q, &positions, base), rope(g, k, &positions, base)) {
                (Ok(q), Ok(k)) => Ok((q, k)),
                (Err(e), _) | (_, Err(e)) => {
                    rope_err = Some(e);
                    Err(TensorError::Invalid {
                        op: "rope",
                        msg: "rotary embedding failed".into(),
                    })
                }
            }
        });
        if let Some(e) = rope_err {
            return Err(e);
        }
        x = g.add(x, a?)?;

        let hx = layer_norm(g, x, w("ln_cross_g")?, w("ln_cross_b")?)?;
        let q = linear(g, hx, w("cross.wq")?, None)?;
        let k = linear(g, residues, w("cross.wk")?, None)?;
        let v = linear(g, residues, w("cross.wv")?, None)?;
        let out = MhaWeights {
            wo: w("cross.wo")?,
            bo: Some(w("cross.bo")?),
        };
        let c = mha(g, q, k, v, cfg.heads, cross_bias, &out)?;
        x = g.add(x, c)?;

        let hx = layer_norm(g, x, w("ln_ffn_g")?, w("ln_ffn_b")?)?;
        let f = linear(g, hx, w("ffn.w1")?, Some(w("ffn.b1")?))?;
        let f = g.relu(f);
        let f = linear(g, f, w("ffn.w2")?, Some(w("ffn.b2")?))?;
        x = g.add(x, f)?;
    }
    let x = layer_norm(g, x, p.get("dec.ln_f_g")?, p.get("dec.ln_f_b")?)?;
    let lig = g.narrow(x, 1, layout.ligand_offset, l)?;
    Ok(linear(g, lig, p.get("dec.head_w")?, Some(p.get("dec.head_b")?))?)
}
