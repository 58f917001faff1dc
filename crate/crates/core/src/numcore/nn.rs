use super::{Graph, Real, Result, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x W + b` with `W: [in, out]`.
pub fn linear<R: Real>(g: &mut Graph<R>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

pub fn layer_norm<R: Real>(g: &mut Graph<R>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

/// `W2 SiLU(W1 x + b1) + b2`.
pub fn mlp2<R: Real>(
    g: &mut Graph<R>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let h = linear(g, x, w1, Some(b1))?;
    let h = g.silu(h);
    linear(g, h, w2, Some(b2))
}

/// Output projection of a multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct MhaWeights {
    pub wo: Var,
    pub bo: Option<Var>,
}

fn split_heads<R: Real>(g: &mut Graph<R>, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || !s[2].is_multiple_of(heads) {
        return Err(TensorError::Invalid {
            op: "mha",
            msg: format!("cannot split {s:?} into {heads} heads"),
        });
    }
    let r = g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    g.permute(r, &[0, 2, 1, 3])
}

/// Multi-head scaled dot-product attention over already-projected inputs.
///
/// `q: [B, Lq, D]`, `k, v: [Bk, Lk, D]` with `Bk` either `B` or 1. `bias`,
/// when given, must broadcast to `[B, heads, Lq, Lk]`.
pub fn mha<R: Real>(
    g: &mut Graph<R>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    bias: Option<Var>,
    out: &MhaWeights,
) -> Result<Var> {
    mha_with(g, q, k, v, heads, bias, out, |_, q, k| Ok((q, k)))
}

/// Like [`mha`], with a hook applied to the head-split `[.., heads, L, d]`
/// queries and keys before the dot product (used for rotary embeddings).
#[allow(clippy::too_many_arguments)]
pub fn mha_with<R: Real>(
    g: &mut Graph<R>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    bias: Option<Var>,
    out: &MhaWeights,
    qk_hook: impl FnOnce(&mut Graph<R>, Var, Var) -> Result<(Var, Var)>,
) -> Result<Var> {
    let qs = g.shape(q).to_vec();
    if g.shape(k) != g.shape(v) || g.shape(k).len() != 3 || g.shape(k)[2] != qs[2] {
        return Err(super::mismatch("mha", &qs, g.shape(k)));
    }
    let (b, lq, dm) = (qs[0], qs[1], qs[2]);
    let dh = dm / heads.max(1);
    let qh = split_heads(g, q, heads)?;
    let kh = split_heads(g, k, heads)?;
    let vh = split_heads(g, v, heads)?;
    let (qh, kh) = qk_hook(g, qh, kh)?;
    let kt = g.transpose_last(kh)?;
    let scores = g.matmul(qh, kt)?;
    let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    if let Some(bias) = bias {
        scores = g.add(scores, bias)?;
    }
    let attn = g.softmax(scores)?;
    let ctx = g.matmul(attn, vh)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, lq, dm])?;
    linear(g, ctx, out.wo, out.bo)
}
