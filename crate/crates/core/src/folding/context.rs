use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::FoldOutput;
use super::{upsample_indices, FoldConfig, FoldError, Result};
use crate::numcore::{linear, Bindings, Graph, ParamStore, Real, Tensor, Var};

/// Additive attention bias that hides padded residues.
const PAD_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Pooled structural tokens join the decoder input.
    #[default]
    Streamlined,
    /// Pair rows become a per-head bias on ligand-to-residue attention.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub mode: ContextMode,
    /// Number of pooled tokens in streamlined mode.
    pub pooled_tokens: usize,
    /// Decoder width.
    pub hidden: usize,
    /// Decoder attention heads.
    pub heads: usize,
}

pub fn init_context_params<R: Real>(
    fold: &FoldConfig,
    cfg: &ContextConfig,
    rng: &mut impl Rng,
) -> ParamStore<R> {
    let mut p = ParamStore::new();
    p.insert("ctx.res_w", Tensor::fan_in(&[fold.c_single, cfg.hidden], rng));
    p.insert("ctx.res_b", Tensor::zeros(&[cfg.hidden]));
    match cfg.mode {
        ContextMode::Streamlined if cfg.pooled_tokens > 0 => {
            p.insert("ctx.pool_q", Tensor::fan_in(&[cfg.pooled_tokens, cfg.hidden], rng));
        }
        ContextMode::Streamlined => {}
        ContextMode::Full => p.insert("ctx.bias_w", Tensor::fan_in(&[fold.c_pair, cfg.heads], rng)),
    }
    p
}

/// Conditioning handed to the decoder.
#[derive(Debug, Clone, Copy)]
pub struct ProteinContext {
    pub mode: ContextMode,
    /// Cross-attention keys and values, `[B, L, H]`.
    pub residues: Var,
    /// Streamlined only: `[B, M, H]`.
    pub pooled: Option<Var>,
    /// Full only: `[B, heads, 1, L]`, shared by every query position.
    pub pair_bias: Option<Var>,
    /// `[B, 1, 1, L]` with a large negative value on padded residues.
    pub key_bias: Option<Var>,
}

impl ProteinContext {
    pub fn residue_len<R: Real>(&self, g: &Graph<R>) -> usize {
        g.shape(self.residues)[1]
    }

    pub fn pooled_len<R: Real>(&self, g: &Graph<R>) -> usize {
        self.pooled.map_or(0, |p| g.shape(p)[1])
    }

    /// Sum of the pair and padding biases, if any.
    pub fn cross_bias<R: Real>(&self, g: &mut Graph<R>) -> Result<Option<Var>> {
        Ok(match (self.pair_bias, self.key_bias) {
            (Some(a), Some(b)) => Some(g.add(a, b)?),
            (a, b) => a.or(b),
        })
    }
}

/// Builds the decoder conditioning from folded features.
///
/// Residue features are projected to the decoder width. Streamlined mode adds
/// `M` tokens, each a softmax-weighted mean of residues under a learned query.
/// Full mode averages the expanded pair over its first index and projects each
/// column to one bias per head.
pub fn make_context<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &ContextConfig,
    fold: &FoldOutput,
) -> Result<ProteinContext> {
    let residues = linear(g, fold.single, p.get("ctx.res_w")?, Some(p.get("ctx.res_b")?))?;
    let (b, l, h) = match *g.shape(residues) {
        [b, l, h] => (b, l, h),
        ref s => return Err(FoldError::ShapeMismatch(format!("residues {s:?}"))),
    };
    let mut ctx = ProteinContext {
        mode: cfg.mode,
        residues,
        pooled: None,
        pair_bias: None,
        key_bias: None,
    };
    match cfg.mode {
        ContextMode::Streamlined => {
            if cfg.pooled_tokens > 0 {
                let q = p.get("ctx.pool_q")?;
                let q = g.reshape(q, &[1, cfg.pooled_tokens, h])?;
                let kt = g.transpose_last(residues)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, 1.0 / (h as f64).sqrt());
                let attn = g.softmax(scores)?;
                ctx.pooled = Some(g.matmul(attn, residues)?);
            }
        }
        ContextMode::Full => {
            let (s, n) = (fold.stride, g.shape(fold.pair)[1]);
            // weight of coarse row k = number of residues mapped onto it
            let mut counts = vec![0.0; n];
            upsample_indices(l, s).into_iter().for_each(|k| counts[k] += 1.0 / l as f64);
            let w = g.constant(Tensor::from_f64(&[1, n, 1, 1], &counts)?);
            let weighted = g.mul(fold.pair, w)?;
            let cols = g.sum_axis(weighted, 1)?;
            let bias = linear(g, cols, p.get("ctx.bias_w")?, None)?;
            let bias = g.index_select(bias, 1, &upsample_indices(l, s))?;
            let bias = g.permute(bias, &[0, 2, 1])?;
            ctx.pair_bias = Some(g.reshape(bias, &[b, cfg.heads, 1, l])?);
        }
    }
    Ok(ctx)
}

/// Concatenates per-protein contexts along the batch axis, zero-padding
/// residues to the longest protein and masking the padding.
pub fn stack_contexts<R: Real>(g: &mut Graph<R>, ctxs: &[ProteinContext]) -> Result<ProteinContext> {
    let first = *ctxs
        .first()
        .ok_or_else(|| FoldError::ShapeMismatch("no contexts to stack".into()))?;
    if let Some(c) = ctxs.iter().find(|c| c.mode != first.mode) {
        return Err(FoldError::ModeMismatch(format!("{:?} vs {:?}", first.mode, c.mode)));
    }
    if ctxs.len() == 1 {
        return Ok(first);
    }
    let lens: Vec<usize> = ctxs.iter().map(|c| c.residue_len(g)).collect();
    let lmax = *lens.iter().max().unwrap_or(&0);
    let pad = |g: &mut Graph<R>, v: Var, axis: usize, len: usize| -> Result<Var> {
        let mut shape = g.shape(v).to_vec();
        if shape[axis] == len {
            return Ok(v);
        }
        shape[axis] = len - shape[axis];
        let z = g.constant(Tensor::zeros(&shape));
        Ok(g.concat(&[v, z], axis)?)
    };
    let mut residues = Vec::new();
    let mut pooled = Vec::new();
    let mut biases = Vec::new();
    let mut key = Vec::new();
    for (c, &len) in ctxs.iter().zip(&lens) {
        if c.key_bias.is_some() {
            return Err(FoldError::ShapeMismatch("contexts are already stacked".into()));
        }
        let bsz = g.shape(c.residues)[0];
        residues.push(pad(g, c.residues, 1, lmax)?);
        if let Some(pv) = c.pooled {
            pooled.push(pv);
        }
        if let Some(pb) = c.pair_bias {
            biases.push(pad(g, pb, 3, lmax)?);
        }
        for _ in 0..bsz {
            key.extend((0..lmax).map(|i| if i < len { 0.0 } else { PAD_BIAS }));
        }
    }
    let rows = key.len() / lmax.max(1);
    let cat = |g: &mut Graph<R>, parts: &[Var]| -> Result<Option<Var>> {
        if parts.is_empty() {
            return Ok(None);
        }
        Ok(Some(g.concat(parts, 0)?))
    };
    let residues = g.concat(&residues, 0)?;
    let padded = lens.iter().any(|&l| l != lmax);
    let key_bias = if padded {
        Some(g.constant(Tensor::from_f64(&[rows, 1, 1, lmax], &key)?))
    } else {
        None
    };
    Ok(ProteinContext {
        mode: first.mode,
        residues,
        pooled: cat(g, &pooled)?,
        pair_bias: cat(g, &biases)?,
        key_bias,
    })
}

/// Plain-tensor copy of a [`ProteinContext`], reusable across graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextValues<R> {
    pub mode: ContextMode,
    pub residues: Tensor<R>,
    pub pooled: Option<Tensor<R>>,
    pub pair_bias: Option<Tensor<R>>,
    pub key_bias: Option<Tensor<R>>,
}

impl<R: Real> ContextValues<R> {
    pub fn detach(g: &Graph<R>, ctx: &ProteinContext) -> Self {
        let val = |v: Option<Var>| v.map(|v| g.value(v).clone());
        Self {
            mode: ctx.mode,
            residues: g.value(ctx.residues).clone(),
            pooled: val(ctx.pooled),
            pair_bias: val(ctx.pair_bias),
            key_bias: val(ctx.key_bias),
        }
    }

    /// Inserts the tensors into `g` as constants.
    pub fn attach(&self, g: &mut Graph<R>) -> ProteinContext {
        let mut c = |t: &Option<Tensor<R>>| t.as_ref().map(|t| g.constant(t.clone()));
        let (pooled, pair_bias, key_bias) = (c(&self.pooled), c(&self.pair_bias), c(&self.key_bias));
        ProteinContext {
            mode: self.mode,
            residues: g.constant(self.residues.clone()),
            pooled,
            pair_bias,
            key_bias,
        }
    }

    pub fn batch(&self) -> usize {
        self.residues.shape()[0]
    }
}

/// Rows `index` of every batched context tensor.
pub fn select_context<R: Real>(g: &mut Graph<R>, ctx: &ProteinContext, index: &[usize]) -> Result<ProteinContext> {
    let mut sel = |v: Option<Var>| -> Result<Option<Var>> {
        Ok(match v {
            Some(v) => Some(g.index_select(v, 0, index)?),
            None => None,
        })
    };
    let residues = sel(Some(ctx.residues))?.expect("residues present");
    Ok(ProteinContext {
        mode: ctx.mode,
        residues,
        pooled: sel(ctx.pooled)?,
        pair_bias: sel(ctx.pair_bias)?,
        key_bias: sel(ctx.key_bias)?,
    })
}
