use rand::Rng;

use super::{coarse_indices, relpos_bucket, upsample_indices, FoldConfig, FoldError, Result};
use crate::numcore::{layer_norm, linear, mha, Bindings, Graph, MhaWeights, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriAxis {
    /// `p[i, j]` attends over `p[i, k]`.
    Start,
    /// `p[i, j]` attends over `p[k, j]`.
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriDirection {
    /// `sum_k a[i, k] * b[j, k]`.
    Out,
    /// `sum_k a[k, i] * b[k, j]`.
    In,
}

pub(crate) fn attn_prefix(d: usize, axis: TriAxis) -> String {
    match axis {
        TriAxis::Start => format!("fold.blk{d}.ta_start"),
        TriAxis::End => format!("fold.blk{d}.ta_end"),
    }
}

pub(crate) fn mult_prefix(d: usize, dir: TriDirection) -> String {
    match dir {
        TriDirection::Out => format!("fold.blk{d}.tm_out"),
        TriDirection::In => format!("fold.blk{d}.tm_in"),
    }
}

/// Folding-stack parameters: input projection, pair init and `depth` blocks.
pub fn init_fold_params<R: Real>(cfg: &FoldConfig, rng: &mut impl Rng) -> Result<ParamStore<R>> {
    cfg.validate()?;
    let (cs, cp, ch) = (cfg.c_single, cfg.c_pair, cfg.tri_mult_hidden);
    let mut p = ParamStore::new();
    let lin = |p: &mut ParamStore<R>, name: String, i: usize, o: usize, rng: &mut dyn FnMut(&[usize]) -> Tensor<R>| {
        p.insert(format!("{name}_w"), rng(&[i, o]));
        p.insert(format!("{name}_b"), Tensor::zeros(&[o]));
    };
    let mut init = |shape: &[usize]| Tensor::fan_in(shape, rng);
    let ln = |p: &mut ParamStore<R>, name: String, w: usize| {
        p.insert(format!("{name}_g"), Tensor::ones(&[w]));
        p.insert(format!("{name}_b"), Tensor::zeros(&[w]));
    };
    lin(&mut p, "fold.in".into(), cfg.d_seq, cs, &mut init);
    p.insert("fold.pair.left", init(&[cs, cp]));
    p.insert("fold.pair.right", init(&[cs, cp]));
    p.insert("fold.pair.b", Tensor::zeros(&[cp]));
    p.insert("fold.pair.relpos", init(&[2 * cfg.relpos_max + 1, cp]));
    for d in 0..cfg.depth {
        for axis in [TriAxis::Start, TriAxis::End] {
            let pre = attn_prefix(d, axis);
            ln(&mut p, format!("{pre}.ln"), cp);
            for m in ["wq", "wk", "wv"] {
                p.insert(format!("{pre}.{m}"), init(&[cp, cp]));
            }
            lin(&mut p, format!("{pre}.out"), cp, cp, &mut init);
        }
        if cfg.tri_mult_projections {
            for dir in [TriDirection::Out, TriDirection::In] {
                let pre = mult_prefix(d, dir);
                ln(&mut p, format!("{pre}.ln"), cp);
                for m in ["a", "a_gate", "b", "b_gate"] {
                    lin(&mut p, format!("{pre}.{m}"), cp, ch, &mut init);
                }
                ln(&mut p, format!("{pre}.ln_out"), ch);
                lin(&mut p, format!("{pre}.out"), ch, cp, &mut init);
                lin(&mut p, format!("{pre}.gate"), cp, cp, &mut init);
            }
        }
        ln(&mut p, format!("fold.blk{d}.pair_norm"), cp);
        lin(&mut p, format!("fold.blk{d}.single"), cp, cs, &mut init);
    }
    Ok(p)
}

fn get(p: &Bindings, prefix: &str, name: &str) -> Result<Var> {
    Ok(p.get(&format!("{prefix}.{name}"))?)
}

fn ln<R: Real>(g: &mut Graph<R>, p: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let (gain, bias) = (get(p, prefix, "ln_g")?, get(p, prefix, "ln_b")?);
    Ok(layer_norm(g, x, gain, bias)?)
}

fn affine<R: Real>(g: &mut Graph<R>, p: &Bindings, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}_w"))?;
    let b = p.get(&format!("{name}_b"))?;
    Ok(linear(g, x, w, Some(b))?)
}

fn pair_dims<R: Real>(g: &Graph<R>, pair: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(pair) {
        [b, n, m, c] if n == m => Ok((b, n, c)),
        ref s => Err(FoldError::ShapeMismatch(format!("pair must be [B, L, L, C], got {s:?}"))),
    }
}

/// Pair features at residue positions `idx`: `left(s_i) + right(s_j) +
/// relpos(idx_i - idx_j) + b`. `single` is `[B, L, Cs]`.
pub fn pair_init<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &FoldConfig,
    single: Var,
    idx: &[usize],
) -> Result<Var> {
    let b = g.shape(single)[0];
    let (n, cp) = (idx.len(), cfg.c_pair);
    let sc = g.index_select(single, 1, idx)?;
    let left = linear(g, sc, p.get("fold.pair.left")?, None)?;
    let right = linear(g, sc, p.get("fold.pair.right")?, None)?;
    let left = g.reshape(left, &[b, n, 1, cp])?;
    let right = g.reshape(right, &[b, 1, n, cp])?;
    let outer = g.add(left, right)?;
    let buckets: Vec<usize> = idx
        .iter()
        .flat_map(|&i| idx.iter().map(move |&j| relpos_bucket(i, j, cfg.relpos_max)))
        .collect();
    let rel = g.index_select(p.get("fold.pair.relpos")?, 0, &buckets)?;
    let rel = g.reshape(rel, &[n, n, cp])?;
    let x = g.add(outer, rel)?;
    Ok(g.add(x, p.get("fold.pair.b")?)?)
}

/// Pre-norm triangle attention with residual; `prefix` names the weights.
pub fn tri_attn<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    prefix: &str,
    pair: Var,
    heads: usize,
    axis: TriAxis,
) -> Result<Var> {
    let (b, n, c) = pair_dims(g, pair)?;
    let x = match axis {
        TriAxis::Start => pair,
        TriAxis::End => g.permute(pair, &[0, 2, 1, 3])?,
    };
    let h = ln(g, p, prefix, x)?;
    let h = g.reshape(h, &[b * n, n, c])?;
    let q = linear(g, h, get(p, prefix, "wq")?, None)?;
    let k = linear(g, h, get(p, prefix, "wk")?, None)?;
    let v = linear(g, h, get(p, prefix, "wv")?, None)?;
    let out = MhaWeights {
        wo: get(p, prefix, "out_w")?,
        bo: Some(get(p, prefix, "out_b")?),
    };
    let o = mha(g, q, k, v, heads, None, &out)?;
    let o = g.reshape(o, &[b, n, n, c])?;
    let y = g.add(x, o)?;
    Ok(match axis {
        TriAxis::Start => y,
        TriAxis::End => g.permute(y, &[0, 2, 1, 3])?,
    })
}

/// `x[i, j, c] = sum_k a[i, k, c] b[j, k, c]` (out) or
/// `sum_k a[k, i, c] b[k, j, c]` (in), for `[B, L, L, C]` operands.
pub(crate) fn triangle_product<R: Real>(
    g: &mut Graph<R>,
    a: Var,
    b: Var,
    dir: TriDirection,
) -> Result<Var> {
    let (pa, pb) = match dir {
        TriDirection::Out => ([0, 3, 1, 2], [0, 3, 2, 1]),
        TriDirection::In => ([0, 3, 2, 1], [0, 3, 1, 2]),
    };
    let a = g.permute(a, &pa)?;
    let b = g.permute(b, &pb)?;
    let m = g.matmul(a, b)?;
    Ok(g.permute(m, &[0, 2, 3, 1])?)
}

fn gated<R: Real>(g: &mut Graph<R>, p: &Bindings, prefix: &str, side: &str, x: Var) -> Result<Var> {
    let val = affine(g, p, &format!("{prefix}.{side}"), x)?;
    let gate = affine(g, p, &format!("{prefix}.{side}_gate"), x)?;
    let gate = g.sigmoid(gate);
    Ok(g.mul(gate, val)?)
}

/// Triangle multiplication with residual.
///
/// With `projections`, both operands are gated projections of the normalized
/// input and the product passes through a norm, an output projection and an
/// output gate. Without, the raw product of the input is added.
pub fn tri_mult<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    prefix: &str,
    pair: Var,
    dir: TriDirection,
    projections: bool,
) -> Result<Var> {
    pair_dims(g, pair)?;
    if !projections {
        let prod = triangle_product(g, pair, pair, dir)?;
        return Ok(g.add(pair, prod)?);
    }
    let x = ln(g, p, prefix, pair)?;
    let a = gated(g, p, prefix, "a", x)?;
    let b = gated(g, p, prefix, "b", x)?;
    let prod = triangle_product(g, a, b, dir)?;
    let (lg, lb) = (get(p, prefix, "ln_out_g")?, get(p, prefix, "ln_out_b")?);
    let prod = layer_norm(g, prod, lg, lb)?;
    let o = affine(g, p, &format!("{prefix}.out"), prod)?;
    let gate = affine(g, p, &format!("{prefix}.gate"), x)?;
    let gate = g.sigmoid(gate);
    let upd = g.mul(gate, o)?;
    Ok(g.add(pair, upd)?)
}

/// Folded features of a batch of equal-length proteins.
#[derive(Debug, Clone, Copy)]
pub struct FoldOutput {
    /// `[B, L, Cs]`, block-constant along `L`.
    pub single: Var,
    /// `[B, Lc, Lc, Cp]`; expand with [`upsample_indices`] when needed.
    pub pair: Var,
    pub stride: usize,
    pub len: usize,
}

/// Projects embeddings `[B, L, d_seq]`, builds the pair at the coarse
/// positions, runs `depth` triangle blocks and expands the single track.
pub fn fold_block<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &FoldConfig,
    emb: Var,
) -> Result<FoldOutput> {
    cfg.validate()?;
    let (b, l) = match *g.shape(emb) {
        [b, l, d] if d == cfg.d_seq && l > 0 => (b, l),
        ref s => {
            return Err(FoldError::ShapeMismatch(format!(
                "embeddings must be [B, L, {}], got {s:?}",
                cfg.d_seq
            )))
        }
    };
    let s = cfg.stride;
    let single = affine(g, p, "fold.in", emb)?;
    let idx = coarse_indices(l, s);
    let mut pair = pair_init(g, p, cfg, single, &idx)?;
    let mut sc = g.index_select(single, 1, &idx)?;
    for d in 0..cfg.depth {
        for axis in [TriAxis::Start, TriAxis::End] {
            pair = tri_attn(g, p, &attn_prefix(d, axis), pair, cfg.tri_heads, axis)?;
        }
        for dir in [TriDirection::Out, TriDirection::In] {
            pair = tri_mult(g, p, &mult_prefix(d, dir), pair, dir, cfg.tri_mult_projections)?;
        }
        let pn = format!("fold.blk{d}.pair_norm");
        pair = layer_norm(g, pair, p.get(&format!("{pn}_g"))?, p.get(&format!("{pn}_b"))?)?;
        let rows = g.mean_axis(pair, 2)?;
        let upd = affine(g, p, &format!("fold.blk{d}.single"), rows)?;
        sc = g.add(sc, upd)?;
    }
    debug_assert_eq!(g.shape(sc)[..2], [b, idx.len()]);
    let single = g.index_select(sc, 1, &upsample_indices(l, s))?;
    Ok(FoldOutput {
        single,
        pair,
        stride: s,
        len: l,
    })
}
