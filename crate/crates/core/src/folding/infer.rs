//! Tape-free folding that updates one coarse pair buffer in place.
//!
//! Each op touches the pair one row at a time, so beyond the pair itself only
//! row-sized scratch is live, plus one `Lc x Lc x tri_mult_hidden` operand
//! during triangle multiplication. Column-wise ops transpose the buffer in
//! place and reuse the row-wise kernel.

use super::block::{attn_prefix, mult_prefix, TriDirection};
use super::{
    coarse_indices, memory_estimate, relpos_bucket, upsample_indices, FoldConfig, FoldError,
    MemoryReport, PairFeat, Result,
};
use crate::alloc::measure_peak;
use crate::exec::Exec;
use crate::numcore::kernels::{gemm, softmax_rows, MatRef};
use crate::numcore::{ParamStore, Real, Tensor, LAYER_NORM_EPS};

struct Weights<'a, R> {
    store: &'a ParamStore<R>,
}

impl<'a, R: Real> Weights<'a, R> {
    fn get(&self, name: &str) -> Result<&'a [R]> {
        Ok(self.store.get(name)?.data())
    }
}

fn ln_rows<R: Real>(x: &[R], width: usize, gain: &[R], bias: &[R], out: &mut [R]) {
    let w = R::c(width as f64);
    let eps = R::c(LAYER_NORM_EPS);
    for (row, o) in x.chunks(width).zip(out.chunks_mut(width)) {
        let mean = row.iter().copied().sum::<R>() / w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / w;
        let rs = R::one() / (var + eps).sqrt();
        for j in 0..width {
            o[j] = (row[j] - mean) * rs * gain[j] + bias[j];
        }
    }
}

/// `out = x W (+ b)` for `rows x inp` times `inp x outw`.
fn affine<R: Real>(x: &[R], rows: usize, inp: usize, w: &[R], b: Option<&[R]>, out: &mut [R]) {
    let outw = w.len() / inp;
    gemm(
        Exec::Sequential,
        rows,
        inp,
        outw,
        R::one(),
        MatRef::row_major(x, 0, inp),
        MatRef::row_major(w, 0, outw),
        R::zero(),
        out,
    );
    if let Some(b) = b {
        for o in out.chunks_mut(outw) {
            o.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
        }
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// Swaps `p[i, j, :]` and `p[j, i, :]` for all `i < j`.
fn transpose_in_place<R: Real>(p: &mut [R], n: usize, c: usize) {
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = ((i * n + j) * c, (j * n + i) * c);
            for t in 0..c {
                p.swap(a + t, b + t);
            }
        }
    }
}

/// Row-wise triangle attention: `p[i, j] += Attn(q[i, j], k[i, :], v[i, :])`.
fn tri_attn_rows<R: Real>(
    p: &mut [R],
    n: usize,
    c: usize,
    heads: usize,
    w: &Weights<'_, R>,
    prefix: &str,
    exec: Exec,
) -> Result<()> {
    let f = |s: &str| w.get(&format!("{prefix}.{s}"));
    let (lg, lb, wq, wk, wv, wo, bo) = (
        f("ln_g")?,
        f("ln_b")?,
        f("wq")?,
        f("wk")?,
        f("wv")?,
        f("out_w")?,
        f("out_b")?,
    );
    let dh = c / heads;
    let scale = R::one() / R::c(dh as f64).sqrt();
    exec.for_each_chunk_mut(p, n * c, |_, row| {
        let mut x = vec![R::zero(); n * c];
        ln_rows(row, c, lg, lb, &mut x);
        let (mut q, mut k, mut v) = (vec![R::zero(); n * c], vec![R::zero(); n * c], vec![R::zero(); n * c]);
        affine(&x, n, c, wq, None, &mut q);
        affine(&x, n, c, wk, None, &mut k);
        affine(&x, n, c, wv, None, &mut v);
        let mut scores = vec![R::zero(); n * n];
        let mut head = vec![R::zero(); n * dh];
        // reuse `x` as the concatenated head outputs
        for h in 0..heads {
            let qh = MatRef { data: &q, offset: h * dh, rs: c, cs: 1 };
            let kt = MatRef { data: &k, offset: h * dh, rs: 1, cs: c };
            gemm(Exec::Sequential, n, dh, n, scale, qh, kt, R::zero(), &mut scores);
            softmax_rows(&mut scores, n);
            let vh = MatRef { data: &v, offset: h * dh, rs: c, cs: 1 };
            gemm(Exec::Sequential, n, n, dh, R::one(), MatRef::row_major(&scores, 0, n), vh, R::zero(), &mut head);
            for j in 0..n {
                x[j * c + h * dh..j * c + (h + 1) * dh].copy_from_slice(&head[j * dh..(j + 1) * dh]);
            }
        }
        affine(&x, n, c, wo, Some(bo), &mut q);
        row.iter_mut().zip(&q).for_each(|(r, &o)| *r += o);
    });
    Ok(())
}

/// Gated operand `sigmoid(x Wg + bg) * (x W + b)` for one row, `n x ch`.
fn gated_row<R: Real>(x: &[R], n: usize, c: usize, w: (&[R], &[R], &[R], &[R]), out: &mut [R]) {
    let ch = out.len() / n;
    let mut gate = vec![R::zero(); n * ch];
    affine(x, n, c, w.0, Some(w.1), out);
    affine(x, n, c, w.2, Some(w.3), &mut gate);
    out.iter_mut().zip(&gate).for_each(|(o, &gt)| *o *= sigmoid(gt));
}

/// Out-direction triangle multiplication in place. `swap` exchanges the roles
/// of the `a` and `b` projections, which turns the in-direction update of a
/// transposed buffer into the out-direction kernel.
#[allow(clippy::too_many_arguments)]
fn tri_mult_rows<R: Real>(
    p: &mut [R],
    n: usize,
    c: usize,
    cfg: &FoldConfig,
    w: &Weights<'_, R>,
    prefix: &str,
    swap: bool,
    exec: Exec,
) -> Result<()> {
    if !cfg.tri_mult_projections {
        // b[j][c][k] = p[j, k, c]; a full copy, since rows change underneath
        let mut bt = vec![R::zero(); n * n * c];
        for j in 0..n {
            for k in 0..n {
                for t in 0..c {
                    bt[(j * c + t) * n + k] = p[(j * n + k) * c + t];
                }
            }
        }
        exec.for_each_chunk_mut(p, n * c, |_, row| {
            let mut at = vec![R::zero(); c * n];
            for k in 0..n {
                for t in 0..c {
                    at[t * n + k] = row[k * c + t];
                }
            }
            for j in 0..n {
                for t in 0..c {
                    let bj = &bt[(j * c + t) * n..(j * c + t + 1) * n];
                    let s: R = at[t * n..(t + 1) * n].iter().zip(bj).map(|(&x, &y)| x * y).sum();
                    row[j * c + t] += s;
                }
            }
        });
        return Ok(());
    }
    let ch = cfg.tri_mult_hidden;
    let f = |s: &str| w.get(&format!("{prefix}.{s}"));
    let side = |s: &str| -> Result<(&[R], &[R], &[R], &[R])> {
        Ok((f(&format!("{s}_w"))?, f(&format!("{s}_b"))?, f(&format!("{s}_gate_w"))?, f(&format!("{s}_gate_b"))?))
    };
    let (wa, wb) = if swap { (side("b")?, side("a")?) } else { (side("a")?, side("b")?) };
    let (lg, lb) = (f("ln_g")?, f("ln_b")?);
    let (log, lob) = (f("ln_out_g")?, f("ln_out_b")?);
    let (wo, bo, wg, bg) = (f("out_w")?, f("out_b")?, f("gate_w")?, f("gate_b")?);

    // bt[j][t][k] = b[j, k, t]
    let mut bt = vec![R::zero(); n * ch * n];
    {
        let src: &[R] = p;
        exec.for_each_chunk_mut(&mut bt, ch * n, |j, out| {
            let mut x = vec![R::zero(); n * c];
            ln_rows(&src[j * n * c..(j + 1) * n * c], c, lg, lb, &mut x);
            let mut b = vec![R::zero(); n * ch];
            gated_row(&x, n, c, wb, &mut b);
            for k in 0..n {
                for t in 0..ch {
                    out[t * n + k] = b[k * ch + t];
                }
            }
        });
    }
    exec.for_each_chunk_mut(p, n * c, |_, row| {
        let mut x = vec![R::zero(); n * c];
        ln_rows(row, c, lg, lb, &mut x);
        let mut a = vec![R::zero(); n * ch];
        gated_row(&x, n, c, wa, &mut a);
        let mut at = vec![R::zero(); ch * n];
        for k in 0..n {
            for t in 0..ch {
                at[t * n + k] = a[k * ch + t];
            }
        }
        let mut prod = vec![R::zero(); n * ch];
        for j in 0..n {
            for t in 0..ch {
                let bj = &bt[(j * ch + t) * n..(j * ch + t + 1) * n];
                prod[j * ch + t] = at[t * n..(t + 1) * n].iter().zip(bj).map(|(&u, &v)| u * v).sum();
            }
        }
        let mut normed = vec![R::zero(); n * ch];
        ln_rows(&prod, ch, log, lob, &mut normed);
        let mut o = vec![R::zero(); n * c];
        affine(&normed, n, ch, wo, Some(bo), &mut o);
        let mut gate = vec![R::zero(); n * c];
        affine(&x, n, c, wg, Some(bg), &mut gate);
        for ((r, &ov), &gv) in row.iter_mut().zip(&o).zip(&gate) {
            *r += sigmoid(gv) * ov;
        }
    });
    Ok(())
}

/// Projects one protein's embeddings `[L, d_seq]` to single features `[L, Cs]`.
pub fn project_single<R: Real>(
    params: &ParamStore<R>,
    cfg: &FoldConfig,
    emb: &Tensor<R>,
) -> Result<Tensor<R>> {
    let (l, d) = match *emb.shape() {
        [l, d] if d == cfg.d_seq && l > 0 => (l, d),
        ref s => {
            return Err(FoldError::ShapeMismatch(format!(
                "embeddings must be [L, {}], got {s:?}",
                cfg.d_seq
            )))
        }
    };
    let w = Weights { store: params };
    let mut out = vec![R::zero(); l * cfg.c_single];
    affine(emb.data(), l, d, w.get("fold.in_w")?, Some(w.get("fold.in_b")?), &mut out);
    Ok(Tensor::new(&[l, cfg.c_single], out)?)
}

/// Pair construction and the triangle stack for single features `[L, Cs]`.
/// Returns the coarse single track `[Lc, Cs]` and the coarse pair.
pub fn fold_pair_stage<R: Real>(
    params: &ParamStore<R>,
    cfg: &FoldConfig,
    single: &Tensor<R>,
    exec: Exec,
) -> Result<(Tensor<R>, PairFeat<R>)> {
    cfg.validate()?;
    let (cs, cp) = (cfg.c_single, cfg.c_pair);
    let l = match *single.shape() {
        [l, c] if c == cs && l > 0 => l,
        ref s => return Err(FoldError::ShapeMismatch(format!("single must be [L, {cs}], got {s:?}"))),
    };
    let w = Weights { store: params };
    let idx = coarse_indices(l, cfg.stride);
    let n = idx.len();
    let mut sc = Vec::with_capacity(n * cs);
    for &i in &idx {
        sc.extend_from_slice(&single.data()[i * cs..(i + 1) * cs]);
    }

    let (mut left, mut right) = (vec![R::zero(); n * cp], vec![R::zero(); n * cp]);
    affine(&sc, n, cs, w.get("fold.pair.left")?, None, &mut left);
    affine(&sc, n, cs, w.get("fold.pair.right")?, None, &mut right);
    let (rel, pb) = (w.get("fold.pair.relpos")?, w.get("fold.pair.b")?);
    let mut pair = vec![R::zero(); n * n * cp];
    exec.for_each_chunk_mut(&mut pair, n * cp, |i, row| {
        for j in 0..n {
            let r = relpos_bucket(idx[i], idx[j], cfg.relpos_max);
            for t in 0..cp {
                row[j * cp + t] = left[i * cp + t] + right[j * cp + t] + rel[r * cp + t] + pb[t];
            }
        }
    });
    drop((left, right));

    for d in 0..cfg.depth {
        tri_attn_rows(&mut pair, n, cp, cfg.tri_heads, &w, &attn_prefix(d, super::TriAxis::Start), exec)?;
        transpose_in_place(&mut pair, n, cp);
        tri_attn_rows(&mut pair, n, cp, cfg.tri_heads, &w, &attn_prefix(d, super::TriAxis::End), exec)?;
        transpose_in_place(&mut pair, n, cp);
        tri_mult_rows(&mut pair, n, cp, cfg, &w, &mult_prefix(d, TriDirection::Out), false, exec)?;
        transpose_in_place(&mut pair, n, cp);
        tri_mult_rows(&mut pair, n, cp, cfg, &w, &mult_prefix(d, TriDirection::In), true, exec)?;
        transpose_in_place(&mut pair, n, cp);

        let (pg, pbias) = (
            w.get(&format!("fold.blk{d}.pair_norm_g"))?,
            w.get(&format!("fold.blk{d}.pair_norm_b"))?,
        );
        let (sw, sb) = (
            w.get(&format!("fold.blk{d}.single_w"))?,
            w.get(&format!("fold.blk{d}.single_b"))?,
        );
        let mut means = vec![R::zero(); n * cp];
        let inv = R::one() / R::c(n as f64);
        let mut tmp = vec![R::zero(); n * cp];
        for (row, m) in pair.chunks_mut(n * cp).zip(means.chunks_mut(cp)) {
            ln_rows(row, cp, pg, pbias, &mut tmp);
            row.copy_from_slice(&tmp);
            for v in row.chunks(cp) {
                m.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
            }
        }
        means.iter_mut().for_each(|m| *m *= inv);
        let mut upd = vec![R::zero(); n * cs];
        affine(&means, n, cp, sw, Some(sb), &mut upd);
        sc.iter_mut().zip(&upd).for_each(|(s, &u)| *s += u);
    }
    let pair = PairFeat::new(Tensor::new(&[1, n, n, cp], pair)?, cfg.stride, l)?;
    Ok((Tensor::new(&[n, cs], sc)?, pair))
}

/// Full inference fold of one protein: single features `[L, Cs]`
/// (block-constant) and the coarse pair.
pub fn fold_infer<R: Real>(
    params: &ParamStore<R>,
    cfg: &FoldConfig,
    emb: &Tensor<R>,
    exec: Exec,
) -> Result<(Tensor<R>, PairFeat<R>)> {
    let single = project_single(params, cfg, emb)?;
    let l = single.shape()[0];
    let (sc, pair) = fold_pair_stage(params, cfg, &single, exec)?;
    let cs = cfg.c_single;
    let mut out = Vec::with_capacity(l * cs);
    for k in upsample_indices(l, cfg.stride) {
        out.extend_from_slice(&sc.data()[k * cs..(k + 1) * cs]);
    }
    Ok((Tensor::new(&[l, cs], out)?, pair))
}

/// Analytic pair footprint plus the measured peak heap growth of
/// [`fold_pair_stage`] on `single`. The peak is `None` unless the counting
/// allocator is installed.
pub fn measure_fold_memory<R: Real>(
    params: &ParamStore<R>,
    cfg: &FoldConfig,
    single: &Tensor<R>,
    exec: Exec,
) -> Result<MemoryReport> {
    let l = single.shape().first().copied().unwrap_or(0);
    let mut report = memory_estimate(l, cfg.stride, cfg.c_pair, R::DTYPE.size());
    let (res, peak) = measure_peak(|| fold_pair_stage(params, cfg, single, exec));
    res?;
    report.measured_peak_bytes = peak;
    Ok(report)
}
