//! Low-level loops shared by the tape and the inference-only folding path.

use super::tensor::{for_each_index, for_each_offset2, strides_of};
use super::{mismatch, Real, Result, Tensor};
use crate::exec::Exec;

/// Work (in multiply-adds) below which a GEMM is not split across threads.
const PAR_GEMM_MIN_WORK: usize = 1 << 16;

/// Strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, R> {
    pub data: &'a [R],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, R> MatRef<'a, R> {
    pub fn row_major(data: &'a [R], offset: usize, cols: usize) -> Self {
        Self {
            data,
            offset,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` block.
    pub fn row_major_t(data: &'a [R], offset: usize, cols: usize) -> Self {
        Self {
            data,
            offset,
            rs: 1,
            cs: cols,
        }
    }
}

/// `C = alpha * A B + beta * C` where `C` is a contiguous row-major `m x n`
/// slice. Rows of `C` are split across threads when `exec` allows it.
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(
    exec: Exec,
    m: usize,
    k: usize,
    n: usize,
    alpha: R,
    a: MatRef<'_, R>,
    b: MatRef<'_, R>,
    beta: R,
    c: &mut [R],
) {
    assert_eq!(c.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    let last = |v: MatRef<'_, R>, rows: usize, cols: usize| {
        v.offset + (rows - 1) * v.rs + (cols - 1) * v.cs
    };
    assert!(last(a, m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(last(b, k, n) < b.data.len(), "gemm rhs out of bounds");

    if m * k * n <= SMALL_GEMM_MAX_WORK {
        small_gemm(m, k, n, alpha, a, b, beta, c);
        return;
    }
    let run = |row0: usize, rows: usize, out: &mut [R]| unsafe {
        R::gemm(
            rows,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset + row0 * a.rs),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    };

    let threads = exec.threads();
    if threads > 1 && m >= 2 && m * n * k >= PAR_GEMM_MIN_WORK {
        let rows_per = m.div_ceil(threads).max(1);
        exec.for_each_chunk_mut(c, rows_per * n, |ci, chunk| {
            run(ci * rows_per, chunk.len() / n, chunk)
        });
    } else {
        run(0, m, c);
    }
}

/// Below this many multiply-adds packing overhead dominates the blocked kernel.
const SMALL_GEMM_MAX_WORK: usize = 16 * 1024;

#[allow(clippy::too_many_arguments)]
fn small_gemm<R: Real>(m: usize, k: usize, n: usize, alpha: R, a: MatRef<'_, R>, b: MatRef<'_, R>, beta: R, c: &mut [R]) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        if beta == R::zero() {
            row.iter_mut().for_each(|x| *x = R::zero());
        } else {
            row.iter_mut().for_each(|x| *x *= beta);
        }
        for p in 0..k {
            let av = alpha * a.data[a.offset + i * a.rs + p * a.cs];
            let bo = b.offset + p * b.rs;
            if b.cs == 1 {
                let brow = &b.data[bo..bo + n];
                row.iter_mut().zip(brow).for_each(|(x, &y)| *x += av * y);
            } else {
                for (j, x) in row.iter_mut().enumerate() {
                    *x += av * b.data[bo + j * b.cs];
                }
            }
        }
    }
}

/// Right-aligned broadcast of two shapes (numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast axes.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let own = strides_of(shape);
    (0..nd)
        .map(|i| {
            if i + shape.len() < nd {
                0
            } else {
                let j = i + shape.len() - nd;
                if shape[j] == 1 && out_shape[i] != 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

fn is_suffix(shape: &[usize], of: &[usize]) -> bool {
    shape.len() <= of.len() && of[of.len() - shape.len()..] == *shape
}

/// Elementwise binary map with broadcasting.
pub fn zip_broadcast<R: Real>(
    op: &'static str,
    a: &Tensor<R>,
    b: &Tensor<R>,
    f: impl Fn(R, R) -> R,
) -> Result<Tensor<R>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    if is_suffix(b.shape(), a.shape()) && b.numel() > 0 {
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % bd.len()]))
            .collect();
        return Tensor::new(a.shape(), data);
    }
    let out_shape =
        broadcast_shape(a.shape(), b.shape()).ok_or_else(|| mismatch(op, a.shape(), b.shape()))?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for_each_offset2(&out_shape, &sa, &sb, |_, ia, ib| data.push(f(ad[ia], bd[ib])));
    Tensor::new(&out_shape, data)
}

/// Sums `grad` (shaped like the broadcast output) down to `target` shape.
pub fn reduce_to<R: Real>(grad: &Tensor<R>, target: &[usize]) -> Tensor<R> {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut out = Tensor::zeros(target);
    let n = out.numel();
    if is_suffix(target, grad.shape()) && n > 0 {
        let od = out.data_mut();
        for (i, &g) in grad.data().iter().enumerate() {
            od[i % n] += g;
        }
        return out;
    }
    let st = broadcast_strides(target, grad.shape());
    let od = out.data_mut();
    let gd = grad.data();
    for_each_offset2(grad.shape(), &st, &st, |flat, o, _| od[o] += gd[flat]);
    out
}

/// Shapes for a broadcast batched matmul `[.., m, k] x [.., k, n]`.
pub struct MatmulPlan {
    pub batch: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Element offset of each batch entry's matrix in `a` and `b`.
    pub a_off: Vec<usize>,
    pub b_off: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch("matmul", a, b));
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch = broadcast_shape(ab, bb).ok_or_else(|| mismatch("matmul", a, b))?;
        let sa = broadcast_strides(ab, &batch);
        let sb = broadcast_strides(bb, &batch);
        let mut a_off = Vec::new();
        let mut b_off = Vec::new();
        if batch.is_empty() {
            a_off.push(0);
            b_off.push(0);
        } else {
            for_each_index(&batch, |_, idx| {
                a_off.push(idx.iter().zip(&sa).map(|(i, s)| i * s).sum::<usize>() * m * k);
                b_off.push(idx.iter().zip(&sb).map(|(i, s)| i * s).sum::<usize>() * k * n);
            });
        }
        Ok(Self {
            batch,
            m,
            k,
            n,
            a_off,
            b_off,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = self.batch.clone();
        s.push(self.m);
        s.push(self.n);
        s
    }

    pub fn entries(&self) -> usize {
        self.a_off.len()
    }

    /// True when `b` is a single matrix shared by every batch entry and `a`
    /// is not broadcast, so the product collapses into one tall GEMM.
    pub fn collapses(&self) -> bool {
        self.b_off.iter().all(|&o| o == 0)
            && self
                .a_off
                .iter()
                .enumerate()
                .all(|(i, &o)| o == i * self.m * self.k)
    }
}

pub fn matmul<R: Real>(exec: Exec, a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let plan = MatmulPlan::new(a.shape(), b.shape())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = Tensor::zeros(&plan.out_shape());
    if plan.collapses() {
        let rows = m * plan.entries();
        gemm(
            exec,
            rows,
            k,
            n,
            R::one(),
            MatRef::row_major(a.data(), 0, k),
            MatRef::row_major(b.data(), 0, n),
            R::zero(),
            out.data_mut(),
        );
        return Ok(out);
    }
    let (ad, bd) = (a.data(), b.data());
    exec.for_each_chunk_mut(out.data_mut(), m * n, |e, c| {
        gemm(
            Exec::Sequential,
            m,
            k,
            n,
            R::one(),
            MatRef::row_major(ad, plan.a_off[e], k),
            MatRef::row_major(bd, plan.b_off[e], n),
            R::zero(),
            c,
        )
    });
    Ok(out)
}

/// Softmax over the last axis of a row-major buffer with rows of `width`.
pub fn softmax_rows<R: Real>(data: &mut [R], width: usize) {
    for row in data.chunks_mut(width) {
        softmax_in_place(row);
    }
}

pub fn softmax_in_place<R: Real>(row: &mut [R]) {
    let max = row.iter().copied().fold(R::neg_infinity(), R::max);
    if max == R::neg_infinity() {
        // every logit masked: fall back to uniform
        let u = R::one() / R::c(row.len() as f64);
        row.iter_mut().for_each(|x| *x = u);
        return;
    }
    let mut sum = R::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
