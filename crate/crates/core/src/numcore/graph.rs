use std::collections::BTreeMap;

use super::kernels::{self, gemm, reduce_to, zip_broadcast, MatRef, MatmulPlan};
use super::{mismatch, ParamStore, Real, Result, Tensor, TensorError};
use crate::exec::Exec;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<R> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: Var,
        axis: usize,
        index: Vec<usize>,
    },
    SumAll(Var),
    SumAxis(Var, usize),
    PickLast(Var, Vec<usize>),
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Reverse-mode tape. Values are recorded in creation order, which is a
/// topological order, so `backward` is a single reverse sweep.
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Tensor<R>>>,
    exec: Exec,
}

/// Parameter name to tape handle, produced by [`Graph::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    map: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }
}

/// Split `shape` around `axis` into (outer, len, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Invalid {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    shape.last().copied().ok_or_else(|| TensorError::Invalid {
        op,
        msg: "needs rank >= 1".into(),
    })
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, t: Tensor<R>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.leaf(t, false)
    }

    pub fn param(&mut self, t: Tensor<R>) -> Var {
        self.leaf(t, true)
    }

    /// Records every tensor of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore<R>, trainable: bool) -> Bindings {
        let map = store
            .iter()
            .map(|(k, t)| (k.clone(), self.leaf(t.clone(), trainable)))
            .collect();
        Bindings { map }
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of all bound parameters; zeros for parameters the loss does
    /// not depend on.
    pub fn grads_of(&self, bindings: &Bindings) -> ParamStore<R> {
        let mut out = ParamStore::new();
        for (name, &v) in &bindings.map {
            let g = self
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
            out.insert(name.clone(), g);
        }
        out
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cr = R::c(c);
        let v = self.value(a).map(|x| x * cr);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cr = R::c(c);
        let v = self.value(a).map(|x| x + cr);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(v, Op::Silu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(R::zero()));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    // ---- linear algebra ----------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]`; leading batch axes
    /// broadcast with numpy rules.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.exec, self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    // ---- normalisation -----------------------------------------------

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let w = last_dim("softmax", self.shape(a))?;
        let mut v = self.value(a).clone();
        kernels::softmax_rows(v.data_mut(), w);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let w = last_dim("log_softmax", self.shape(a))?;
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(w) {
            let max = row.iter().copied().fold(R::neg_infinity(), R::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<R>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::LogSoftmax(a), rg))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain * x + bias` (both of the last-axis width).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let w = last_dim("layer_norm", self.shape(x))?;
        if self.shape(gain) != [w] || self.shape(bias) != [w] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x);
        let rows = xs.numel() / w.max(1);
        let mut xhat = vec![R::zero(); xs.numel()];
        let mut rstd = vec![R::zero(); rows];
        let wr = R::c(w as f64);
        for (r, row) in xs.data().chunks(w).enumerate() {
            let mean = row.iter().copied().sum::<R>() / wr;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / wr;
            let rs = R::one() / (var + R::c(eps)).sqrt();
            rstd[r] = rs;
            for (j, &v) in row.iter().enumerate() {
                xhat[r * w + j] = (v - mean) * rs;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let out: Vec<R> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * g[i % w] + b[i % w])
            .collect();
        let v = Tensor::new(xs.shape(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(perm)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Permute(a, perm.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(mismatch("transpose_last", self.shape(a), &[]));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?)
        .to_vec();
        check_axis("concat", &first, axis)?;
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == first.len();
            if !same_rank || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(mismatch("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = split_axis(&out_shape, axis);
        let mut data = vec![R::zero(); outer * total * inner];
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            let len = t.shape()[axis];
            for o in 0..outer {
                let src = &t.data()[o * len * inner..(o + 1) * len * inner];
                let dst = o * total * inner + at * inner;
                data[dst..dst + len * inner].copy_from_slice(src);
            }
            at += len;
        }
        let v = Tensor::new(&out_shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("narrow", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("{start}+{len} exceeds axis {axis} of {shape:?}"),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(&out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Narrow { x: a, axis, start }, rg))
    }

    /// Gathers entries along `axis`; indices may repeat.
    pub fn index_select(&mut self, a: Var, axis: usize, index: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("index_select", &shape, axis)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= shape[axis]) {
            return Err(TensorError::Invalid {
                op: "index_select",
                msg: format!("index {bad} out of range for axis of size {}", shape[axis]),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &i in index {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = index.len();
        let v = Tensor::new(&out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            v,
            Op::IndexSelect {
                x: a,
                axis,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: R = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let s = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, &x) in data[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *d += x;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let v = Tensor::new(&out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SumAxis(a, axis), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).ok_or_else(|| TensorError::Invalid {
            op: "mean_axis",
            msg: format!("axis {axis} out of range"),
        })?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// `out[r] = a[r, index[r]]` over the last axis.
    pub fn pick_last(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let w = last_dim("pick_last", &shape)?;
        let rows = self.value(a).numel() / w.max(1);
        if index.len() != rows || index.iter().any(|&i| i >= w) {
            return Err(mismatch("pick_last", &shape, &[index.len()]));
        }
        let src = self.value(a).data();
        let data = index.iter().enumerate().map(|(r, &i)| src[r * w + i]).collect();
        let v = Tensor::new(&shape[..shape.len() - 1], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::PickLast(a, index.to_vec()), rg))
    }

    // ---- backward ----------------------------------------------------

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    /// `loss` must hold a single element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), R::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            self.backprop(i, g, lower)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Tensor<R>>], v: Var, g: Tensor<R>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, i: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, reduce_to(g, self.shape(*a)));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, reduce_to(g, self.shape(*a)));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, reduce_to(g, self.shape(*b)).map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga = zip_broadcast("mul", g, self.value(*b), |x, y| x * y)?;
                    self.acc(grads, *a, reduce_to(&ga, self.shape(*a)));
                }
                if self.needs(*b) {
                    let gb = zip_broadcast("mul", g, self.value(*a), |x, y| x * y)?;
                    self.acc(grads, *b, reduce_to(&gb, self.shape(*b)));
                }
            }
            Op::Scale(a, c) => {
                let c = R::c(*c);
                self.acc(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads)?,
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| {
                        let s = sigmoid(x);
                        g * s * (R::one() + x * (R::one() - s))
                    })
                    .collect();
                self.acc(grads, *a, Tensor::new(x.shape(), d)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| if x > R::zero() { g } else { R::zero() })
                    .collect();
                self.acc(grads, *a, Tensor::new(x.shape(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &g)| g * s * (R::one() - s))
                    .collect();
                self.acc(grads, *a, Tensor::new(y.shape(), d)?);
            }
            Op::Softmax(a) => {
                let w = *y.shape().last().unwrap();
                let mut d = vec![R::zero(); y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(w)
                    .zip(g.data().chunks(w))
                    .zip(d.chunks_mut(w))
                {
                    let dot: R = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..w {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *a, Tensor::new(y.shape(), d)?);
            }
            Op::LogSoftmax(a) => {
                let w = *y.shape().last().unwrap();
                let mut d = vec![R::zero(); y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(w)
                    .zip(g.data().chunks(w))
                    .zip(d.chunks_mut(w))
                {
                    let gs: R = gr.iter().copied().sum();
                    for j in 0..w {
                        dr[j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.acc(grads, *a, Tensor::new(y.shape(), d)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let w = *y.shape().last().unwrap();
                let gd = g.data();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![R::zero(); w];
                    let mut db = vec![R::zero(); w];
                    for (k, (&gv, &h)) in gd.iter().zip(xhat).enumerate() {
                        dg[k % w] += gv * h;
                        db[k % w] += gv;
                    }
                    self.acc(grads, *gain, Tensor::new(&[w], dg)?);
                    self.acc(grads, *bias, Tensor::new(&[w], db)?);
                }
                if self.needs(*x) {
                    let gain_v = self.value(*gain).data();
                    let wr = R::c(w as f64);
                    let mut dx = vec![R::zero(); y.numel()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let row = r * w..(r + 1) * w;
                        let (mut m1, mut m2) = (R::zero(), R::zero());
                        for k in row.clone() {
                            let dh = gd[k] * gain_v[k - r * w];
                            m1 += dh;
                            m2 += dh * xhat[k];
                        }
                        m1 /= wr;
                        m2 /= wr;
                        for k in row {
                            let dh = gd[k] * gain_v[k - r * w];
                            dx[k] = rs * (dh - m1 - xhat[k] * m2);
                        }
                    }
                    self.acc(grads, *x, Tensor::new(y.shape(), dx)?);
                }
            }
            Op::Reshape(a) => {
                let s = self.shape(*a).to_vec();
                self.acc(grads, *a, g.clone().reshape(&s)?);
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.acc(grads, *a, g.permute(&inv)?);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut at = 0;
                for &p in parts {
                    let s = self.shape(p).to_vec();
                    let len = s[*axis];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + at * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.acc(grads, p, Tensor::new(&s, d)?);
                    }
                    at += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&s, *axis);
                let len = y.shape()[*axis];
                let mut d = vec![R::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.acc(grads, *x, Tensor::new(&s, d)?);
            }
            Op::IndexSelect { x, axis, index } => {
                let s = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&s, *axis);
                let mut d = vec![R::zero(); outer * n * inner];
                let gd = g.data();
                for o in 0..outer {
                    for (k, &i) in index.iter().enumerate() {
                        let src = (o * index.len() + k) * inner;
                        let dst = (o * n + i) * inner;
                        for t in 0..inner {
                            d[dst + t] += gd[src + t];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(&s, d)?);
            }
            Op::SumAll(a) => {
                let s = self.shape(*a).to_vec();
                self.acc(grads, *a, Tensor::full(&s, g.item()));
            }
            Op::SumAxis(a, axis) => {
                let s = self.shape(*a).to_vec();
                let (outer, n, inner) = split_axis(&s, *axis);
                let mut d = vec![R::zero(); outer * n * inner];
                for o in 0..outer {
                    for i in 0..n {
                        let dst = (o * n + i) * inner;
                        d[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                self.acc(grads, *a, Tensor::new(&s, d)?);
            }
            Op::PickLast(a, index) => {
                let s = self.shape(*a).to_vec();
                let w = *s.last().unwrap();
                let mut d = vec![R::zero(); self.value(*a).numel()];
                for (r, (&i, &gv)) in index.iter().zip(g.data()).enumerate() {
                    d[r * w + i] += gv;
                }
                self.acc(grads, *a, Tensor::new(&s, d)?);
            }
        }
        Ok(())
    }

    fn matmul_backward(
        &self,
        a: Var,
        b: Var,
        g: &Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
    ) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        let plan = MatmulPlan::new(av.shape(), bv.shape())?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let gd = g.data();
        let exec = self.exec;
        if self.needs(a) {
            let mut ga = Tensor::zeros(av.shape());
            if plan.collapses() {
                // dA = dC B^T over all stacked rows
                let rows = m * plan.entries();
                gemm(
                    exec,
                    rows,
                    n,
                    k,
                    R::one(),
                    MatRef::row_major(gd, 0, n),
                    MatRef::row_major_t(bv.data(), 0, n),
                    R::zero(),
                    ga.data_mut(),
                );
            } else {
                let gad = ga.data_mut();
                for e in 0..plan.entries() {
                    let off = plan.a_off[e];
                    gemm(
                        Exec::Sequential,
                        m,
                        n,
                        k,
                        R::one(),
                        MatRef::row_major(gd, e * m * n, n),
                        MatRef::row_major_t(bv.data(), plan.b_off[e], n),
                        R::one(),
                        &mut gad[off..off + m * k],
                    );
                }
            }
            self.acc(grads, a, ga);
        }
        if self.needs(b) {
            let mut gb = Tensor::zeros(bv.shape());
            if plan.collapses() {
                let rows = m * plan.entries();
                gemm(
                    exec,
                    k,
                    rows,
                    n,
                    R::one(),
                    MatRef::row_major_t(av.data(), 0, k),
                    MatRef::row_major(gd, 0, n),
                    R::zero(),
                    gb.data_mut(),
                );
            } else {
                let gbd = gb.data_mut();
                for e in 0..plan.entries() {
                    let off = plan.b_off[e];
                    gemm(
                        Exec::Sequential,
                        k,
                        m,
                        n,
                        R::one(),
                        MatRef::row_major_t(av.data(), plan.a_off[e], k),
                        MatRef::row_major(gd, e * m * n, n),
                        R::one(),
                        &mut gbd[off..off + k * n],
                    );
                }
            }
            self.acc(grads, b, gb);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[1., 1.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3., 7.]);
        assert!(g.matmul(a, x).is_ok());
        assert!(g.matmul(x, a).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::<f64>::new();
        for (inp, want) in [
            ([0.0, 0.0], [0.5, 0.5]),
            ([1000.0, 1000.0], [0.5, 0.5]),
            ([0.0, 3f64.ln()], [0.25, 0.75]),
        ] {
            let x = g.constant(t(&[2], &inp));
            let s = g.softmax(x).unwrap();
            for (a, b) in g.value(s).data().iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1., -2., 0.5]));
        let y = g.add(x, x).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2., 2., 2.]);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[4], &[3., 3., 3., 3.]));
        let gain = g.constant(Tensor::ones(&[4]));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn silu_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1], &[0.0]));
        let y = g.silu(x);
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1., 2.]));
        assert!(g.backward(x).is_err());
    }
}
