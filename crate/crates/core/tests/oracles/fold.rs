//! Loop-level dense folding reference written from the update equations,
//! independent of both library code paths.

use rand::Rng;
use sidgen_core::folding::{fold_block, init_fold_params, FoldConfig, TriAxis, TriDirection};
use sidgen_core::numcore::{Graph, ParamStore, Tensor};

pub fn small_cfg(stride: usize, depth: usize) -> FoldConfig {
    FoldConfig {
        d_seq: 6,
        c_single: 8,
        c_pair: 8,
        stride,
        depth,
        tri_heads: 2,
        tri_mult_hidden: 4,
        relpos_max: 3,
        tri_mult_projections: true,
    }
}

/// Initial parameters with every entry perturbed, so zero biases and unit
/// gains do not hide indexing mistakes.
pub fn params(cfg: &FoldConfig, seed: u64) -> ParamStore<f64> {
    let mut rng = super::rng(seed);
    let mut p = init_fold_params::<f64>(cfg, &mut rng).unwrap();
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.2..0.2));
    }
    p
}

pub struct Ref<'a> {
    pub p: &'a ParamStore<f64>,
}

impl Ref<'_> {
    pub fn w(&self, name: &str) -> &[f64] {
        self.p.get(name).unwrap().data()
    }

    /// `x W + b` for one vector with `W: [in, out]`.
    pub fn lin(&self, x: &[f64], w: &str, b: Option<&str>) -> Vec<f64> {
        let w = self.w(w);
        let out = w.len() / x.len();
        (0..out)
            .map(|o| {
                let s: f64 = x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum();
                s + b.map_or(0.0, |b| self.w(b)[o])
            })
            .collect()
    }

    pub fn ln(&self, x: &[f64], pre: &str) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (g, b) = (self.w(&format!("{pre}_g")), self.w(&format!("{pre}_b")));
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
            .collect()
    }
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `n x n` grid of channel vectors.
pub type Grid = Vec<Vec<Vec<f64>>>;

pub fn ref_tri_attn(r: &Ref, pre: &str, p: &Grid, heads: usize, axis: TriAxis) -> Grid {
    let n = p.len();
    let c = p[0][0].len();
    let dh = c / heads;
    let x: Grid = p.iter().map(|row| row.iter().map(|v| r.ln(v, &format!("{pre}.ln"))).collect()).collect();
    let proj = |w: &str| -> Grid {
        x.iter().map(|row| row.iter().map(|v| r.lin(v, &format!("{pre}.{w}"), None)).collect()).collect()
    };
    let (q, k, v) = (proj("wq"), proj("wk"), proj("wv"));
    let mut out = p.clone();
    for i in 0..n {
        for j in 0..n {
            let mut ctx = vec![0.0; c];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                // the attended element for index kk
                let at = |kk: usize| match axis {
                    TriAxis::Start => (i, kk),
                    TriAxis::End => (kk, j),
                };
                let logits: Vec<f64> = (0..n)
                    .map(|kk| {
                        let (a, b) = at(kk);
                        hs.clone().map(|d| q[i][j][d] * k[a][b][d]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for kk in 0..n {
                    let (a, b) = at(kk);
                    for d in hs.clone() {
                        ctx[d] += e[kk] / z * v[a][b][d];
                    }
                }
            }
            let o = r.lin(&ctx, &format!("{pre}.out_w"), Some(&format!("{pre}.out_b")));
            out[i][j].iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }
    out
}

pub fn ref_tri_mult(r: &Ref, pre: &str, p: &Grid, dir: TriDirection, projections: bool) -> Grid {
    let n = p.len();
    let x: Grid = if projections {
        p.iter().map(|row| row.iter().map(|v| r.ln(v, &format!("{pre}.ln"))).collect()).collect()
    } else {
        p.clone()
    };
    let operand = |side: &str| -> Grid {
        if !projections {
            return p.clone();
        }
        x.iter()
            .map(|row| {
                row.iter()
                    .map(|v| {
                        let val = r.lin(v, &format!("{pre}.{side}_w"), Some(&format!("{pre}.{side}_b")));
                        let g = r.lin(v, &format!("{pre}.{side}_gate_w"), Some(&format!("{pre}.{side}_gate_b")));
                        val.iter().zip(g).map(|(a, b)| a * sig(b)).collect()
                    })
                    .collect()
            })
            .collect()
    };
    let (a, b) = (operand("a"), operand("b"));
    let ch = a[0][0].len();
    let mut out = p.clone();
    for i in 0..n {
        for j in 0..n {
            let mut prod = vec![0.0; ch];
            for k in 0..n {
                for t in 0..ch {
                    prod[t] += match dir {
                        TriDirection::Out => a[i][k][t] * b[j][k][t],
                        TriDirection::In => a[k][i][t] * b[k][j][t],
                    };
                }
            }
            let upd = if projections {
                let y = r.ln(&prod, &format!("{pre}.ln_out"));
                let o = r.lin(&y, &format!("{pre}.out_w"), Some(&format!("{pre}.out_b")));
                let g = r.lin(&x[i][j], &format!("{pre}.gate_w"), Some(&format!("{pre}.gate_b")));
                o.iter().zip(g).map(|(o, g)| o * sig(g)).collect()
            } else {
                prod
            };
            out[i][j].iter_mut().zip(upd).for_each(|(a, b)| *a += b);
        }
    }
    out
}

/// Dense fold at residue positions `pos`: coarse single track and pair.
pub fn ref_fold(p: &ParamStore<f64>, cfg: &FoldConfig, emb: &[Vec<f64>], pos: &[usize]) -> (Vec<Vec<f64>>, Grid) {
    let r = Ref { p };
    let mut single: Vec<Vec<f64>> = pos.iter().map(|&i| r.lin(&emb[i], "fold.in_w", Some("fold.in_b"))).collect();
    let rel = r.w("fold.pair.relpos");
    let cp = cfg.c_pair;
    let mut pair: Grid = (0..pos.len())
        .map(|i| {
            (0..pos.len())
                .map(|j| {
                    let l = r.lin(&single[i], "fold.pair.left", None);
                    let rr = r.lin(&single[j], "fold.pair.right", None);
                    let d = (pos[i] as i64 - pos[j] as i64).clamp(-(cfg.relpos_max as i64), cfg.relpos_max as i64);
                    let bucket = (d + cfg.relpos_max as i64) as usize;
                    (0..cp).map(|t| l[t] + rr[t] + rel[bucket * cp + t] + r.w("fold.pair.b")[t]).collect()
                })
                .collect()
        })
        .collect();
    for d in 0..cfg.depth {
        pair = ref_tri_attn(&r, &format!("fold.blk{d}.ta_start"), &pair, cfg.tri_heads, TriAxis::Start);
        pair = ref_tri_attn(&r, &format!("fold.blk{d}.ta_end"), &pair, cfg.tri_heads, TriAxis::End);
        let pj = cfg.tri_mult_projections;
        pair = ref_tri_mult(&r, &format!("fold.blk{d}.tm_out"), &pair, TriDirection::Out, pj);
        pair = ref_tri_mult(&r, &format!("fold.blk{d}.tm_in"), &pair, TriDirection::In, pj);
        let pn = format!("fold.blk{d}.pair_norm");
        pair = pair.iter().map(|row| row.iter().map(|v| r.ln(v, &pn)).collect()).collect();
        for (i, s) in single.iter_mut().enumerate() {
            let mut mean = vec![0.0; cp];
            for v in &pair[i] {
                mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / pos.len() as f64);
            }
            let u = r.lin(&mean, &format!("fold.blk{d}.single_w"), Some(&format!("fold.blk{d}.single_b")));
            s.iter_mut().zip(u).for_each(|(a, b)| *a += b);
        }
    }
    (single, pair)
}

pub fn grid_of(t: &Tensor<f64>) -> Grid {
    let s = t.shape();
    let (n, c) = (s[1], s[3]);
    (0..n)
        .map(|i| (0..n).map(|j| (0..c).map(|k| t.at(&[0, i, j, k])).collect()).collect())
        .collect()
}

pub fn tensor_of(p: &Grid) -> Tensor<f64> {
    let (n, c) = (p.len(), p[0][0].len());
    let flat: Vec<f64> = p.iter().flatten().flatten().copied().collect();
    Tensor::new(&[1, n, n, c], flat).unwrap()
}

pub fn max_diff(a: &Grid, b: &Grid) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_emb(l: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = super::rng(seed);
    (0..l).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn emb_tensor(emb: &[Vec<f64>], batch: bool) -> Tensor<f64> {
    let (l, d) = (emb.len(), emb[0].len());
    let flat: Vec<f64> = emb.iter().flatten().copied().collect();
    let shape: Vec<usize> = if batch { vec![1, l, d] } else { vec![l, d] };
    Tensor::new(&shape, flat).unwrap()
}

/// Graph fold of one protein: (single `[L, Cs]` rows, coarse pair grid).
pub fn graph_fold(p: &ParamStore<f64>, cfg: &FoldConfig, emb: &[Vec<f64>]) -> (Vec<Vec<f64>>, Grid) {
    let mut g = Graph::<f64>::new();
    let b = g.bind(p, false);
    let e = g.constant(emb_tensor(emb, true));
    let out = fold_block(&mut g, &b, cfg, e).unwrap();
    let s = g.value(out.single);
    let cs = cfg.c_single;
    let rows = s.data().chunks(cs).map(|c| c.to_vec()).collect();
    (rows, grid_of(g.value(out.pair)))
}

pub fn random_grid(n: usize, c: usize, seed: u64) -> Grid {
    let mut rng = super::rng(seed);
    (0..n)
        .map(|_| (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect()
}
