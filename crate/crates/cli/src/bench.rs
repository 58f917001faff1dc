//! Memory and wall-time table for the coarse-stride pair stage.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use sidgen_core::exec::Exec;
use sidgen_core::folding::{init_fold_params, measure_fold_memory, project_single, FoldConfig, FoldError};
use sidgen_core::diffusion::stream_rng;
use sidgen_core::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub len: usize,
    pub stride: usize,
    pub coarse_len: usize,
    pub analytic_dense_elems: usize,
    pub analytic_coarse_elems: usize,
    /// Dense over coarse pair elements.
    pub ratio: f64,
    pub analytic_coarse_bytes: usize,
    /// `None` when the counting allocator is not installed.
    pub measured_peak_bytes: Option<usize>,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str =
    "len,stride,coarse_len,analytic_dense_elems,analytic_coarse_elems,ratio,analytic_coarse_bytes,measured_peak_bytes,wall_ms";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{},{},{:.1}",
            self.len,
            self.stride,
            self.coarse_len,
            self.analytic_dense_elems,
            self.analytic_coarse_elems,
            self.ratio,
            self.analytic_coarse_bytes,
            self.measured_peak_bytes.map_or(String::new(), |b| b.to_string()),
            self.wall_ms
        )
    }
}

/// Runs the f32 pair stage for every `(L, s)` combination on a random
/// embedding. Parameters are shared across strides.
pub fn fold_bench(base: &FoldConfig, lens: &[usize], strides: &[usize], seed: u64, exec: Exec) -> Result<Vec<BenchRow>, FoldError> {
    let mut rng = stream_rng(seed, 0);
    let params = init_fold_params::<f32>(base, &mut rng)?;
    let mut rows = Vec::new();
    for &l in lens {
        let emb = Tensor::<f32>::uniform(&[l, base.d_seq], 1.0, &mut rng);
        let single = project_single(&params, base, &emb)?;
        for &s in strides {
            let cfg = FoldConfig {
                stride: s,
                ..base.clone()
            };
            cfg.validate()?;
            let start = Instant::now();
            let r = measure_fold_memory(&params, &cfg, &single, exec)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            rows.push(BenchRow {
                len: l,
                stride: s,
                coarse_len: r.coarse_len,
                analytic_dense_elems: r.dense_elems,
                analytic_coarse_elems: r.coarse_elems,
                ratio: r.ratio,
                analytic_coarse_bytes: r.coarse_bytes(),
                measured_peak_bytes: r.measured_peak_bytes,
                wall_ms,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv());
    }
    s
}
