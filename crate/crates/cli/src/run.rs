//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use serde::Serialize;
use sidgen_core::chemkit::is_valid;
use sidgen_core::diffusion::{stream_rng, Model, StepReport, Trainer};
use sidgen_core::exec::Exec;
use sidgen_core::metrics::{bedroc, ef_at, gen_quality, regression_stats, roc_auc, GenQuality, GenSet, RankedList, RegressionStats};
use sidgen_core::numcore::{load_checkpoint, save_checkpoint};

use crate::bench::{fold_bench, BenchRow};
use crate::config::RunConfig;
use crate::embed::{load_embedding, pseudo_embed};
use crate::ingest::{ingest, prepare, IngestReport, LengthBounds, Prepared};
use crate::toy::{toy_dataset, TOY_PROTEINS};

/// Training data named by the config: a TSV file or the built-in toy set.
pub fn load_data(cfg: &RunConfig) -> Result<(Prepared, Option<IngestReport>)> {
    let d_seq = cfg.model.fold.d_seq;
    match &cfg.data.tsv {
        Some(path) => {
            let bounds = LengthBounds {
                min: cfg.data.min_protein_len,
                max: cfg.data.max_protein_len,
            };
            let report = ingest(path, bounds).with_context(|| format!("ingesting {}", path.display()))?;
            let prepared = prepare(&report.records, d_seq, cfg.data.embed_seed)?;
            Ok((prepared, Some(report)))
        }
        None => {
            let (vocab, data) = toy_dataset(d_seq, cfg.data.embed_seed);
            let sequences = TOY_PROTEINS.iter().map(|s| s.to_string()).collect();
            Ok((
                Prepared {
                    vocab,
                    data,
                    sequences,
                },
                None,
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Option<StepReport>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub ingest: Option<IngestReport>,
}

fn write_model_checkpoint(path: &Path, trainer: &Trainer<f32>, cfg: &RunConfig, prepared: &Prepared) -> Result<()> {
    let mut ckpt = trainer.model.checkpoint();
    let m = &mut ckpt.metadata;
    m.insert("step".into(), trainer.step.to_string());
    m.insert("train".into(), serde_json::to_string(&trainer.cfg)?);
    m.insert("lengths".into(), serde_json::to_string(&prepared.data.lengths())?);
    m.insert("sample_protein".into(), prepared.sequences[0].clone());
    m.insert("embed_seed".into(), cfg.data.embed_seed.to_string());
    save_checkpoint(path, &ckpt).with_context(|| format!("writing {}", path.display()))
}

/// Trains from scratch, writing a JSON-lines log, periodic checkpoints and
/// `model.ckpt` under `cfg.output.dir`.
pub fn run_train(cfg: &RunConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (prepared, report) = load_data(cfg)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let model = Model::<f32>::init(cfg.model.clone(), prepared.vocab.clone(), cfg.schedule, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.curriculum)?;
    trainer.exec = exec;
    let log_path = dir.join("train.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut io_err: Option<anyhow::Error> = None;
    let every = cfg.output.checkpoint_every;
    let last = trainer.fit(&prepared.data, |t, r| {
        let mut step = || -> Result<()> {
            serde_json::to_writer(&mut log, r)?;
            log.write_all(b"\n")?;
            if every > 0 && r.step % every == 0 && r.step < t.cfg.steps {
                write_model_checkpoint(&dir.join(format!("step_{}.ckpt", r.step)), t, cfg, &prepared)?;
            }
            Ok(())
        };
        if io_err.is_none() {
            io_err = step().err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    log.flush()?;
    let ckpt = dir.join("model.ckpt");
    write_model_checkpoint(&ckpt, &trainer, cfg, &prepared)?;
    Ok(TrainOutcome {
        last,
        checkpoint: ckpt,
        log: log_path,
        ingest: report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    #[serde(skip)]
    pub smiles: Vec<String>,
    pub n: usize,
    pub valid: usize,
    pub validity: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Draws `n` molecules for the configured protein from a checkpoint.
pub fn run_sample(cfg: &RunConfig, checkpoint: &Path, n: usize) -> Result<SampleOutcome> {
    let ckpt = load_checkpoint::<f32>(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let meta = ckpt.metadata.clone();
    let model = Model::from_checkpoint(ckpt)?;
    let lengths: Vec<usize> = serde_json::from_str(meta.get("lengths").ok_or_else(|| anyhow!("checkpoint lacks sample lengths"))?)?;
    if lengths.is_empty() {
        bail!("checkpoint has an empty length distribution");
    }
    let d_seq = model.cfg.fold.d_seq;
    let embed_seed: u64 = meta.get("embed_seed").map_or(Ok(cfg.data.embed_seed), |s| s.parse())?;
    let emb = match (&cfg.sample.embedding, &cfg.sample.protein) {
        (Some(path), _) => load_embedding(path)?,
        (None, Some(seq)) => pseudo_embed(seq, d_seq, embed_seed)?,
        (None, None) => {
            let seq = meta
                .get("sample_protein")
                .ok_or_else(|| anyhow!("no protein given and none stored in the checkpoint"))?;
            pseudo_embed(seq, d_seq, embed_seed)?
        }
    };
    if emb.shape().get(1) != Some(&d_seq) {
        bail!("embedding width {:?} does not match d_seq {d_seq}", emb.shape());
    }
    let ctx = model.context_values(&[emb], &[0])?;
    let seed = cfg.train.seed;
    let mut rng = stream_rng(seed, u64::MAX);
    let picks: Vec<usize> = (0..n).map(|_| lengths[rng.random_range(0..lengths.len())]).collect();
    let steps = cfg.sample.steps;
    let mut smiles = Vec::with_capacity(n);
    const CHUNK: usize = 64;
    for (c, chunk) in picks.chunks(CHUNK).enumerate() {
        let seqs = model.sample(&ctx, chunk, steps, sidgen_core::diffusion::derive_seed(seed, c as u64))?;
        smiles.extend(seqs.iter().map(|s| model.vocab.detokenize(&s.ids)));
    }
    let valid = smiles.iter().filter(|s| is_valid(s)).count();
    Ok(SampleOutcome {
        n,
        valid,
        validity: if n == 0 { 0.0 } else { valid as f64 / n as f64 },
        steps,
        seed,
        smiles,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    /// SMILES, one per line.
    pub generated: Option<PathBuf>,
    /// Training or reference SMILES for novelty and similarity.
    pub reference: Option<PathBuf>,
    /// TSV with `score` and `label` (0/1) columns; lower scores rank first.
    pub screening: Option<PathBuf>,
    /// TSV with `truth` and `pred` columns.
    pub affinity: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningReport {
    pub n: usize,
    pub actives: usize,
    pub roc_auc: f64,
    pub ef_1: f64,
    pub ef_5: f64,
    pub bedroc_80_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenQuality>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screening: Option<ScreeningReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affinity: Option<RegressionStats>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Two named numeric columns of a TSV file.
fn read_columns(path: &Path, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let lines = read_lines(path)?;
    let (header, rows) = lines.split_first().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |n: &str| {
        cols.iter()
            .position(|c| c.eq_ignore_ascii_case(n))
            .ok_or_else(|| anyhow!("{}: missing column `{n}`", path.display()))
    };
    let (ia, ib) = (find(a)?, find(b)?);
    let mut xa = Vec::with_capacity(rows.len());
    let mut xb = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split('\t').map(str::trim).collect();
        let get = |k: usize| -> Result<f64> {
            f.get(k)
                .ok_or_else(|| anyhow!("{} line {}: too few fields", path.display(), i + 2))?
                .parse()
                .with_context(|| format!("{} line {}", path.display(), i + 2))
        };
        xa.push(get(ia)?);
        xb.push(get(ib)?);
    }
    Ok((xa, xb))
}

pub fn run_eval(inputs: &EvalInputs, exec: Exec) -> Result<EvalReport> {
    let generation = match &inputs.generated {
        Some(g) => {
            let raw = read_lines(g)?;
            let reference = match &inputs.reference {
                Some(r) => read_lines(r)?,
                None => Vec::new(),
            };
            Some(gen_quality(&GenSet::new(&raw, &reference), exec)?)
        }
        None => None,
    };
    let screening = match &inputs.screening {
        Some(p) => {
            let (scores, labels) = read_columns(p, "score", "label")?;
            let labels: Vec<bool> = labels.iter().map(|&l| l != 0.0).collect();
            let actives = labels.iter().filter(|&&l| l).count();
            let r = RankedList::new(scores, labels)?;
            Some(ScreeningReport {
                n: r.scores.len(),
                actives,
                roc_auc: roc_auc(&r)?,
                ef_1: ef_at(&r, 1.0)?,
                ef_5: ef_at(&r, 5.0)?,
                bedroc_80_5: bedroc(&r, 80.5)?,
            })
        }
        None => None,
    };
    let affinity = match &inputs.affinity {
        Some(p) => {
            let (truth, pred) = read_columns(p, "truth", "pred")?;
            Some(regression_stats(&truth, &pred)?)
        }
        None => None,
    };
    if generation.is_none() && screening.is_none() && affinity.is_none() {
        bail!("nothing to evaluate: give generated SMILES, a screening table or an affinity table");
    }
    Ok(EvalReport {
        generation,
        screening,
        affinity,
    })
}

pub fn run_fold_bench(cfg: &RunConfig, lens: &[usize], strides: &[usize], exec: Exec) -> Result<Vec<BenchRow>> {
    if lens.is_empty() || strides.is_empty() {
        bail!("fold-bench needs at least one length and one stride");
    }
    Ok(fold_bench(&cfg.model.fold, lens, strides, cfg.train.seed, exec)?)
}
