//! Masking corruption, the weighted masked loss, the unmasking sampler and the
//! training step.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemkit::{is_valid, TokenSeq, TokenVocab};
use crate::decoder::{forward, pad_batch, DecoderConfig, DecoderError};
use crate::exec::Exec;
use crate::folding::{
    fold_block, init_context_params, init_fold_params, make_context, select_context, stack_contexts,
    ContextConfig, ContextMode, ContextValues, FoldConfig, FoldError, ProteinContext,
};
use crate::numcore::{
    clip_grad_norm, Adam, AdamConfig, Bindings, Checkpoint, Graph, ParamStore, Real, Tensor, TensorError, Var,
};
use crate::schedule::{curriculum_t, CurriculumParams, NoiseSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// ChaCha8 stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// splitmix64 finalizer, used to derive per-step seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionBatch {
    pub x0: Vec<TokenSeq>,
    pub xt: Vec<TokenSeq>,
    pub t: Vec<f64>,
    /// `xt == mask && x0 != mask`, per position.
    pub masked: Vec<Vec<bool>>,
}

impl DiffusionBatch {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().flatten().filter(|&&m| m).count()
    }

    pub fn slice(&self, r: std::ops::Range<usize>) -> Self {
        Self {
            x0: self.x0[r.clone()].to_vec(),
            xt: self.xt[r.clone()].to_vec(),
            t: self.t[r.clone()].to_vec(),
            masked: self.masked[r].to_vec(),
        }
    }
}

/// Keeps each real token with probability `alpha(t)` and masks it otherwise.
/// Sequence `i` draws from stream `i` of `seed`.
pub fn corrupt(x0: &[TokenSeq], t: &[f64], sched: &NoiseSchedule, mask_id: usize, seed: u64) -> DiffusionBatch {
    let alphas: Vec<f64> = t.iter().map(|&ti| sched.alpha(ti)).collect();
    let mut b = corrupt_with_alpha(x0, &alphas, mask_id, seed);
    b.t = t.to_vec();
    b
}

/// [`corrupt`] with the keep probability given directly. The returned `t` is
/// left at zero.
pub fn corrupt_with_alpha(x0: &[TokenSeq], alphas: &[f64], mask_id: usize, seed: u64) -> DiffusionBatch {
    assert_eq!(x0.len(), alphas.len(), "one timestep per sequence");
    let mut xt = Vec::with_capacity(x0.len());
    let mut masked = Vec::with_capacity(x0.len());
    for (i, (s, &a)) in x0.iter().zip(alphas).enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let mut ids = s.ids.clone();
        let mut m = vec![false; s.len()];
        for j in 0..s.len() {
            let u: f64 = rng.random();
            if s.pad_mask[j] && u >= a {
                ids[j] = mask_id;
                m[j] = s.ids[j] != mask_id;
            }
        }
        xt.push(TokenSeq {
            ids,
            pad_mask: s.pad_mask.clone(),
        });
        masked.push(m);
    }
    DiffusionBatch {
        x0: x0.to_vec(),
        xt,
        t: vec![0.0; x0.len()],
        masked,
    }
}

/// Unnormalized masked loss `sum w(t) * -log p(x0)` over masked positions.
#[derive(Debug, Clone, Copy)]
pub struct MdlmTerms {
    pub sum: Var,
    pub masked: usize,
    /// Mean of `w(t)` over the batch.
    pub weight_mean: f64,
}

pub fn mdlm_terms<R: Real>(
    g: &mut Graph<R>,
    logits: Var,
    batch: &DiffusionBatch,
    sched: &NoiseSchedule,
) -> Result<MdlmTerms> {
    let (b, l) = (batch.len(), batch.x0.first().map_or(0, |s| s.len()));
    if g.shape(logits).len() != 3 || g.shape(logits)[..2] != [b, l] {
        return Err(DiffusionError::Data(format!(
            "logits {:?} for a {b}x{l} batch",
            g.shape(logits)
        )));
    }
    let ws: Vec<f64> = batch.t.iter().map(|&t| sched.loss_weight(t)).collect();
    let mut coef = vec![0.0; b * l];
    let mut target = vec![0; b * l];
    for i in 0..b {
        for j in 0..l {
            target[i * l + j] = batch.x0[i].ids[j];
            if batch.masked[i][j] && batch.x0[i].pad_mask[j] {
                coef[i * l + j] = -ws[i];
            }
        }
    }
    let masked = coef.iter().filter(|&&c| c != 0.0).count();
    let ls = g.log_softmax(logits)?;
    let picked = g.pick_last(ls, &target)?;
    let c = g.constant(Tensor::from_f64(&[b, l], &coef)?);
    let prod = g.mul(picked, c)?;
    Ok(MdlmTerms {
        sum: g.sum_all(prod),
        masked,
        weight_mean: ws.iter().sum::<f64>() / b.max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MdlmLoss {
    pub loss: Var,
    pub masked: usize,
    pub weight_mean: f64,
    /// Nothing was masked; `loss` is a zero constant.
    pub no_masked: bool,
}

/// Weighted masked cross-entropy averaged over the masked positions.
pub fn mdlm_loss<R: Real>(g: &mut Graph<R>, logits: Var, batch: &DiffusionBatch, sched: &NoiseSchedule) -> Result<MdlmLoss> {
    let terms = mdlm_terms(g, logits, batch, sched)?;
    if terms.masked == 0 {
        return Ok(MdlmLoss {
            loss: g.constant(Tensor::scalar(R::zero())),
            masked: 0,
            weight_mean: terms.weight_mean,
            no_masked: true,
        });
    }
    Ok(MdlmLoss {
        loss: g.scale(terms.sum, 1.0 / terms.masked as f64),
        masked: terms.masked,
        weight_mean: terms.weight_mean,
        no_masked: false,
    })
}

pub fn invalid_fraction(samples: &[String]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| !is_valid(s)).count() as f64 / samples.len() as f64
}

/// `mdlm + lambda * invalid_fraction(samples)`. The penalty is a plain scalar.
pub fn total_loss(mdlm: f64, samples: &[String], lambda_valid: f64) -> f64 {
    assert!(lambda_valid >= 0.0, "lambda_valid must be non-negative");
    if lambda_valid == 0.0 {
        return mdlm;
    }
    mdlm + lambda_valid * invalid_fraction(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub mode: ContextMode,
    #[serde(default)]
    pub fold: FoldConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ContextMode::Streamlined,
            fold: FoldConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.fold.validate()?;
        self.decoder.validate()?;
        Ok(())
    }

    pub fn context_config(&self) -> ContextConfig {
        ContextConfig {
            mode: self.mode,
            pooled_tokens: match self.mode {
                ContextMode::Streamlined => self.decoder.cond_tokens,
                ContextMode::Full => 0,
            },
            hidden: self.decoder.hidden,
            heads: self.decoder.heads,
        }
    }
}

/// Parameters, vocabulary and schedule of one denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub cfg: ModelConfig,
    pub params: ParamStore<R>,
    pub vocab: TokenVocab,
    pub schedule: NoiseSchedule,
}

impl<R: Real> Model<R> {
    /// Fresh parameters; the decoder vocabulary size is taken from `vocab`.
    pub fn init(mut cfg: ModelConfig, vocab: TokenVocab, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        cfg.decoder.vocab = vocab.len();
        cfg.validate()?;
        schedule.validate().map_err(DiffusionError::Config)?;
        let mut rng = stream_rng(seed, 0);
        let mut params = init_fold_params(&cfg.fold, &mut rng)?;
        params.extend(init_context_params(&cfg.fold, &cfg.context_config(), &mut rng));
        params.extend(crate::decoder::init_decoder_params(&cfg.decoder, &mut rng)?);
        Ok(Self {
            cfg,
            params,
            vocab,
            schedule,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<R> {
        let mut metadata = BTreeMap::new();
        metadata.insert("model".into(), serde_json::to_string(&self.cfg).expect("config serializes"));
        metadata.insert("schedule".into(), serde_json::to_string(&self.schedule).expect("schedule serializes"));
        metadata.insert("vocab".into(), self.vocab.to_text());
        Checkpoint {
            params: self.params.clone(),
            metadata,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<R>) -> Result<Self> {
        let get = |k: &str| {
            ckpt.metadata
                .get(k)
                .ok_or_else(|| DiffusionError::Data(format!("checkpoint lacks `{k}` metadata")))
        };
        let json = |k: &str| -> Result<serde_json::Value> {
            serde_json::from_str(get(k)?).map_err(|e| DiffusionError::Data(format!("{k}: {e}")))
        };
        let cfg: ModelConfig =
            serde_json::from_value(json("model")?).map_err(|e| DiffusionError::Data(format!("model: {e}")))?;
        let schedule: NoiseSchedule =
            serde_json::from_value(json("schedule")?).map_err(|e| DiffusionError::Data(format!("schedule: {e}")))?;
        let vocab = TokenVocab::from_text(get("vocab")?).map_err(|e| DiffusionError::Data(format!("vocab: {e}")))?;
        cfg.validate()?;
        if cfg.decoder.vocab != vocab.len() {
            return Err(DiffusionError::Data("vocabulary size disagrees with the decoder".into()));
        }
        Ok(Self {
            cfg,
            params: ckpt.params,
            vocab,
            schedule,
        })
    }

    /// Context values for batch rows whose proteins are `proteins[idx[b]]`.
    pub fn context_values(&self, proteins: &[Tensor<R>], idx: &[usize]) -> Result<ContextValues<R>> {
        let mut g = Graph::new();
        let b = g.bind(&self.params, false);
        let ctx = batch_context(&mut g, &b, &self.cfg, proteins, idx)?;
        Ok(ContextValues::detach(&g, &ctx))
    }

    fn logits(&self, ctx: &ContextValues<R>, xt: &[TokenSeq], t: &[f64], exec: Exec) -> Result<Tensor<R>> {
        let mut g = Graph::with_exec(exec);
        let b = g.bind(&self.params, false);
        let c = ctx.attach(&mut g);
        let y = forward(&mut g, &b, &self.cfg.decoder, xt, t, &c)?;
        Ok(g.value(y).clone())
    }

    /// Masked loss on a corrupted batch, without gradients.
    pub fn loss_on(&self, ctx: &ContextValues<R>, batch: &DiffusionBatch) -> Result<MdlmReport> {
        let mut g = Graph::new();
        let b = g.bind(&self.params, false);
        let c = ctx.attach(&mut g);
        let y = forward(&mut g, &b, &self.cfg.decoder, &batch.xt, &batch.t, &c)?;
        let l = mdlm_loss(&mut g, y, batch, &self.schedule)?;
        Ok(MdlmReport {
            loss: g.value(l.loss).item().to_f64().unwrap_or(f64::NAN),
            masked: l.masked,
            weight_mean: l.weight_mean,
        })
    }

    /// Most likely non-special token at every position of `batch.xt`.
    pub fn predict_x0(&self, ctx: &ContextValues<R>, batch: &DiffusionBatch) -> Result<Vec<Vec<usize>>> {
        let y = self.logits(ctx, &batch.xt, &batch.t, Exec::default())?;
        let (l, v) = (y.shape()[1], y.shape()[2]);
        let data = y.to_f64_vec();
        Ok((0..batch.len())
            .map(|i| {
                (0..l)
                    .map(|j| {
                        let row = &data[(i * l + j) * v..(i * l + j + 1) * v];
                        (0..v)
                            .filter(|&k| !self.vocab.is_special(k))
                            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                            .unwrap_or(0)
                    })
                    .collect()
            })
            .collect())
    }

    /// Iterative unmasking from an all-mask start; one sequence per entry of
    /// `lengths`. `ctx` holds one protein or one per sequence.
    pub fn sample(&self, ctx: &ContextValues<R>, lengths: &[usize], steps: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        Ok(self.sample_traced(ctx, lengths, steps, seed)?.pop().unwrap_or_default())
    }

    /// Like [`Model::sample`], returning the state after every step.
    pub fn sample_traced(
        &self,
        ctx: &ContextValues<R>,
        lengths: &[usize],
        steps: usize,
        seed: u64,
    ) -> Result<Vec<Vec<TokenSeq>>> {
        if steps == 0 {
            return Err(DiffusionError::Config("sampling needs at least one step".into()));
        }
        if lengths.is_empty() {
            return Ok(vec![Vec::new()]);
        }
        if lengths.contains(&0) {
            return Err(DiffusionError::Config("sequence lengths must be positive".into()));
        }
        if ctx.batch() != 1 && ctx.batch() != lengths.len() {
            return Err(DiffusionError::Data(format!(
                "context batch {} for {} sequences",
                ctx.batch(),
                lengths.len()
            )));
        }
        let (mask, pad) = (self.vocab.mask_id, self.vocab.pad_id);
        let mut xt = pad_batch(&lengths.iter().map(|&l| TokenSeq::new(vec![mask; l])).collect::<Vec<_>>(), pad);
        let allowed: Vec<usize> = (0..self.vocab.len()).filter(|&k| !self.vocab.is_special(k)).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..lengths.len()).map(|i| stream_rng(seed, i as u64)).collect();
        let mut trace = Vec::with_capacity(steps);
        for k in (1..=steps).rev() {
            let (t, s) = (k as f64 / steps as f64, (k - 1) as f64 / steps as f64);
            let p_commit = if k == 1 {
                1.0
            } else {
                let (at, as_) = (self.schedule.alpha(t), self.schedule.alpha(s));
                ((as_ - at) / (1.0 - at)).clamp(0.0, 1.0)
            };
            let y = self.logits(ctx, &xt, &vec![t; xt.len()], Exec::default())?;
            let (l, v) = (y.shape()[1], y.shape()[2]);
            let data = y.to_f64_vec();
            for (i, seq) in xt.iter_mut().enumerate() {
                for j in 0..lengths[i] {
                    if seq.ids[j] != mask {
                        continue;
                    }
                    let u: f64 = rngs[i].random();
                    let r: f64 = rngs[i].random();
                    if u < p_commit {
                        let row = &data[(i * l + j) * v..(i * l + j + 1) * v];
                        seq.ids[j] = draw(row, &allowed, r);
                    }
                }
            }
            trace.push(xt.clone());
        }
        Ok(trace)
    }
}

/// Token from `softmax(row)` restricted to `allowed`, by inverse CDF at `r`.
fn draw(row: &[f64], allowed: &[usize], r: f64) -> usize {
    let m = allowed.iter().map(|&k| row[k]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = allowed.iter().map(|&k| (row[k] - m).exp()).sum();
    let mut acc = 0.0;
    for &k in allowed {
        acc += (row[k] - m).exp() / z;
        if r < acc {
            return k;
        }
    }
    *allowed.last().expect("vocabulary has ordinary tokens")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdlmReport {
    pub loss: f64,
    pub masked: usize,
    pub weight_mean: f64,
}

/// Decoder conditioning for batch rows whose proteins are `proteins[idx[b]]`,
/// each an `[L, d_seq]` embedding. Every distinct protein is folded once.
pub fn batch_context<R: Real>(
    g: &mut Graph<R>,
    p: &Bindings,
    cfg: &ModelConfig,
    proteins: &[Tensor<R>],
    idx: &[usize],
) -> Result<ProteinContext> {
    let mut unique: Vec<usize> = Vec::new();
    let rows: Vec<usize> = idx
        .iter()
        .map(|&i| match unique.iter().position(|&u| u == i) {
            Some(r) => r,
            None => {
                unique.push(i);
                unique.len() - 1
            }
        })
        .collect();
    let ccfg = cfg.context_config();
    let mut ctxs = Vec::with_capacity(unique.len());
    for &u in &unique {
        let emb = proteins
            .get(u)
            .ok_or_else(|| DiffusionError::Data(format!("protein {u} out of range")))?;
        let (l, d) = match *emb.shape() {
            [l, d] => (l, d),
            ref s => return Err(DiffusionError::Data(format!("protein embedding {s:?}"))),
        };
        let e = g.constant(emb.clone().reshape(&[1, l, d])?);
        let out = fold_block(g, p, &cfg.fold, e)?;
        ctxs.push(make_context(g, p, &ccfg, &out)?);
    }
    let stacked = stack_contexts(g, &ctxs)?;
    if unique.len() == 1 {
        return Ok(stacked);
    }
    Ok(select_context(g, &stacked, &rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityMode {
    /// The penalty is reported and added to the total but carries no gradient.
    #[default]
    GradientFree,
    /// Adds a score-function term: each sample's log-probability under an
    /// all-mask input, scaled by its centered invalidity indicator.
    ScoreFunction,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_one() -> usize {
    1
}
fn d_steps() -> u64 {
    2000
}
fn d_valid_every() -> u64 {
    50
}
fn d_n_valid() -> usize {
    64
}
fn d_valid_steps() -> usize {
    16
}
fn d_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_batch")]
    pub batch: usize,
    /// Micro-batches per update.
    #[serde(default = "d_one")]
    pub accumulation: usize,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default)]
    pub lambda_valid: f64,
    /// Validity is measured every this many steps; 0 disables it.
    #[serde(default = "d_valid_every")]
    pub valid_every: u64,
    #[serde(default = "d_n_valid")]
    pub n_valid: usize,
    /// Sampler steps used for validity checks.
    #[serde(default = "d_valid_steps")]
    pub valid_sample_steps: usize,
    #[serde(default)]
    pub validity_mode: ValidityMode,
    /// Global gradient-norm clip; 0 disables it.
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DiffusionError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch == 0 || self.accumulation == 0 {
            return bad("batch and accumulation must be positive");
        }
        if self.accumulation > self.batch {
            return bad("accumulation exceeds the batch size");
        }
        if !(self.lambda_valid >= 0.0) {
            return bad("lambda_valid must be non-negative");
        }
        if self.valid_every > 0 && (self.n_valid == 0 || self.valid_sample_steps == 0) {
            return bad("validity checks need n_valid and valid_sample_steps");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: TokenSeq,
    /// Index into [`Dataset::proteins`].
    pub protein: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R> {
    pub examples: Vec<Example>,
    /// Per-residue embeddings, `[L, d_seq]` each.
    pub proteins: Vec<Tensor<R>>,
}

impl<R: Real> Dataset<R> {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.examples.is_empty() {
            return Err(DiffusionError::Data("empty dataset".into()));
        }
        for (i, p) in self.proteins.iter().enumerate() {
            if p.ndim() != 2 || p.shape()[1] != cfg.fold.d_seq || p.shape()[0] == 0 {
                return Err(DiffusionError::Data(format!(
                    "protein {i} has shape {:?}, expected [L, {}]",
                    p.shape(),
                    cfg.fold.d_seq
                )));
            }
        }
        if let Some(e) = self.examples.iter().find(|e| e.protein >= self.proteins.len()) {
            return Err(DiffusionError::Data(format!("example refers to protein {}", e.protein)));
        }
        if self.examples.iter().any(|e| e.tokens.real_len() == 0) {
            return Err(DiffusionError::Data("empty token sequence".into()));
        }
        Ok(())
    }

    /// Real token lengths of all examples, used to pick sampling lengths.
    pub fn lengths(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.tokens.real_len()).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: u32,
    pub mdlm: f64,
    pub weight_mean: f64,
    pub masked: usize,
    pub invalid_frac: Option<f64>,
    pub total: f64,
    pub grad_norm: f64,
}

/// Owns the model being trained and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<R> {
    pub model: Model<R>,
    pub cfg: TrainConfig,
    pub curriculum: CurriculumParams,
    pub opt: Adam<R>,
    pub step: u64,
    pub exec: Exec,
}

impl<R: Real> Trainer<R> {
    pub fn new(model: Model<R>, cfg: TrainConfig, curriculum: CurriculumParams) -> Result<Self> {
        cfg.validate()?;
        curriculum.validate().map_err(DiffusionError::Config)?;
        let opt = Adam::new(AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        });
        Ok(Self {
            model,
            cfg,
            curriculum,
            opt,
            step: 0,
            exec: Exec::default(),
        })
    }

    pub fn epoch(&self, dataset_len: usize) -> u32 {
        (self.step * self.cfg.batch as u64 / dataset_len.max(1) as u64).min(u32::MAX as u64) as u32
    }

    /// Example indices for the current step.
    pub fn batch_indices(&self, dataset_len: usize) -> Vec<usize> {
        let mut rng = stream_rng(derive_seed(self.cfg.seed, 1), self.step);
        index::sample(&mut rng, dataset_len, self.cfg.batch.min(dataset_len)).into_vec()
    }

    /// Timesteps and corruption for `batch`, fixed by the seed and step alone.
    pub fn prepare(&self, data: &Dataset<R>, batch: &[usize]) -> DiffusionBatch {
        let mut rng = stream_rng(derive_seed(self.cfg.seed, 2), self.step);
        let epoch = self.epoch(data.examples.len());
        let t: Vec<f64> = batch
            .iter()
            .map(|_| curriculum_t(rng.random::<f64>(), epoch, &self.curriculum))
            .collect();
        let x0: Vec<TokenSeq> = batch.iter().map(|&i| data.examples[i].tokens.clone()).collect();
        let x0 = pad_batch(&x0, self.model.vocab.pad_id);
        let seed = derive_seed(derive_seed(self.cfg.seed, 3), self.step);
        corrupt(&x0, &t, &self.model.schedule, self.model.vocab.mask_id, seed)
    }

    /// Gradients of the batch-normalized masked loss, accumulated over the
    /// configured number of micro-batches.
    pub fn gradients(&self, data: &Dataset<R>, batch: &[usize], db: &DiffusionBatch) -> Result<(ParamStore<R>, f64)> {
        let total = db.masked_count();
        let k = self.cfg.accumulation.min(batch.len()).max(1);
        let chunk = batch.len().div_ceil(k);
        let mut grads: Option<ParamStore<R>> = None;
        let mut loss = 0.0;
        for start in (0..batch.len()).step_by(chunk) {
            let end = (start + chunk).min(batch.len());
            let sub = db.slice(start..end);
            let prot: Vec<usize> = batch[start..end].iter().map(|&i| data.examples[i].protein).collect();
            let mut g = Graph::with_exec(self.exec);
            let b = g.bind(&self.model.params, true);
            let ctx = batch_context(&mut g, &b, &self.model.cfg, &data.proteins, &prot)?;
            let y = forward(&mut g, &b, &self.model.cfg.decoder, &sub.xt, &sub.t, &ctx)?;
            let terms = mdlm_terms(&mut g, y, &sub, &self.model.schedule)?;
            let l = g.scale(terms.sum, 1.0 / total.max(1) as f64);
            g.backward(l)?;
            loss += g.value(l).item().to_f64().unwrap_or(f64::NAN);
            let gs = g.grads_of(&b);
            grads = Some(match grads {
                None => gs,
                Some(mut acc) => {
                    add_into(&mut acc, &gs)?;
                    acc
                }
            });
        }
        Ok((grads.unwrap_or_default(), loss))
    }

    /// Samples `n_valid` molecules for the validity penalty. In score-function
    /// mode also returns the gradient of the penalty surrogate.
    fn validity(&self, data: &Dataset<R>) -> Result<(f64, Option<ParamStore<R>>)> {
        let n = self.cfg.n_valid;
        let mut rng = stream_rng(derive_seed(self.cfg.seed, 4), self.step);
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.examples.len())).collect();
        let lengths: Vec<usize> = picks.iter().map(|&i| data.examples[i].tokens.real_len()).collect();
        let prot: Vec<usize> = picks.iter().map(|&i| data.examples[i].protein).collect();
        let ctx = self.model.context_values(&data.proteins, &prot)?;
        let seqs = self.model.sample(&ctx, &lengths, self.cfg.valid_sample_steps, rng.random())?;
        let smiles: Vec<String> = seqs.iter().map(|s| self.model.vocab.detokenize(&s.ids)).collect();
        let bad: Vec<f64> = smiles.iter().map(|s| if is_valid(s) { 0.0 } else { 1.0 }).collect();
        let frac = bad.iter().sum::<f64>() / n as f64;
        if self.cfg.validity_mode != ValidityMode::ScoreFunction || self.cfg.lambda_valid == 0.0 {
            return Ok((frac, None));
        }
        let mask = self.model.vocab.mask_id;
        let start: Vec<TokenSeq> = seqs
            .iter()
            .map(|s| TokenSeq {
                ids: s.ids.iter().zip(&s.pad_mask).map(|(&id, &m)| if m { mask } else { id }).collect(),
                pad_mask: s.pad_mask.clone(),
            })
            .collect();
        let l = seqs[0].len();
        let mut coef = vec![0.0; n * l];
        for (i, s) in seqs.iter().enumerate() {
            for j in 0..l {
                if s.pad_mask[j] {
                    coef[i * l + j] = self.cfg.lambda_valid * (bad[i] - frac) / n as f64;
                }
            }
        }
        let target: Vec<usize> = seqs.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let mut g = Graph::with_exec(self.exec);
        let b = g.bind(&self.model.params, true);
        let c = batch_context(&mut g, &b, &self.model.cfg, &data.proteins, &prot)?;
        let y = forward(&mut g, &b, &self.model.cfg.decoder, &start, &vec![1.0; n], &c)?;
        let ls = g.log_softmax(y)?;
        let lp = g.pick_last(ls, &target)?;
        let w = g.constant(Tensor::from_f64(&[n, l], &coef)?);
        let s = g.mul(lp, w)?;
        let s = g.sum_all(s);
        g.backward(s)?;
        Ok((frac, Some(g.grads_of(&b))))
    }

    /// One optimizer update on examples `batch`.
    pub fn train_step(&mut self, data: &Dataset<R>, batch: &[usize]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(DiffusionError::Data("empty batch".into()));
        }
        let epoch = self.epoch(data.examples.len());
        let db = self.prepare(data, batch);
        let masked = db.masked_count();
        let weight_mean = db.t.iter().map(|&t| self.model.schedule.loss_weight(t)).sum::<f64>() / db.len() as f64;
        let (mut grads, mdlm) = self.gradients(data, batch, &db)?;
        let check = self.cfg.valid_every > 0 && (self.step + 1).is_multiple_of(self.cfg.valid_every);
        let mut invalid_frac = None;
        if check {
            let (frac, sf) = self.validity(data)?;
            invalid_frac = Some(frac);
            if let Some(sf) = sf {
                add_into(&mut grads, &sf)?;
            }
        }
        let grad_norm = if self.cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, self.cfg.clip_norm)
        } else {
            clip_grad_norm(&mut grads, f64::INFINITY)
        };
        if masked > 0 || invalid_frac.is_some() {
            self.opt.update(&mut self.model.params, &grads)?;
        }
        self.step += 1;
        let total = match invalid_frac {
            Some(f) => mdlm + self.cfg.lambda_valid * f,
            None => mdlm,
        };
        Ok(StepReport {
            step: self.step,
            epoch,
            mdlm,
            weight_mean,
            masked,
            invalid_frac,
            total,
            grad_norm,
        })
    }

    /// Runs until `cfg.steps` updates have been made, reporting each step.
    pub fn fit(&mut self, data: &Dataset<R>, mut on_step: impl FnMut(&Self, &StepReport)) -> Result<Option<StepReport>> {
        data.validate(&self.model.cfg)?;
        let mut last = None;
        while self.step < self.cfg.steps {
            let batch = self.batch_indices(data.examples.len());
            let r = self.train_step(data, &batch)?;
            on_step(self, &r);
            last = Some(r);
        }
        Ok(last)
    }
}

fn add_into<R: Real>(acc: &mut ParamStore<R>, other: &ParamStore<R>) -> Result<()> {
    for (name, g) in other.iter() {
        match acc.get_mut(name) {
            Ok(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y),
            Err(_) => acc.insert(name.clone(), g.clone()),
        }
    }
    Ok(())
}
