mod common;

use proptest::prelude::*;
use sidgen_core::chemkit::corpus::TOY;
use sidgen_core::chemkit::{TokenSeq, TokenVocab};
use sidgen_core::decoder::{pad_batch, DecoderConfig};
use sidgen_core::diffusion::{
    corrupt, corrupt_with_alpha, mdlm_loss, total_loss, Dataset, DiffusionBatch, Example, Model, ModelConfig,
    TrainConfig, Trainer, ValidityMode,
};
use sidgen_core::folding::{ContextMode, FoldConfig};
use sidgen_core::numcore::{read_checkpoint, write_checkpoint, Graph, Tensor};
use sidgen_core::schedule::{CurriculumParams, NoiseSchedule, ScheduleParams};

const D_SEQ: usize = 12;

fn tiny_cfg(mode: ContextMode) -> ModelConfig {
    ModelConfig {
        mode,
        fold: FoldConfig {
            d_seq: D_SEQ,
            c_single: 8,
            c_pair: 8,
            stride: 2,
            depth: 1,
            tri_heads: 2,
            tri_mult_hidden: 2,
            relpos_max: 4,
            tri_mult_projections: true,
        },
        decoder: DecoderConfig {
            hidden: 16,
            heads: 2,
            layers: 1,
            ffn_mult: 2,
            vocab: 0,
            rope_base: 10000.0,
            cond_tokens: 2,
        },
    }
}

fn toy_data(n: usize, proteins: usize) -> (TokenVocab, Dataset<f64>) {
    let vocab = TokenVocab::from_corpus(TOY.iter().copied()).unwrap();
    let examples = TOY[..n]
        .iter()
        .enumerate()
        .map(|(i, s)| Example {
            tokens: vocab.tokenize(s).unwrap(),
            protein: i % proteins,
        })
        .collect();
    let proteins = (0..proteins)
        .map(|p| common::rand_tensor(&[7 + 3 * p, D_SEQ], 100 + p as u64))
        .collect();
    (vocab, Dataset { examples, proteins })
}

fn tiny_model(mode: ContextMode, vocab: TokenVocab, seed: u64) -> Model<f64> {
    Model::init(tiny_cfg(mode), vocab, NoiseSchedule::default(), seed).unwrap()
}

fn seqs(n: usize, len: usize) -> Vec<TokenSeq> {
    (0..n).map(|i| TokenSeq::new((0..len).map(|j| 4 + (i + j) % 5).collect())).collect()
}

#[test]
fn corrupt_extremes() {
    let x0 = pad_batch(&[TokenSeq::new(vec![5, 6, 7]), TokenSeq::new(vec![8])], 0);
    let keep = corrupt_with_alpha(&x0, &[1.0, 1.0], 1, 3);
    assert_eq!(keep.xt, x0);
    assert_eq!(keep.masked_count(), 0);
    let all = corrupt_with_alpha(&x0, &[0.0, 0.0], 1, 3);
    assert_eq!(all.xt[0].ids, [1, 1, 1]);
    assert_eq!(all.xt[1].ids, [1, 0, 0], "padding is never masked");
    assert_eq!(all.masked_count(), 4);
}

#[test]
fn corrupt_mask_rate_at_half() {
    let x0 = seqs(10, 1000);
    let b = corrupt_with_alpha(&x0, &[0.5; 10], 1, 42);
    let rate = b.masked_count() as f64 / 1e4;
    assert!((0.48..=0.52).contains(&rate), "rate {rate}");
    for (s, (m, x)) in b.xt.iter().zip(b.masked.iter().zip(&b.x0)) {
        for j in 0..s.len() {
            assert_eq!(m[j], s.ids[j] == 1);
            if !m[j] {
                assert_eq!(s.ids[j], x.ids[j]);
            }
        }
    }
}

#[test]
fn corrupt_is_seeded() {
    let x0 = seqs(4, 50);
    let s = NoiseSchedule::default();
    let t = [0.2, 0.5, 0.7, 0.9];
    assert_eq!(corrupt(&x0, &t, &s, 1, 9), corrupt(&x0, &t, &s, 1, 9));
    assert_ne!(corrupt(&x0, &t, &s, 1, 9).xt, corrupt(&x0, &t, &s, 1, 10).xt);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn mask_rate_within_four_sigma(t in 0.0f64..1.0, seed in any::<u64>()) {
        let sched = NoiseSchedule::SigmoidWarped(ScheduleParams::default());
        let a = sched.alpha(t);
        let x0 = seqs(10, 1000);
        let b = corrupt(&x0, &[t; 10], &sched, 1, seed);
        let rate = b.masked_count() as f64 / 1e4;
        let sd = (a * (1.0 - a) / 1e4).sqrt();
        prop_assert!((rate - (1.0 - a)).abs() <= 4.0 * sd + 1e-12);
    }
}

fn batch_of(x0: Vec<TokenSeq>, masked: Vec<Vec<bool>>, t: Vec<f64>) -> DiffusionBatch {
    let xt = x0
        .iter()
        .zip(&masked)
        .map(|(s, m)| TokenSeq {
            ids: s.ids.iter().zip(m).map(|(&id, &mk)| if mk { 1 } else { id }).collect(),
            pad_mask: s.pad_mask.clone(),
        })
        .collect();
    DiffusionBatch { x0, xt, t, masked }
}

fn loss_value(logits: &Tensor<f64>, b: &DiffusionBatch, s: &NoiseSchedule) -> (f64, bool) {
    let mut g = Graph::new();
    let y = g.constant(logits.clone());
    let l = mdlm_loss(&mut g, y, b, s).unwrap();
    (g.value(l.loss).item(), l.no_masked)
}

#[test]
fn mdlm_hand_example() {
    let s = NoiseSchedule::Linear;
    // two sequences of one token, both masked, V = 3
    let b = batch_of(
        vec![TokenSeq::new(vec![2]), TokenSeq::new(vec![0])],
        vec![vec![true], vec![true]],
        vec![0.5, 1.0],
    );
    let logits = Tensor::from_f64(&[2, 1, 3], &[1.0, 2.0, 0.5, 0.0, -1.0, 3.0]).unwrap();
    let lse = |v: [f64; 3]| {
        let m = v.iter().cloned().fold(f64::MIN, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let w = |t: f64| 1.0 / t.exp_m1();
    let nll0 = lse([1.0, 2.0, 0.5]) - 0.5;
    let nll1 = lse([0.0, -1.0, 3.0]) - 0.0;
    let want = (w(0.5) * nll0 + w(1.0) * nll1) / 2.0;
    let (got, empty) = loss_value(&logits, &b, &s);
    assert!(!empty);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn mdlm_uniform_and_perfect_logits() {
    let s = NoiseSchedule::default();
    let b = batch_of(vec![TokenSeq::new(vec![3, 4, 5])], vec![vec![false, true, false]], vec![0.4]);
    let (got, _) = loss_value(&Tensor::zeros(&[1, 3, 7]), &b, &s);
    assert!((got - s.loss_weight(0.4) * 7f64.ln()).abs() < 1e-12);
    let sharp = Tensor::from_fn(&[1, 3, 7], |i| if i % 7 == [3, 4, 5][i / 7] { 60.0 } else { 0.0 });
    assert!(loss_value(&sharp, &b, &s).0 < 1e-20);
    let none = batch_of(vec![TokenSeq::new(vec![3, 4])], vec![vec![false, false]], vec![0.4]);
    assert_eq!(loss_value(&Tensor::zeros(&[1, 2, 7]), &none, &s), (0.0, true));
}

#[test]
fn mdlm_ignores_unmasked_and_padding() {
    let s = NoiseSchedule::default();
    let x0 = pad_batch(&[TokenSeq::new(vec![3, 4, 5]), TokenSeq::new(vec![6])], 0);
    let b = batch_of(x0, vec![vec![true, false, true], vec![true, false, false]], vec![0.3, 0.8]);
    let base = common::rand_tensor(&[2, 3, 7], 5);
    let mut poked = base.clone();
    for (i, j) in [(0, 1), (1, 1), (1, 2)] {
        for v in 0..7 {
            poked.set(&[i, j, v], 9.0 * v as f64);
        }
    }
    assert_eq!(loss_value(&base, &b, &s).0, loss_value(&poked, &b, &s).0);
}

#[test]
fn mdlm_gradient_matches_finite_differences() {
    let s = NoiseSchedule::default();
    let x0 = pad_batch(&[TokenSeq::new(vec![3, 4, 5, 2]), TokenSeq::new(vec![6, 1])], 0);
    let b = batch_of(
        x0,
        vec![vec![true, false, true, true], vec![true, false, false, false]],
        vec![0.3, 0.8],
    );
    let logits = common::rand_tensor(&[2, 4, 7], 6);
    let worst = common::gradcheck(&[logits], 1e-6, |g, v| Ok(mdlm_loss(g, v[0], &b, &s).unwrap().loss));
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn total_loss_examples() {
    let ok = vec!["CCO".to_string(), "c1ccccc1".to_string()];
    let half = vec!["CCO".to_string(), "C1CC".to_string()];
    assert_eq!(total_loss(1.25, &ok, 3.0), 1.25);
    assert_eq!(total_loss(1.25, &half, 1.0), 1.75);
    assert_eq!(total_loss(1.25, &half, 0.0), 1.25);
}

#[test]
fn sampler_contract() {
    let (vocab, data) = toy_data(8, 2);
    let model = tiny_model(ContextMode::Streamlined, vocab, 1);
    let ctx = model.context_values(&data.proteins, &[0]).unwrap();
    let lengths = [5, 9, 3];
    let mask = model.vocab.mask_id;

    let one = model.sample(&ctx, &lengths, 1, 7).unwrap();
    for (s, &l) in one.iter().zip(&lengths) {
        assert_eq!(s.real_len(), l);
        assert!(s.ids[..l].iter().all(|&id| !model.vocab.is_special(id)));
    }
    assert_eq!(one, model.sample(&ctx, &lengths, 1, 7).unwrap());

    for seed in 0..100 {
        let trace = model.sample_traced(&ctx, &lengths, 6, seed).unwrap();
        assert_eq!(trace.len(), 6);
        for w in trace.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                for j in 0..a.len() {
                    if a.ids[j] != mask {
                        assert_eq!(a.ids[j], b.ids[j], "committed token changed");
                    }
                }
            }
        }
        let last = trace.last().unwrap();
        assert!(last.iter().zip(&lengths).all(|(s, &l)| s.ids[..l].iter().all(|&id| id != mask)));
    }
    assert!(model.sample(&ctx, &lengths, 0, 1).is_err());
}

#[test]
fn checkpoint_round_trip_keeps_logits() {
    let (vocab, data) = toy_data(4, 1);
    let model = tiny_model(ContextMode::Full, vocab, 2);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model.checkpoint()).unwrap();
    let back = Model::<f64>::from_checkpoint(read_checkpoint(&buf[..]).unwrap()).unwrap();
    assert_eq!(back, model);
    let ctx = model.context_values(&data.proteins, &[0]).unwrap();
    let b = corrupt_with_alpha(&[data.examples[0].tokens.clone()], &[0.5], model.vocab.mask_id, 1);
    assert_eq!(model.predict_x0(&ctx, &b).unwrap(), back.predict_x0(&ctx, &b).unwrap());
    let a = model.sample(&ctx, &[6], 4, 3).unwrap();
    assert_eq!(a, back.sample(&ctx, &[6], 4, 3).unwrap());
}

fn trainer(mode: ContextMode, cfg: TrainConfig) -> (Trainer<f64>, Dataset<f64>) {
    let (vocab, data) = toy_data(8, 3);
    let model = tiny_model(mode, vocab, 3);
    (Trainer::new(model, cfg, CurriculumParams::default()).unwrap(), data)
}

#[test]
fn accumulation_matches_full_batch() {
    for mode in [ContextMode::Streamlined, ContextMode::Full] {
        let base = TrainConfig {
            batch: 8,
            valid_every: 0,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let (mut full, data) = trainer(mode, base.clone());
        let (mut acc, _) = trainer(
            mode,
            TrainConfig {
                accumulation: 4,
                ..base
            },
        );
        let batch: Vec<usize> = (0..8).collect();
        let db = full.prepare(&data, &batch);
        assert_eq!(db, acc.prepare(&data, &batch));
        let (g1, l1) = full.gradients(&data, &batch, &db).unwrap();
        let (g4, l4) = acc.gradients(&data, &batch, &db).unwrap();
        assert!((l1 - l4).abs() < 1e-12);
        for (name, a) in g1.iter() {
            let b = g4.get(name).unwrap();
            assert!(a.max_abs_diff(b) < 1e-10, "{name}");
        }
        let r1 = full.train_step(&data, &batch).unwrap();
        let r4 = acc.train_step(&data, &batch).unwrap();
        assert!((r1.mdlm - r4.mdlm).abs() < 1e-12);
        for (name, a) in full.model.params.iter() {
            assert!(a.max_abs_diff(acc.model.params.get(name).unwrap()) < 1e-5, "{name}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (mut t, data) = trainer(
        ContextMode::Streamlined,
        TrainConfig {
            lr: 0.0,
            batch: 4,
            valid_every: 0,
            ..TrainConfig::default()
        },
    );
    let before = t.model.params.clone();
    for _ in 0..3 {
        let b = t.batch_indices(data.examples.len());
        t.train_step(&data, &b).unwrap();
    }
    assert_eq!(t.model.params, before);
    assert_eq!(t.step, 3);
}

#[test]
fn training_reduces_loss_on_fixed_batch() {
    let (mut t, data) = trainer(
        ContextMode::Streamlined,
        TrainConfig {
            lr: 3e-3,
            batch: 8,
            steps: 150,
            valid_every: 0,
            ..TrainConfig::default()
        },
    );
    let idx: Vec<usize> = (0..8).collect();
    let prot: Vec<usize> = idx.iter().map(|&i| data.examples[i].protein).collect();
    let x0 = pad_batch(&idx.iter().map(|&i| data.examples[i].tokens.clone()).collect::<Vec<_>>(), 0);
    let eval = |m: &Model<f64>| {
        let ctx = m.context_values(&data.proteins, &prot).unwrap();
        let b = corrupt(&x0, &[0.5; 8], &m.schedule, m.vocab.mask_id, 11);
        m.loss_on(&ctx, &b).unwrap().loss
    };
    let start = eval(&t.model);
    let mut logs = Vec::new();
    t.fit(&data, |_, r| logs.push(r.clone())).unwrap();
    let end = eval(&t.model);
    assert_eq!(logs.len(), 150);
    assert!(logs.iter().all(|r| r.mdlm.is_finite() && r.grad_norm.is_finite()));
    assert!(end < 0.5 * start, "loss {start} -> {end}");
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        batch: 4,
        steps: 6,
        valid_every: 3,
        n_valid: 4,
        valid_sample_steps: 2,
        lambda_valid: 0.5,
        ..TrainConfig::default()
    };
    let run = |cfg: &TrainConfig| {
        let (mut t, data) = trainer(ContextMode::Full, cfg.clone());
        let mut logs = Vec::new();
        t.fit(&data, |_, r| logs.push(serde_json::to_string(r).unwrap())).unwrap();
        (logs, t.model.params)
    };
    let (a, pa) = run(&cfg);
    let (b, pb) = run(&cfg);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert!(a[2].contains("\"invalid_frac\":") && !a[2].contains("\"invalid_frac\":null"));
    assert!(a[0].contains("\"invalid_frac\":null"));
}

#[test]
fn score_function_mode_changes_the_update() {
    let cfg = TrainConfig {
        batch: 4,
        steps: 1,
        valid_every: 1,
        n_valid: 6,
        valid_sample_steps: 1,
        lambda_valid: 5.0,
        ..TrainConfig::default()
    };
    let (mut free, data) = trainer(ContextMode::Streamlined, cfg.clone());
    let (mut sf, _) = trainer(
        ContextMode::Streamlined,
        TrainConfig {
            validity_mode: ValidityMode::ScoreFunction,
            ..cfg
        },
    );
    let b: Vec<usize> = (0..4).collect();
    let r1 = free.train_step(&data, &b).unwrap();
    let r2 = sf.train_step(&data, &b).unwrap();
    assert_eq!(r1.invalid_frac, r2.invalid_frac);
    let frac = r1.invalid_frac.unwrap();
    assert!((r1.total - (r1.mdlm + 5.0 * frac)).abs() < 1e-12);
    let differs = free
        .model
        .params
        .iter()
        .any(|(n, p)| p.max_abs_diff(sf.model.params.get(n).unwrap()) > 0.0);
    // a batch with all samples valid or all invalid has a zero centered signal
    assert_eq!(differs, frac > 0.0 && frac < 1.0);
}
