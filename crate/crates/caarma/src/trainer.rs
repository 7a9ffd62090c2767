//! Alternating min-max training loop: per step, a discriminator update on
//! detached embeddings, then an encoder+head update on the composite loss.
//! Handles scheduling, checkpointing, metrics logging, and resume.

use crate::config::ExperimentConfig;
use crate::data::{ClassifierWeights, EmbeddingBatch, Manifest};
use crate::discriminator::{DiscriminatorModel, PlainDiscriminator, SemanticDiscriminator};
use crate::encoder::ReferenceEncoder;
use crate::error::{Error, Result};
use crate::features::{extract_fbank_batch, random_segment, read_wav};
use crate::graph::{Node, Tape};
use crate::losses::{
    adapt_lambda, graph_am_softmax, graph_bce_mean, graph_cosine_logits, syn_targets, LossReport,
};
use crate::mixup::{mix_coefficient, mix_plan};
use crate::nn::ParamSet;
use crate::par::maybe_par_map;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

pub const CHECKPOINT_VERSION: &str = "caarma-checkpoint-1";

// rng stream ids; one independent stream per consumer so disabling a
// component never shifts the draws seen by another
const STREAM_ENC_INIT: u64 = 1;
const STREAM_HEAD_INIT: u64 = 2;
const STREAM_DISC_INIT: u64 = 3;
const STREAM_DATA: u64 = 4;
const STREAM_DROPOUT: u64 = 5;

/// Which loss components participate, mirroring the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Baseline,
    Lsyn,
    At,
    AtSd,
    Full,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "lsyn" => Ok(Mode::Lsyn),
            "at" => Ok(Mode::At),
            "at+sd" => Ok(Mode::AtSd),
            "full" => Ok(Mode::Full),
            other => Err(Error::Validation(format!("unknown mode `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Lsyn => "lsyn",
            Mode::At => "at",
            Mode::AtSd => "at+sd",
            Mode::Full => "full",
        }
    }

    pub fn with_syn_loss(&self) -> bool {
        matches!(self, Mode::Lsyn | Mode::Full)
    }

    pub fn with_adversarial(&self) -> bool {
        matches!(self, Mode::At | Mode::AtSd | Mode::Full)
    }

    pub fn semantic_discriminator(&self) -> bool {
        matches!(self, Mode::AtSd | Mode::Full)
    }
}

/// Adaptive-moment optimizer with decoupled weight decay. One moment pair
/// per tracked tensor, aligned by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: usize,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// One update over all tracked tensors at the given effective rate.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr_now: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            for k in 0..p.data.len() {
                let m = self.beta1 * self.m[i].data[k] + (1.0 - self.beta1) * g.data[k];
                let v = self.beta2 * self.v[i].data[k] + (1.0 - self.beta2) * g.data[k] * g.data[k];
                self.m[i].data[k] = m;
                self.v[i].data[k] = v;
                let update = (m / bc1) / ((v / bc2).sqrt() + self.eps);
                p.data[k] -= lr_now * (update + self.weight_decay * p.data[k]);
            }
        }
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .map(|g| g.data.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for g in grads.iter_mut() {
            for x in &mut g.data {
                *x *= s;
            }
        }
    }
    total
}

/// Linear warmup on the encoder side only; steps are 1-based.
pub fn encoder_lr(cfg: &ExperimentConfig, step_1based: usize) -> f64 {
    if cfg.warmup_steps > 0 && step_1based < cfg.warmup_steps {
        cfg.lr_encoder * step_1based as f64 / cfg.warmup_steps as f64
    } else {
        cfg.lr_encoder
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub encoder: ReferenceEncoder,
    pub head: ClassifierWeights,
    pub discriminator: Option<DiscriminatorModel>,
    pub opt_enc: AdamW,
    pub opt_disc: Option<AdamW>,
    pub ratio_ema: f64,
    pub data_rng: ChaCha8Rng,
    pub dropout_rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub mode: Mode,
    pub lambda_speakers: usize,
    pub state: TrainState,
    /// pin the adversarial weight (testing hook); None = adaptive rule
    pub lambda_adv_override: Option<f64>,
    /// pin the synthetic-loss coefficient (testing hook); None = 1/lambda
    pub syn_weight_override: Option<f64>,
    /// worst |sum(alpha) - 1| seen over all attention rows this run
    pub max_attention_err: f64,
    /// count of degraded single-class steps
    pub single_class_steps: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig, mode: Mode, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::SingleClass);
        }
        let lambda_speakers = if cfg.lambda_speakers > 0 {
            cfg.lambda_speakers
        } else {
            n_classes
        };
        let mut enc_rng = stream_rng(cfg.seed, STREAM_ENC_INIT);
        let encoder =
            ReferenceEncoder::new(cfg.fbank_dims, cfg.embed_dim, cfg.embed_dim, &mut enc_rng);
        let mut head_rng = stream_rng(cfg.seed, STREAM_HEAD_INIT);
        let head = crate::encoder::ClassificationHead::new(cfg.embed_dim, n_classes, &mut head_rng)
            .weights;

        let discriminator = if mode.with_adversarial() {
            let mut disc_rng = stream_rng(cfg.seed, STREAM_DISC_INIT);
            Some(if mode.semantic_discriminator() {
                DiscriminatorModel::Semantic(SemanticDiscriminator::from_config(&cfg, &mut disc_rng))
            } else {
                DiscriminatorModel::Plain(PlainDiscriminator::new(
                    cfg.embed_dim,
                    cfg.disc_hidden,
                    &mut disc_rng,
                ))
            })
        } else {
            None
        };

        let mut enc_shapes: Vec<(usize, usize)> =
            encoder.params.tensors.iter().map(|t| t.shape()).collect();
        enc_shapes.push(head.w.shape());
        let opt_enc = AdamW::new(cfg.lr_encoder, cfg.weight_decay, &enc_shapes);
        let opt_disc = discriminator.as_ref().map(|d| {
            let shapes: Vec<(usize, usize)> =
                d.params().tensors.iter().map(|t| t.shape()).collect();
            AdamW::new(cfg.lr_discriminator, cfg.weight_decay, &shapes)
        });

        Ok(Trainer {
            state: TrainState {
                step: 0,
                epoch: 0,
                encoder,
                head,
                discriminator,
                opt_enc,
                opt_disc,
                ratio_ema: 1.0,
                data_rng: stream_rng(cfg.seed, STREAM_DATA),
                dropout_rng: stream_rng(cfg.seed, STREAM_DROPOUT),
            },
            cfg,
            mode,
            lambda_speakers,
            lambda_adv_override: None,
            syn_weight_override: None,
            max_attention_err: 0.0,
            single_class_steps: 0,
        })
    }

    fn record_attention(&mut self, tape: &Tape, alphas: &[Node]) {
        for a in alphas {
            let t = tape.value(*a);
            for r in 0..t.rows {
                let sum: f64 = (0..t.cols).map(|c| t.at(r, c)).sum();
                let err = (sum - 1.0).abs();
                if err > self.max_attention_err {
                    self.max_attention_err = err;
                }
            }
        }
    }

    /// One probability forward on a tape where discriminator parameters are
    /// pushed as `leaves`; records attention sums for the invariant sweep.
    fn disc_forward(
        &mut self,
        tape: &mut Tape,
        leaves: &[Node],
        e: Node,
        train_dropout: bool,
    ) -> Result<Node> {
        let disc = self.state.discriminator.clone().expect("discriminator present");
        match &disc {
            DiscriminatorModel::Semantic(d) => {
                let rng = if train_dropout {
                    Some(&mut self.state.dropout_rng)
                } else {
                    None
                };
                let art = d.forward_full(tape, leaves, e, rng)?;
                self.record_attention(tape, &art.alphas);
                Ok(art.probs)
            }
            DiscriminatorModel::Plain(d) => Ok(d.forward(tape, leaves, e)),
        }
    }

    /// One Algorithm-2 step on raw waveforms.
    pub fn train_step(&mut self, waveforms: &[Vec<f64>], labels: &[usize]) -> Result<LossReport> {
        assert_eq!(waveforms.len(), labels.len());
        let fbanks = extract_fbank_batch(waveforms, &self.cfg)?;
        let frames: Vec<Tensor> = fbanks.into_iter().map(|f| f.frames).collect();
        self.train_step_frames(&frames, labels)
    }

    /// Algorithm-2 step on precomputed frame sequences.
    pub fn train_step_frames(&mut self, frames: &[Tensor], labels: &[usize]) -> Result<LossReport> {
        let cfg = self.cfg.clone();
        let b = frames.len();
        assert!(b >= 1);

        // encoder forward for the whole batch on one tape
        let mut tape = Tape::new();
        let enc_leaves = self.state.encoder.params.leaves(&mut tape);
        let w_leaf = tape.leaf(self.state.head.w.clone());
        let rows: Vec<Node> = frames
            .iter()
            .map(|f| self.state.encoder.forward(&mut tape, &enc_leaves, f))
            .collect();
        let e = tape.concat_rows(&rows);

        let logits = graph_cosine_logits(&mut tape, e, w_leaf);
        let l_real_node = graph_am_softmax(&mut tape, logits, labels, cfg.scale, cfg.margin);
        let l_real = tape.scalar_value(l_real_node);

        // synthetic classes via the batch mixing plan
        let batch = EmbeddingBatch {
            embeddings: tape.value(e).clone(),
            labels: labels.to_vec(),
            is_synthetic: false,
        };
        let plan = match mix_plan(&batch, &self.state.head) {
            Ok(p) => Some(p),
            Err(Error::SingleClass) => {
                self.single_class_steps += 1;
                eprintln!(
                    "warning: single-class batch at step {}; syn/adv losses skipped",
                    self.state.step + 1
                );
                None
            }
            Err(e) => return Err(e),
        };

        let coef = mix_coefficient();
        let syn_nodes = plan.as_ref().map(|plan| {
            let bp = plan.source_rows.len();
            let mut mix_rows = Tensor::zeros(bp, b);
            let c = self.state.head.class_count();
            let mut mix_cols = Tensor::zeros(c, bp);
            for (r, &(i, j)) in plan.source_rows.iter().enumerate() {
                *mix_rows.at_mut(r, i) += coef;
                *mix_rows.at_mut(r, j) += coef;
                let (l1, l2) = plan.pairs[r];
                *mix_cols.at_mut(l1, r) += coef;
                *mix_cols.at_mut(l2, r) += coef;
            }
            let mr = tape.constant(mix_rows);
            let mc = tape.constant(mix_cols);
            let e_syn = tape.matmul(mr, e); // [B' x d]
            let w_syn = tape.matmul(w_leaf, mc); // [d x B']
            (e_syn, w_syn)
        });

        // discriminator update on detached embeddings
        let mut l_d = 0.0;
        if self.state.discriminator.is_some() {
            if let Some((e_syn, _)) = syn_nodes {
                let e_val = tape.value(e).clone();
                let syn_val = tape.value(e_syn).clone();
                l_d = self.discriminator_update(&e_val, &syn_val)?;
            }
        }

        // generator loss against the freshly updated discriminator
        let lambda_speakers = self.lambda_speakers;
        let mut l_g = 0.0;
        let mut lambda_adv = 0.0;
        let adv_active = self.state.discriminator.is_some()
            && syn_nodes.is_some()
            && self.lambda_adv_override != Some(0.0);
        let mut l_g_node = None;
        if adv_active {
            let (e_syn, _) = syn_nodes.unwrap();
            let disc_consts = self
                .state
                .discriminator
                .as_ref()
                .unwrap()
                .params()
                .clone()
                .constants(&mut tape);
            let d_real = self.disc_forward(&mut tape, &disc_consts, e, true)?;
            let d_syn = self.disc_forward(&mut tape, &disc_consts, e_syn, true)?;
            let mut lg = graph_bce_mean(&mut tape, d_syn, 1);
            if cfg.gen_loss_real_term {
                let real0 = graph_bce_mean(&mut tape, d_real, 0);
                lg = tape.add(lg, real0);
            }
            l_g = tape.scalar_value(lg);
            l_g_node = Some(lg);
            lambda_adv = match self.lambda_adv_override {
                Some(v) => v,
                None => {
                    let (lam, ema) = adapt_lambda(l_real, l_g, self.state.ratio_ema, &cfg);
                    self.state.ratio_ema = ema;
                    lam
                }
            };
        }

        // synthetic-class classification loss
        let syn_weight = self
            .syn_weight_override
            .unwrap_or(1.0 / lambda_speakers.max(1) as f64);
        let mut l_syn = 0.0;
        let mut l_syn_node = None;
        if self.mode.with_syn_loss() && syn_weight != 0.0 {
            if let (Some(plan), Some((e_syn, w_syn))) = (&plan, &syn_nodes) {
                let c = self.state.head.class_count();
                let (logits_syn, targets) = if cfg.syn_against_all {
                    let aug = tape.concat_cols(&[w_leaf, *w_syn]);
                    (
                        graph_cosine_logits(&mut tape, *e_syn, aug),
                        syn_targets(&plan.pairs, c),
                    )
                } else {
                    (
                        graph_cosine_logits(&mut tape, *e_syn, *w_syn),
                        syn_targets(&plan.pairs, 0),
                    )
                };
                let node =
                    graph_am_softmax(&mut tape, logits_syn, &targets, cfg.scale, cfg.margin);
                l_syn = tape.scalar_value(node);
                l_syn_node = Some(node);
                // invariant: synthetic labels stay disjoint from real ones
                debug_assert!(plan.labels.iter().all(|&l| l >= c));
            }
        }

        // total = l_real + l_syn / lambda + lambda_adv * l_g, skipping
        // zero-coefficient terms so disabled components leave no trace
        let mut total = l_real_node;
        if let Some(node) = l_syn_node {
            let scaled = tape.scale(node, syn_weight);
            total = tape.add(total, scaled);
        }
        if let Some(node) = l_g_node {
            if lambda_adv != 0.0 {
                let scaled = tape.scale(node, lambda_adv);
                total = tape.add(total, scaled);
            }
        }
        let l_total = tape.scalar_value(total);
        tape.backward(total);

        let mut grads: Vec<Tensor> = enc_leaves
            .iter()
            .map(|n| tape.grad(*n).clone())
            .collect();
        grads.push(tape.grad(w_leaf).clone());
        clip_global_norm(&mut grads, cfg.grad_clip);

        let step_1based = self.state.step + 1;
        let lr_now = encoder_lr(&cfg, step_1based);
        {
            let mut targets: Vec<&mut Tensor> =
                self.state.encoder.params.tensors.iter_mut().collect();
            targets.push(&mut self.state.head.w);
            self.state.opt_enc.step(&mut targets, &grads, lr_now);
        }
        self.state.step = step_1based;

        let report = LossReport {
            l_real,
            l_syn: if l_syn_node.is_some() { l_syn } else { 0.0 },
            l_d,
            l_g,
            l_total,
            lambda_adv,
            ratio_ema: self.state.ratio_ema,
        };
        if !report.all_finite() {
            return Err(Error::Degenerate("non-finite loss in train step".into()));
        }
        if adv_active && self.lambda_adv_override.is_none() {
            debug_assert!(
                lambda_adv >= cfg.lambda_adv_min && lambda_adv <= cfg.lambda_adv_max
            );
        }
        Ok(report)
    }

    /// BCE update of the discriminator on detached real/synthetic batches.
    fn discriminator_update(&mut self, e_real: &Tensor, e_syn: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let disc = self.state.discriminator.as_ref().unwrap().clone();
        let leaves = disc.params().leaves(&mut tape);
        let er = tape.constant(e_real.clone());
        let es = tape.constant(e_syn.clone());
        let d_real = self.disc_forward(&mut tape, &leaves, er, true)?;
        let d_syn = self.disc_forward(&mut tape, &leaves, es, true)?;
        let real1 = graph_bce_mean(&mut tape, d_real, 1);
        let syn0 = graph_bce_mean(&mut tape, d_syn, 0);
        let l_d = tape.add(real1, syn0);
        let l_d_val = tape.scalar_value(l_d);
        tape.backward(l_d);

        let mut grads: Vec<Tensor> = leaves.iter().map(|n| tape.grad(*n).clone()).collect();
        clip_global_norm(&mut grads, self.cfg.grad_clip);
        let lr = self.cfg.lr_discriminator;
        let disc = self.state.discriminator.as_mut().unwrap();
        let opt = self.state.opt_disc.as_mut().unwrap();
        {
            let mut targets: Vec<&mut Tensor> = disc.params_mut().tensors.iter_mut().collect();
            opt.step(&mut targets, &grads, lr);
        }
        disc.update_spectral_state();
        Ok(l_d_val)
    }
}

// ---------------------------------------------------------------------------
// epoch loop, corpus access, metrics log
// ---------------------------------------------------------------------------

/// In-memory training corpus: one waveform per manifest row plus its integer
/// class label.
pub struct CorpusCache {
    pub utterance_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub waveforms: Vec<Vec<f64>>,
    pub n_classes: usize,
}

pub fn load_corpus(manifest: &Manifest) -> Result<CorpusCache> {
    let label_map: BTreeMap<String, usize> = manifest.label_map().into_iter().collect();
    let waves: Result<Vec<Vec<f64>>> =
        maybe_par_map(&manifest.entries, |e| read_wav(Path::new(&e.source)))
            .into_iter()
            .collect();
    Ok(CorpusCache {
        utterance_ids: manifest.entries.iter().map(|e| e.utterance_id.clone()).collect(),
        labels: manifest
            .entries
            .iter()
            .map(|e| label_map[&e.speaker_label])
            .collect(),
        waveforms: waves?,
        n_classes: label_map.len(),
    })
}

fn metrics_line(step: usize, epoch: usize, r: &LossReport, lr_enc: f64, lr_disc: f64) -> String {
    format!(
        "step={} epoch={} l_real={} l_syn={} l_d={} l_g={} l_total={} lambda_adv={} lr_enc={} lr_disc={}",
        step, epoch, r.l_real, r.l_syn, r.l_d, r.l_g, r.l_total, r.lambda_adv, lr_enc, lr_disc
    )
}

/// Run (or continue) the full training loop; checkpoints land under
/// `out_dir/checkpoint-epoch-NNN`, metrics under `out_dir/metrics.log`.
/// `stop_after_epoch` ends the run early with the checkpoint intact
/// (used by resume tests and interruptible runs).
pub fn train(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    mode: Mode,
    out_dir: &Path,
    resume_from: Option<&Path>,
    stop_after_epoch: Option<usize>,
) -> Result<Trainer> {
    std::fs::create_dir_all(out_dir)?;
    let corpus = load_corpus(manifest)?;
    let mut trainer = match resume_from {
        Some(p) => load_checkpoint(p, cfg, corpus.n_classes)?,
        None => Trainer::new(cfg.clone(), mode, corpus.n_classes)?,
    };
    if trainer.mode != mode {
        return Err(Error::Version(format!(
            "checkpoint was trained with mode {}, requested {}",
            trainer.mode.as_str(),
            mode.as_str()
        )));
    }

    let metrics_path = out_dir.join("metrics.log");
    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(resume_from.is_some())
        .write(true)
        .truncate(resume_from.is_none())
        .open(&metrics_path)?;

    let n = corpus.waveforms.len();
    let batches_per_epoch = n / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::Degenerate("fewer utterances than one batch".into()));
    }

    for epoch in trainer.state.epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut trainer.state.data_rng);
        for chunk in order.chunks(cfg.batch_size).take(batches_per_epoch) {
            if chunk.len() < cfg.batch_size {
                break;
            }
            let mut waves = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                waves.push(random_segment(
                    &corpus.waveforms[i],
                    cfg,
                    &mut trainer.state.data_rng,
                ));
                labels.push(corpus.labels[i]);
            }
            let report = trainer.train_step(&waves, &labels)?;
            let lr_enc = encoder_lr(cfg, trainer.state.step);
            writeln!(
                metrics,
                "{}",
                metrics_line(trainer.state.step, epoch + 1, &report, lr_enc, cfg.lr_discriminator)
            )?;
        }
        trainer.state.epoch = epoch + 1;
        save_checkpoint(
            &trainer,
            &out_dir.join(format!("checkpoint-epoch-{:03}", epoch + 1)),
        )?;
        if stop_after_epoch == Some(epoch + 1) {
            break;
        }
    }
    metrics.flush()?;
    Ok(trainer)
}

/// Inference embeddings for every manifest utterance (full-length features).
pub fn embed_manifest(
    encoder: &ReferenceEncoder,
    manifest: &Manifest,
    cfg: &ExperimentConfig,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let results: Result<Vec<(String, Vec<f64>)>> =
        maybe_par_map(&manifest.entries, |entry| -> Result<(String, Vec<f64>)> {
            let wave = read_wav(Path::new(&entry.source))?;
            let fb = crate::features::extract_fbank(&wave, cfg)?;
            let emb = encoder.encode(&fb.frames)?;
            Ok((entry.utterance_id.clone(), emb))
        })
        .into_iter()
        .collect();
    Ok(results?.into_iter().collect())
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DiscBlob {
    kind: String,
    params: ParamSet,
    sn_state: Vec<(usize, Tensor)>,
    opt: AdamW,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBlob {
    format_version: String,
    mode: Mode,
    step: usize,
    epoch: usize,
    embed_dim: usize,
    lambda_speakers: usize,
    encoder: ParamSet,
    head_w: Tensor,
    discriminator: Option<DiscBlob>,
    opt_enc: AdamW,
    ratio_ema: f64,
    data_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    max_attention_err: f64,
    single_class_steps: usize,
}

pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::config::save_config(&trainer.cfg, &dir.join("config.txt"))?;
    let disc = trainer.state.discriminator.as_ref().map(|d| DiscBlob {
        kind: match d {
            DiscriminatorModel::Semantic(_) => "semantic".to_string(),
            DiscriminatorModel::Plain(_) => "plain".to_string(),
        },
        params: d.params().clone(),
        sn_state: d.sn_state().to_vec(),
        opt: trainer.state.opt_disc.clone().expect("disc optimizer"),
    });
    let blob = CheckpointBlob {
        format_version: CHECKPOINT_VERSION.to_string(),
        mode: trainer.mode,
        step: trainer.state.step,
        epoch: trainer.state.epoch,
        embed_dim: trainer.cfg.embed_dim,
        lambda_speakers: trainer.lambda_speakers,
        encoder: trainer.state.encoder.params.clone(),
        head_w: trainer.state.head.w.clone(),
        discriminator: disc,
        opt_enc: trainer.state.opt_enc.clone(),
        ratio_ema: trainer.state.ratio_ema,
        data_rng: trainer.state.data_rng.clone(),
        dropout_rng: trainer.state.dropout_rng.clone(),
        max_attention_err: trainer.max_attention_err,
        single_class_steps: trainer.single_class_steps,
    };
    let json = serde_json::to_string(&blob)
        .map_err(|e| Error::Version(format!("checkpoint encode: {e}")))?;
    std::fs::write(dir.join("state.json"), json)?;
    Ok(())
}

/// Classifier width stored in a checkpoint, needed to rebuild the trainer
/// for evaluation without the original training corpus.
pub fn checkpoint_class_count(dir: &Path) -> Result<usize> {
    let raw = std::fs::read_to_string(dir.join("state.json"))?;
    let blob: CheckpointBlob = serde_json::from_str(&raw)
        .map_err(|e| Error::Version(format!("checkpoint decode: {e}")))?;
    Ok(blob.head_w.cols)
}

pub fn load_checkpoint(dir: &Path, cfg: &ExperimentConfig, n_classes: usize) -> Result<Trainer> {
    let raw = std::fs::read_to_string(dir.join("state.json"))?;
    let blob: CheckpointBlob = serde_json::from_str(&raw)
        .map_err(|e| Error::Version(format!("checkpoint decode: {e}")))?;
    if blob.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!(
            "unsupported checkpoint format `{}`",
            blob.format_version
        )));
    }
    if blob.embed_dim != cfg.embed_dim {
        return Err(Error::Version(format!(
            "checkpoint embed_dim {} does not match config embed_dim {}",
            blob.embed_dim, cfg.embed_dim
        )));
    }

    let mut trainer = Trainer::new(cfg.clone(), blob.mode, n_classes)?;
    if trainer.state.encoder.params.names != blob.encoder.names {
        return Err(Error::Version("encoder parameter names differ".into()));
    }
    trainer.state.encoder.params = blob.encoder;
    if trainer.state.head.w.shape() != blob.head_w.shape() {
        return Err(Error::Version(format!(
            "head shape {:?} does not match checkpoint {:?}",
            trainer.state.head.w.shape(),
            blob.head_w.shape()
        )));
    }
    trainer.state.head.w = blob.head_w;
    match (&mut trainer.state.discriminator, blob.discriminator) {
        (Some(d), Some(saved)) => {
            let expect_kind = match d {
                DiscriminatorModel::Semantic(_) => "semantic",
                DiscriminatorModel::Plain(_) => "plain",
            };
            if expect_kind != saved.kind {
                return Err(Error::Version(format!(
                    "discriminator kind `{}` does not match checkpoint `{}`",
                    expect_kind, saved.kind
                )));
            }
            if d.params().names != saved.params.names {
                return Err(Error::Version("discriminator parameter names differ".into()));
            }
            *d.params_mut() = saved.params;
            *d.sn_state_mut() = saved.sn_state;
            trainer.state.opt_disc = Some(saved.opt);
        }
        (None, None) => {}
        _ => return Err(Error::Version("discriminator presence mismatch".into())),
    }
    trainer.state.step = blob.step;
    trainer.state.epoch = blob.epoch;
    trainer.state.opt_enc = blob.opt_enc;
    trainer.state.ratio_ema = blob.ratio_ema;
    trainer.state.data_rng = blob.data_rng;
    trainer.state.dropout_rng = blob.dropout_rng;
    trainer.lambda_speakers = blob.lambda_speakers;
    trainer.max_attention_err = blob.max_attention_err;
    trainer.single_class_steps = blob.single_class_steps;
    Ok(trainer)
}
