//! Losses, target normalization, the optimization loop and checkpoints.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MelStandardizer, Standardizer};
use crate::autograd::{clip_global_norm, Adam, AdamConfig, GradAccumulator, Graph, Mat, Var};
use crate::booster::EmotionPrediction;
use crate::config::Config;
use crate::data::DubbingSample;
use crate::error::{Error, Result};
use crate::model::{DubbingModel, ModelInput, SpeakerRef};

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: prediction has {a} entries, target {b}")));
    }
    Ok(())
}

/// Mean squared error over frames.
pub fn loss_pitch(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len(), "pitch loss")?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("pitch loss over zero frames".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Same contract as [`loss_pitch`].
pub fn loss_energy(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len(), "energy loss")?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("energy loss over zero frames".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Cross entropy against a one-hot label: `-ln p[label]`.
pub fn loss_emotion(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidLabel {
            label,
            classes: probs.len(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation("not a probability vector".into()));
    }
    Ok(-probs[label].ln())
}

/// Per-frame L1 norm of the difference, averaged over frames.
pub fn loss_mel(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!(
            "mel loss: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() == 0 {
        return Err(Error::EmptyInput("mel loss over zero frames".into()));
    }
    Ok((pred - target).mapv(f64::abs).sum() / pred.nrows() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambdas {
    pub mel: f64,
    pub pitch: f64,
    pub energy: f64,
    pub emo: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            mel: 1.0,
            pitch: 1.0,
            energy: 1.0,
            emo: 1.0,
        }
    }
}

impl Lambdas {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            mel: cfg.lambda_mel,
            pitch: cfg.lambda_pitch,
            energy: cfg.lambda_energy,
            emo: cfg.lambda_emo,
        }
    }
}

/// The four loss terms, their weighted total, and the step they belong to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mel: f64,
    pub pitch: f64,
    pub energy: f64,
    pub emo: f64,
    pub total: f64,
    pub step: usize,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.mel, self.pitch, self.energy, self.emo, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn prosody(&self) -> f64 {
        self.pitch + self.energy
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {:>5}  total {:.5}  mel {:.5}  pitch {:.5}  energy {:.5}  emo {:.5}",
            self.step, self.total, self.mel, self.pitch, self.energy, self.emo
        )
    }
}

/// `λ₁·mel + λ₂·pitch + λ₃·energy + λ₄·emo`, summed left to right.
pub fn total_loss(mel: f64, pitch: f64, energy: f64, emo: f64, l: Lambdas, step: usize) -> LossReport {
    LossReport {
        mel,
        pitch,
        energy,
        emo,
        total: l.mel * mel + l.pitch * pitch + l.energy * energy + l.emo * emo,
        step,
    }
}

/// Training-set statistics used to normalize every target.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub pitch: Standardizer,
    pub energy: Standardizer,
    pub mel: MelStandardizer,
}

impl NormStats {
    /// Pitch statistics use voiced frames only; energy and mel use all frames.
    pub fn fit(samples: &[&DubbingSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("cannot fit statistics on an empty set".into()));
        }
        let voiced: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.pitch.iter().zip(&s.voiced).filter(|(_, &v)| v).map(|(&p, _)| p))
            .collect();
        let pitch = if voiced.is_empty() {
            Standardizer::fit(samples.iter().flat_map(|s| s.pitch.iter().copied()))
        } else {
            Standardizer::fit(voiced)
        };
        Ok(Self {
            pitch,
            energy: Standardizer::fit(samples.iter().flat_map(|s| s.energy.iter().copied())),
            mel: MelStandardizer::fit(samples.iter().map(|s| &s.mel)),
        })
    }
}

/// Normalized targets for one sample.
#[derive(Clone, Debug)]
pub struct Targets {
    pub mel: Mat,
    pub pitch: Mat,
    pub energy: Mat,
}

impl Targets {
    pub fn new(sample: &DubbingSample, stats: &NormStats) -> Self {
        let col = |v: &[f64], s: &Standardizer| {
            Array2::from_shape_fn((v.len(), 1), |(i, _)| s.normalize(v[i]))
        };
        Self {
            mel: stats.mel.normalize(&sample.mel),
            pitch: col(&sample.pitch, &stats.pitch),
            energy: col(&sample.energy, &stats.energy),
        }
    }
}

pub fn model_input(sample: &DubbingSample) -> ModelInput<'_> {
    ModelInput {
        phonemes: &sample.phonemes,
        video: &sample.video,
        speaker: match &sample.speaker_vector {
            Some(v) => SpeakerRef::Vector(v),
            None => SpeakerRef::Id(sample.speaker_id),
        },
    }
}

/// Graph handles of the four loss terms and their weighted total.
pub struct LossVars {
    pub mel: Var,
    pub pitch: Var,
    pub energy: Var,
    pub emo: Option<Var>,
    pub total: Var,
}

fn mse(g: &mut Graph, pred: Var, target: &Mat) -> Var {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t);
    let sq = g.square(d);
    g.mean(sq)
}

fn frame_l1(g: &mut Graph, pred: Var, target: &Mat) -> Var {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t);
    let a = g.abs(d);
    let s = g.sum(a);
    g.scale(s, 1.0 / target.nrows() as f64)
}

/// Builds the full training objective for one sample with teacher length.
pub fn sample_loss(
    model: &DubbingModel,
    g: &mut Graph,
    sample: &DubbingSample,
    targets: &Targets,
    lambdas: Lambdas,
) -> Result<LossVars> {
    let out = model.forward(g, model_input(sample), Some(sample.mel_len()))?;
    let mut mel = frame_l1(g, out.mel_after, &targets.mel);
    if model.config.pre_postnet_mel_loss {
        let before = frame_l1(g, out.mel_before, &targets.mel);
        mel = g.add(mel, before);
    }
    let pitch = mse(g, out.pitch, &targets.pitch);
    let energy = mse(g, out.energy, &targets.energy);
    let emo = match out.emotion_logits {
        Some(logits) => {
            if sample.emotion >= g.cols(logits) {
                return Err(Error::InvalidLabel {
                    label: sample.emotion,
                    classes: g.cols(logits),
                });
            }
            let lp = g.log_softmax_rows(logits);
            let p = g.pick(lp, 0, sample.emotion);
            Some(g.scale(p, -1.0))
        }
        None => None,
    };
    let mut total = g.scale(mel, lambdas.mel);
    let wp = g.scale(pitch, lambdas.pitch);
    total = g.add(total, wp);
    let we = g.scale(energy, lambdas.energy);
    total = g.add(total, we);
    if let Some(e) = emo {
        let we = g.scale(e, lambdas.emo);
        total = g.add(total, we);
    }
    Ok(LossVars {
        mel,
        pitch,
        energy,
        emo,
        total,
    })
}

fn report(g: &Graph, l: &LossVars, lambdas: Lambdas, step: usize) -> LossReport {
    total_loss(
        g.scalar(l.mel),
        g.scalar(l.pitch),
        g.scalar(l.energy),
        l.emo.map_or(0.0, |e| g.scalar(e)),
        lambdas,
        step,
    )
}

fn mean_report(reports: &[LossReport], lambdas: Lambdas, step: usize) -> LossReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    total_loss(
        avg(|r| r.mel),
        avg(|r| r.pitch),
        avg(|r| r.energy),
        avg(|r| r.emo),
        lambdas,
        step,
    )
}

/// A trained model together with the statistics its outputs are expressed in.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub model: DubbingModel,
    pub stats: NormStats,
}

/// Denormalized outputs for one clip.
#[derive(Clone, Debug)]
pub struct Synthesis {
    /// `T_y × n_mels`, dB.
    pub mel: Mat,
    pub log_f0: Vec<f64>,
    pub energy: Vec<f64>,
    pub emotion: Option<EmotionPrediction>,
}

impl Synthesizer {
    pub fn synthesize(&self, input: ModelInput<'_>, target_len: Option<usize>) -> Result<Synthesis> {
        let out = self.model.infer(input, target_len)?;
        Ok(Synthesis {
            mel: self.stats.mel.denormalize(&out.mel_after),
            log_f0: out.pitch.iter().map(|&p| self.stats.pitch.denormalize(p)).collect(),
            energy: out.energy.iter().map(|&e| self.stats.energy.denormalize(e)).collect(),
            emotion: out.emotion,
        })
    }

    /// Eval-mode losses averaged over `samples`, with teacher lengths.
    pub fn evaluate(&self, samples: &[&DubbingSample]) -> Result<LossReport> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no samples to evaluate".into()));
        }
        let lambdas = Lambdas::from_config(&self.model.config);
        let mut reports = Vec::with_capacity(samples.len());
        for s in samples {
            let targets = Targets::new(s, &self.stats);
            let mut g = Graph::new(&self.model.store);
            let l = sample_loss(&self.model, &mut g, s, &targets, lambdas)?;
            reports.push(report(&g, &l, lambdas, 0));
        }
        Ok(mean_report(&reports, lambdas, 0))
    }

    /// Top-1 accuracy of the model's own emotion head; `None` when the
    /// booster (and with it the head) is disabled.
    pub fn emotion_accuracy(&self, samples: &[&DubbingSample]) -> Result<Option<f64>> {
        if !self.model.config.booster_enabled {
            return Ok(None);
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("no samples to score".into()));
        }
        let mut correct = 0;
        for s in samples {
            let out = self.model.infer(model_input(s), Some(s.mel_len()))?;
            if out.emotion.map(|e| e.argmax()) == Some(s.emotion) {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / samples.len() as f64))
    }
}

/// Owns the model, optimizer and data order for one training run.
pub struct Trainer<'d> {
    pub synth: Synthesizer,
    pub adam: Adam,
    pub step: usize,
    lambdas: Lambdas,
    samples: Vec<&'d DubbingSample>,
    targets: Vec<Targets>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'d> Trainer<'d> {
    pub fn new(config: &Config, samples: Vec<&'d DubbingSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("training set is empty".into()));
        }
        config.validate()?;
        let model = DubbingModel::new(config, config.seed)?;
        let stats = NormStats::fit(&samples)?;
        let targets = samples.iter().map(|s| Targets::new(s, &stats)).collect();
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
            },
            &model.store,
        );
        Ok(Self {
            synth: Synthesizer { model, stats },
            adam,
            step: 0,
            lambdas: Lambdas::from_config(config),
            order: (0..samples.len()).collect(),
            samples,
            targets,
            cursor: usize::MAX,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xDA7A),
        })
    }

    pub fn model(&self) -> &DubbingModel {
        &self.synth.model
    }

    /// Next `batch_size` sample indices from a reshuffled cyclic order.
    fn next_batch(&mut self) -> Vec<usize> {
        let b = self.synth.model.config.batch_size;
        let mut batch = Vec::with_capacity(b);
        while batch.len() < b {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step over a batch: per-sample graphs, averaged
    /// gradients, global-norm clipping, Adam.
    pub fn train_step(&mut self) -> Result<LossReport> {
        self.step += 1;
        let batch = self.next_batch();
        let model = &self.synth.model;
        let mut acc = GradAccumulator::new(model.store.len());
        let mut reports = Vec::with_capacity(batch.len());
        let weight = 1.0 / batch.len() as f64;
        for (slot, &i) in batch.iter().enumerate() {
            let seed = model.config.seed ^ ((self.step as u64) << 20) ^ slot as u64;
            let mut g = Graph::training(&model.store, seed);
            let l = sample_loss(model, &mut g, self.samples[i], &self.targets[i], self.lambdas)?;
            let r = report(&g, &l, self.lambdas, self.step);
            if !r.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    report: format!("sample {}: {r}", self.samples[i].id),
                });
            }
            reports.push(r);
            acc.add(g.backward(l.total).into_params(), weight);
        }
        let norm = clip_global_norm(acc.grads_mut(), model.config.grad_clip);
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                report: format!("gradient norm {norm}"),
            });
        }
        self.adam.update(&mut self.synth.model.store, acc.grads());
        Ok(mean_report(&reports, self.lambdas, self.step))
    }

    /// Runs `steps` optimizer steps, calling `on_step` after each.
    pub fn run(&mut self, steps: usize, mut on_step: impl FnMut(&Self, &LossReport)) -> Result<Vec<LossReport>> {
        let mut history = Vec::with_capacity(steps);
        for _ in 0..steps {
            let r = self.train_step()?;
            on_step(self, &r);
            history.push(r);
        }
        Ok(history)
    }

    pub fn checkpoint(&self) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint {
            synth: self.synth.clone(),
            adam: Some(self.adam.clone()),
            step: self.step,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }
}

/// Trains from scratch on `samples` for `config.steps` steps.
pub fn train(
    config: &Config,
    samples: Vec<&DubbingSample>,
    on_step: impl FnMut(&Trainer<'_>, &LossReport),
) -> Result<(Synthesizer, Vec<LossReport>)> {
    let mut trainer = Trainer::new(config, samples)?;
    let history = trainer.run(config.steps, on_step)?;
    Ok((trainer.synth, history))
}
