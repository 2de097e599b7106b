//! Objective metrics: mel-cepstral distortion with and without time
//! warping, and small mel classifiers that score emotion and speaker
//! identity of generated speech.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Graph, Mat, ParamStore};
use crate::data::DubbingSample;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Linear};
use crate::training::{model_input, LossReport, Synthesizer};

/// Cepstral coefficients kept per frame (c0 is dropped).
pub const N_CEPSTRA: usize = 13;

/// `(10 / ln 10) · √2`, the usual dB scaling of the cepstral distance.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;

/// Log-mel frames (dB) → cepstra `T × 13`: natural-log amplitude, then an
/// orthonormal DCT-II over the mel axis, keeping coefficients 1..=13.
pub fn to_cepstra(mel_db: &Mat) -> Result<Mat> {
    let n = mel_db.ncols();
    if n <= N_CEPSTRA {
        return Err(Error::shape(format!("need more than {N_CEPSTRA} mel bins, got {n}")));
    }
    let to_ln = std::f64::consts::LN_10 / 20.0;
    let scale = (2.0 / n as f64).sqrt();
    let basis = Array2::from_shape_fn((n, N_CEPSTRA), |(m, k)| {
        let k = (k + 1) as f64;
        scale * (std::f64::consts::PI * k * (m as f64 + 0.5) / n as f64).cos()
    });
    Ok(mel_db.mapv(|d| d * to_ln).dot(&basis))
}

fn frame_cost(a: &Mat, b: &Mat, i: usize, j: usize) -> f64 {
    let d: f64 = a
        .row(i)
        .iter()
        .zip(b.row(j))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    MCD_SCALE * d.sqrt()
}

fn check_pair(a: &Mat, b: &Mat) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyInput("cepstral sequence has no frames".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "cepstra widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Frame-aligned distortion; lengths must match (use [`mcd_dtw`] otherwise).
pub fn mcd(a: &Mat, b: &Mat) -> Result<f64> {
    check_pair(a, b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::shape(format!(
            "mcd needs equal lengths ({} vs {}); use mcd_dtw",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok((0..a.nrows()).map(|t| frame_cost(a, b, t, t)).sum::<f64>() / a.nrows() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtwAlignment {
    /// Mean frame cost along the minimum-total-cost path.
    pub mean_cost: f64,
    pub total_cost: f64,
    /// Monotone path from `(0, 0)` to `(T_a − 1, T_b − 1)`.
    pub path: Vec<(usize, usize)>,
}

/// Dynamic time warping with steps (1,1), (1,0), (0,1). The path minimizes
/// the summed frame cost; the reported distortion is that sum divided by the
/// path length.
pub fn mcd_dtw(a: &Mat, b: &Mat) -> Result<DtwAlignment> {
    check_pair(a, b)?;
    let (n, m) = (a.nrows(), b.nrows());
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let c = frame_cost(a, b, i, j);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = prev + c;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[[i - 1, j - 1]];
            let up = acc[[i - 1, j]];
            let left = acc[[i, j - 1]];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    let total_cost = acc[[n - 1, m - 1]];
    Ok(DtwAlignment {
        mean_cost: total_cost / path.len() as f64,
        total_cost,
        path,
    })
}

/// Length-mismatch coefficient: `max(T_a, T_b) / min(T_a, T_b)`.
pub fn length_ratio(t_a: usize, t_b: usize) -> f64 {
    t_a.max(t_b) as f64 / t_a.min(t_b) as f64
}

/// [`mcd_dtw`] scaled by [`length_ratio`].
pub fn mcd_dtw_sl(a: &Mat, b: &Mat) -> Result<f64> {
    mcd_dtw_sl_with(a, b, length_ratio)
}

/// [`mcd_dtw`] scaled by a caller-supplied length coefficient.
pub fn mcd_dtw_sl_with(a: &Mat, b: &Mat, coefficient: impl Fn(usize, usize) -> f64) -> Result<f64> {
    Ok(mcd_dtw(a, b)?.mean_cost * coefficient(a.nrows(), b.nrows()))
}

/// Per-clip metrics between a generated and a reference mel (both dB).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    /// Only defined when the two clips have the same length.
    pub mcd: Option<f64>,
    pub mcd_dtw: f64,
    pub mcd_dtw_sl: f64,
    pub gen_frames: usize,
    pub ref_frames: usize,
    pub path_len: usize,
    /// The synthesizer's own emotion head, when it has one.
    pub emotion_head_correct: Option<bool>,
    /// Mel classifiers trained on ground-truth speech.
    pub emotion_correct: Option<bool>,
    pub speaker_correct: Option<bool>,
}

impl MetricReport {
    pub fn compute(id: &str, generated: &Mat, reference: &Mat) -> Result<Self> {
        let (g, r) = (to_cepstra(generated)?, to_cepstra(reference)?);
        let dtw = mcd_dtw(&g, &r)?;
        Ok(Self {
            id: id.to_string(),
            mcd: (g.nrows() == r.nrows()).then(|| mcd(&g, &r)).transpose()?,
            mcd_dtw: dtw.mean_cost,
            mcd_dtw_sl: dtw.mean_cost * length_ratio(g.nrows(), r.nrows()),
            gen_frames: g.nrows(),
            ref_frames: r.nrows(),
            path_len: dtw.path.len(),
            emotion_head_correct: None,
            emotion_correct: None,
            speaker_correct: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mcd.is_none_or(f64::is_finite) && self.mcd_dtw.is_finite() && self.mcd_dtw_sl.is_finite()
    }
}

/// Means over a set of [`MetricReport`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub clips: usize,
    pub mcd: Option<f64>,
    pub mcd_dtw: f64,
    pub mcd_dtw_sl: f64,
    pub emotion_head_accuracy: Option<f64>,
    pub emotion_accuracy: Option<f64>,
    pub speaker_accuracy: Option<f64>,
}

impl MetricSummary {
    pub fn from_reports(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyInput("no clips to summarize".into()));
        }
        let n = reports.len() as f64;
        let mcds: Option<Vec<f64>> = reports.iter().map(|r| r.mcd).collect();
        let rate = |f: fn(&MetricReport) -> Option<bool>| {
            let v: Option<Vec<bool>> = reports.iter().map(f).collect();
            v.map(|v| v.iter().filter(|&&c| c).count() as f64 / v.len() as f64)
        };
        Ok(Self {
            clips: reports.len(),
            mcd: mcds.map(|v| v.iter().sum::<f64>() / n),
            mcd_dtw: reports.iter().map(|r| r.mcd_dtw).sum::<f64>() / n,
            mcd_dtw_sl: reports.iter().map(|r| r.mcd_dtw_sl).sum::<f64>() / n,
            emotion_head_accuracy: rate(|r| r.emotion_head_correct),
            emotion_accuracy: rate(|r| r.emotion_correct),
            speaker_accuracy: rate(|r| r.speaker_correct),
        })
    }

    pub fn is_finite(&self) -> bool {
        [
            self.mcd,
            Some(self.mcd_dtw),
            Some(self.mcd_dtw_sl),
            self.emotion_head_accuracy,
            self.emotion_accuracy,
            self.speaker_accuracy,
        ]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Held-out scores of one trained variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub clips: usize,
    /// Teacher-length losses in normalized target space.
    pub losses: LossReport,
    /// `pitch + energy` loss, the prosody pathway's score.
    pub prosody_loss: f64,
    /// `None` when the variant has no emotion head.
    pub emotion_accuracy: Option<f64>,
    /// At the model's own output length.
    pub mcd_dtw: f64,
}

impl VariantReport {
    pub fn emotion_display(&self) -> String {
        self.emotion_accuracy
            .map_or_else(|| "N/A".to_string(), |a| format!("{a:.4}"))
    }
}

/// Scores `synth` on `samples`: losses, emotion-head accuracy, and MCD-DTW
/// of free-running (non-teacher-length) synthesis.
pub fn evaluate_variant(name: &str, synth: &Synthesizer, samples: &[&DubbingSample]) -> Result<VariantReport> {
    let losses = synth.evaluate(samples)?;
    let mut dtw = 0.0;
    for s in samples {
        let out = synth.synthesize(model_input(s), None)?;
        dtw += mcd_dtw(&to_cepstra(&out.mel)?, &to_cepstra(&s.mel)?)?.mean_cost;
    }
    Ok(VariantReport {
        name: name.to_string(),
        clips: samples.len(),
        prosody_loss: losses.prosody(),
        losses,
        emotion_accuracy: synth.emotion_accuracy(samples)?,
        mcd_dtw: dtw / samples.len() as f64,
    })
}

/// Mean MCD-DTW between teacher-length synthesis and the reference mels.
pub fn teacher_mcd_dtw(synth: &Synthesizer, samples: &[&DubbingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to score".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let out = synth.synthesize(model_input(s), Some(s.mel_len()))?;
        total += mcd_dtw(&to_cepstra(&out.mel)?, &to_cepstra(&s.mel)?)?.mean_cost;
    }
    Ok(total / samples.len() as f64)
}

/// Two conv layers over mel frames, max-pooled over time, then a linear head.
#[derive(Clone, Debug)]
pub struct MelClassifier {
    pub store: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    head: Linear,
    pub n_mels: usize,
    pub classes: usize,
    pub channels: usize,
}

const CLASSIFIER_MAGIC: &[u8; 8] = b"HPMCLS01";
const CLASSIFIER_KERNEL: usize = 5;

impl MelClassifier {
    pub fn new(n_mels: usize, classes: usize, channels: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv1d::new(&mut store, &mut rng, "cls.conv1", n_mels, channels, CLASSIFIER_KERNEL);
        let conv2 = Conv1d::new(&mut store, &mut rng, "cls.conv2", channels, channels, CLASSIFIER_KERNEL);
        let head = Linear::new(&mut store, &mut rng, "cls.head", channels, classes);
        Self {
            store,
            conv1,
            conv2,
            head,
            n_mels,
            classes,
            channels,
        }
    }

    /// dB frames are shifted and scaled to roughly unit range.
    fn input(mel_db: &Mat) -> Mat {
        mel_db.mapv(|d| (d + 40.0) / 20.0)
    }

    fn logits(&self, g: &mut Graph, mel_db: &Mat) -> Result<crate::autograd::Var> {
        if mel_db.ncols() != self.n_mels {
            return Err(Error::shape(format!(
                "classifier expects {} mel bins, got {}",
                self.n_mels,
                mel_db.ncols()
            )));
        }
        if mel_db.nrows() == 0 {
            return Err(Error::EmptyInput("mel has no frames".into()));
        }
        let x = g.constant(Self::input(mel_db));
        let h = self.conv1.forward(g, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, h);
        let h = g.relu(h);
        let pooled = g.max_rows(h);
        Ok(self.head.forward(g, pooled))
    }

    pub fn predict(&self, mel_db: &Mat) -> Result<usize> {
        let mut g = Graph::new(&self.store);
        let l = self.logits(&mut g, mel_db)?;
        let row = g.value(l).row(0).to_vec();
        Ok(row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0)
    }

    /// Adam on cross entropy, one sample per step, shuffled epochs.
    pub fn fit(&mut self, data: &[(&Mat, usize)], epochs: usize, lr: f64, seed: u64) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("no classifier training data".into()));
        }
        if let Some(&(_, label)) = data.iter().find(|(_, l)| *l >= self.classes) {
            return Err(Error::InvalidLabel {
                label,
                classes: self.classes,
            });
        }
        let mut adam = Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &self.store,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (mel, label) = data[i];
                let grads = {
                    let mut g = Graph::new(&self.store);
                    let l = self.logits(&mut g, mel)?;
                    let lp = g.log_softmax_rows(l);
                    let p = g.pick(lp, 0, label);
                    let loss = g.scale(p, -1.0);
                    g.backward(loss).into_params()
                };
                adam.update(&mut self.store, &grads);
            }
        }
        self.accuracy(data)
    }

    pub fn accuracy(&self, data: &[(&Mat, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput("no clips to score".into()));
        }
        let mut correct = 0;
        for &(mel, label) in data {
            if self.predict(mel)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = CLASSIFIER_MAGIC.to_vec();
        for v in [self.n_mels, self.classes, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (_, p) in self.store.iter() {
            for &v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingModel(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        if bytes.len() < 20 || &bytes[..8] != CLASSIFIER_MAGIC {
            return Err(Error::format(path, "not a classifier file"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let mut cls = Self::new(word(0), word(1), word(2), 0);
        let mut values = bytes[20..].chunks_exact(8);
        let expected: usize = cls.store.num_scalars();
        if bytes.len() - 20 != expected * 8 {
            return Err(Error::format(path, "parameter block has the wrong size"));
        }
        let ids: Vec<_> = cls.store.ids().collect();
        for id in ids {
            for v in cls.store.value_mut(id).iter_mut() {
                *v = f64::from_le_bytes(values.next().expect("size checked").try_into().expect("8 bytes"));
            }
        }
        Ok(cls)
    }
}
