//! Lip-to-phoneme cross attention and expansion to mel-frame rate.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, ParamStore, Var};
use crate::config::{Config, Expansion};
use crate::error::{Error, Result};
use crate::nn::{ConvTranspose1d, MultiHeadAttention};

/// Mel frames per video frame: `r = (sr / hop) / fps`, `n = round(r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRatio {
    pub r: f64,
    pub n: usize,
    pub sample_rate: f64,
    pub hop: usize,
    pub fps: f64,
}

pub fn frame_ratio(sample_rate: f64, hop: usize, fps: f64) -> Result<FrameRatio> {
    if !(sample_rate > 0.0) || hop == 0 || !(fps > 0.0) {
        return Err(Error::config(format!(
            "frame ratio needs positive sr, hop and fps (got {sample_rate}, {hop}, {fps})"
        )));
    }
    let r = sample_rate / hop as f64 / fps;
    Ok(FrameRatio {
        r,
        n: (r.round() as usize).max(1),
        sample_rate,
        hop,
        fps,
    })
}

impl FrameRatio {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        frame_ratio(cfg.sample_rate as f64, cfg.hop, cfg.fps)
    }

    /// A ratio given directly, as when only `r` is known.
    pub fn from_r(r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::config("frame ratio must be positive"));
        }
        Ok(Self {
            r,
            n: (r.round() as usize).max(1),
            sample_rate: r,
            hop: 1,
            fps: 1.0,
        })
    }

    /// Inference mel length for `t_v` video frames: `round(r · T_v)`.
    pub fn mel_len(&self, t_v: usize) -> usize {
        ((self.r * t_v as f64).round() as usize).max(1)
    }

    /// Video frame shown during mel frame `i`.
    pub fn video_index(&self, i: usize, t_v: usize) -> usize {
        ((i as f64 / self.r).floor() as usize).min(t_v.saturating_sub(1))
    }

    /// Nearest-frame lookup table mapping `t_y` mel frames onto `t_v` video frames.
    pub fn upsample_index(&self, t_y: usize, t_v: usize) -> Vec<Option<usize>> {
        (0..t_y).map(|i| Some(self.video_index(i, t_v))).collect()
    }
}

/// Trims the tail or zero-pads at the tail to exactly `len` rows.
pub fn fit_length(g: &mut Graph, x: Var, len: usize) -> Var {
    let t = g.rows(x);
    if t == len {
        return x;
    }
    let rows: Vec<Option<usize>> = (0..len).map(|i| (i < t).then_some(i)).collect();
    g.gather_rows(x, &rows)
}

/// Nearest-neighbour resampling of `rows` to `len` rows.
pub fn nearest_resample(g: &mut Graph, x: Var, len: usize) -> Var {
    let t = g.rows(x);
    let rows: Vec<Option<usize>> = (0..len).map(|i| Some(i * t / len)).collect();
    g.gather_rows(x, &rows)
}

/// Repeats each row `n` times (the parameter-free expansion baseline).
pub fn expand_duplicate(g: &mut Graph, fused: Var, n: usize) -> Var {
    let t = g.rows(fused);
    let rows: Vec<Option<usize>> = (0..t * n).map(|i| Some(i / n)).collect();
    g.gather_rows(fused, &rows)
}

pub struct AlignmentResult {
    /// `T_v × dim`.
    pub fused: Mat,
    /// One `T_v × L` matrix per head.
    pub attention_weights: Vec<Mat>,
    /// `T_y × dim`.
    pub expanded: Mat,
    pub mel_len: usize,
}

/// Graph handles produced by [`DurationAligner::forward`].
pub struct Aligned {
    pub fused: Var,
    pub weights: Vec<Var>,
    pub expanded: Var,
}

#[derive(Clone, Debug)]
pub struct DurationAligner {
    pub attention: MultiHeadAttention,
    pub upsample: ConvTranspose1d,
    pub expansion: Expansion,
}

impl DurationAligner {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, rng, "aligner.attn", cfg.dim, cfg.aligner_heads),
            upsample: ConvTranspose1d::new(
                store,
                rng,
                "aligner.upsample",
                cfg.dim,
                cfg.dim,
                cfg.aligner_kernel,
                cfg.aligner_stride,
            ),
            expansion: cfg.expansion,
        }
    }

    /// Lips query phonemes: returns the fused `T_v × dim` sequence and per-head weights.
    pub fn align(
        &self,
        g: &mut Graph,
        lips: Var,
        phonemes: Var,
        phoneme_mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let dim = self.attention.dim;
        if g.cols(lips) != dim || g.cols(phonemes) != dim {
            return Err(Error::shape(format!(
                "aligner expects width {dim}, got lips {} and phonemes {}",
                g.cols(lips),
                g.cols(phonemes)
            )));
        }
        if phoneme_mask.len() != g.rows(phonemes) {
            return Err(Error::shape("phoneme mask length differs from sequence"));
        }
        let att = self.attention.forward(g, lips, phonemes, Some(phoneme_mask));
        Ok((att.output, att.weights))
    }

    /// Learned expansion to `target_len` rows (or `round(r · T_v)` when absent).
    ///
    /// The `T_v` rows are first resampled to `ceil(T_y / stride)` rows so the
    /// transposed convolution's fixed stretch lands just past `T_y` for any
    /// ratio; the surplus tail is then trimmed.
    pub fn expand(
        &self,
        g: &mut Graph,
        fused: Var,
        ratio: &FrameRatio,
        target_len: Option<usize>,
    ) -> Result<Var> {
        let t_v = g.rows(fused);
        if t_v == 0 {
            return Err(Error::EmptyInput("nothing to expand".into()));
        }
        let t_y = match target_len {
            Some(0) => return Err(Error::config("target length must be positive")),
            Some(n) => n,
            None => ratio.mel_len(t_v),
        };
        match self.expansion {
            Expansion::Duplicate => {
                let dup = expand_duplicate(g, fused, ratio.n);
                Ok(fit_length(g, dup, t_y))
            }
            Expansion::ConvTranspose => {
                let stride = self.upsample.stride;
                let m = t_y.div_ceil(stride).max(1);
                let x = nearest_resample(g, fused, m);
                let y = self.upsample.forward(g, x);
                Ok(fit_length(g, y, t_y))
            }
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        lips: Var,
        phonemes: Var,
        phoneme_mask: &[bool],
        ratio: &FrameRatio,
        target_len: Option<usize>,
    ) -> Result<Aligned> {
        let (fused, weights) = self.align(g, lips, phonemes, phoneme_mask)?;
        let expanded = self.expand(g, fused, ratio, target_len)?;
        Ok(Aligned {
            fused,
            weights,
            expanded,
        })
    }

    /// Eval-mode convenience wrapper returning plain matrices.
    pub fn run(
        &self,
        store: &ParamStore,
        lips: &Mat,
        phonemes: &Mat,
        phoneme_mask: &[bool],
        ratio: &FrameRatio,
        target_len: Option<usize>,
    ) -> Result<AlignmentResult> {
        let mut g = Graph::new(store);
        let l = g.constant(lips.clone());
        let p = g.constant(phonemes.clone());
        let out = self.forward(&mut g, l, p, phoneme_mask, ratio, target_len)?;
        Ok(AlignmentResult {
            fused: g.value(out.fused).clone(),
            attention_weights: out.weights.iter().map(|&w| g.value(w).clone()).collect(),
            mel_len: g.rows(out.expanded),
            expanded: g.value(out.expanded).clone(),
        })
    }
}
