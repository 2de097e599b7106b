//! Analysis front-end: STFT, mel filterbank, autocorrelation pitch tracking
//! and frame energy. Produces the mel / pitch / energy targets the model is
//! trained against, all on the same `hop`-spaced frame grid.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Error, Result};

pub const LOG_FLOOR_DB: f64 = -80.0;
pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 800.0;
const VOICING_THRESHOLD: f64 = 0.6;
const SILENCE_RMS: f64 = 1e-4;

/// Log-mel magnitudes in dB (`20·log10`, floored at [`LOG_FLOOR_DB`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    #[serde(skip)]
    pub frames: Mat,
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelSpectrogram {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.n_fft < 2 {
            return Err(Error::config("mel metadata: sr, hop and n_fft must be positive"));
        }
        if !(self.fmax > self.fmin) || self.fmin < 0.0 || self.fmax > self.sample_rate as f64 / 2.0 + 1e-9 {
            return Err(Error::config("mel metadata: need 0 <= fmin < fmax <= sr/2"));
        }
        if self.frames.nrows() == 0 || self.frames.ncols() == 0 {
            return Err(Error::config("mel has no frames"));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("mel has non-finite entries"));
        }
        Ok(())
    }
}

/// Frame-level pitch and energy aligned to mel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ProsodyContours {
    /// Natural-log F0, linearly interpolated across unvoiced frames.
    pub pitch: Vec<f64>,
    /// L2 norm of each magnitude-spectrum frame.
    pub energy: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl ProsodyContours {
    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl AnalysisConfig {
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        Self {
            sample_rate,
            hop,
            n_fft: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
        }
    }

    pub fn from_config(cfg: &crate::config::Config) -> Self {
        Self {
            sample_rate: cfg.sample_rate,
            hop: cfg.hop,
            n_fft: cfg.n_fft,
            n_mels: cfg.n_mels,
            fmin: cfg.fmin,
            fmax: cfg.effective_fmax(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels × (n_fft/2 + 1)`, unit peak height.
pub fn mel_filterbank(cfg: &AnalysisConfig) -> Mat {
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let up = (f - l) / (c - l);
        let down = (r - f) / (r - c);
        up.min(down).max(0.0)
    })
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of analysis frames for a signal: frame `t` is centred on sample `t·hop`.
pub fn frame_count(len: usize, hop: usize) -> usize {
    (len / hop).max(1)
}

/// Windowed frame centred on `t·hop`, reflect-padded at the signal edges.
fn frame_at(samples: &[f64], t: usize, hop: usize, window: &[f64]) -> Vec<f64> {
    let n = window.len();
    let len = samples.len() as isize;
    let start = (t * hop) as isize - (n / 2) as isize;
    (0..n)
        .map(|i| {
            let mut j = start + i as isize;
            if len > 1 {
                let period = 2 * (len - 1);
                j = j.rem_euclid(period);
                if j >= len {
                    j = period - j;
                }
            } else {
                j = 0;
            }
            samples.get(j as usize).map_or(0.0, |x| x * window[i])
        })
        .collect()
}

pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Complex spectra, `frames × (n_fft/2 + 1)`.
    pub fn forward(&self, samples: &[f64]) -> Array2<Complex<f64>> {
        let frames = frame_count(samples.len(), self.hop);
        let bins = self.n_fft / 2 + 1;
        let mut out = Array2::from_elem((frames, bins), Complex::new(0.0, 0.0));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let frame = frame_at(samples, t, self.hop, &self.window);
            for (b, x) in buf.iter_mut().zip(frame) {
                *b = Complex::new(x, 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[[t, k]] = buf[k];
            }
        }
        out
    }

    pub fn magnitude(&self, samples: &[f64]) -> Mat {
        self.forward(samples).mapv(|c| c.norm())
    }

    /// Weighted overlap-add inverse of [`Stft::forward`], `len` samples long.
    pub fn inverse(&self, spectra: &Array2<Complex<f64>>, len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let bins = n / 2 + 1;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for t in 0..spectra.nrows() {
            for k in 0..bins {
                buf[k] = spectra[[t, k]];
            }
            for k in bins..n {
                buf[k] = spectra[[t, n - k]].conj();
            }
            self.inverse.process(&mut buf);
            let start = (t * self.hop) as isize - (n / 2) as isize;
            for i in 0..n {
                let j = start + i as isize;
                if j >= 0 && (j as usize) < len {
                    let w = self.window[i];
                    out[j as usize] += buf[i].re / n as f64 * w;
                    norm[j as usize] += w * w;
                }
            }
        }
        for (o, w) in out.iter_mut().zip(norm) {
            if w > 1e-8 {
                *o /= w;
            }
        }
        out
    }
}

/// Linear magnitude spectrogram → dB log-mel frames.
pub fn mel_from_magnitude(magnitude: &Mat, filterbank: &Mat) -> Mat {
    let floor = 10f64.powf(LOG_FLOOR_DB / 20.0);
    magnitude
        .dot(&filterbank.t())
        .mapv(|m| 20.0 * m.max(floor).log10())
}

pub fn mel_spectrogram(samples: &[f64], cfg: &AnalysisConfig) -> MelSpectrogram {
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let magnitude = stft.magnitude(samples);
    MelSpectrogram {
        frames: mel_from_magnitude(&magnitude, &mel_filterbank(cfg)),
        sample_rate: cfg.sample_rate,
        hop: cfg.hop,
        n_fft: cfg.n_fft,
        fmin: cfg.fmin,
        fmax: cfg.fmax,
    }
}

/// Per-frame F0 in Hz (`None` when unvoiced) from the normalized
/// autocorrelation of a `window`-sample frame centred on each hop.
pub fn track_f0(samples: &[f64], sample_rate: u32, hop: usize, window: usize) -> Vec<Option<f64>> {
    let sr = sample_rate as f64;
    let min_lag = (sr / F0_MAX).floor().max(2.0) as usize;
    let max_lag = ((sr / F0_MIN).ceil() as usize).min(window / 2);
    let rect = vec![1.0; window];
    (0..frame_count(samples.len(), hop))
        .map(|t| {
            let frame = frame_at(samples, t, hop, &rect);
            let rms = (frame.iter().map(|x| x * x).sum::<f64>() / window as f64).sqrt();
            if rms < SILENCE_RMS || min_lag >= max_lag {
                return None;
            }
            let nccf: Vec<f64> = (0..=max_lag + 1)
                .map(|lag| normalized_autocorrelation(&frame, lag))
                .collect();
            pick_period(&nccf, min_lag, max_lag).map(|lag| sr / lag)
        })
        .collect()
}

fn normalized_autocorrelation(frame: &[f64], lag: usize) -> f64 {
    let n = frame.len() - lag;
    let (a, b) = (&frame[..n], &frame[lag..]);
    let cross: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let ea: f64 = a.iter().map(|x| x * x).sum();
    let eb: f64 = b.iter().map(|x| x * x).sum();
    if ea <= 0.0 || eb <= 0.0 {
        0.0
    } else {
        cross / (ea * eb).sqrt()
    }
}

/// Smallest-lag local maximum within 90% of the best peak, refined by a
/// parabola through its neighbours.
fn pick_period(nccf: &[f64], min_lag: usize, max_lag: usize) -> Option<f64> {
    let peaks: Vec<usize> = (min_lag.max(1)..=max_lag)
        .filter(|&l| nccf[l] >= nccf[l - 1] && nccf[l] >= nccf[l + 1])
        .collect();
    let best = peaks.iter().map(|&l| nccf[l]).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= VOICING_THRESHOLD) {
        return None;
    }
    let lag = *peaks.iter().find(|&&l| nccf[l] >= 0.9 * best)?;
    let (y0, y1, y2) = (nccf[lag - 1], nccf[lag], nccf[lag + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(lag as f64 + shift)
}

/// Fills unvoiced gaps by linear interpolation; edges hold the nearest voiced value.
/// All-unvoiced input yields zeros.
pub fn interpolate_unvoiced(values: &[Option<f64>]) -> Vec<f64> {
    let voiced: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if voiced.is_empty() {
        return vec![0.0; values.len()];
    }
    let mut out = vec![0.0; values.len()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = match values[i] {
            Some(v) => v,
            None => {
                let next = voiced.partition_point(|&j| j < i);
                match (next.checked_sub(1).map(|p| voiced[p]), voiced.get(next)) {
                    (Some(l), Some(&r)) => {
                        let (vl, vr) = (values[l].unwrap(), values[r].unwrap());
                        vl + (vr - vl) * (i - l) as f64 / (r - l) as f64
                    }
                    (Some(l), None) => values[l].unwrap(),
                    (None, Some(&r)) => values[r].unwrap(),
                    (None, None) => unreachable!(),
                }
            }
        };
    }
    out
}

/// Pitch, energy and mel targets on one shared frame grid.
pub fn extract_targets(
    samples: &[f64],
    cfg: &AnalysisConfig,
) -> Result<(ProsodyContours, MelSpectrogram)> {
    if cfg.hop == 0 || cfg.sample_rate == 0 {
        return Err(Error::config("analysis needs positive sr and hop"));
    }
    if samples.len() < cfg.n_fft {
        return Err(Error::InvalidAudio(format!(
            "{} samples is shorter than one {}-sample window",
            samples.len(),
            cfg.n_fft
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidAudio("non-finite sample".into()));
    }
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let magnitude = stft.magnitude(samples);
    let energy: Vec<f64> = magnitude
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|m| m * m).sum::<f64>().sqrt())
        .collect();
    let f0 = track_f0(samples, cfg.sample_rate, cfg.hop, cfg.n_fft);
    let voiced: Vec<bool> = f0.iter().map(Option::is_some).collect();
    let log_f0: Vec<Option<f64>> = f0.iter().map(|f| f.map(f64::ln)).collect();
    let pitch = interpolate_unvoiced(&log_f0);
    let mel = MelSpectrogram {
        frames: mel_from_magnitude(&magnitude, &mel_filterbank(cfg)),
        sample_rate: cfg.sample_rate,
        hop: cfg.hop,
        n_fft: cfg.n_fft,
        fmin: cfg.fmin,
        fmax: cfg.fmax,
    };
    Ok((
        ProsodyContours {
            pitch,
            energy,
            voiced,
        },
        mel,
    ))
}

/// Mean/std pair for z-normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        Self {
            mean,
            std: var.sqrt().max(1e-8),
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-channel mel statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelStandardizer {
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Mat>) -> Self {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut n = 0usize;
        for m in mels {
            let s = m.sum_axis(ndarray::Axis(0));
            let q = m.mapv(|x| x * x).sum_axis(ndarray::Axis(0));
            sum = Some(sum.map_or(s.clone(), |a| a + &s));
            sq = Some(sq.map_or(q.clone(), |a| a + &q));
            n += m.nrows();
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Self {
                mean: vec![],
                std: vec![],
            };
        };
        let mean = &sum / n as f64;
        let var = &sq / n as f64 - &mean * &mean;
        Self {
            mean: mean.to_vec(),
            std: var.iter().map(|v| v.max(0.0).sqrt().max(1e-3)).collect(),
        }
    }

    pub fn normalize(&self, mel: &Mat) -> Mat {
        Array2::from_shape_fn(mel.dim(), |(t, c)| (mel[[t, c]] - self.mean[c]) / self.std[c])
    }

    pub fn denormalize(&self, z: &Mat) -> Mat {
        Array2::from_shape_fn(z.dim(), |(t, c)| z[[t, c]] * self.std[c] + self.mean[c])
    }
}
