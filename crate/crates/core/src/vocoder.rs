//! Griffin-Lim inversion for listening to generated mels, plus a minimal
//! 16-bit PCM WAV writer. Quality is plumbing-grade by design.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::audio::{mel_filterbank, AnalysisConfig, MelSpectrogram, Stft, LOG_FLOOR_DB};
use crate::autograd::Mat;
use crate::error::{Error, Result};

/// Solves `A x = b` for symmetric positive definite `A` (in place Cholesky).
fn cholesky_solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut l = Mat::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                l[[i, i]] = (a[[i, i]] - s).max(1e-300).sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[[i, k]] * x[[k, col]]).sum();
            x[[i, col]] = (x[[i, col]] - s) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[[k, i]] * x[[k, col]]).sum();
            x[[i, col]] = (x[[i, col]] - s) / l[[i, i]];
        }
    }
    x
}

/// Ridge-regularized pseudo-inverse of a `n_mels × bins` filterbank: `bins × n_mels`.
pub fn filterbank_pinv(fb: &Mat) -> Mat {
    let gram = fb.dot(&fb.t());
    let ridge = 1e-8 * gram.diag().sum() / gram.nrows() as f64;
    let reg = &gram + &(Mat::eye(gram.nrows()) * ridge);
    let inv = cholesky_solve(&reg, &Mat::eye(gram.nrows()));
    fb.t().dot(&inv)
}

/// dB log-mel frames back to a linear magnitude spectrogram (`T × bins`).
/// Values at or below the floor map to exactly zero.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Result<Mat> {
    mel.validate()?;
    let cfg = AnalysisConfig {
        sample_rate: mel.sample_rate,
        hop: mel.hop,
        n_fft: mel.n_fft,
        n_mels: mel.n_mels(),
        fmin: mel.fmin,
        fmax: mel.fmax,
    };
    let pinv = filterbank_pinv(&mel_filterbank(&cfg));
    let amp = mel
        .frames
        .mapv(|db| if db <= LOG_FLOOR_DB + 1e-9 { 0.0 } else { 10f64.powf(db / 20.0) });
    Ok(amp.dot(&pinv.t()).mapv(|m| m.max(0.0)))
}

/// Iterative phase recovery; output has `T_y · hop` samples.
pub fn griffin_lim(mel: &MelSpectrogram, iters: usize) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(Error::config("griffin-lim needs at least one iteration"));
    }
    let mag = mel_to_linear(mel)?;
    let len = mel.len() * mel.hop;
    let stft = Stft::new(mel.n_fft, mel.hop);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut phase = Array2::from_shape_simple_fn(mag.dim(), || {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        Complex::new(a.cos(), a.sin())
    });
    let combine = |phase: &Array2<Complex<f64>>| {
        Array2::from_shape_fn(mag.dim(), |(t, k)| phase[[t, k]] * mag[[t, k]])
    };
    let mut signal = stft.inverse(&combine(&phase), len);
    for _ in 1..iters {
        let spec = stft.forward(&signal);
        for t in 0..mag.nrows().min(spec.nrows()) {
            for k in 0..mag.ncols() {
                let c = spec[[t, k]];
                let n = c.norm();
                phase[[t, k]] = if n > 1e-12 { c / n } else { Complex::new(1.0, 0.0) };
            }
        }
        signal = stft.inverse(&combine(&phase), len);
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidAudio("griffin-lim produced non-finite samples".into()));
    }
    Ok(signal)
}

/// Writes mono 16-bit PCM; samples are clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
