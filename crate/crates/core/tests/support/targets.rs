//! Pitch and energy extraction on signals with known answers.

use std::f64::consts::PI;

use hpmdub::audio::{extract_targets, AnalysisConfig, ProsodyContours};

pub const SR: u32 = 22050;

pub fn cfg() -> AnalysisConfig {
    AnalysisConfig::new(SR, 256)
}

pub fn tone(freq: f64, secs: f64) -> Vec<f64> {
    let n = (secs * SR as f64) as usize;
    (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect()
}

/// Spearman rank correlation (no ties expected in the inputs used here).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let var: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    cov / var
}

/// Median voiced F0 of a one-second 440 Hz sine, and the voiced fraction.
pub fn sine_440() -> (f64, f64) {
    let (contours, _) = extract_targets(&tone(440.0, 1.0), &cfg()).unwrap();
    let mut f0: Vec<f64> = voiced_f0(&contours);
    let frac = f0.len() as f64 / contours.pitch.len() as f64;
    f0.sort_by(f64::total_cmp);
    (f0.get(f0.len() / 2).copied().unwrap_or(f64::NAN), frac)
}

fn voiced_f0(c: &ProsodyContours) -> Vec<f64> {
    c.pitch.iter().zip(&c.voiced).filter(|(_, &v)| v).map(|(p, _)| p.exp()).collect()
}

/// Spearman correlation of frame index and log pitch on a 200 to 300 Hz chirp.
pub fn chirp_rho() -> f64 {
    let secs = 1.5;
    let n = (secs * SR as f64) as usize;
    let audio: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            0.5 * (2.0 * PI * (200.0 * t + 100.0 * t * t / secs)).sin()
        })
        .collect();
    let (contours, _) = extract_targets(&audio, &cfg()).unwrap();
    let time: Vec<f64> = (0..contours.pitch.len()).map(|i| i as f64).collect();
    spearman(&time, &contours.pitch)
}

/// On half a second of silence: the largest frame energy, whether any frame
/// is voiced, and whether every mel value sits at the dB floor.
pub fn silence() -> (f64, bool, bool) {
    let (contours, mel) = extract_targets(&vec![0.0; SR as usize / 2], &cfg()).unwrap();
    let max_energy = contours.energy.iter().copied().fold(0.0, f64::max);
    let any_voiced = contours.voiced.iter().any(|&v| v);
    let floored = mel.frames.iter().all(|&d| d == hpmdub::audio::LOG_FLOOR_DB);
    (max_energy, any_voiced, floored)
}
