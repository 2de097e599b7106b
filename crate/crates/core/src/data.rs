//! Samples, dataset manifests, and the synthetic audiovisual generator.
//!
//! A sample directory holds `tokens.txt`, `lips.npyish`, `affect.csv`,
//! `scene.bin`, `speaker.txt`, `emotion.txt`, `mel.bin`, `pitch.csv` and
//! `energy.csv` (plus an optional `speaker.bin` vector and `text.txt`).
//! Pitch and energy are stored before normalization.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::aligner::frame_ratio;
use crate::audio::{extract_targets, AnalysisConfig};
use crate::autograd::Mat;
use crate::config::hex;
use crate::error::{Error, Result};
use crate::frontend::{tokenize, LipPatches, PhonemeSequence, VideoFeatureTrack};
use crate::io::{read_csv, read_matrix, read_tensor, write_csv, write_matrix, write_tensor, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LIP_SIZE: usize = 32;

/// (valence, arousal) anchors per emotion class, in label order.
pub const EMOTION_ANCHORS: [(f64, f64); 8] = [
    (-0.6, 0.8),  // angry
    (-0.7, 0.1),  // disgust
    (-0.3, 0.6),  // fear
    (0.8, 0.6),   // happy
    (0.0, 0.0),   // neutral
    (-0.7, -0.5), // sad
    (0.4, 0.9),   // surprise
    (0.3, -0.4),  // others
];

const WORDS: [&str; 24] = [
    "go", "stop", "where", "now", "never", "again", "look", "out", "mine", "back", "time", "run",
    "home", "light", "dark", "wait", "here", "open", "door", "please", "leave", "come", "truth",
    "fire",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One training example: inputs plus extracted targets.
#[derive(Clone, Debug, PartialEq)]
pub struct DubbingSample {
    pub id: String,
    pub text: Option<String>,
    pub phonemes: PhonemeSequence,
    pub video: VideoFeatureTrack,
    pub speaker_id: usize,
    pub speaker_vector: Option<Vec<f64>>,
    pub emotion: usize,
    /// `T_y × n_mels`, dB.
    pub mel: Mat,
    /// Raw log-F0, unvoiced-interpolated.
    pub pitch: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Raw frame energy.
    pub energy: Vec<f64>,
}

impl DubbingSample {
    pub fn mel_len(&self) -> usize {
        self.mel.nrows()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("tokens.txt"), format!("{}\n", self.phonemes.to_symbols()))?;
        if let Some(text) = &self.text {
            fs::write(dir.join("text.txt"), format!("{text}\n"))?;
        }
        if let Some(l) = &self.video.lips {
            let t = Tensor {
                dims: [l.len() as u32, l.height as u32, l.width as u32, l.channels as u32],
                values: l.frames.iter().map(|&v| v as f32).collect(),
            };
            write_tensor(&dir.join("lips.npyish"), &t)?;
        }
        if let (Some(v), Some(a)) = (&self.video.valence, &self.video.arousal) {
            let rows: Vec<Vec<f64>> = v.iter().zip(a).map(|(&v, &a)| vec![v, a]).collect();
            write_csv(&dir.join("affect.csv"), &["valence", "arousal"], &rows)?;
        }
        if let Some(s) = &self.video.scene {
            write_matrix(&dir.join("scene.bin"), s)?;
        }
        fs::write(dir.join("speaker.txt"), format!("{}\n", self.speaker_id))?;
        if let Some(v) = &self.speaker_vector {
            write_matrix(&dir.join("speaker.bin"), &Array2::from_shape_vec((1, v.len()), v.clone()).expect("row"))?;
        }
        fs::write(dir.join("emotion.txt"), format!("{}\n", self.emotion))?;
        write_matrix(&dir.join("mel.bin"), &self.mel)?;
        let pitch: Vec<Vec<f64>> = self
            .pitch
            .iter()
            .zip(&self.voiced)
            .map(|(&p, &v)| vec![p, if v { 1.0 } else { 0.0 }])
            .collect();
        write_csv(&dir.join("pitch.csv"), &["log_f0", "voiced"], &pitch)?;
        let energy: Vec<Vec<f64>> = self.energy.iter().map(|&e| vec![e]).collect();
        write_csv(&dir.join("energy.csv"), &["energy"], &energy)?;
        Ok(())
    }

    /// Loads a sample directory. Missing optional streams stay `None`.
    pub fn load(dir: &Path, fps: f64) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let phonemes = PhonemeSequence::from_symbols(&fs::read_to_string(dir.join("tokens.txt"))?)?;
        let text = fs::read_to_string(dir.join("text.txt")).ok().map(|s| s.trim().to_string());
        let lips_path = dir.join("lips.npyish");
        let lips = if lips_path.exists() {
            let t = read_tensor(&lips_path)?;
            let [n, h, w, c] = t.dims.map(|d| d as usize);
            let frames = Array2::from_shape_vec((n, h * w * c), t.values.iter().map(|&v| v as f64).collect())
                .map_err(|e| Error::format(&lips_path, e.to_string()))?;
            Some(LipPatches::new(frames, h, w, c)?)
        } else {
            None
        };
        let affect_path = dir.join("affect.csv");
        let (valence, arousal) = if affect_path.exists() {
            let mut cols = read_csv(&affect_path, &["valence", "arousal"])?;
            let a = cols.pop();
            let v = cols.pop();
            (v, a)
        } else {
            (None, None)
        };
        let scene_path = dir.join("scene.bin");
        let scene = scene_path.exists().then(|| read_matrix(&scene_path)).transpose()?;
        let parse_usize = |name: &str| -> Result<usize> {
            let p = dir.join(name);
            fs::read_to_string(&p)?
                .trim()
                .parse()
                .map_err(|_| Error::format(&p, "expected an integer"))
        };
        let speaker_id = parse_usize("speaker.txt")?;
        let emotion = parse_usize("emotion.txt")?;
        let spk_path = dir.join("speaker.bin");
        let speaker_vector = spk_path
            .exists()
            .then(|| read_matrix(&spk_path).map(|m| m.iter().copied().collect()))
            .transpose()?;
        let mel = read_matrix(&dir.join("mel.bin"))?;
        let mut pitch_cols = read_csv(&dir.join("pitch.csv"), &["log_f0", "voiced"])?;
        let voiced = pitch_cols.pop().unwrap_or_default().iter().map(|&v| v > 0.5).collect();
        let pitch = pitch_cols.pop().unwrap_or_default();
        let energy = read_csv(&dir.join("energy.csv"), &["energy"])?.pop().unwrap_or_default();
        let sample = Self {
            id,
            text,
            phonemes,
            video: VideoFeatureTrack {
                lips,
                valence,
                arousal,
                scene,
                fps,
            },
            speaker_id,
            speaker_vector,
            emotion,
            mel,
            pitch,
            voiced,
            energy,
        };
        sample.validate().map_err(|e| Error::format(dir, e.to_string()))?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        self.phonemes.validate()?;
        self.video.validate()?;
        let t = self.mel.nrows();
        if t == 0 {
            return Err(Error::EmptyInput("mel has no frames".into()));
        }
        if self.pitch.len() != t || self.energy.len() != t || self.voiced.len() != t {
            return Err(Error::shape(format!(
                "contour lengths ({}, {}) differ from mel length {t}",
                self.pitch.len(),
                self.energy.len()
            )));
        }
        if self.mel.iter().chain(&self.pitch).chain(&self.energy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature("non-finite target".into()));
        }
        Ok(())
    }
}

/// Index of a dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec_hash: String,
    pub sample_rate: u32,
    pub hop: usize,
    pub fps: f64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut out = String::from("# hpmdub dataset manifest\n");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "spec_hash {}", self.spec_hash);
        let _ = writeln!(out, "sample_rate {}", self.sample_rate);
        let _ = writeln!(out, "hop {}", self.hop);
        let _ = writeln!(out, "fps {:?}", self.fps);
        for e in &self.entries {
            let _ = writeln!(out, "sample {} {} {}", e.id, e.split.name(), e.path.display());
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = DatasetManifest {
            seed: 0,
            spec_hash: String::new(),
            sample_rate: 0,
            hop: 0,
            fps: 0.0,
            entries: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::format(path, format!("line {}: cannot parse '{line}'", i + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["seed", v] => m.seed = v.parse().map_err(|_| bad())?,
                ["spec_hash", v] => m.spec_hash = v.to_string(),
                ["sample_rate", v] => m.sample_rate = v.parse().map_err(|_| bad())?,
                ["hop", v] => m.hop = v.parse().map_err(|_| bad())?,
                ["fps", v] => m.fps = v.parse().map_err(|_| bad())?,
                ["sample", id, split, p] => m.entries.push(ManifestEntry {
                    id: id.to_string(),
                    split: Split::parse(split).ok_or_else(bad)?,
                    path: PathBuf::from(p),
                }),
                _ => return Err(bad()),
            }
        }
        if m.sample_rate == 0 || m.hop == 0 || !(m.fps > 0.0) {
            return Err(Error::format(path, "manifest lacks sample_rate/hop/fps"));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        Self::parse(&fs::read_to_string(&path)?, &path)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id.as_str())
            .collect()
    }
}

/// A loaded dataset: the manifest plus every sample, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<DubbingSample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let samples = manifest
            .entries
            .iter()
            .map(|e| DubbingSample::load(&dir.join(&e.path), manifest.fps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    pub fn split(&self, split: Split) -> Vec<&DubbingSample> {
        self.manifest
            .entries
            .iter()
            .zip(&self.samples)
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s)
            .collect()
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_speakers: usize,
    pub n_emotions: usize,
    pub fps: f64,
    pub sample_rate: u32,
    pub hop: usize,
    /// Inclusive range of video frames per utterance.
    pub frames: (usize, usize),
    pub scene_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 32,
            n_speakers: 4,
            n_emotions: 8,
            fps: 20.0,
            sample_rate: 22050,
            hop: 256,
            frames: (8, 12),
            scene_dim: 64,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be positive"));
        }
        if self.n_speakers == 0 || self.n_speakers > 8 {
            return Err(Error::config("n_speakers must be in 1..=8"));
        }
        if self.n_emotions != EMOTION_ANCHORS.len() {
            return Err(Error::config("n_emotions must be 8"));
        }
        if self.frames.0 == 0 || self.frames.1 < self.frames.0 {
            return Err(Error::config("frame range must be non-empty and positive"));
        }
        if self.scene_dim == 0 {
            return Err(Error::config("scene_dim must be positive"));
        }
        frame_ratio(self.sample_rate as f64, self.hop, self.fps)?;
        let shortest = (self.sample_rate as f64 / self.fps * self.frames.0 as f64) as usize;
        if shortest < 1024 {
            return Err(Error::config("shortest utterance is below one 1024-sample window"));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        format!(
            "n_samples={}\nn_speakers={}\nn_emotions={}\nfps={:?}\nsample_rate={}\nhop={}\nframes={}..{}\nscene_dim={}\nseed={}\n",
            self.n_samples,
            self.n_speakers,
            self.n_emotions,
            self.fps,
            self.sample_rate,
            self.hop,
            self.frames.0,
            self.frames.1,
            self.scene_dim,
            self.seed
        )
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.render().as_bytes()))
    }
}

/// Speaker `s` voice: base pitch (Hz) and spectral roll-off (Hz).
pub fn speaker_voice(s: usize) -> (f64, f64) {
    (100.0 + 17.0 * s as f64, 1500.0 + 400.0 * s as f64)
}

/// Mouth openness of a phoneme in `[0, 1]`: vowels wide, bilabials closed.
pub fn openness(token: u32) -> f64 {
    match crate::frontend::symbol(token) {
        "AA" | "AE" | "AH" | "AO" | "AW" | "AY" => 1.0,
        "EH" | "ER" | "EY" | "OW" | "OY" => 0.8,
        "IH" | "IY" | "UH" | "UW" => 0.6,
        "B" | "M" | "P" => 0.05,
        "F" | "V" | "W" => 0.2,
        _ => 0.35,
    }
}

/// Fixed harmonic count; a count that followed F0 would switch partials on
/// and off mid-utterance and splatter clicks across the spectrum. The highest
/// F0 the generator can emit keeps all partials below Nyquist.
const HARMONICS: usize = 30;

/// Formant pair (Hz) for a phoneme.
fn formants(token: u32) -> (f64, f64) {
    let t = token as f64;
    (300.0 + (t * 37.0) % 500.0, 900.0 + (t * 131.0) % 1600.0)
}

fn envelope(token: u32, f: f64, rolloff: f64) -> f64 {
    let (f1, f2) = formants(token);
    let shape = (-((f - f1) / 150.0).powi(2)).exp() + 0.7 * (-((f - f2) / 250.0).powi(2)).exp() + 0.1;
    shape * (-f / rolloff).exp()
}

/// Smooth per-frame affect contour around a shrunken anchor, kept clear of
/// the ±1 bounds so the swing never clips.
fn contour(anchor: f64, frames: usize, swing: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let offset = 0.6 * anchor + rng.random_range(-0.05..0.05);
    let cycles = rng.random_range(0.7..1.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..frames)
        .map(|k| {
            let x = k as f64 / frames as f64;
            (offset + swing * (2.0 * PI * cycles * x + phase).sin()).clamp(-0.95, 0.95)
        })
        .collect()
}

fn interp(track: &[f64], u: f64) -> f64 {
    let u = u.clamp(0.0, (track.len() - 1) as f64);
    let i = u.floor() as usize;
    let j = (i + 1).min(track.len() - 1);
    let w = u - i as f64;
    track[i] * (1.0 - w) + track[j] * w
}

/// Holds each frame's value, blending into the next over the final `ramp`
/// fraction of the frame.
fn stepped(track: &[f64], u: f64, ramp: f64) -> f64 {
    let u = u.clamp(0.0, (track.len() - 1) as f64);
    let i = u.floor() as usize;
    let j = (i + 1).min(track.len() - 1);
    let w = ((u - i as f64 - (1.0 - ramp)) / ramp).clamp(0.0, 1.0);
    track[i] * (1.0 - w) + track[j] * w
}

/// Output amplitude for an arousal value.
pub fn arousal_gain(a: f64) -> f64 {
    0.06 * (1.25 + a)
}

/// Renders one 32×32 mouth: aperture sets the height, valence bends the
/// centre line (smile or frown).
pub fn render_mouth(aperture: f64, valence: f64) -> Vec<f64> {
    let n = LIP_SIZE;
    let c = (n as f64 - 1.0) / 2.0;
    let height = 1.0 + 9.0 * aperture;
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let xc = (x as f64 - c) / 11.0;
            if xc.abs() >= 1.0 {
                px.push(0.0);
                continue;
            }
            let centre = c + 4.0 * valence * (0.33 - xc * xc);
            let half = height * (1.0 - xc * xc).sqrt();
            let d = half - (y as f64 - centre).abs();
            px.push(1.0 / (1.0 + (-2.0 * d).exp()));
        }
    }
    px
}

/// Synthesizes one sample (audio included) from its own seed.
pub fn synthesize_sample(
    spec: &SyntheticSpec,
    index: usize,
    speaker: usize,
    emotion: usize,
    seed: u64,
) -> Result<(DubbingSample, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratio = frame_ratio(spec.sample_rate as f64, spec.hop, spec.fps)?;
    let n_words = rng.random_range(2..=3);
    let text = (0..n_words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ");
    let phonemes = tokenize(&text)?;
    let t_v = rng.random_range(spec.frames.0..=spec.frames.1);
    let t_y = ratio.mel_len(t_v);
    let n = t_y * spec.hop;
    let sr = spec.sample_rate as f64;

    let (va, aa) = EMOTION_ANCHORS[emotion];
    let valence = contour(va, t_v, 0.2, &mut rng);
    let arousal = contour(aa, t_v, 0.35, &mut rng);

    // Phoneme timeline in samples.
    let weights: Vec<f64> = phonemes.tokens.iter().map(|_| rng.random_range(0.6..1.4)).collect();
    let total: f64 = weights.iter().sum();
    let mut bounds = Vec::with_capacity(weights.len() + 1);
    let mut acc = 0.0;
    bounds.push(0usize);
    for w in &weights {
        acc += w;
        bounds.push(((acc / total) * n as f64).round() as usize);
    }
    let phone_at = |s: usize| bounds.partition_point(|&b| b <= s).saturating_sub(1).min(weights.len() - 1);

    let (base, rolloff) = speaker_voice(speaker);
    let mut phase = 0.0;
    let mut audio = Vec::with_capacity(n);
    let ramp = spec.hop as f64;
    for s in 0..n {
        let u = s as f64 / sr * spec.fps;
        let f0 = base * 2f64.powf(0.5 * interp(&valence, u));
        let gain = arousal_gain(stepped(&arousal, u, 0.1));
        phase += 2.0 * PI * f0 / sr;
        let j = phone_at(s);
        // Symmetric cross-fade over `ramp` samples centred on each boundary:
        // the blend reaches 50/50 exactly at the boundary from both sides.
        let half = ramp / 2.0;
        let to_end = bounds[j + 1] as f64 - s as f64;
        let from_start = s as f64 - bounds[j] as f64;
        let (other, mix) = if j + 1 < weights.len() && to_end < half {
            (j + 1, 0.5 * (1.0 - to_end / half))
        } else if j > 0 && from_start < half {
            (j - 1, 0.5 * (1.0 - from_start / half))
        } else {
            (j, 0.0)
        };
        let mut w = Vec::with_capacity(HARMONICS);
        for h in 1..=HARMONICS {
            let f = h as f64 * f0;
            let e = (1.0 - mix) * envelope(phonemes.tokens[j], f, rolloff)
                + mix * envelope(phonemes.tokens[other], f, rolloff);
            w.push(e);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let v: f64 = w
            .iter()
            .enumerate()
            .map(|(h, wh)| wh / norm * ((h + 1) as f64 * phase).sin())
            .sum();
        audio.push(gain * v);
    }
    // Raised-cosine onset and offset so the utterance does not start or stop
    // on a click.
    let fade = spec.hop.min(n / 4);
    for k in 0..fade {
        let g = 0.5 - 0.5 * (PI * k as f64 / fade as f64).cos();
        audio[k] *= g;
        audio[n - 1 - k] *= g;
    }

    let mut frames = Mat::zeros((t_v, LIP_SIZE * LIP_SIZE));
    for k in 0..t_v {
        let centre = (((k as f64 + 0.5) / spec.fps * sr) as usize).min(n - 1);
        let aperture = (1.25 + arousal[k]) / 2.25 * openness(phonemes.tokens[phone_at(centre)]);
        for (p, v) in render_mouth(aperture, valence[k]).into_iter().enumerate() {
            frames[[k, p]] = v;
        }
    }

    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5CE7E);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let prototypes: Vec<Vec<f64>> = (0..EMOTION_ANCHORS.len())
        .map(|_| (0..spec.scene_dim).map(|_| unit.sample(&mut proto_rng)).collect())
        .collect();
    let scene = Array2::from_shape_fn((1, spec.scene_dim), |(_, c)| {
        prototypes[emotion][c] + 0.5 * unit.sample(&mut rng)
    });

    let analysis = AnalysisConfig::new(spec.sample_rate, spec.hop);
    let (contours, mel) = extract_targets(&audio, &analysis)?;
    // f32 storage is the canonical precision of every on-disk stream.
    let f32ify = |v: f64| v as f32 as f64;
    let sample = DubbingSample {
        id: format!("s{index:05}"),
        text: Some(text),
        phonemes,
        video: VideoFeatureTrack {
            lips: Some(LipPatches::new(frames.mapv(f32ify), LIP_SIZE, LIP_SIZE, 1)?),
            valence: Some(valence),
            arousal: Some(arousal),
            scene: Some(scene.mapv(f32ify)),
            fps: spec.fps,
        },
        speaker_id: speaker,
        speaker_vector: None,
        emotion,
        mel: mel.frames.mapv(f32ify),
        pitch: contours.pitch,
        voiced: contours.voiced,
        energy: contours.energy,
    };
    Ok((sample, audio))
}

/// Labels, speakers, per-sample seeds and split assignment, all from `spec.seed`.
struct Plan {
    emotions: Vec<usize>,
    speakers: Vec<usize>,
    seeds: Vec<u64>,
    splits: Vec<Split>,
}

fn plan(spec: &SyntheticSpec) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples;
    let c = spec.n_emotions;
    let mut emotions = Vec::with_capacity(n);
    while emotions.len() < n {
        let mut block: Vec<usize> = (0..c).collect();
        block.shuffle(&mut rng);
        emotions.extend(block);
    }
    emotions.truncate(n);
    let speakers = (0..n).map(|_| rng.random_range(0..spec.n_speakers)).collect();
    let seeds = (0..n).map(|_| rng.random::<u64>()).collect();

    // Shuffle within each class, interleave classes, then cut 60/10/30 so
    // every class reaches every split as evenly as the counts allow.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &e) in emotions.iter().enumerate() {
        by_class[e].push(i);
    }
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(n);
    let mut round = 0;
    while order.len() < n {
        for class in &by_class {
            if let Some(&i) = class.get(round) {
                order.push(i);
            }
        }
        round += 1;
    }
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Plan {
        emotions,
        speakers,
        seeds,
        splits,
    }
}

/// Generates every sample in memory, in index order.
pub fn generate_samples(spec: &SyntheticSpec) -> Result<Vec<(DubbingSample, Split)>> {
    spec.validate()?;
    let p = plan(spec);
    (0..spec.n_samples)
        .map(|i| {
            let (s, _) = synthesize_sample(spec, i, p.speakers[i], p.emotions[i], p.seeds[i])?;
            Ok((s, p.splits[i]))
        })
        .collect()
}

/// Writes a full synthetic dataset under `out` and returns its manifest.
pub fn generate_dataset(spec: &SyntheticSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(spec.n_samples);
    for (sample, split) in generate_samples(spec)? {
        let rel = PathBuf::from(&sample.id);
        sample.write(&out.join(&rel))?;
        entries.push(ManifestEntry {
            id: sample.id.clone(),
            split,
            path: rel,
        });
    }
    let manifest = DatasetManifest {
        seed: spec.seed,
        spec_hash: spec.hash(),
        sample_rate: spec.sample_rate,
        hop: spec.hop,
        fps: spec.fps,
        entries,
    };
    fs::write(out.join(MANIFEST_FILE), manifest.render())?;
    Ok(manifest)
}
