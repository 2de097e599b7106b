//! Flat `key = value` configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. The same keys
//! are accepted by `--set key=value` on the command line. Rendering is
//! canonical (fixed key order), which is what the checkpoint hash covers.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expansion {
    ConvTranspose,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffectSource {
    /// File-ingested valence/arousal scalars lifted to the model width.
    ValenceArousal,
    /// Raw facial-feature embeddings from the stand-in conv encoder.
    FaceFeatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrPreset {
    Desk,
    V2c,
    Chem,
}

impl LrPreset {
    pub fn lr(self) -> f64 {
        match self {
            LrPreset::Desk => 1e-4,
            LrPreset::V2c => 1e-5,
            LrPreset::Chem => 5e-5,
        }
    }
}

/// Ablation switches, applied on top of any config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoDurationAligner,
    NoProsodyAdaptor,
    NoAtmosphereBooster,
    NoValence,
    NoArousal,
    FaceFeatures,
    SingleHead,
    Duplicate,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::NoDurationAligner,
        Ablation::NoProsodyAdaptor,
        Ablation::NoAtmosphereBooster,
        Ablation::NoValence,
        Ablation::NoArousal,
        Ablation::FaceFeatures,
        Ablation::SingleHead,
        Ablation::Duplicate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoDurationAligner => "no-da",
            Ablation::NoProsodyAdaptor => "no-pa",
            Ablation::NoAtmosphereBooster => "no-ab",
            Ablation::NoValence => "no-valence",
            Ablation::NoArousal => "no-arousal",
            Ablation::FaceFeatures => "face-features",
            Ablation::SingleHead => "single-head",
            Ablation::Duplicate => "duplicate",
        }
    }

    pub fn apply(self, cfg: &mut Config) {
        match self {
            Ablation::NoDurationAligner => cfg.aligner_enabled = false,
            Ablation::NoProsodyAdaptor => {
                cfg.use_valence = false;
                cfg.use_arousal = false;
            }
            Ablation::NoAtmosphereBooster => cfg.booster_enabled = false,
            Ablation::NoValence => cfg.use_valence = false,
            Ablation::NoArousal => cfg.use_arousal = false,
            Ablation::FaceFeatures => cfg.affect_source = AffectSource::FaceFeatures,
            Ablation::SingleHead => cfg.aligner_heads = 1,
            Ablation::Duplicate => cfg.expansion = Expansion::Duplicate,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation preset '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    // model widths
    pub dim: usize,
    pub fft_heads: usize,
    pub ffn_hidden: usize,
    pub ffn_kernel: usize,
    pub ffn_kernel2: usize,
    pub dropout: f64,
    pub n_mels: usize,
    pub n_speakers: usize,
    pub n_emotions: usize,
    pub n_phonemes: usize,
    // encoders
    pub phoneme_blocks: usize,
    pub lip_blocks: usize,
    pub lip_channels: (usize, usize),
    pub face_channels: usize,
    // duration aligner
    pub aligner_enabled: bool,
    pub aligner_heads: usize,
    pub expansion: Expansion,
    pub aligner_stride: usize,
    pub aligner_kernel: usize,
    // prosody adaptor
    pub use_valence: bool,
    pub use_arousal: bool,
    pub affect_source: AffectSource,
    pub attention_dim: usize,
    pub predictor_hidden: usize,
    pub predictor_kernel: usize,
    // atmosphere booster
    pub booster_enabled: bool,
    pub strict_attention: bool,
    pub scene_dim: usize,
    pub scene_tiles: usize,
    // decoder
    pub decoder_blocks: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub postnet_layers: usize,
    // signal
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub fps: f64,
    // training
    pub lr: f64,
    pub lr_preset: Option<LrPreset>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub pre_postnet_mel_loss: bool,
    pub lambda_mel: f64,
    pub lambda_pitch: f64,
    pub lambda_energy: f64,
    pub lambda_emo: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dim: 256,
            fft_heads: 4,
            ffn_hidden: 1024,
            ffn_kernel: 9,
            ffn_kernel2: 1,
            dropout: 0.1,
            n_mels: 80,
            n_speakers: 8,
            n_emotions: 8,
            n_phonemes: crate::frontend::INVENTORY_SIZE,
            phoneme_blocks: 4,
            lip_blocks: 3,
            lip_channels: (16, 32),
            face_channels: 16,
            aligner_enabled: true,
            aligner_heads: 8,
            expansion: Expansion::ConvTranspose,
            aligner_stride: 3,
            aligner_kernel: 10,
            use_valence: true,
            use_arousal: true,
            affect_source: AffectSource::ValenceArousal,
            attention_dim: 256,
            predictor_hidden: 256,
            predictor_kernel: 3,
            booster_enabled: true,
            strict_attention: false,
            scene_dim: 1024,
            scene_tiles: 8,
            decoder_blocks: 6,
            postnet_channels: 256,
            postnet_kernel: 5,
            postnet_layers: 5,
            sample_rate: 22050,
            hop: 256,
            n_fft: 1024,
            fmin: 0.0,
            fmax: 0.0,
            fps: 20.0,
            lr: 1e-4,
            lr_preset: None,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            batch_size: 16,
            steps: 2000,
            seed: 1,
            grad_clip: 1.0,
            log_every: 10,
            checkpoint_every: 0,
            pre_postnet_mel_loss: true,
            lambda_mel: 1.0,
            lambda_pitch: 1.0,
            lambda_energy: 1.0,
            lambda_emo: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad boolean '{value}' for {key}"))),
    }
}

impl Config {
    /// Reduced widths that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            dim: 32,
            fft_heads: 2,
            ffn_hidden: 64,
            dropout: 0.0,
            lip_channels: (4, 8),
            face_channels: 4,
            attention_dim: 32,
            predictor_hidden: 32,
            scene_dim: 64,
            postnet_channels: 32,
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Applies one `key=value` override (the `--set` syntax).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
        self.set(key.trim(), value.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model.dim" => self.dim = parse(key, v)?,
            "model.heads" => self.fft_heads = parse(key, v)?,
            "model.ffn_hidden" => self.ffn_hidden = parse(key, v)?,
            "model.ffn_kernel" => self.ffn_kernel = parse(key, v)?,
            "model.ffn_kernel2" => self.ffn_kernel2 = parse(key, v)?,
            "model.dropout" => self.dropout = parse(key, v)?,
            "model.n_mels" => self.n_mels = parse(key, v)?,
            "model.n_speakers" => self.n_speakers = parse(key, v)?,
            "model.n_emotions" => self.n_emotions = parse(key, v)?,
            "encoder.phoneme_blocks" => self.phoneme_blocks = parse(key, v)?,
            "encoder.lip_blocks" => self.lip_blocks = parse(key, v)?,
            "encoder.lip_channels1" => self.lip_channels.0 = parse(key, v)?,
            "encoder.lip_channels2" => self.lip_channels.1 = parse(key, v)?,
            "encoder.face_channels" => self.face_channels = parse(key, v)?,
            "aligner.enabled" => self.aligner_enabled = parse_bool(key, v)?,
            "aligner.heads" => self.aligner_heads = parse(key, v)?,
            "aligner.expansion" => {
                self.expansion = match v {
                    "conv_transpose" => Expansion::ConvTranspose,
                    "duplicate" => Expansion::Duplicate,
                    _ => return Err(Error::config(format!("bad aligner.expansion '{v}'"))),
                }
            }
            "aligner.stride" => self.aligner_stride = parse(key, v)?,
            "aligner.kernel" => self.aligner_kernel = parse(key, v)?,
            "adaptor.use_valence" => self.use_valence = parse_bool(key, v)?,
            "adaptor.use_arousal" => self.use_arousal = parse_bool(key, v)?,
            "adaptor.affect_source" => {
                self.affect_source = match v {
                    "va" => AffectSource::ValenceArousal,
                    "face_features" => AffectSource::FaceFeatures,
                    _ => return Err(Error::config(format!("bad adaptor.affect_source '{v}'"))),
                }
            }
            "adaptor.attention_dim" => self.attention_dim = parse(key, v)?,
            "adaptor.predictor_hidden" => self.predictor_hidden = parse(key, v)?,
            "adaptor.predictor_kernel" => self.predictor_kernel = parse(key, v)?,
            "booster.enabled" => self.booster_enabled = parse_bool(key, v)?,
            "booster.strict" => self.strict_attention = parse_bool(key, v)?,
            "booster.scene_dim" => self.scene_dim = parse(key, v)?,
            "booster.scene_tiles" => self.scene_tiles = parse(key, v)?,
            "decoder.blocks" => self.decoder_blocks = parse(key, v)?,
            "postnet.channels" => self.postnet_channels = parse(key, v)?,
            "postnet.kernel" => self.postnet_kernel = parse(key, v)?,
            "postnet.layers" => self.postnet_layers = parse(key, v)?,
            "audio.sr" => self.sample_rate = parse(key, v)?,
            "audio.hop" => self.hop = parse(key, v)?,
            "audio.n_fft" => self.n_fft = parse(key, v)?,
            "audio.fmin" => self.fmin = parse(key, v)?,
            "audio.fmax" => self.fmax = parse(key, v)?,
            "video.fps" => self.fps = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.lr_preset" => {
                let preset = match v {
                    "desk" => LrPreset::Desk,
                    "v2c" => LrPreset::V2c,
                    "chem" => LrPreset::Chem,
                    "none" => {
                        self.lr_preset = None;
                        return Ok(());
                    }
                    _ => return Err(Error::config(format!("bad train.lr_preset '{v}'"))),
                };
                self.lr_preset = Some(preset);
                self.lr = preset.lr();
            }
            "train.beta1" => self.beta1 = parse(key, v)?,
            "train.beta2" => self.beta2 = parse(key, v)?,
            "train.eps" => self.eps = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.steps" => self.steps = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.grad_clip" => self.grad_clip = parse(key, v)?,
            "train.log_every" => self.log_every = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.pre_postnet_mel_loss" => self.pre_postnet_mel_loss = parse_bool(key, v)?,
            "loss.lambda_mel" => self.lambda_mel = parse(key, v)?,
            "loss.lambda_pitch" => self.lambda_pitch = parse(key, v)?,
            "loss.lambda_energy" => self.lambda_energy = parse(key, v)?,
            "loss.lambda_emo" => self.lambda_emo = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.dim", self.dim),
            ("model.heads", self.fft_heads),
            ("model.ffn_hidden", self.ffn_hidden),
            ("model.ffn_kernel", self.ffn_kernel),
            ("model.ffn_kernel2", self.ffn_kernel2),
            ("model.n_mels", self.n_mels),
            ("model.n_speakers", self.n_speakers),
            ("model.n_emotions", self.n_emotions),
            ("aligner.heads", self.aligner_heads),
            ("aligner.stride", self.aligner_stride),
            ("aligner.kernel", self.aligner_kernel),
            ("adaptor.attention_dim", self.attention_dim),
            ("adaptor.predictor_hidden", self.predictor_hidden),
            ("adaptor.predictor_kernel", self.predictor_kernel),
            ("booster.scene_dim", self.scene_dim),
            ("booster.scene_tiles", self.scene_tiles),
            ("postnet.channels", self.postnet_channels),
            ("postnet.kernel", self.postnet_kernel),
            ("postnet.layers", self.postnet_layers),
            ("audio.hop", self.hop),
            ("audio.n_fft", self.n_fft),
            ("train.batch_size", self.batch_size),
            ("encoder.lip_channels1", self.lip_channels.0),
            ("encoder.lip_channels2", self.lip_channels.1),
            ("encoder.face_channels", self.face_channels),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        if self.dim % self.fft_heads != 0 {
            return Err(Error::config("model.heads must divide model.dim"));
        }
        if self.dim % self.aligner_heads != 0 {
            return Err(Error::config("aligner.heads must divide model.dim"));
        }
        if self.aligner_kernel < self.aligner_stride {
            return Err(Error::config("aligner.kernel must be at least aligner.stride"));
        }
        if self.sample_rate == 0 || !(self.fps > 0.0) {
            return Err(Error::config("audio.sr and video.fps must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout must be in [0, 1)"));
        }
        if self.postnet_layers < 2 {
            return Err(Error::config("postnet.layers must be at least 2"));
        }
        if !(self.lr > 0.0) || !(self.beta1 >= 0.0 && self.beta1 < 1.0) || !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(Error::config("optimizer settings out of range"));
        }
        Ok(())
    }

    pub fn effective_fmax(&self) -> f64 {
        if self.fmax > 0.0 {
            self.fmax
        } else {
            self.sample_rate as f64 / 2.0
        }
    }

    /// Canonical `key = value` rendering; `Config::parse_text(render())` is the identity.
    pub fn render(&self) -> String {
        let b = |x: bool| if x { "true" } else { "false" };
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("model.dim", self.dim.to_string());
        line("model.heads", self.fft_heads.to_string());
        line("model.ffn_hidden", self.ffn_hidden.to_string());
        line("model.ffn_kernel", self.ffn_kernel.to_string());
        line("model.ffn_kernel2", self.ffn_kernel2.to_string());
        line("model.dropout", format!("{:?}", self.dropout));
        line("model.n_mels", self.n_mels.to_string());
        line("model.n_speakers", self.n_speakers.to_string());
        line("model.n_emotions", self.n_emotions.to_string());
        line("encoder.phoneme_blocks", self.phoneme_blocks.to_string());
        line("encoder.lip_blocks", self.lip_blocks.to_string());
        line("encoder.lip_channels1", self.lip_channels.0.to_string());
        line("encoder.lip_channels2", self.lip_channels.1.to_string());
        line("encoder.face_channels", self.face_channels.to_string());
        line("aligner.enabled", b(self.aligner_enabled).into());
        line("aligner.heads", self.aligner_heads.to_string());
        line(
            "aligner.expansion",
            match self.expansion {
                Expansion::ConvTranspose => "conv_transpose",
                Expansion::Duplicate => "duplicate",
            }
            .into(),
        );
        line("aligner.stride", self.aligner_stride.to_string());
        line("aligner.kernel", self.aligner_kernel.to_string());
        line("adaptor.use_valence", b(self.use_valence).into());
        line("adaptor.use_arousal", b(self.use_arousal).into());
        line(
            "adaptor.affect_source",
            match self.affect_source {
                AffectSource::ValenceArousal => "va",
                AffectSource::FaceFeatures => "face_features",
            }
            .into(),
        );
        line("adaptor.attention_dim", self.attention_dim.to_string());
        line("adaptor.predictor_hidden", self.predictor_hidden.to_string());
        line("adaptor.predictor_kernel", self.predictor_kernel.to_string());
        line("booster.enabled", b(self.booster_enabled).into());
        line("booster.strict", b(self.strict_attention).into());
        line("booster.scene_dim", self.scene_dim.to_string());
        line("booster.scene_tiles", self.scene_tiles.to_string());
        line("decoder.blocks", self.decoder_blocks.to_string());
        line("postnet.channels", self.postnet_channels.to_string());
        line("postnet.kernel", self.postnet_kernel.to_string());
        line("postnet.layers", self.postnet_layers.to_string());
        line("audio.sr", self.sample_rate.to_string());
        line("audio.hop", self.hop.to_string());
        line("audio.n_fft", self.n_fft.to_string());
        line("audio.fmin", format!("{:?}", self.fmin));
        line("audio.fmax", format!("{:?}", self.fmax));
        line("video.fps", format!("{:?}", self.fps));
        line("train.lr", format!("{:?}", self.lr));
        line("train.beta1", format!("{:?}", self.beta1));
        line("train.beta2", format!("{:?}", self.beta2));
        line("train.eps", format!("{:?}", self.eps));
        line("train.batch_size", self.batch_size.to_string());
        line("train.steps", self.steps.to_string());
        line("train.seed", self.seed.to_string());
        line("train.grad_clip", format!("{:?}", self.grad_clip));
        line("train.log_every", self.log_every.to_string());
        line("train.checkpoint_every", self.checkpoint_every.to_string());
        line("train.pre_postnet_mel_loss", b(self.pre_postnet_mel_loss).into());
        line("loss.lambda_mel", format!("{:?}", self.lambda_mel));
        line("loss.lambda_pitch", format!("{:?}", self.lambda_pitch));
        line("loss.lambda_energy", format!("{:?}", self.lambda_energy));
        line("loss.lambda_emo", format!("{:?}", self.lambda_emo));
        out
    }

    /// Hex SHA-256 of [`Config::render`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.render().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
