//! Phoneme inventory, tokenizer, and the encoders that turn each input
//! stream into a `T × dim` embedding sequence.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Mat, ParamId, ParamStore, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Conv3d, FftBlockConfig, FftStack, Linear, Volume};

/// 39 ARPAbet symbols, silence, punctuation pause, then three specials.
pub const INVENTORY: [&str; 44] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH", "SIL", "PAU", "<pad>", "<unk>", "<eos>",
];
pub const INVENTORY_SIZE: usize = INVENTORY.len();
pub const SIL: u32 = 39;
pub const PAU: u32 = 40;
pub const PAD: u32 = 41;
pub const UNK: u32 = 42;
pub const EOS: u32 = 43;

pub fn symbol_id(symbol: &str) -> Option<u32> {
    INVENTORY.iter().position(|s| *s == symbol).map(|i| i as u32)
}

pub fn symbol(id: u32) -> &'static str {
    INVENTORY.get(id as usize).copied().unwrap_or("<unk>")
}

/// Letter digraphs checked before single letters.
const DIGRAPHS: [(&str, &[&str]); 14] = [
    ("th", &["TH"]),
    ("sh", &["SH"]),
    ("ch", &["CH"]),
    ("ng", &["NG"]),
    ("ph", &["F"]),
    ("wh", &["W"]),
    ("ck", &["K"]),
    ("ee", &["IY"]),
    ("oo", &["UW"]),
    ("ou", &["AW"]),
    ("oi", &["OY"]),
    ("oy", &["OY"]),
    ("ai", &["EY"]),
    ("ay", &["EY"]),
];

fn letter(c: char) -> &'static [&'static str] {
    match c {
        'a' => &["AH"],
        'b' => &["B"],
        'c' => &["K"],
        'd' => &["D"],
        'e' => &["EH"],
        'f' => &["F"],
        'g' => &["G"],
        'h' => &["HH"],
        'i' => &["IH"],
        'j' => &["JH"],
        'k' => &["K"],
        'l' => &["L"],
        'm' => &["M"],
        'n' => &["N"],
        'o' => &["OW"],
        'p' => &["P"],
        'q' => &["K"],
        'r' => &["R"],
        's' => &["S"],
        't' => &["T"],
        'u' => &["UH"],
        'v' => &["V"],
        'w' => &["W"],
        'x' => &["K", "S"],
        'y' => &["Y"],
        'z' => &["Z"],
        _ => &[],
    }
}

/// Token ids plus a validity mask (`true` = real token).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
}

impl PhonemeSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        let mask = tokens.iter().map(|&t| t != PAD).collect();
        let seq = Self { tokens, mask };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_mask(tokens: Vec<u32>, mask: Vec<bool>) -> Result<Self> {
        let seq = Self { tokens, mask };
        seq.validate()?;
        Ok(seq)
    }

    /// Parses space-separated inventory symbols (the `tokens.txt` format).
    pub fn from_symbols(text: &str) -> Result<Self> {
        let tokens = text
            .split_whitespace()
            .map(|s| symbol_id(s).unwrap_or(UNK))
            .collect::<Vec<_>>();
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token file has no symbols".into()));
        }
        Self::new(tokens)
    }

    pub fn to_symbols(&self) -> String {
        self.tokens.iter().map(|&t| symbol(t)).collect::<Vec<_>>().join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.mask.len() {
            return Err(Error::Validation("token and mask lengths differ".into()));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| t as usize >= INVENTORY_SIZE) {
            return Err(Error::Validation(format!("token id {t} outside inventory")));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::EmptyInput("no valid tokens".into()));
        }
        Ok(())
    }
}

/// Rule-based letter to pseudo-phoneme mapping. Whitespace separates words
/// without emitting a token; punctuation becomes a pause; anything else
/// non-alphabetic becomes `<unk>`.
pub fn tokenize(text: &str) -> Result<PhonemeSequence> {
    let text = text.trim().to_lowercase();
    if text.is_empty() {
        return Err(Error::EmptyInput("text is empty".into()));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if i + 1 < chars.len() {
            let pair: String = chars[i..i + 2].iter().collect();
            if let Some((_, syms)) = DIGRAPHS.iter().find(|(d, _)| *d == pair) {
                tokens.extend(syms.iter().filter_map(|s| symbol_id(s)));
                i += 2;
                continue;
            }
        }
        let syms = letter(c);
        if !syms.is_empty() {
            tokens.extend(syms.iter().filter_map(|s| symbol_id(s)));
        } else if ",.;:!?-".contains(c) {
            tokens.push(PAU);
        } else {
            tokens.push(UNK);
        }
        i += 1;
    }
    PhonemeSequence::new(tokens)
}

/// A `T × dim` sequence with its row mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub values: Mat,
    pub mask: Vec<bool>,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.values.ncols() != dim {
            return Err(Error::shape(format!("width {} != model width {dim}", self.values.ncols())));
        }
        if self.mask.len() != self.values.nrows() {
            return Err(Error::shape("mask length differs from row count"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature("non-finite embedding".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub speaker_id: usize,
}

/// Per-frame mouth crops, row `t` holding an `H × W × C` patch in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct LipPatches {
    pub frames: Mat,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LipPatches {
    pub fn new(frames: Mat, height: usize, width: usize, channels: usize) -> Result<Self> {
        if frames.ncols() != height * width * channels {
            return Err(Error::shape(format!(
                "lip frame width {} != {height}x{width}x{channels}",
                frames.ncols()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }
}

/// Everything the model sees from the video side of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatureTrack {
    pub lips: Option<LipPatches>,
    pub valence: Option<Vec<f64>>,
    pub arousal: Option<Vec<f64>>,
    /// `T_s × D_s`; a single row is tiled by the booster.
    pub scene: Option<Mat>,
    pub fps: f64,
}

impl VideoFeatureTrack {
    /// Video length `T_v`, taken from whichever stream is present.
    pub fn frames(&self) -> usize {
        self.lips
            .as_ref()
            .map(LipPatches::len)
            .or(self.valence.as_ref().map(Vec::len))
            .or(self.arousal.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::config("fps must be positive"));
        }
        let t_v = self.frames();
        if t_v == 0 {
            return Err(Error::EmptyInput("video track has no frames".into()));
        }
        if let Some(l) = &self.lips {
            if l.len() != t_v {
                return Err(Error::shape("lip frames disagree with T_v"));
            }
            if l.frames.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidFeature("non-finite lip patch value".into()));
            }
        }
        for (name, track) in [("valence", &self.valence), ("arousal", &self.arousal)] {
            if let Some(v) = track {
                if v.len() != t_v {
                    return Err(Error::shape(format!("{name} length {} != T_v {t_v}", v.len())));
                }
                if let Some(x) = v.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                    return Err(Error::Validation(format!("{name} {x} outside [-1, 1]")));
                }
            }
        }
        if let Some(s) = &self.scene {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidFeature("non-finite scene value".into()));
            }
        }
        Ok(())
    }
}

fn block_config(cfg: &Config) -> FftBlockConfig {
    FftBlockConfig {
        dim: cfg.dim,
        heads: cfg.fft_heads,
        ffn_hidden: cfg.ffn_hidden,
        ffn_kernels: (cfg.ffn_kernel, cfg.ffn_kernel2),
        dropout: cfg.dropout,
    }
}

/// Token embedding, positions, then a stack of FFT blocks.
#[derive(Clone, Debug)]
pub struct PhonemeEncoder {
    pub embedding: ParamId,
    pub stack: FftStack,
}

impl PhonemeEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        Self {
            embedding: store.add_normal("phoneme.embedding", cfg.n_phonemes, cfg.dim, 0.3, rng),
            stack: FftStack::new(store, rng, "phoneme.fft", cfg.phoneme_blocks, block_config(cfg)),
        }
    }

    pub fn forward(&self, g: &mut Graph, seq: &PhonemeSequence) -> Var {
        let table = g.param(self.embedding);
        let rows: Vec<Option<usize>> = seq
            .tokens
            .iter()
            .zip(&seq.mask)
            .map(|(&t, &m)| m.then_some(t as usize))
            .collect();
        let x = g.gather_rows(table, &rows);
        self.stack.forward(g, x, &seq.mask)
    }
}

/// Two-layer 3-D convolution stem, spatial average pool, linear lift, FFT blocks.
#[derive(Clone, Debug)]
pub struct LipEncoder {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub proj: Linear,
    pub stack: FftStack,
}

impl LipEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config, in_channels: usize) -> Self {
        let (c1, c2) = cfg.lip_channels;
        Self {
            conv1: Conv3d::new(store, rng, "lip.conv1", in_channels, c1, (3, 5, 5), (2, 2)),
            conv2: Conv3d::new(store, rng, "lip.conv2", c1, c2, (3, 3, 3), (2, 2)),
            proj: Linear::new(store, rng, "lip.proj", c2, cfg.dim),
            stack: FftStack::new(store, rng, "lip.fft", cfg.lip_blocks, block_config(cfg)),
        }
    }

    pub fn forward(&self, g: &mut Graph, lips: &LipPatches) -> Var {
        let pooled = conv_stem(g, lips, &self.conv1, &self.conv2);
        let x = self.proj.forward(g, pooled);
        let mask = vec![true; lips.len()];
        self.stack.forward(g, x, &mask)
    }
}

/// Runs two stride-2 convolutions and averages over space: `T_v × C_out`.
fn conv_stem(g: &mut Graph, lips: &LipPatches, conv1: &Conv3d, conv2: &Conv3d) -> Var {
    let vol = Volume {
        t: lips.len(),
        h: lips.height,
        w: lips.width,
    };
    let voxels = lips
        .frames
        .to_shape((vol.voxels(), lips.channels))
        .expect("contiguous lip frames")
        .to_owned();
    let x = g.constant(voxels);
    let (h, vol) = conv1.forward(g, x, vol);
    let h = g.relu(h);
    let (h, vol) = conv2.forward(g, h, vol);
    let h = g.relu(h);
    g.row_group_mean(h, vol.h * vol.w)
}

/// Lifts file-ingested valence/arousal scalars to the model width.
#[derive(Clone, Debug)]
pub struct AffectEncoder {
    pub valence: Linear,
    pub arousal: Linear,
    pub dim: usize,
}

impl AffectEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            valence: Linear::new(store, rng, "affect.valence", 1, dim),
            arousal: Linear::new(store, rng, "affect.arousal", 1, dim),
            dim,
        }
    }

    fn lift(&self, g: &mut Graph, lin: &Linear, track: &[f64]) -> Var {
        let x = g.constant(Array2::from_shape_fn((track.len(), 1), |(t, _)| track[t]));
        let y = lin.forward(g, x);
        let pe = g.constant(sinusoidal_positions(track.len(), self.dim));
        g.add(y, pe)
    }

    /// Returns `(V, A)`, each `T_v × dim`.
    pub fn forward(&self, g: &mut Graph, video: &VideoFeatureTrack) -> Result<(Var, Var)> {
        let valence = video
            .valence
            .as_deref()
            .ok_or_else(|| Error::MissingFeature("valence track".into()))?;
        let arousal = video
            .arousal
            .as_deref()
            .ok_or_else(|| Error::MissingFeature("arousal track".into()))?;
        Ok((
            self.lift(g, &self.valence, valence),
            self.lift(g, &self.arousal, arousal),
        ))
    }
}

/// Stand-in for a pretrained facial-affect network: a small conv encoder
/// over the face (here mouth) crops emitting both affect streams.
#[derive(Clone, Debug)]
pub struct FaceFeatureEncoder {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub proj: Linear,
    pub dim: usize,
}

impl FaceFeatureEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config, in_channels: usize) -> Self {
        let c = cfg.face_channels;
        Self {
            conv1: Conv3d::new(store, rng, "face.conv1", in_channels, c, (3, 5, 5), (2, 2)),
            conv2: Conv3d::new(store, rng, "face.conv2", c, c, (3, 3, 3), (2, 2)),
            proj: Linear::new(store, rng, "face.proj", c, 2 * cfg.dim),
            dim: cfg.dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, video: &VideoFeatureTrack) -> Result<(Var, Var)> {
        let lips = video
            .lips
            .as_ref()
            .ok_or_else(|| Error::MissingFeature("face patches".into()))?;
        let pooled = conv_stem(g, lips, &self.conv1, &self.conv2);
        let both = self.proj.forward(g, pooled);
        let pe = g.constant(sinusoidal_positions(lips.len(), self.dim));
        let v = g.slice_cols(both, 0, self.dim);
        let a = g.slice_cols(both, self.dim, self.dim);
        Ok((g.add(v, pe), g.add(a, pe)))
    }
}

/// Trainable speaker lookup; rows are L2-normalized on the way out.
#[derive(Clone, Debug)]
pub struct SpeakerTable {
    pub table: ParamId,
    pub size: usize,
}

impl SpeakerTable {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, size: usize, dim: usize) -> Self {
        Self {
            table: store.add_normal("speaker.table", size, dim, 1.0, rng),
            size,
        }
    }

    /// `1 × dim` unit vector for `id`.
    pub fn forward(&self, g: &mut Graph, id: usize) -> Result<Var> {
        if id >= self.size {
            return Err(Error::UnknownSpeaker { id, size: self.size });
        }
        let t = g.param(self.table);
        let row = g.gather_rows(t, &[Some(id)]);
        Ok(g.l2_normalize_rows(row))
    }

    /// Externally computed speaker vector, normalized but not trained.
    pub fn external(g: &mut Graph, vector: &[f64]) -> Result<Var> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature("non-finite speaker vector".into()));
        }
        let x = g.constant(Array2::from_shape_vec((1, vector.len()), vector.to_vec()).expect("row"));
        Ok(g.l2_normalize_rows(x))
    }

    pub fn embedding(&self, store: &ParamStore, id: usize) -> Result<SpeakerEmbedding> {
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, id)?;
        Ok(SpeakerEmbedding {
            vector: g.value(v).index_axis(Axis(0), 0).to_vec(),
            speaker_id: id,
        })
    }
}
