//! Row-stochasticity and masking of every attention map in the network.

use std::sync::OnceLock;

use hpmdub::autograd::{Graph, Mat, ParamStore};
use hpmdub::config::Config;
use hpmdub::data::DubbingSample;
use hpmdub::frontend::{PhonemeSequence, PAD};
use hpmdub::model::{DubbingModel, ModelInput, SpeakerRef};
use hpmdub::nn::MultiHeadAttention;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Shape {
    pub dim_per_head: usize,
    pub aligner_heads: usize,
    pub fft_heads: usize,
    pub attention_dim: usize,
    pub t_v: usize,
    pub tokens: usize,
    pub padding: usize,
    pub seed: u64,
}

impl Shape {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            dim_per_head: rng.random_range(1..=3),
            aligner_heads: [1, 2, 4][rng.random_range(0..3)],
            fft_heads: [1, 2][rng.random_range(0..2)],
            attention_dim: rng.random_range(2..=6),
            t_v: rng.random_range(1..=9),
            tokens: rng.random_range(1..=8),
            padding: rng.random_range(0..=4),
            seed: rng.random(),
        }
    }
}

fn base() -> &'static DubbingSample {
    static BASE: OnceLock<Vec<DubbingSample>> = OnceLock::new();
    &BASE.get_or_init(|| super::samples(1, (4, 4), 3))[0]
}

fn check_rows(name: &str, w: &Mat, key_mask: Option<&[bool]>) -> Result<(), String> {
    for (i, row) in w.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(format!("{name} row {i} sums to {}", row.sum()));
        }
        if row.iter().any(|&x| x < 0.0) {
            return Err(format!("{name} row {i} has a negative weight"));
        }
        if let Some(mask) = key_mask {
            if let Some(j) = (0..mask.len()).find(|&j| !mask[j] && row[j] != 0.0) {
                return Err(format!("{name} row {i} gives padding key {j} weight {}", row[j]));
            }
        }
    }
    Ok(())
}

/// Aligner heads, both prosody branches, the scene attention, and FFT
/// self-attention over a padded sequence.
pub fn check(shape: &Shape) -> Result<(), String> {
    let dim = shape.dim_per_head * 4;
    let cfg = Config {
        dim,
        aligner_heads: shape.aligner_heads,
        fft_heads: shape.fft_heads,
        attention_dim: shape.attention_dim,
        ..super::micro_config()
    };
    let model = DubbingModel::new(&cfg, shape.seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);

    let mut tokens: Vec<u32> = (0..shape.tokens).map(|_| rng.random_range(0..39)).collect();
    tokens.extend(std::iter::repeat_n(PAD, shape.padding));
    let phonemes = PhonemeSequence::new(tokens).map_err(|e| e.to_string())?;
    let video = super::video_of_len(&base().video, shape.t_v);
    let input = ModelInput { phonemes: &phonemes, video: &video, speaker: SpeakerRef::Id(0) };

    let mut g = Graph::new(&model.store);
    let out = model.forward(&mut g, input, None).map_err(|e| e.to_string())?;
    if out.alignment_weights.len() != shape.aligner_heads {
        return Err(format!("{} aligner heads, expected {}", out.alignment_weights.len(), shape.aligner_heads));
    }
    for w in &out.alignment_weights {
        if g.value(*w).dim() != (shape.t_v, phonemes.len()) {
            return Err(format!("aligner weights have shape {:?}", g.value(*w).dim()));
        }
        check_rows("aligner", g.value(*w), Some(&phonemes.mask))?;
    }
    for (name, w) in [("arousal", out.arousal_weights), ("valence", out.valence_weights), ("scene", out.scene_weights)] {
        check_rows(name, g.value(w.ok_or(format!("{name} weights missing"))?), None)?;
    }

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "fft", dim, shape.fft_heads);
    let t = shape.tokens + shape.padding;
    let x = Array2::from_shape_fn((t, dim), |_| rng.random_range(-3.0..3.0));
    let mut g = Graph::new(&store);
    let xv = g.constant(x);
    let att = mha.forward(&mut g, xv, xv, Some(&phonemes.mask));
    for w in &att.weights {
        check_rows("self", g.value(*w), Some(&phonemes.mask))?;
    }
    Ok(())
}

/// `n` seeded random shapes; the first failure, if any.
pub fn sweep(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let shape = Shape::random(&mut rng);
        check(&shape).map_err(|e| format!("config {i} {shape:?}: {e}"))?;
    }
    Ok(())
}
