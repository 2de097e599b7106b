//! Mel decoder: joins the three hidden streams, runs the FFT decoder, projects
//! to mel bins and refines with a residual convolutional postnet.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, FftBlockConfig, FftStack, Linear};

pub use crate::audio::MelSpectrogram;

/// `Conv1d → tanh` layers with a final linear `Conv1d`, added back onto its input.
#[derive(Clone, Debug)]
pub struct Postnet {
    pub layers: Vec<Conv1d>,
}

impl Postnet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let n = cfg.postnet_layers;
        let layers = (0..n)
            .map(|i| {
                let in_ch = if i == 0 { cfg.n_mels } else { cfg.postnet_channels };
                let out_ch = if i + 1 == n { cfg.n_mels } else { cfg.postnet_channels };
                Conv1d::new(store, rng, &format!("postnet.{i}"), in_ch, out_ch, cfg.postnet_kernel)
            })
            .collect();
        Self { layers }
    }

    /// Residual correction only (not yet added to the input).
    pub fn forward(&self, g: &mut Graph, mel: Var) -> Var {
        let mut h = mel;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        h
    }

    /// Zeroes every postnet parameter, making it an exact identity residual.
    pub fn zero(&self, store: &mut ParamStore) {
        for layer in &self.layers {
            store.value_mut(layer.weight).fill(0.0);
            store.value_mut(layer.bias).fill(0.0);
        }
    }
}

pub struct MelOutput {
    pub before: Var,
    pub after: Var,
}

#[derive(Clone, Debug)]
pub struct MelGenerator {
    pub join: Linear,
    pub decoder: FftStack,
    pub mel_linear: Linear,
    pub postnet: Postnet,
}

impl MelGenerator {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let block = FftBlockConfig {
            dim: cfg.dim,
            heads: cfg.fft_heads,
            ffn_hidden: cfg.ffn_hidden,
            ffn_kernels: (cfg.ffn_kernel, cfg.ffn_kernel2),
            dropout: cfg.dropout,
        };
        Self {
            join: Linear::new(store, rng, "decoder.join", 4 * cfg.dim, cfg.dim),
            decoder: FftStack::new(store, rng, "decoder.fft", cfg.decoder_blocks, block),
            mel_linear: Linear::new(store, rng, "decoder.mel_linear", cfg.dim, cfg.n_mels),
            postnet: Postnet::new(store, rng, cfg),
        }
    }

    /// `[M_phl ; M_p ; M_e]` → linear join → FFT decoder: `T_y × dim`.
    pub fn decode(&self, g: &mut Graph, phoneme_lip: Var, prosody: Var, scene: Var) -> Result<Var> {
        let t = g.rows(phoneme_lip);
        if g.rows(prosody) != t || g.rows(scene) != t {
            return Err(Error::shape(format!(
                "decoder inputs disagree on T_y: {t}, {}, {}",
                g.rows(prosody),
                g.rows(scene)
            )));
        }
        let joined = g.concat_cols(&[phoneme_lip, prosody, scene]);
        let h = self.join.forward(g, joined);
        let mask = vec![true; t];
        Ok(self.decoder.forward(g, h, &mask))
    }

    pub fn to_mel(&self, g: &mut Graph, hidden: Var) -> MelOutput {
        let before = self.mel_linear.forward(g, hidden);
        let residual = self.postnet.forward(g, before);
        let after = g.add(before, residual);
        MelOutput { before, after }
    }
}
