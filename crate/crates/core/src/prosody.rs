//! Affect-driven prosody: additive attention from arousal/valence queries
//! over the expanded phoneme-lip sequence, energy and pitch predictors, and
//! the concatenated prosody feature.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Mat, ParamId, ParamStore, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::{Linear, VariancePredictor};

/// Additive (Bahdanau-form) attention:
/// `score(i, k) = wᵀ tanh(W q_i + U m_k + b)`, softmax over `k`,
/// context `c_i = Σ_k ξ(i, k) m_k`.
#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub query: ParamId,
    pub memory: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        attention_dim: usize,
    ) -> Self {
        Self {
            query: store.add_glorot(format!("{name}.W"), dim, attention_dim, rng),
            memory: store.add_glorot(format!("{name}.U"), dim, attention_dim, rng),
            bias: store.add_zeros(format!("{name}.b"), 1, attention_dim),
            score: store.add_glorot(format!("{name}.w"), attention_dim, 1, rng),
        }
    }

    /// Returns `(context T_q × dim, weights T_q × T_m)`.
    pub fn forward(&self, g: &mut Graph, queries: Var, memory: Var) -> Result<(Var, Var)> {
        if g.cols(queries) != g.cols(memory) {
            return Err(Error::shape(format!(
                "query width {} != memory width {}",
                g.cols(queries),
                g.cols(memory)
            )));
        }
        let (tq, tm) = (g.rows(queries), g.rows(memory));
        if tq == 0 || tm == 0 {
            return Err(Error::EmptyInput("attention over an empty sequence".into()));
        }
        let w = g.param(self.query);
        let u = g.param(self.memory);
        let wq = g.matmul(queries, w);
        let um = g.matmul(memory, u);
        let q_rows: Vec<Option<usize>> = (0..tq * tm).map(|p| Some(p / tm)).collect();
        let m_rows: Vec<Option<usize>> = (0..tq * tm).map(|p| Some(p % tm)).collect();
        let qe = g.gather_rows(wq, &q_rows);
        let me = g.gather_rows(um, &m_rows);
        let pre = g.add(qe, me);
        let b = g.param(self.bias);
        let pre = g.add_row(pre, b);
        let act = g.tanh(pre);
        let v = g.param(self.score);
        let scores = g.matmul(act, v);
        let scores = g.reshape(scores, tq, tm);
        let weights = g.softmax_rows(scores);
        Ok((g.matmul(weights, memory), weights))
    }
}

/// Concatenates arousal and valence contexts row-wise: `T × 2·dim`.
pub fn assemble_prosody(g: &mut Graph, arousal_ctx: Var, valence_ctx: Var) -> Result<Var> {
    if g.rows(arousal_ctx) != g.rows(valence_ctx) {
        return Err(Error::shape(format!(
            "prosody lengths differ: {} vs {}",
            g.rows(arousal_ctx),
            g.rows(valence_ctx)
        )));
    }
    Ok(g.concat_cols(&[arousal_ctx, valence_ctx]))
}

pub struct ProsodyOutput {
    /// `T_y × 1` normalized energy.
    pub energy: Var,
    /// `T_y × 1` normalized log-F0.
    pub pitch: Var,
    /// `T_y × 2·dim`.
    pub feature: Var,
    pub arousal_weights: Option<Var>,
    pub valence_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ProsodyAdaptor {
    pub arousal: AdditiveAttention,
    pub valence: AdditiveAttention,
    pub energy: VariancePredictor,
    pub speaker_mix: Linear,
    pub pitch: VariancePredictor,
    pub use_arousal: bool,
    pub use_valence: bool,
}

impl ProsodyAdaptor {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        let predictor = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
            VariancePredictor::new(
                store,
                rng,
                name,
                cfg.dim,
                cfg.predictor_hidden,
                cfg.predictor_kernel,
                cfg.dropout,
            )
        };
        Self {
            arousal: AdditiveAttention::new(store, rng, "adaptor.arousal", cfg.dim, cfg.attention_dim),
            valence: AdditiveAttention::new(store, rng, "adaptor.valence", cfg.dim, cfg.attention_dim),
            energy: predictor(store, rng, "adaptor.energy"),
            speaker_mix: Linear::new(store, rng, "adaptor.speaker_mix", 2 * cfg.dim, cfg.dim),
            pitch: predictor(store, rng, "adaptor.pitch"),
            use_arousal: cfg.use_arousal,
            use_valence: cfg.use_valence,
        }
    }

    /// Arousal context over `memory` (`T_y × dim`), queries already at `T_y` rows.
    pub fn arousal_context(&self, g: &mut Graph, queries: Var, memory: Var) -> Result<(Var, Var)> {
        self.arousal.forward(g, queries, memory)
    }

    pub fn valence_context(&self, g: &mut Graph, queries: Var, memory: Var) -> Result<(Var, Var)> {
        self.valence.forward(g, queries, memory)
    }

    pub fn predict_energy(&self, g: &mut Graph, ctx: Var) -> Var {
        self.energy.forward(g, ctx)
    }

    /// Broadcasts the `1 × dim` speaker vector onto every row before prediction.
    pub fn predict_pitch(&self, g: &mut Graph, ctx: Var, speaker: Var) -> Var {
        let rows = vec![Some(0); g.rows(ctx)];
        let tiled = g.gather_rows(speaker, &rows);
        let joined = g.concat_cols(&[ctx, tiled]);
        let mixed = self.speaker_mix.forward(g, joined);
        self.pitch.forward(g, mixed)
    }

    /// `arousal` and `valence` are `T_v × dim` affect sequences; `upsample`
    /// maps each of the `T_y` memory rows to its video frame.
    pub fn forward(
        &self,
        g: &mut Graph,
        memory: Var,
        arousal: Option<Var>,
        valence: Option<Var>,
        upsample: &[Option<usize>],
        speaker: Var,
    ) -> Result<ProsodyOutput> {
        if upsample.len() != g.rows(memory) {
            return Err(Error::shape("upsample table length differs from T_y"));
        }
        let (a_ctx, a_w) = match (self.use_arousal, arousal) {
            (true, Some(a)) => {
                let q = g.gather_rows(a, upsample);
                let (c, w) = self.arousal_context(g, q, memory)?;
                (c, Some(w))
            }
            (true, None) => return Err(Error::MissingFeature("arousal stream".into())),
            (false, _) => (memory, None),
        };
        let (v_ctx, v_w) = match (self.use_valence, valence) {
            (true, Some(v)) => {
                let q = g.gather_rows(v, upsample);
                let (c, w) = self.valence_context(g, q, memory)?;
                (c, Some(w))
            }
            (true, None) => return Err(Error::MissingFeature("valence stream".into())),
            (false, _) => (memory, None),
        };
        let energy = self.predict_energy(g, a_ctx);
        let pitch = self.predict_pitch(g, v_ctx, speaker);
        let feature = assemble_prosody(g, a_ctx, v_ctx)?;
        Ok(ProsodyOutput {
            energy,
            pitch,
            feature,
            arousal_weights: a_w,
            valence_weights: v_w,
        })
    }
}

/// Column mean of `m`, the context every query receives when all attention
/// parameters are zero.
pub fn column_mean(m: &Mat) -> Vec<f64> {
    m.mean_axis(ndarray::Axis(0)).map(|v| v.to_vec()).unwrap_or_default()
}
