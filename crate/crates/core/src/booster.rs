//! Scene atmosphere: cross attention from the prosody sequence onto scene
//! features, and the clip-level emotion head.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Mat, ParamStore, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::Linear;

pub const EMOTIONS: [&str; 8] = [
    "angry", "disgust", "fear", "happy", "neutral", "sad", "surprise", "others",
];

/// Clip-level emotion logits and their softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionPrediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl EmotionPrediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Self {
            probabilities: exp.iter().map(|e| e / z).collect(),
            logits,
        }
    }

    pub fn argmax(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
            .0
    }
}

/// Tiles a single scene vector to `tiles` rows; multi-row scenes pass through.
pub fn tile_scene(scene: &Mat, tiles: usize) -> Mat {
    if scene.nrows() == 1 && tiles > 1 {
        Array2::from_shape_fn((tiles, scene.ncols()), |(_, c)| scene[[0, c]])
    } else {
        scene.clone()
    }
}

pub struct Boosted {
    /// `T_y × dim`.
    pub context: Var,
    /// `T_y × T_s`, absent when the booster is bypassed.
    pub weights: Option<Var>,
    /// `1 × C`, absent when the booster is bypassed.
    pub emotion_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct AtmosphereBooster {
    pub scene_proj: Linear,
    pub query: Linear,
    pub emotion: Linear,
    pub enabled: bool,
    pub strict: bool,
    pub tiles: usize,
    pub dim: usize,
}

impl AtmosphereBooster {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &Config) -> Self {
        Self {
            scene_proj: Linear::new(store, rng, "booster.scene", cfg.scene_dim, cfg.dim),
            query: Linear::new(store, rng, "booster.query", 2 * cfg.dim, cfg.dim),
            emotion: Linear::new(store, rng, "booster.emotion", cfg.dim, cfg.n_emotions),
            enabled: cfg.booster_enabled,
            strict: cfg.strict_attention,
            tiles: cfg.scene_tiles,
            dim: cfg.dim,
        }
    }

    /// Projects raw scene rows to the model width: `T_s × dim`.
    pub fn project_scene(&self, g: &mut Graph, scene_raw: &Mat) -> Result<Var> {
        if scene_raw.nrows() == 0 {
            return Err(Error::MissingFeature("scene sequence is empty".into()));
        }
        if scene_raw.ncols() != self.scene_proj.in_dim {
            return Err(Error::shape(format!(
                "scene width {} != configured {}",
                scene_raw.ncols(),
                self.scene_proj.in_dim
            )));
        }
        let s = g.constant(tile_scene(scene_raw, self.tiles));
        Ok(self.scene_proj.forward(g, s))
    }

    /// `softmax(Q Sᵀ / √dim)` with `Q` projected from the prosody feature.
    /// Values are the scene rows, or (strict mode) the projected prosody rows,
    /// which requires `T_s = T_y`.
    pub fn fuse_scene(&self, g: &mut Graph, prosody: Var, scene: Var) -> Result<(Var, Var)> {
        let (t_y, t_s) = (g.rows(prosody), g.rows(scene));
        if t_s == 0 {
            return Err(Error::MissingFeature("scene sequence is empty".into()));
        }
        if self.strict && t_s != t_y {
            return Err(Error::shape(format!(
                "strict scene attention needs T_s = T_y (got {t_s} vs {t_y})"
            )));
        }
        let q = self.query.forward(g, prosody);
        let scores = g.matmul_nt(q, scene);
        let scores = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let w = g.softmax_rows(scores);
        let values = if self.strict { q } else { scene };
        Ok((g.matmul(w, values), w))
    }

    /// Per-frame linear head, then max over time: `1 × C` logits.
    pub fn predict_emotion(&self, g: &mut Graph, context: Var) -> Var {
        let per_frame = self.emotion.forward(g, context);
        g.max_rows(per_frame)
    }

    pub fn forward(&self, g: &mut Graph, prosody: Var, scene_raw: Option<&Mat>) -> Result<Boosted> {
        if !self.enabled {
            return Ok(Boosted {
                context: self.query.forward(g, prosody),
                weights: None,
                emotion_logits: None,
            });
        }
        let scene_raw = scene_raw.ok_or_else(|| Error::MissingFeature("scene features".into()))?;
        let scene = self.project_scene(g, scene_raw)?;
        let (context, weights) = self.fuse_scene(g, prosody, scene)?;
        let logits = self.predict_emotion(g, context);
        Ok(Boosted {
            context,
            weights: Some(weights),
            emotion_logits: Some(logits),
        })
    }
}
