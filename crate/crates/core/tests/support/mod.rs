//! Fixtures and oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod attention;
pub mod determinism;
pub mod dtw;
pub mod equations;
pub mod gradients;
pub mod lengths;
pub mod targets;

use hpmdub::config::Config;
use hpmdub::data::{generate_samples, DubbingSample, Split, SyntheticSpec};
use hpmdub::frontend::{LipPatches, VideoFeatureTrack};
use ndarray::Array2;

/// Smallest widths that still exercise every block.
pub fn micro_config() -> Config {
    Config {
        dim: 8,
        fft_heads: 2,
        ffn_hidden: 8,
        aligner_heads: 2,
        attention_dim: 4,
        predictor_hidden: 4,
        postnet_channels: 4,
        postnet_layers: 2,
        decoder_blocks: 1,
        phoneme_blocks: 1,
        lip_blocks: 1,
        lip_channels: (2, 2),
        face_channels: 2,
        ..Config::desk()
    }
}

pub fn samples(n: usize, frames: (usize, usize), seed: u64) -> Vec<DubbingSample> {
    let spec = SyntheticSpec { n_samples: n, frames, seed, ..SyntheticSpec::default() };
    generate_samples(&spec).unwrap().into_iter().map(|(s, _)| s).collect()
}

pub fn split(data: &[(DubbingSample, Split)], which: Split) -> Vec<&DubbingSample> {
    data.iter().filter(|(_, s)| *s == which).map(|(s, _)| s).collect()
}

/// `base` stretched or cut to `t_v` frames by cycling its rows.
pub fn video_of_len(base: &VideoFeatureTrack, t_v: usize) -> VideoFeatureTrack {
    let lips = base.lips.as_ref().unwrap();
    let n = lips.len();
    let frames = Array2::from_shape_fn((t_v, lips.frames.ncols()), |(t, c)| lips.frames[[t % n, c]]);
    let cycle = |v: &Option<Vec<f64>>| v.as_ref().map(|v| (0..t_v).map(|t| v[t % v.len()]).collect());
    VideoFeatureTrack {
        lips: Some(LipPatches::new(frames, lips.height, lips.width, lips.channels).unwrap()),
        valence: cycle(&base.valence),
        arousal: cycle(&base.arousal),
        scene: base.scene.clone(),
        fps: base.fps,
    }
}
