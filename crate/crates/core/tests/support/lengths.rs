//! Output length contract.

use hpmdub::aligner::FrameRatio;
use hpmdub::autograd::Graph;
use hpmdub::config::{Config, Expansion};
use hpmdub::model::{DubbingModel, ModelInput, SpeakerRef};

pub const RATIOS: [f64; 4] = [2.0, 3.0, 4.0, 4.3066];

/// Inference yields `round(r · T_v)` frames for every `T_v` in `1..=max_t_v`,
/// every ratio, and both expansion modes. Returns the number of cases checked.
pub fn inference(max_t_v: usize) -> Result<usize, String> {
    let base = &super::samples(1, (4, 4), 5)[0];
    let mut checked = 0;
    for expansion in [Expansion::ConvTranspose, Expansion::Duplicate] {
        let cfg = Config { expansion, ..super::micro_config() };
        let mut model = DubbingModel::new(&cfg, 1).map_err(|e| e.to_string())?;
        for r in RATIOS {
            model.ratio = FrameRatio::from_r(r).map_err(|e| e.to_string())?;
            for t_v in 1..=max_t_v {
                let video = super::video_of_len(&base.video, t_v);
                let input = ModelInput { phonemes: &base.phonemes, video: &video, speaker: SpeakerRef::Id(0) };
                let out = model.infer(input, None).map_err(|e| e.to_string())?;
                let want = (r * t_v as f64).round() as usize;
                let got = [out.mel_after.nrows(), out.mel_before.nrows(), out.pitch.len(), out.energy.len()];
                if got.iter().any(|&n| n != want) {
                    return Err(format!("{expansion:?} r={r} T_v={t_v}: lengths {got:?}, expected {want}"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Training-mode passes produce exactly the teacher length, including
/// lengths far from `round(r · T_v)`.
pub fn teacher() -> Result<usize, String> {
    let base = &super::samples(1, (4, 4), 5)[0];
    let mut model = DubbingModel::new(&super::micro_config(), 2).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for r in RATIOS {
        model.ratio = FrameRatio::from_r(r).map_err(|e| e.to_string())?;
        for t_v in [1, 2, 7, 31, 64] {
            let video = super::video_of_len(&base.video, t_v);
            let natural = (r * t_v as f64).round() as usize;
            for teacher in [1, natural.saturating_sub(3).max(1), natural, natural + 1, natural + 9] {
                let input = ModelInput { phonemes: &base.phonemes, video: &video, speaker: SpeakerRef::Id(0) };
                let mut g = Graph::training(&model.store, 7);
                let out = model.forward(&mut g, input, Some(teacher)).map_err(|e| e.to_string())?;
                let got = [out.mel_len, g.rows(out.mel_after), g.rows(out.mel_before), g.rows(out.pitch), g.rows(out.energy)];
                if got.iter().any(|&n| n != teacher) {
                    return Err(format!("r={r} T_v={t_v} teacher={teacher}: lengths {got:?}"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
