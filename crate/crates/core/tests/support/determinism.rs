//! Seeds pin down data, training and saved models.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hpmdub::checkpoint::Checkpoint;
use hpmdub::config::Config;
use hpmdub::data::{generate_dataset, generate_samples, Split, SyntheticSpec};
use hpmdub::training::{model_input, LossReport, Trainer};

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Generates the dataset twice with one seed and once with another.
/// Returns (file count, same seed identical, other seed differs).
pub fn dataset(n_samples: usize) -> (usize, bool, bool) {
    let spec = SyntheticSpec { n_samples, ..SyntheticSpec::default() };
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    generate_dataset(&spec, dirs[0].path()).unwrap();
    generate_dataset(&spec, dirs[1].path()).unwrap();
    generate_dataset(&SyntheticSpec { seed: 2, ..spec }, dirs[2].path()).unwrap();
    let t: Vec<_> = dirs.iter().map(|d| tree(d.path())).collect();
    (t[0].len(), t[0] == t[1], t[0] != t[2])
}

pub fn desk_trainer_losses(steps: usize) -> Vec<LossReport> {
    let data = generate_samples(&SyntheticSpec::default()).unwrap();
    let train = super::split(&data, Split::Train);
    let mut t = Trainer::new(&Config::desk(), train).unwrap();
    t.run(steps, |_, _| {}).unwrap()
}

/// Largest difference of any loss term between two identical desk runs.
pub fn training_max_diff(steps: usize) -> f64 {
    let (a, b) = (desk_trainer_losses(steps), desk_trainer_losses(steps));
    assert_eq!(a.len(), steps);
    a.iter()
        .zip(&b)
        .flat_map(|(x, y)| [(x.total, y.total), (x.mel, y.mel), (x.pitch, y.pitch), (x.energy, y.energy), (x.emo, y.emo)])
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

/// Saves a briefly trained model, reloads it, and returns the largest output
/// difference. Fails if metadata or the re-saved bytes disagree.
pub fn checkpoint_round_trip() -> Result<f64, String> {
    let data = super::samples(6, (3, 6), 4);
    let refs: Vec<_> = data.iter().collect();
    let cfg = Config { batch_size: 3, ..super::micro_config() };
    let mut trainer = Trainer::new(&cfg, refs.clone()).map_err(|e| e.to_string())?;
    trainer.run(3, |_, _| {}).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    trainer.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    if loaded.step != 3 || loaded.config().hash() != cfg.hash() || loaded.synth.stats != trainer.synth.stats {
        return Err("checkpoint metadata changed".into());
    }
    let mut worst = 0.0f64;
    for s in &refs {
        let before = trainer.synth.model.infer(model_input(s), None).map_err(|e| e.to_string())?;
        let after = loaded.synth.model.infer(model_input(s), None).map_err(|e| e.to_string())?;
        if before.emotion != after.emotion {
            return Err(format!("{}: emotion output changed", s.id));
        }
        worst = before
            .mel_after
            .iter()
            .zip(after.mel_after.iter())
            .chain(before.pitch.iter().zip(&after.pitch))
            .chain(before.energy.iter().zip(&after.energy))
            .fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    if loaded.to_bytes() != fs::read(&path).unwrap() {
        return Err("re-saved checkpoint bytes differ".into());
    }
    Ok(worst)
}
