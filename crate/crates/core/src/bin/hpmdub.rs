use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hpmdub::audio::{MelSpectrogram, LOG_FLOOR_DB};
use hpmdub::booster::EMOTIONS;
use hpmdub::checkpoint::{step_path, Checkpoint};
use hpmdub::config::{Ablation, Config};
use hpmdub::data::{generate_dataset, Dataset, DubbingSample, Split, SyntheticSpec};
use hpmdub::evaluation::{evaluate_variant, MelClassifier, MetricReport, MetricSummary, VariantReport};
use hpmdub::io::{read_matrix, write_csv, write_matrix};
use hpmdub::training::{model_input, LossReport, Synthesizer, Trainer};
use hpmdub::vocoder::{griffin_lim, write_wav};

/// Hierarchical-prosody movie dubbing: data, training, inference, metrics.
#[derive(Parser)]
#[command(name = "hpmdub", version, propagate_version = true)]
struct Cli {
    /// Machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic audiovisual dataset with known ground truth.
    SynthData(SynthArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Synthesize mels (and optionally audio) for a dataset split.
    Infer(InferArgs),
    /// Score generated mels against references.
    Eval(EvalArgs),
    /// Synthesize one clip to a binary mel with a JSON sidecar.
    ExportMel(ExportArgs),
    /// Train an ablated variant and compare it with the full model.
    Ablate(AblateArgs),
    /// Fit the emotion and speaker mel classifiers used by `eval`.
    Classifiers(ClassifierArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (`key = value` lines, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// File (or desk defaults), then `--set`, then `HPM_SEED`.
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_file(p)?,
            None => Config::desk(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("HPM_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("HPM_SEED='{v}' is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of clips.
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Generator seed (`HPM_SEED` wins when set).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
    /// Video frame rate.
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    /// Shortest clip, in video frames.
    #[arg(long, default_value_t = 8)]
    min_frames: usize,
    /// Longest clip, in video frames.
    #[arg(long, default_value_t = 12)]
    max_frames: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by `synth-data`.
    #[arg(long)]
    data: PathBuf,
    /// Run directory: checkpoint, loss log, resolved config.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Shorthand for `--set train.steps=N`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory, one subdirectory per clip.
    #[arg(long)]
    out: PathBuf,
    /// Also write Griffin-Lim audio per clip.
    #[arg(long)]
    wav: bool,
    /// Griffin-Lim iterations.
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference dataset directory.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Directory written by `infer`.
    #[arg(long)]
    gen: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory written by `classifiers`.
    #[arg(long)]
    classifiers: Option<PathBuf>,
    /// Report directory (defaults to the generated directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Sample id; defaults to the first test clip.
    #[arg(long)]
    id: Option<String>,
    /// Mel binary path; the sidecar goes next to it as `.json`.
    #[arg(long)]
    out: PathBuf,
    /// Griffin-Lim audio path.
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Griffin-Lim iterations.
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// no-da, no-pa, no-ab, no-valence, no-arousal, face-features, single-head or duplicate.
    #[arg(long)]
    preset: String,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Report directory, with one run directory per variant.
    #[arg(long, default_value = "runs/ablate")]
    out: PathBuf,
    /// Full-model checkpoint to compare against instead of retraining it.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Shorthand for `--set train.steps=N`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ClassifierArgs {
    /// Dataset directory; classifiers fit its train split.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `emotion.cls` and `speaker.cls`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Convolution width.
    #[arg(long, default_value_t = 16)]
    channels: usize,
}

fn parse_split(s: &str) -> Result<Split> {
    Split::parse(s).with_context(|| format!("unknown split '{s}' (train, val, test)"))
}

fn emit(json: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn synth_data(a: &SynthArgs, json: bool) -> Result<()> {
    let spec = SyntheticSpec {
        n_samples: a.n,
        n_speakers: a.speakers,
        fps: a.fps,
        frames: (a.min_frames, a.max_frames),
        seed: env_seed()?.unwrap_or(a.seed),
        ..SyntheticSpec::default()
    };
    let manifest = generate_dataset(&spec, &a.out)?;
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| manifest.ids(s).len());
    emit(
        json,
        json!({"out": a.out, "samples": manifest.entries.len(), "train": counts[0], "val": counts[1],
               "test": counts[2], "seed": spec.seed, "spec_hash": manifest.spec_hash}),
        || {
            format!(
                "wrote {} samples to {} (train {}, val {}, test {}; seed {})",
                manifest.entries.len(),
                a.out.display(),
                counts[0],
                counts[1],
                counts[2],
                spec.seed
            )
        },
    );
    Ok(())
}

fn check_compatible(cfg: &Config, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    if m.sample_rate != cfg.sample_rate || m.hop != cfg.hop || (m.fps - cfg.fps).abs() > 1e-9 {
        bail!(
            "dataset is sr {} / hop {} / fps {}, config is sr {} / hop {} / fps {}",
            m.sample_rate,
            m.hop,
            m.fps,
            cfg.sample_rate,
            cfg.hop,
            cfg.fps
        );
    }
    Ok(())
}

fn loss_csv(history: &[LossReport]) -> String {
    let mut out = String::from("step,total,mel,pitch,energy,emo\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.total, r.mel, r.pitch, r.energy, r.emo));
    }
    out
}

/// Trains on the train split, logging and checkpointing under `out`.
fn run_training(cfg: &Config, data: &Dataset, out: &Path, json: bool) -> Result<(Synthesizer, Vec<LossReport>)> {
    check_compatible(cfg, data)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.render())?;
    let mut trainer = Trainer::new(cfg, data.split(Split::Train))?;
    let mut saved = Ok(());
    let history = trainer.run(cfg.steps, |t, r| {
        if cfg.log_every > 0 && (r.step % cfg.log_every == 0 || r.step == 1) {
            if json {
                println!("{}", serde_json::to_string(r).expect("plain struct"));
            } else {
                eprintln!("{r}");
            }
        }
        if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 && saved.is_ok() {
            saved = t.save(&step_path(out, r.step));
        }
    })?;
    saved?;
    trainer.save(&out.join("model.ckpt"))?;
    fs::write(out.join("losses.csv"), loss_csv(&history))?;
    Ok((trainer.synth, history))
}

fn train(a: &TrainArgs, json: bool) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let data = Dataset::load(&a.data)?;
    let (_, history) = run_training(&cfg, &data, &a.out, json)?;
    let last = history.last().copied();
    emit(
        json,
        json!({"checkpoint": a.out.join("model.ckpt"), "steps": cfg.steps, "final": last}),
        || {
            format!(
                "saved {} after {} steps{}",
                a.out.join("model.ckpt").display(),
                cfg.steps,
                last.map(|r| format!(" (final total loss {:.5})", r.total)).unwrap_or_default()
            )
        },
    );
    Ok(())
}

fn mel_meta(cfg: &Config, frames: hpmdub::autograd::Mat) -> MelSpectrogram {
    MelSpectrogram {
        frames,
        sample_rate: cfg.sample_rate,
        hop: cfg.hop,
        n_fft: cfg.n_fft,
        fmin: cfg.fmin,
        fmax: cfg.effective_fmax(),
    }
}

fn write_clip(synth: &Synthesizer, s: &DubbingSample, dir: &Path, wav: Option<(&Path, usize)>) -> Result<usize> {
    let out = synth.synthesize(model_input(s), None)?;
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("mel.bin"), &out.mel)?;
    write_csv(&dir.join("pitch.csv"), &["log_f0"], &out.log_f0.iter().map(|&p| vec![p]).collect::<Vec<_>>())?;
    write_csv(&dir.join("energy.csv"), &["energy"], &out.energy.iter().map(|&e| vec![e]).collect::<Vec<_>>())?;
    if let Some(e) = &out.emotion {
        let label = e.argmax();
        let body = json!({"label": label, "name": EMOTIONS.get(label), "probabilities": e.probabilities});
        fs::write(dir.join("emotion.json"), format!("{body}\n"))?;
    }
    if let Some((path, iters)) = wav {
        let cfg = &synth.model.config;
        let audio = griffin_lim(&mel_meta(cfg, out.mel.clone()), iters)?;
        write_wav(path, &audio, cfg.sample_rate)?;
    }
    Ok(out.mel.nrows())
}

fn infer(a: &InferArgs, json: bool) -> Result<()> {
    let synth = Checkpoint::load(&a.model)?.synth;
    let data = Dataset::load(&a.data)?;
    check_compatible(&synth.model.config, &data)?;
    let split = parse_split(&a.split)?;
    let mut written = Vec::new();
    for s in data.split(split) {
        let dir = a.out.join(&s.id);
        let wav_path = dir.join("audio.wav");
        let frames = write_clip(&synth, s, &dir, a.wav.then_some((wav_path.as_path(), a.gl_iters)))?;
        written.push(json!({"id": s.id, "frames": frames, "video_frames": s.video.frames()}));
    }
    emit(json, json!({"out": a.out, "clips": written}), || {
        format!("wrote {} clips to {}", written.len(), a.out.display())
    });
    Ok(())
}

fn read_emotion_label(path: &Path) -> Result<Option<usize>> {
    if !path.exists() {
        return Ok(None);
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(v["label"].as_u64().map(|l| l as usize))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.6}"))
}

fn bool_cell(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "N/A",
    }
}

fn eval(a: &EvalArgs, json: bool) -> Result<bool> {
    let data = Dataset::load(&a.reference)?;
    let split = parse_split(&a.split)?;
    let classifiers = match &a.classifiers {
        Some(dir) => Some((
            MelClassifier::load(&dir.join("emotion.cls"))?,
            MelClassifier::load(&dir.join("speaker.cls"))?,
        )),
        None => None,
    };
    let mut reports = Vec::new();
    for s in data.split(split) {
        let dir = a.gen.join(&s.id);
        let mel = read_matrix(&dir.join("mel.bin")).with_context(|| format!("no generated mel for {}", s.id))?;
        let mut r = MetricReport::compute(&s.id, &mel, &s.mel)?;
        r.emotion_head_correct = read_emotion_label(&dir.join("emotion.json"))?.map(|l| l == s.emotion);
        if let Some((emo, spk)) = &classifiers {
            r.emotion_correct = Some(emo.predict(&mel)? == s.emotion);
            r.speaker_correct = Some(spk.predict(&mel)? == s.speaker_id);
        }
        reports.push(r);
    }
    let summary = MetricSummary::from_reports(&reports)?;
    let out = a.out.clone().unwrap_or_else(|| a.gen.clone());
    fs::create_dir_all(&out)?;
    let mut csv = String::from(
        "id,mcd,mcd_dtw,mcd_dtw_sl,gen_frames,ref_frames,path_len,emotion_head_correct,emotion_correct,speaker_correct\n",
    );
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{},{},{},{}\n",
            r.id,
            opt_cell(r.mcd),
            r.mcd_dtw,
            r.mcd_dtw_sl,
            r.gen_frames,
            r.ref_frames,
            r.path_len,
            bool_cell(r.emotion_head_correct),
            bool_cell(r.emotion_correct),
            bool_cell(r.speaker_correct)
        ));
    }
    fs::write(out.join("metrics.csv"), csv)?;
    let summary_json = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("summary.json"), format!("{summary_json}\n"))?;
    let finite = summary.is_finite() && reports.iter().all(MetricReport::is_finite);
    emit(json, serde_json::to_value(&summary)?, || {
        format!(
            "{} clips  MCD {}  MCD-DTW {:.4}  MCD-DTW-SL {:.4}  emotion head {}  emotion cls {}  speaker cls {}",
            summary.clips,
            opt_cell(summary.mcd),
            summary.mcd_dtw,
            summary.mcd_dtw_sl,
            opt_cell(summary.emotion_head_accuracy),
            opt_cell(summary.emotion_accuracy),
            opt_cell(summary.speaker_accuracy)
        )
    });
    if !finite {
        eprintln!("error: non-finite metric in report");
    }
    Ok(finite)
}

fn export_mel(a: &ExportArgs, json: bool) -> Result<()> {
    let synth = Checkpoint::load(&a.model)?.synth;
    let data = Dataset::load(&a.data)?;
    let sample = match &a.id {
        Some(id) => data.samples.iter().find(|s| &s.id == id).with_context(|| format!("no sample '{id}'"))?,
        None => *data.split(Split::Test).first().context("dataset has no test clips")?,
    };
    let out = synth.synthesize(model_input(sample), None)?;
    let cfg = &synth.model.config;
    let mel = mel_meta(cfg, out.mel);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_matrix(&a.out, &mel.frames)?;
    let sidecar = json!({
        "id": sample.id,
        "frames": mel.len(),
        "n_mels": mel.n_mels(),
        "layout": "u32 dims[4] little-endian, then f32 row-major (frames x n_mels)",
        "unit": "dB",
        "log_floor_db": LOG_FLOOR_DB,
        "sample_rate": mel.sample_rate,
        "hop": mel.hop,
        "n_fft": mel.n_fft,
        "fmin": mel.fmin,
        "fmax": mel.fmax,
        "config_hash": cfg.hash(),
    });
    let side = a.out.with_extension("json");
    fs::write(&side, format!("{}\n", serde_json::to_string_pretty(&sidecar)?))?;
    if let Some(wav) = &a.wav {
        write_wav(wav, &griffin_lim(&mel, a.gl_iters)?, mel.sample_rate)?;
    }
    emit(json, sidecar, || {
        format!("wrote {} ({} frames) and {}", a.out.display(), mel.len(), side.display())
    });
    Ok(())
}

fn ablate(a: &AblateArgs, json: bool) -> Result<()> {
    let preset: Ablation = a.preset.parse()?;
    let mut base = a.config.resolve()?;
    if let Some(s) = a.steps {
        base.steps = s;
    }
    let data = Dataset::load(&a.data)?;
    let test = data.split(Split::Test);
    let full = match &a.baseline {
        Some(p) => Checkpoint::load(p)?.synth,
        None => run_training(&base, &data, &a.out.join("full"), json)?.0,
    };
    let mut cfg = base.clone();
    preset.apply(&mut cfg);
    let (ablated, _) = run_training(&cfg, &data, &a.out.join(preset.name()), json)?;
    let reports: Vec<VariantReport> = vec![
        evaluate_variant("full", &full, &test)?,
        evaluate_variant(preset.name(), &ablated, &test)?,
    ];
    let mut csv = String::from("variant,total,mel,pitch,energy,emo,prosody,emotion_accuracy,mcd_dtw\n");
    for r in &reports {
        let l = &r.losses;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6}\n",
            r.name,
            l.total,
            l.mel,
            l.pitch,
            l.energy,
            l.emo,
            r.prosody_loss,
            r.emotion_display(),
            r.mcd_dtw
        ));
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("ablation.csv"), csv)?;
    let body = json!({"preset": preset.name(), "split": "test", "variants": reports});
    fs::write(a.out.join("ablation.json"), format!("{}\n", serde_json::to_string_pretty(&body)?))?;
    emit(json, body, || {
        reports
            .iter()
            .map(|r| {
                format!(
                    "{:<14} prosody loss {:.5}  total {:.5}  emotion acc {}  MCD-DTW {:.4}",
                    r.name,
                    r.prosody_loss,
                    r.losses.total,
                    r.emotion_display(),
                    r.mcd_dtw
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(())
}

fn classifiers(a: &ClassifierArgs, json: bool) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let train = data.split(Split::Train);
    let seed = env_seed()?.unwrap_or(0);
    let n_mels = train.first().context("dataset has no train clips")?.mel.ncols();
    let n_speakers = data.samples.iter().map(|s| s.speaker_id + 1).max().unwrap_or(1);
    fs::create_dir_all(&a.out)?;
    let mut results = Vec::new();
    for (name, classes, label) in [
        ("emotion", EMOTIONS.len(), (|s: &DubbingSample| s.emotion) as fn(&DubbingSample) -> usize),
        ("speaker", n_speakers, |s: &DubbingSample| s.speaker_id),
    ] {
        let pairs: Vec<_> = train.iter().map(|s| (&s.mel, label(s))).collect();
        let mut cls = MelClassifier::new(n_mels, classes, a.channels, seed);
        let train_acc = cls.fit(&pairs, a.epochs, 3e-3, seed)?;
        let test: Vec<_> = data.split(Split::Test).into_iter().map(|s| (&s.mel, label(s))).collect();
        let test_acc = if test.is_empty() { None } else { Some(cls.accuracy(&test)?) };
        cls.save(&a.out.join(format!("{name}.cls")))?;
        results.push(json!({"classifier": name, "classes": classes, "train_accuracy": train_acc, "test_accuracy": test_acc}));
    }
    emit(json, json!({"out": a.out, "classifiers": results}), || {
        results
            .iter()
            .map(|r| {
                format!(
                    "{}: train acc {:.4}, test acc {}",
                    r["classifier"].as_str().unwrap_or("?"),
                    r["train_accuracy"].as_f64().unwrap_or(f64::NAN),
                    r["test_accuracy"].as_f64().map_or("N/A".into(), |v| format!("{v:.4}"))
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthData(a) => synth_data(a, cli.json).map(|_| true),
        Command::Train(a) => train(a, cli.json).map(|_| true),
        Command::Infer(a) => infer(a, cli.json).map(|_| true),
        Command::Eval(a) => eval(a, cli.json),
        Command::ExportMel(a) => export_mel(a, cli.json).map(|_| true),
        Command::Ablate(a) => ablate(a, cli.json).map(|_| true),
        Command::Classifiers(a) => classifiers(a, cli.json).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if cli.json {
                println!("{}", json!({"error": format!("{e:#}")}));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
