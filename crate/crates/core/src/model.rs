//! The full dubbing network: encoders → duration aligner → prosody adaptor
//! → atmosphere booster → mel generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aligner::{nearest_resample, DurationAligner, FrameRatio};
use crate::autograd::{Graph, Mat, ParamStore, Var};
use crate::booster::{AtmosphereBooster, EmotionPrediction};
use crate::config::{AffectSource, Config};
use crate::error::{Error, Result};
use crate::frontend::{
    AffectEncoder, FaceFeatureEncoder, LipEncoder, PhonemeEncoder, PhonemeSequence, SpeakerTable,
    VideoFeatureTrack,
};
use crate::generator::MelGenerator;
use crate::prosody::ProsodyAdaptor;

/// Grayscale lip crops.
pub const LIP_CHANNELS: usize = 1;

#[derive(Clone, Copy, Debug)]
pub enum SpeakerRef<'a> {
    Id(usize),
    /// Externally computed vector of model width.
    Vector(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub phonemes: &'a PhonemeSequence,
    pub video: &'a VideoFeatureTrack,
    pub speaker: SpeakerRef<'a>,
}

/// Graph handles for one forward pass.
pub struct ForwardOutput {
    /// `T_y × n_mels`, normalized mel space.
    pub mel_before: Var,
    pub mel_after: Var,
    /// `T_y × 1` each, normalized.
    pub pitch: Var,
    pub energy: Var,
    /// `1 × C`, absent when the booster is disabled.
    pub emotion_logits: Option<Var>,
    pub alignment_weights: Vec<Var>,
    pub arousal_weights: Option<Var>,
    pub valence_weights: Option<Var>,
    pub scene_weights: Option<Var>,
    pub mel_len: usize,
}

/// Plain-matrix results of an eval-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub mel_before: Mat,
    pub mel_after: Mat,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub emotion: Option<EmotionPrediction>,
}

#[derive(Clone, Debug)]
pub struct DubbingModel {
    pub config: Config,
    pub ratio: FrameRatio,
    pub store: ParamStore,
    pub phoneme_encoder: PhonemeEncoder,
    pub lip_encoder: LipEncoder,
    pub affect_encoder: AffectEncoder,
    pub face_encoder: FaceFeatureEncoder,
    pub speakers: SpeakerTable,
    pub aligner: DurationAligner,
    pub adaptor: ProsodyAdaptor,
    pub booster: AtmosphereBooster,
    pub generator: MelGenerator,
}

impl DubbingModel {
    pub fn new(config: &Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let ratio = FrameRatio::from_config(config)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store_ref = &mut store;
        let phoneme_encoder = PhonemeEncoder::new(store_ref, &mut rng, config);
        let lip_encoder = LipEncoder::new(store_ref, &mut rng, config, LIP_CHANNELS);
        let affect_encoder = AffectEncoder::new(store_ref, &mut rng, config.dim);
        let face_encoder = FaceFeatureEncoder::new(store_ref, &mut rng, config, LIP_CHANNELS);
        let speakers = SpeakerTable::new(store_ref, &mut rng, config.n_speakers, config.dim);
        let aligner = DurationAligner::new(store_ref, &mut rng, config);
        let adaptor = ProsodyAdaptor::new(store_ref, &mut rng, config);
        let booster = AtmosphereBooster::new(store_ref, &mut rng, config);
        let generator = MelGenerator::new(store_ref, &mut rng, config);
        Ok(Self {
            config: config.clone(),
            ratio,
            store,
            phoneme_encoder,
            lip_encoder,
            affect_encoder,
            face_encoder,
            speakers,
            aligner,
            adaptor,
            booster,
            generator,
        })
    }

    /// Mel length the model will produce: the teacher length when given,
    /// otherwise `round(r · T_v)`.
    pub fn output_len(&self, video: &VideoFeatureTrack, target_len: Option<usize>) -> usize {
        target_len.unwrap_or_else(|| self.ratio.mel_len(video.frames()))
    }

    fn check_lips(&self, video: &VideoFeatureTrack) -> Result<()> {
        let lips = video
            .lips
            .as_ref()
            .ok_or_else(|| Error::MissingFeature("lip patches".into()))?;
        if lips.channels != LIP_CHANNELS {
            return Err(Error::shape(format!(
                "lip patches have {} channels, expected {LIP_CHANNELS}",
                lips.channels
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        input: ModelInput<'_>,
        target_len: Option<usize>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        input.phonemes.validate()?;
        input.video.validate()?;
        let t_v = input.video.frames();
        let t_y = self.output_len(input.video, target_len);
        if t_y == 0 {
            return Err(Error::config("target length must be positive"));
        }

        let phonemes = self.phoneme_encoder.forward(g, input.phonemes);
        let (memory, alignment_weights) = if cfg.aligner_enabled {
            self.check_lips(input.video)?;
            let lips = self.lip_encoder.forward(g, input.video.lips.as_ref().expect("checked"));
            let out = self.aligner.forward(
                g,
                lips,
                phonemes,
                &input.phonemes.mask,
                &self.ratio,
                Some(t_y),
            )?;
            (out.expanded, out.weights)
        } else {
            let valid: Vec<Option<usize>> = input
                .phonemes
                .mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(Some(i)))
                .collect();
            let compact = g.gather_rows(phonemes, &valid);
            (nearest_resample(g, compact, t_y), Vec::new())
        };

        let speaker = match input.speaker {
            SpeakerRef::Id(id) => self.speakers.forward(g, id)?,
            SpeakerRef::Vector(v) => {
                if v.len() != cfg.dim {
                    return Err(Error::shape(format!(
                        "speaker vector has {} entries, model width is {}",
                        v.len(),
                        cfg.dim
                    )));
                }
                SpeakerTable::external(g, v)?
            }
        };

        let needs_affect = cfg.use_valence || cfg.use_arousal;
        let (valence, arousal) = if !needs_affect {
            (None, None)
        } else {
            let (v, a) = match cfg.affect_source {
                AffectSource::ValenceArousal => self.affect_encoder.forward(g, input.video)?,
                AffectSource::FaceFeatures => {
                    self.check_lips(input.video)?;
                    self.face_encoder.forward(g, input.video)?
                }
            };
            (Some(v), Some(a))
        };
        let upsample = self.ratio.upsample_index(t_y, t_v);
        let prosody = self
            .adaptor
            .forward(g, memory, arousal, valence, &upsample, speaker)?;

        let boosted = self
            .booster
            .forward(g, prosody.feature, input.video.scene.as_ref())?;
        let hidden = self
            .generator
            .decode(g, memory, prosody.feature, boosted.context)?;
        let mel = self.generator.to_mel(g, hidden);
        Ok(ForwardOutput {
            mel_before: mel.before,
            mel_after: mel.after,
            pitch: prosody.pitch,
            energy: prosody.energy,
            emotion_logits: boosted.emotion_logits,
            alignment_weights,
            arousal_weights: prosody.arousal_weights,
            valence_weights: prosody.valence_weights,
            scene_weights: boosted.weights,
            mel_len: t_y,
        })
    }

    /// Eval-mode forward returning plain values.
    pub fn infer(&self, input: ModelInput<'_>, target_len: Option<usize>) -> Result<Inference> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, input, target_len)?;
        let column = |v: Var| g.value(v).column(0).to_vec();
        Ok(Inference {
            mel_before: g.value(out.mel_before).clone(),
            mel_after: g.value(out.mel_after).clone(),
            pitch: column(out.pitch),
            energy: column(out.energy),
            emotion: out
                .emotion_logits
                .map(|l| EmotionPrediction::from_logits(g.value(l).row(0).to_vec())),
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}
