//! Full-length transfer: sliding 128-frame windows, overlap averaging, and
//! vocoding back to audio.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use timbre_nn::Tensor4;

use crate::audio::{self, AudioClip, PrepConfig};
use crate::dsp::{
    fast_griffin_lim, invert_mel, mel_spectrogram, write_image, GriffinLimConfig, MelSpectrogram, StftConfig,
};
use crate::model::{excerpt_patch, patch_shape, reparameterize, Translator, PATCH};
use crate::{Error, Result};

/// How the overlap count maps to a window stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Each frame is covered by up to `overlap` windows: stride `128 / overlap`.
    #[default]
    Coverage,
    /// Consecutive windows share `overlap` frames: stride `128 - overlap`.
    Frames,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub window: usize,
    pub stride: usize,
    pub total_frames: usize,
}

impl WindowPlan {
    /// Number of windows covering `frame`.
    pub fn coverage(&self, frame: usize) -> usize {
        self.starts
            .iter()
            .filter(|&&s| s <= frame && frame < s + self.window)
            .count()
    }
}

pub fn plan_windows(total_frames: usize, overlap: usize) -> Result<WindowPlan> {
    plan_windows_with(total_frames, overlap, OverlapMode::Coverage)
}

/// Regular windows at multiples of the stride plus, when needed, a tail window ending at `total_frames`.
pub fn plan_windows_with(total_frames: usize, overlap: usize, mode: OverlapMode) -> Result<WindowPlan> {
    if total_frames < PATCH {
        return Err(Error::ShortAudio {
            required: PATCH,
            got: total_frames,
            unit: "frames",
        });
    }
    let stride = match mode {
        OverlapMode::Coverage if overlap >= 1 && PATCH.is_multiple_of(overlap) => PATCH / overlap,
        OverlapMode::Frames if overlap < PATCH => PATCH - overlap,
        _ => {
            return Err(Error::Config(format!(
                "overlap {overlap} is invalid for {mode:?} mode with {PATCH}-frame windows"
            )))
        }
    };
    let last = total_frames - PATCH;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    Ok(WindowPlan {
        starts,
        window: PATCH,
        stride,
        total_frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferOptions {
    pub overlap: usize,
    pub overlap_mode: OverlapMode,
    /// Decode the latent mean rather than a sample around it.
    pub deterministic: bool,
    /// Seed of the latent noise when not deterministic.
    pub seed: u64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            overlap: 4,
            overlap_mode: OverlapMode::Coverage,
            deterministic: true,
            seed: 0,
        }
    }
}

fn require_domain(model: &dyn Translator, name: &str) -> Result<()> {
    if model.domains().iter().any(|d| d == name) {
        Ok(())
    } else {
        Err(Error::UnknownDomain(name.to_string()))
    }
}

/// Translate every window from `source` to `target` and average overlapping frames.
pub fn transfer_full(
    mel: &MelSpectrogram,
    source: &str,
    target: &str,
    model: &dyn Translator,
    opts: &TransferOptions,
) -> Result<MelSpectrogram> {
    require_domain(model, source)?;
    require_domain(model, target)?;
    if mel.n_mels() != PATCH {
        return Err(Error::Shape {
            op: "transfer_full",
            expected: format!("{PATCH} mel bands"),
            got: format!("{} mel bands", mel.n_mels()),
        });
    }
    let plan = plan_windows_with(mel.frames(), opts.overlap, opts.overlap_mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // f64 sums of at most a handful of f32 values are exact, so equal overlaps average back to the same value.
    let mut acc = vec![0.0f64; mel.values().len()];
    let mut count = vec![0u32; mel.frames()];
    for &start in &plan.starts {
        let x = Tensor4::from_vec(patch_shape(1), excerpt_patch(mel, start))?;
        let mu = model.encode(&x)?;
        let z = reparameterize(&mu, &mut rng, opts.deterministic);
        let y = model.decode(&z, target)?;
        let y = y.data();
        for t in 0..PATCH {
            let frame = start + t;
            count[frame] += 1;
            let row = &mut acc[frame * PATCH..(frame + 1) * PATCH];
            for (m, a) in row.iter_mut().enumerate() {
                *a += y[m * PATCH + t] as f64;
            }
        }
    }
    let values = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| (a / count[i / PATCH] as f64) as f32)
        .collect();
    let mut out = MelSpectrogram::new(mel.frames(), mel.n_mels(), values, mel.norm)?;
    out.sample_rate = mel.sample_rate;
    out.hop = mel.hop;
    Ok(out)
}

/// Extension point turning a normalized mel grid (with its statistics) into audio.
pub trait Vocoder {
    fn name(&self) -> &str;
    fn vocode(&self, mel: &MelSpectrogram) -> Result<AudioClip>;
}

/// Mel inversion followed by fast Griffin-Lim.
#[derive(Debug, Clone, Copy, Default)]
pub struct GriffinLimVocoder {
    pub stft: StftConfig,
    pub griffin_lim: GriffinLimConfig,
}

impl Vocoder for GriffinLimVocoder {
    fn name(&self) -> &str {
        "griffin_lim"
    }

    fn vocode(&self, mel: &MelSpectrogram) -> Result<AudioClip> {
        let mag = invert_mel(mel, &self.stft)?;
        Ok(fast_griffin_lim(&mag, &self.stft, self.griffin_lim)?.clip)
    }
}

/// Vocoders selectable by name; `griffin_lim` is always present.
pub struct VocoderRegistry {
    entries: BTreeMap<String, Box<dyn Vocoder>>,
}

impl Default for VocoderRegistry {
    fn default() -> Self {
        Self::new(GriffinLimConfig::default())
    }
}

impl VocoderRegistry {
    pub fn new(griffin_lim: GriffinLimConfig) -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Box::new(GriffinLimVocoder {
            stft: StftConfig::default(),
            griffin_lim,
        }));
        r
    }

    pub fn register(&mut self, vocoder: Box<dyn Vocoder>) {
        self.entries.insert(vocoder.name().to_string(), vocoder);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Vocoder> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            let known: Vec<_> = self.entries.keys().cloned().collect();
            Error::Config(format!("unknown vocoder '{name}', known: {}", known.join(", ")))
        })
    }
}

fn default_vocoder() -> String {
    "griffin_lim".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub transfer: TransferOptions,
    #[serde(default)]
    pub griffin_lim: GriffinLimConfig,
    #[serde(default = "default_vocoder")]
    pub vocoder: String,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            prep: PrepConfig::default(),
            transfer: TransferOptions::default(),
            griffin_lim: GriffinLimConfig::default(),
            vocoder: default_vocoder(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EndToEndOutput {
    pub input_mel: MelSpectrogram,
    pub output_mel: MelSpectrogram,
    pub audio: AudioClip,
}

/// Where [`end_to_end`] writes its spectrogram images.
#[derive(Debug, Clone, Copy)]
pub struct PlotPaths<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
}

/// Preprocess, analyze, transfer, vocode and write `output_wav`.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end(
    input_wav: &Path,
    source: &str,
    target: &str,
    model: &dyn Translator,
    cfg: &InferenceConfig,
    vocoders: &VocoderRegistry,
    output_wav: &Path,
    plots: Option<PlotPaths>,
) -> Result<EndToEndOutput> {
    let vocoder = vocoders.get(&cfg.vocoder)?;
    let raw = audio::read_wav(input_wav)?;
    let clip = audio::preprocess(&raw, &cfg.prep)?;
    let stft = StftConfig {
        sample_rate: cfg.prep.sample_rate,
        ..StftConfig::default()
    };
    let needed = PATCH * stft.hop;
    if clip.len() < needed {
        return Err(Error::ShortAudio {
            required: needed,
            got: clip.len(),
            unit: "samples",
        });
    }
    let input_mel = mel_spectrogram(&clip, &stft)?;
    let output_mel = transfer_full(&input_mel, source, target, model, &cfg.transfer)?;
    let audio = vocoder.vocode(&output_mel)?;
    audio::write_wav(output_wav, &audio)?;
    if let Some(p) = plots {
        write_image(&input_mel, p.input)?;
        write_image(&output_mel, p.output)?;
    }
    Ok(EndToEndOutput {
        input_mel,
        output_mel,
        audio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::NormStats;
    use crate::model::IdentityStub;
    use rand::Rng;

    fn random_mel(frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..frames * PATCH).map(|_| rng.gen::<f32>()).collect();
        MelSpectrogram::new(frames, PATCH, values, Some(NormStats { min: -9.0, max: 1.5 })).unwrap()
    }

    #[test]
    fn plans() {
        let p = plan_windows(480, 4).unwrap();
        assert_eq!(p.stride, 32);
        assert_eq!(p.starts, (0..=352).step_by(32).collect::<Vec<_>>());
        assert_eq!(p.starts.len(), 12);
        assert_eq!(plan_windows(128, 4).unwrap().starts, vec![0]);
        assert_eq!(plan_windows(130, 4).unwrap().starts, vec![0, 2]);
        assert!(matches!(plan_windows(127, 4), Err(Error::ShortAudio { .. })));
        assert!(matches!(plan_windows(300, 3), Err(Error::Config(_))));
        let f = plan_windows_with(300, 4, OverlapMode::Frames).unwrap();
        assert_eq!(f.stride, 124);
        assert_eq!(f.starts, vec![0, 124, 172]);
    }

    #[test]
    fn coverage_counts() {
        let p = plan_windows(480, 4).unwrap();
        assert_eq!(p.coverage(100), 4);
        assert_eq!(p.coverage(0), 1);
        assert_eq!(p.coverage(479), 1);
        for f in 0..480 {
            assert!(p.coverage(f) >= 1);
        }
    }

    #[test]
    fn identity_stub_round_trips() {
        let stub = IdentityStub::new(&["a", "b"]);
        let mel = random_mel(480, 3);
        let out = transfer_full(&mel, "a", "b", &stub, &TransferOptions::default()).unwrap();
        assert_eq!(out.frames(), 480);
        assert_eq!(out.norm, mel.norm);
        assert_eq!(out.values(), mel.values());
        let eight = TransferOptions {
            overlap: 8,
            ..TransferOptions::default()
        };
        assert_eq!(transfer_full(&mel, "a", "b", &stub, &eight).unwrap(), out);
    }

    #[test]
    fn unknown_domains() {
        let stub = IdentityStub::new(&["a", "b"]);
        let mel = random_mel(128, 0);
        let o = TransferOptions::default();
        assert!(matches!(
            transfer_full(&mel, "x", "b", &stub, &o),
            Err(Error::UnknownDomain(_))
        ));
        assert!(matches!(
            transfer_full(&mel, "a", "x", &stub, &o),
            Err(Error::UnknownDomain(_))
        ));
    }

    #[test]
    fn registry_lookup() {
        let r = VocoderRegistry::default();
        assert_eq!(r.get("griffin_lim").unwrap().name(), "griffin_lim");
        assert!(r.get("wavenet").is_err());
    }
}
