//! Raw-audio ingest and the three preprocessing passes: resampling, RMS level
//! floor and silence masking.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result};

/// Sample rate used throughout the pipeline.
pub const PIPELINE_RATE: u32 = 16_000;

/// Mono sample buffer. Samples are clamped to `[-1, 1]` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64).sqrt()
}

/// `20 log10(x)`, `-inf` for zero.
pub fn to_db(amplitude: f64) -> f64 {
    20.0 * amplitude.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Read a PCM WAV (integer or 32-bit float); multi-channel input is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Write 16-bit mono PCM.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    }
}

/// Zero crossings of the sinc kernel kept on each side.
const SINC_ZEROS: f64 = 24.0;
/// Passband edge relative to the output Nyquist frequency.
const ROLLOFF: f64 = 0.95;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

/// Band-limited windowed-sinc resampling. Returns the input untouched when rates match.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let src_rate = clip.sample_rate as f64;
    let ratio = target_rate as f64 / src_rate;
    let out_len = ((clip.len() as f64) * ratio).round().max(1.0) as usize;
    // cutoff in cycles per input sample
    let cutoff = 0.5 * ROLLOFF * ratio.min(1.0);
    let half_width = SINC_ZEROS / (2.0 * cutoff);
    let x = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 / ratio;
        let lo = (center - half_width).ceil().max(0.0) as usize;
        let hi = ((center + half_width).floor() as usize).min(x.len() - 1);
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = center - k as f64;
            let arg = 2.0 * cutoff * d;
            let sinc = if arg.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            acc += xk as f64 * 2.0 * cutoff * sinc * blackman(d / half_width);
        }
        out.push(acc as f32);
    }
    AudioClip::new(out, target_rate)
}

/// What [`rms_normalize`] did to a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelChange {
    /// Already at or above the target level.
    Unchanged,
    /// Scaled up by `gain`.
    Raised { gain: f64 },
    /// Zero energy; gain is undefined and the clip is returned as is.
    Silent,
}

/// Raise the clip to `target_db` dBFS RMS when it sits below that level.
pub fn rms_normalize(clip: &AudioClip, target_db: f64) -> (AudioClip, LevelChange) {
    let current = clip.rms();
    if current == 0.0 {
        log::warn!("rms_normalize: silent clip left unchanged");
        return (clip.clone(), LevelChange::Silent);
    }
    let current_db = to_db(current);
    if current_db >= target_db {
        return (clip.clone(), LevelChange::Unchanged);
    }
    let gain = from_db(target_db - current_db);
    let samples = clip.samples.iter().map(|&s| (s as f64 * gain) as f32).collect();
    let out = AudioClip::new(samples, clip.sample_rate).expect("rate already validated");
    (out, LevelChange::Raised { gain })
}

/// Frame-energy gate parameters for [`mask_silence`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SilenceGate {
    pub frame_ms: f64,
    pub threshold_db: f64,
    pub min_gap_ms: f64,
}

impl Default for SilenceGate {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            threshold_db: -60.0,
            min_gap_ms: 500.0,
        }
    }
}

/// Zero out runs of quiet frames lasting at least `min_gap_ms`. Length is preserved.
pub fn mask_silence(clip: &AudioClip, gate: SilenceGate) -> Result<AudioClip> {
    if gate.frame_ms <= 0.0 || gate.min_gap_ms < gate.frame_ms {
        return Err(Error::Config(format!(
            "silence gate needs frame_ms > 0 and min_gap_ms >= frame_ms, got {gate:?}"
        )));
    }
    let rate = clip.sample_rate as f64;
    let frame = ((gate.frame_ms * rate / 1000.0).round() as usize).max(1);
    let min_gap = (gate.min_gap_ms * rate / 1000.0).round() as usize;
    let quiet: Vec<bool> = clip
        .samples
        .chunks(frame)
        .map(|f| to_db(rms(f)) < gate.threshold_db)
        .collect();
    let mut out = clip.samples.clone();
    let mut i = 0;
    while i < quiet.len() {
        if !quiet[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < quiet.len() && quiet[i] {
            i += 1;
        }
        let lo = start * frame;
        let hi = (i * frame).min(out.len());
        if hi - lo >= min_gap {
            out[lo..hi].fill(0.0);
        }
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: clip.sample_rate,
    })
}

/// Settings for the full preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub sample_rate: u32,
    pub target_db: f64,
    pub silence: SilenceGate,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            sample_rate: PIPELINE_RATE,
            target_db: -30.0,
            silence: SilenceGate::default(),
        }
    }
}

/// Resample, raise quiet clips to the target level, then mask long silences.
pub fn preprocess(clip: &AudioClip, cfg: &PrepConfig) -> Result<AudioClip> {
    let clip = resample(clip, cfg.sample_rate)?;
    let (clip, _) = rms_normalize(&clip, cfg.target_db);
    mask_silence(&clip, cfg.silence)
}
