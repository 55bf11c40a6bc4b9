//! Deterministic synthetic timbre domains for tests and demos.
//!
//! A domain is a fixed spectral envelope; every clip is a short note sequence
//! of harmonic tones whose partial amplitudes follow that envelope.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, AudioClip, PIPELINE_RATE};
use crate::manifest::{split_dataset, DatasetManifest};
use crate::{Error, Result};

/// Resonance of the envelope in Hz, with a linear gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDomain {
    pub name: String,
    pub formants: Vec<Formant>,
    /// Spectral slope applied on top of the formants.
    pub tilt_db_per_octave: f64,
}

impl SynthDomain {
    /// Linear amplitude of a partial at `hz`.
    pub fn envelope(&self, hz: f64) -> f64 {
        let resonance: f64 = self
            .formants
            .iter()
            .map(|f| {
                let d = (hz - f.center_hz) / f.bandwidth_hz;
                f.gain * (-0.5 * d * d).exp()
            })
            .sum();
        let tilt = audio::from_db(self.tilt_db_per_octave * (hz / 100.0).max(1.0).log2());
        (0.02 + resonance) * tilt
    }
}

/// Two clearly separated envelopes: low formants with a steep roll-off and
/// high formants with a shallow one.
pub fn default_domains() -> Vec<SynthDomain> {
    let f = |center_hz, bandwidth_hz, gain| Formant {
        center_hz,
        bandwidth_hz,
        gain,
    };
    vec![
        SynthDomain {
            name: "mellow".into(),
            formants: vec![f(400.0, 150.0, 1.0), f(900.0, 200.0, 0.5)],
            tilt_db_per_octave: -9.0,
        },
        SynthDomain {
            name: "bright".into(),
            formants: vec![f(1600.0, 300.0, 1.0), f(3200.0, 500.0, 0.8)],
            tilt_db_per_octave: -2.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub clips_per_domain: usize,
    pub clip_secs: f64,
    pub notes_per_clip: usize,
    pub f0_range: (f64, f64),
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips_per_domain: 200,
            clip_secs: 3.0,
            notes_per_clip: 3,
            f0_range: (110.0, 440.0),
            sample_rate: PIPELINE_RATE,
            seed: 0,
        }
    }
}

/// Render one clip: equal-length notes at log-uniform pitches with short fades.
pub fn render_clip<R: Rng + ?Sized>(domain: &SynthDomain, cfg: &SynthConfig, rng: &mut R) -> Result<AudioClip> {
    let rate = cfg.sample_rate as f64;
    let total = (cfg.clip_secs * rate).round() as usize;
    if total == 0 || cfg.notes_per_clip == 0 {
        return Err(Error::Config(
            "synthetic clips need a positive length and note count".into(),
        ));
    }
    let (lo, hi) = cfg.f0_range;
    if !(lo > 0.0 && hi >= lo && hi < rate / 2.0) {
        return Err(Error::Config(format!("f0 range {lo}..{hi} Hz is invalid at {rate} Hz")));
    }
    let note_len = total.div_ceil(cfg.notes_per_clip);
    let fade = (0.01 * rate) as usize;
    let mut samples = vec![0.0f64; total];
    for (n, chunk) in samples.chunks_mut(note_len).enumerate() {
        let f0 = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let partials: Vec<(f64, f64, f64)> = (1..)
            .map(|h| h as f64 * f0)
            .take_while(|&hz| hz < 0.45 * rate)
            .map(|hz| (hz, domain.envelope(hz), rng.gen::<f64>() * TAU))
            .collect();
        let offset = n * note_len;
        let len = chunk.len();
        for (i, s) in chunk.iter_mut().enumerate() {
            let t = (offset + i) as f64 / rate;
            let v: f64 = partials.iter().map(|&(hz, a, ph)| a * (TAU * hz * t + ph).sin()).sum();
            let ramp = (i.min(len - 1 - i) as f64 / fade as f64).min(1.0);
            *s = v * ramp;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    AudioClip::new(samples.iter().map(|v| (v * scale) as f32).collect(), cfg.sample_rate)
}

/// Domain `d`'s clips use their own RNG stream, so adding domains leaves earlier ones unchanged.
pub fn render_domain(domain: &SynthDomain, index: usize, cfg: &SynthConfig) -> Result<Vec<AudioClip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    (0..cfg.clips_per_domain)
        .map(|_| render_clip(domain, cfg, &mut rng))
        .collect()
}

/// Write `<dir>/<domain>/clip_NNNN.wav` for every domain plus a split manifest at
/// `<dir>/manifest.json` with paths relative to `dir`.
pub fn write_corpus(dir: &Path, domains: &[SynthDomain], cfg: &SynthConfig) -> Result<(DatasetManifest, PathBuf)> {
    let mut listing = Vec::new();
    for (d, domain) in domains.iter().enumerate() {
        let sub = dir.join(&domain.name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut files = Vec::new();
        for (i, clip) in render_domain(domain, d, cfg)?.iter().enumerate() {
            let rel = PathBuf::from(&domain.name).join(format!("clip_{i:04}.wav"));
            audio::write_wav(dir.join(&rel), clip)?;
            files.push(rel);
        }
        listing.push((domain.name.clone(), files));
    }
    let manifest = split_dataset(&listing, cfg.seed)?;
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok((manifest, path))
}
