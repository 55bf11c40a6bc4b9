use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    /// Reflect-pad `n_fft / 2` on both sides so frame `t` is centred on sample `t * hop`.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 800,
            hop: 200,
            n_mels: 128,
            sample_rate: 16_000,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!("need 0 < hop <= n_fft, got {self:?}")));
        }
        if self.n_mels == 0 || self.n_mels > self.bins() {
            return Err(Error::Config(format!(
                "n_mels must lie in 1..={}, got {}",
                self.bins(),
                self.n_mels
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Frames produced for `len` samples: `floor(len / hop)` when centred.
    pub fn frame_count(&self, len: usize) -> usize {
        if self.center {
            len / self.hop
        } else if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }

    pub fn min_samples(&self) -> usize {
        if self.center {
            self.hop
        } else {
            self.n_fft
        }
    }
}

/// Real-valued `frames x bins` grid, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.bins + k]
    }

    pub fn argmax_bin(&self, t: usize) -> usize {
        self.frame(t)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Planned forward/inverse transforms with a periodic Hann window.
pub struct StftEngine {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("cfg", &self.cfg).finish()
    }
}

/// Mirror index into `0..n` without repeating edges, folding as often as needed.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

impl StftEngine {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Complex STFT, `frames x bins` row-major.
    pub fn analyze(&self, samples: &[f64]) -> Result<(usize, Vec<Complex<f64>>)> {
        let cfg = &self.cfg;
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let frames = cfg.frame_count(samples.len());
        if frames == 0 {
            return Err(Error::ShortAudio {
                required: cfg.min_samples(),
                got: samples.len(),
                unit: "samples",
            });
        }
        let n = cfg.n_fft;
        let bins = cfg.bins();
        let offset = if cfg.center { (n / 2) as isize } else { 0 };
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - offset;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize]
                } else {
                    samples[reflect_index(idx, samples.len())]
                };
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok((frames, out))
    }

    /// Weighted overlap-add inverse of [`StftEngine::analyze`], producing `frames * hop` samples when centred.
    pub fn synthesize(&self, frames: usize, spec: &[Complex<f64>]) -> Vec<f64> {
        let cfg = &self.cfg;
        let n = cfg.n_fft;
        let bins = cfg.bins();
        debug_assert_eq!(spec.len(), frames * bins);
        if frames == 0 {
            return Vec::new();
        }
        let padded_len = (frames - 1) * cfg.hop + n;
        let mut acc = vec![0.0; padded_len];
        let mut norm = vec![0.0; padded_len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            let frame = &spec[t * bins..(t + 1) * bins];
            buf[..bins].copy_from_slice(frame);
            for k in 1..n - bins + 1 {
                buf[n - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * cfg.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        let (begin, len) = if cfg.center {
            (n / 2, frames * cfg.hop)
        } else {
            (0, padded_len)
        };
        (begin..begin + len)
            .map(|i| {
                if i < padded_len && norm[i] > 1e-10 {
                    acc[i] / norm[i]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `frames x (n_fft / 2 + 1)` magnitude grid.
pub fn stft_magnitude(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let engine = StftEngine::new(*cfg)?;
    magnitude_with(&engine, clip)
}

pub(crate) fn magnitude_with(engine: &StftEngine, clip: &AudioClip) -> Result<Spectrogram> {
    let samples: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
    let (frames, spec) = engine.analyze(&samples)?;
    Ok(Spectrogram {
        frames,
        bins: engine.config().bins(),
        data: spec.iter().map(|c| c.norm()).collect(),
    })
}
