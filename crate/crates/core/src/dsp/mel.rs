use nalgebra::DMatrix;

use super::stft::{magnitude_with, Spectrogram, StftConfig, StftEngine};
use crate::audio::AudioClip;
use crate::{Error, Result};

/// Added to mel magnitudes before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

/// Min-max normalized log-mel grid, `frames x n_mels`, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    n_mels: usize,
    values: Vec<f32>,
    pub norm: Option<NormStats>,
    pub sample_rate: u32,
    pub hop: usize,
}

impl MelSpectrogram {
    /// Values are clamped onto `[0, 1]`.
    pub fn new(frames: usize, n_mels: usize, values: Vec<f32>, norm: Option<NormStats>) -> Result<Self> {
        if values.len() != frames * n_mels {
            return Err(Error::Shape {
                op: "MelSpectrogram::new",
                expected: format!("{frames}x{n_mels}"),
                got: format!("{} values", values.len()),
            });
        }
        if let Some(n) = norm {
            if n.max.is_nan() || n.min.is_nan() || n.max < n.min {
                return Err(Error::Config(format!("norm_max < norm_min: {n:?}")));
            }
        }
        let defaults = StftConfig::default();
        Ok(Self {
            frames,
            n_mels,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            norm,
            sample_rate: defaults.sample_rate,
            hop: defaults.hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn set(&mut self, frame: usize, mel: usize, v: f32) {
        self.values[frame * self.n_mels + mel] = v.clamp(0.0, 1.0);
    }

    pub fn at(&self, frame: usize, mel: usize) -> f32 {
        self.values[frame * self.n_mels + mel]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Copy of frames `start..start + len` with the same statistics.
    pub fn excerpt(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::ShortAudio {
                required: start + len,
                got: self.frames,
                unit: "frames",
            });
        }
        Ok(Self {
            frames: len,
            n_mels: self.n_mels,
            values: self.values[start * self.n_mels..(start + len) * self.n_mels].to_vec(),
            ..*self
        })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Undo the min-max step, giving natural-log mel magnitudes.
    pub fn log_mel(&self) -> Result<Vec<f64>> {
        let stats = self.norm.ok_or(Error::MissingStats)?;
        let span = stats.max - stats.min;
        Ok(self
            .values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    stats.min + v as f64 * span
                } else {
                    stats.min
                }
            })
            .collect())
    }
}

/// Triangular mel filters on the HTK scale from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    bins: usize,
    /// `n_mels x bins` row-major.
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
    /// `bins x n_mels` Moore-Penrose inverse.
    pinv: Vec<f64>,
    /// Column sums of `weights`.
    column_mass: Vec<f64>,
    /// Non-zero span `(first_bin, weights)` of each row.
    row_support: Vec<(usize, Vec<f64>)>,
    /// Non-zero `(mel, weight)` entries of each column.
    col_support: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.bins();
        let n_mels = cfg.n_mels;
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..bins)
            .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (mid - lo);
                let down = (hi - f) / (hi - mid);
                weights[m * bins + k] = up.min(down).max(0.0);
            }
        }
        let matrix = DMatrix::from_row_slice(n_mels, bins, &weights);
        let pinv_m = matrix
            .svd(true, true)
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Numerical(format!("mel pseudo-inverse: {e}")))?;
        let mut pinv = vec![0.0; bins * n_mels];
        for k in 0..bins {
            for m in 0..n_mels {
                pinv[k * n_mels + m] = pinv_m[(k, m)];
            }
        }
        let column_mass = (0..bins)
            .map(|k| (0..n_mels).map(|m| weights[m * bins + k]).sum())
            .collect();
        let row_support = (0..n_mels)
            .map(|m| {
                let row = &weights[m * bins..(m + 1) * bins];
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        let col_support = (0..bins)
            .map(|k| {
                (0..n_mels)
                    .filter(|&m| weights[m * bins + k] > 0.0)
                    .map(|m| (m, weights[m * bins + k]))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_mels,
            bins,
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
            pinv,
            column_mass,
            row_support,
            col_support,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Index of the filter whose centre is nearest `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn project(&self, spectrum: &[f64]) -> Vec<f64> {
        self.row_support
            .iter()
            .map(|(first, w)| w.iter().zip(&spectrum[*first..]).map(|(w, s)| w * s).sum())
            .collect()
    }

    /// Non-negative spectrum whose projection approximates `mel`.
    ///
    /// Starts from the clamped pseudo-inverse and refines with multiplicative
    /// (Richardson-Lucy) updates, which keep every entry non-negative.
    pub fn invert(&self, mel: &[f64], refine_iters: usize) -> Vec<f64> {
        let n_mels = self.n_mels;
        let mut x: Vec<f64> = (0..self.bins)
            .map(|k| {
                let v: f64 = self.pinv[k * n_mels..(k + 1) * n_mels]
                    .iter()
                    .zip(mel)
                    .map(|(p, m)| p * m)
                    .sum();
                v.max(0.0)
            })
            .collect();
        let peak = mel.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return vec![0.0; self.bins];
        }
        // multiplicative updates cannot revive exact zeros
        let seed = peak * 1e-9;
        for (k, v) in x.iter_mut().enumerate() {
            if self.column_mass[k] > 0.0 {
                *v = v.max(seed);
            } else {
                *v = 0.0;
            }
        }
        let mut ratio = vec![0.0; n_mels];
        for _ in 0..refine_iters {
            let proj = self.project(&x);
            for ((r, &p), &m) in ratio.iter_mut().zip(&proj).zip(mel) {
                *r = if p > 0.0 { m / p } else { 0.0 };
            }
            for (k, v) in x.iter_mut().enumerate() {
                if self.column_mass[k] <= 0.0 {
                    continue;
                }
                let back: f64 = self.col_support[k].iter().map(|&(m, w)| w * ratio[m]).sum();
                *v *= back / self.column_mass[k];
            }
        }
        x
    }
}

/// `minmax(log(filterbank * |STFT| + LOG_FLOOR))` with the extrema kept for inversion.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<MelSpectrogram> {
    let engine = StftEngine::new(*cfg)?;
    let fb = MelFilterbank::new(cfg)?;
    mel_spectrogram_with(&engine, &fb, clip)
}

pub(crate) fn mel_spectrogram_with(
    engine: &StftEngine,
    fb: &MelFilterbank,
    clip: &AudioClip,
) -> Result<MelSpectrogram> {
    let cfg = engine.config();
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::Config(format!(
            "clip is {} Hz but analysis expects {} Hz",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }
    let mag = magnitude_with(engine, clip)?;
    let mut logs = Vec::with_capacity(mag.frames * fb.n_mels());
    for t in 0..mag.frames {
        logs.extend(fb.project(mag.frame(t)).into_iter().map(|m| (m + LOG_FLOOR).ln()));
    }
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let values = logs
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span) as f32 } else { 0.5 })
        .collect();
    let mut mel = MelSpectrogram::new(mag.frames, fb.n_mels(), values, Some(NormStats { min: lo, max: hi }))?;
    mel.sample_rate = cfg.sample_rate;
    mel.hop = cfg.hop;
    Ok(mel)
}

/// Default multiplicative refinement passes used by [`invert_mel`].
pub const MEL_REFINE_ITERS: usize = 300;

/// Linear-magnitude `frames x bins` grid whose mel projection matches `mel`.
pub fn invert_mel(mel: &MelSpectrogram, cfg: &StftConfig) -> Result<Spectrogram> {
    let fb = MelFilterbank::new(cfg)?;
    invert_mel_with(&fb, mel, MEL_REFINE_ITERS)
}

pub(crate) fn invert_mel_with(fb: &MelFilterbank, mel: &MelSpectrogram, refine_iters: usize) -> Result<Spectrogram> {
    if mel.n_mels() != fb.n_mels() {
        return Err(Error::Shape {
            op: "invert_mel",
            expected: format!("{} mel bands", fb.n_mels()),
            got: format!("{} mel bands", mel.n_mels()),
        });
    }
    let logs = mel.log_mel()?;
    let mut out = Spectrogram::zeros(mel.frames(), fb.bins());
    for t in 0..mel.frames() {
        let linear: Vec<f64> = logs[t * fb.n_mels()..(t + 1) * fb.n_mels()]
            .iter()
            .map(|&l| (l.exp() - LOG_FLOOR).max(0.0))
            .collect();
        out.frame_mut(t).copy_from_slice(&fb.invert(&linear, refine_iters));
    }
    Ok(out)
}
