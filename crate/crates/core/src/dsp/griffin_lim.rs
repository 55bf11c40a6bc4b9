use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::stft::{Spectrogram, StftConfig, StftEngine};
use crate::audio::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GriffinLimConfig {
    pub iters: usize,
    pub momentum: f64,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iters: 60,
            momentum: 0.99,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    /// Lowest-error iterate.
    pub clip: AudioClip,
    /// Spectral convergence of the signal synthesized at each iteration, starting from zero phase.
    pub errors: Vec<f64>,
    pub final_error: f64,
}

/// `||(|X| - target)||_F / ||target||_F`, zero when the target is silent.
pub fn spectral_convergence(target: &Spectrogram, estimate: &Spectrogram) -> f64 {
    let num: f64 = target
        .data
        .iter()
        .zip(&estimate.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = target.data.iter().map(|a| a * a).sum();
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Phase retrieval with the accelerated (momentum) Griffin-Lim iteration.
///
/// Starts from zero phase. Returns the iterate with the smallest spectral
/// convergence, so more iterations never yield a worse result.
pub fn fast_griffin_lim(mag: &Spectrogram, cfg: &StftConfig, gl: GriffinLimConfig) -> Result<GriffinLimOutput> {
    if gl.iters == 0 || !(0.0..1.0).contains(&gl.momentum) {
        return Err(Error::Config(format!(
            "need iters >= 1 and 0 <= momentum < 1, got {gl:?}"
        )));
    }
    let engine = StftEngine::new(*cfg)?;
    if mag.bins != cfg.bins() {
        return Err(Error::Shape {
            op: "fast_griffin_lim",
            expected: format!("{} bins", cfg.bins()),
            got: format!("{} bins", mag.bins),
        });
    }
    let frames = mag.frames;
    let mut phase = vec![Complex::new(1.0, 0.0); mag.data.len()];
    let mut previous: Option<Vec<Complex<f64>>> = None;
    let mut errors = Vec::with_capacity(gl.iters);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut spec = vec![Complex::new(0.0, 0.0); mag.data.len()];
    for _ in 0..gl.iters {
        for ((s, p), &m) in spec.iter_mut().zip(&phase).zip(&mag.data) {
            *s = p * m;
        }
        let signal = engine.synthesize(frames, &spec);
        let (_, rebuilt) = engine.analyze(&signal)?;
        let estimate = Spectrogram {
            frames,
            bins: mag.bins,
            data: rebuilt.iter().map(|c| c.norm()).collect(),
        };
        let err = spectral_convergence(mag, &estimate);
        errors.push(err);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, signal));
        }
        for (i, p) in phase.iter_mut().enumerate() {
            let accel = match &previous {
                Some(prev) => rebuilt[i] + (rebuilt[i] - prev[i]) * gl.momentum,
                None => rebuilt[i],
            };
            let norm = accel.norm();
            *p = if norm > 1e-16 {
                accel / norm
            } else {
                Complex::new(1.0, 0.0)
            };
        }
        previous = Some(rebuilt);
    }
    let (final_error, signal) = best.expect("at least one iteration");
    let clip = AudioClip::new(signal.into_iter().map(|v| v as f32).collect(), cfg.sample_rate)?;
    Ok(GriffinLimOutput {
        clip,
        errors,
        final_error,
    })
}
