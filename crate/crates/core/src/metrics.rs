//! SSIM between spectrogram grids and Fréchet distance between Gaussian fits
//! of audio embeddings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use timbre_nn::Tensor4;

use crate::audio::{self, AudioClip};
use crate::dsp::{magnitude_with, MelFilterbank, MelSpectrogram, StftConfig, StftEngine, LOG_FLOOR};
use crate::inference::{transfer_full, TransferOptions, Vocoder};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{excerpt_patch, patch_shape, Translator, PATCH};
use crate::trainer::{load_recording_mel, resolve_path};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a row-major `h x w` grid.
fn filter(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region of an 11×11 Gaussian window (σ 1.5), data range 1.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::Shape {
            op: "ssim",
            expected: format!("{height}x{width} = {} values", height * width),
            got: format!("{} and {}", a.len(), b.len()),
        });
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Size {
            height,
            width,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter(a, height, width, &k);
    let mu_b = filter(b, height, width, &k);
    let aa = filter(&prod(a, a), height, width, &k);
    let bb = filter(&prod(b, b), height, width, &k);
    let ab = filter(&prod(a, b), height, width, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// [`ssim`] of two single 128×128 patches.
pub fn ssim_patch(a: &Tensor4<f32>, b: &Tensor4<f32>) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() || s.n != 1 || s.c != 1 {
        return Err(Error::Shape {
            op: "ssim_patch",
            expected: s.to_string(),
            got: b.shape().to_string(),
        });
    }
    let cast = |t: &Tensor4<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    ssim(&cast(a), &cast(b), s.h, s.w)
}

/// Sample mean and unbiased covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

pub fn fit_gaussian(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    if embeddings.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::Shape {
            op: "fit_gaussian",
            expected: format!("dimension {dim}"),
            got: format!("dimension {}", bad.len()),
        });
    }
    let n = embeddings.len();
    let x = DMatrix::from_fn(n, dim, |i, j| embeddings[i][j]);
    let mean = DVector::from_fn(dim, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean,
        covariance,
        count: n,
    })
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^½)`, clamped at zero.
///
/// The trace of the product's square root is taken as that of the symmetric
/// `(Σ1^½ Σ2 Σ1^½)^½`, which has the same eigenvalues.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    if s1.mean.len() != s2.mean.len() {
        return Err(Error::Shape {
            op: "frechet_distance",
            expected: format!("dimension {}", s1.mean.len()),
            got: format!("dimension {}", s2.mean.len()),
        });
    }
    let diff = &s1.mean - &s2.mean;
    let root1 = psd_sqrt(&s1.covariance);
    let inner = &root1 * &s2.covariance * &root1;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = diff.norm_squared() + s1.covariance.trace() + s2.covariance.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {d}")));
    }
    Ok(d.max(0.0))
}

/// Fixed-dimension audio embedding.
pub trait Embedder {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>>;
}

/// Per-band mean and standard deviation over time of a log-mel grid pooled to 32 bands.
///
/// Frames of the clip and of its time reversal are pooled together, so the
/// statistics do not depend on where the frame grid falls.
pub struct SpectralEmbedder {
    engine: StftEngine,
    filterbank: MelFilterbank,
}

pub const EMBED_BANDS: usize = 32;

pub fn spectral_embedder() -> SpectralEmbedder {
    let cfg = StftConfig::default();
    SpectralEmbedder {
        engine: StftEngine::new(cfg).expect("default STFT configuration is valid"),
        filterbank: MelFilterbank::new(&cfg).expect("default STFT configuration is valid"),
    }
}

impl SpectralEmbedder {
    fn pooled_frames(&self, clip: &AudioClip, out: &mut Vec<[f64; EMBED_BANDS]>) -> Result<()> {
        let mag = magnitude_with(&self.engine, clip)?;
        let group = self.filterbank.n_mels() / EMBED_BANDS;
        for t in 0..mag.frames {
            let mel = self.filterbank.project(mag.frame(t));
            let mut pooled = [0.0; EMBED_BANDS];
            for (b, p) in pooled.iter_mut().enumerate() {
                let energy: f64 = mel[b * group..(b + 1) * group].iter().sum();
                *p = (energy / group as f64 + LOG_FLOOR).ln();
            }
            out.push(pooled);
        }
        Ok(())
    }
}

impl Embedder for SpectralEmbedder {
    fn name(&self) -> &str {
        "spectral"
    }

    fn dimension(&self) -> usize {
        2 * EMBED_BANDS
    }

    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let clip = if clip.sample_rate() == self.engine.config().sample_rate {
            clip.clone()
        } else {
            audio::resample(clip, self.engine.config().sample_rate)?
        };
        let mut frames = Vec::new();
        self.pooled_frames(&clip, &mut frames)?;
        self.pooled_frames(&clip.reversed(), &mut frames)?;
        let n = frames.len() as f64;
        let mut out = vec![0.0; 2 * EMBED_BANDS];
        for b in 0..EMBED_BANDS {
            let mut col: Vec<f64> = frames.iter().map(|f| f[b]).collect();
            // order-independent accumulation
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out[b] = mean;
            out[EMBED_BANDS + b] = var.sqrt();
        }
        Ok(out)
    }
}

/// One embedding per line, comma-separated, no header.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    path,
                    format!("line {}: {} columns, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_embeddings(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deterministic excerpt starts at a fixed stride.
pub fn excerpt_starts(frames: usize, stride: usize) -> Vec<usize> {
    if frames < PATCH || stride == 0 {
        return Vec::new();
    }
    (0..=frames - PATCH).step_by(stride).collect()
}

/// One-pass and cyclic reconstruction SSIM of a single patch.
pub fn reconstruction_ssim(model: &dyn Translator, x: &Tensor4<f32>, source: &str, target: &str) -> Result<(f64, f64)> {
    let mu = model.encode(x)?;
    let recon = model.decode(&mu, source)?;
    let translated = model.decode(&mu, target)?;
    let mu_t = model.encode(&translated)?;
    let cyclic = model.decode(&mu_t, source)?;
    Ok((ssim_patch(x, &recon)?, ssim_patch(x, &cyclic)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Ordered `(source, target)` pairs; empty means every ordered pair.
    pub pairs: Vec<(String, String)>,
    /// Split providing the excerpts and the clips to transfer.
    pub split: Split,
    /// Split of the target domain used as real audio for the Fréchet distance.
    pub reference_split: Split,
    pub excerpt_stride: usize,
    /// Limit on clips embedded per side of the Fréchet distance; 0 means all.
    pub max_clips: usize,
    pub transfer: TransferOptions,
    /// Skip the Fréchet distance (and the vocoder runs it needs).
    pub skip_fad: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            split: Split::Test,
            reference_split: Split::Train,
            excerpt_stride: PATCH,
            max_clips: 0,
            transfer: TransferOptions::default(),
            skip_fad: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub source: String,
    pub target: String,
    pub ssim_recon: f64,
    pub ssim_cyclic: f64,
    pub fad: Option<f64>,
    pub n_excerpts: usize,
    pub n_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    pub pairs: Vec<PairMetrics>,
}

impl EvalReport {
    /// Long-form rows: `source,target,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,target,metric,value\n");
        for p in &self.pairs {
            let _ = writeln!(s, "{},{},ssim_recon,{}", p.source, p.target, p.ssim_recon);
            let _ = writeln!(s, "{},{},ssim_cyclic,{}", p.source, p.target, p.ssim_cyclic);
            if let Some(f) = p.fad {
                let _ = writeln!(s, "{},{},fad,{f}", p.source, p.target);
            }
        }
        s
    }

    /// Write `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = stem.with_extension("json");
        let csv = stem.with_extension("csv");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&json, e))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok((json, csv))
    }

    /// Pairs where the cyclic SSIM beats the one-pass SSIM.
    pub fn ordering_violations(&self) -> Vec<&PairMetrics> {
        self.pairs.iter().filter(|p| p.ssim_recon < p.ssim_cyclic).collect()
    }
}

fn take_clips(paths: Vec<&Path>, limit: usize) -> Vec<&Path> {
    if limit == 0 {
        paths
    } else {
        paths.into_iter().take(limit).collect()
    }
}

/// Reconstruction SSIMs over held-out excerpts and Fréchet distance of transferred audio, per pair.
pub fn evaluate_model(
    model: &dyn Translator,
    manifest: &DatasetManifest,
    manifest_path: &Path,
    cfg: &EvalConfig,
    embedder: &dyn Embedder,
    vocoder: &dyn Vocoder,
) -> Result<EvalReport> {
    let domains = model.domains();
    let pairs: Vec<(String, String)> = if cfg.pairs.is_empty() {
        domains
            .iter()
            .flat_map(|s| {
                domains
                    .iter()
                    .filter(move |t| *t != s)
                    .map(move |t| (s.clone(), t.clone()))
            })
            .collect()
    } else {
        cfg.pairs.clone()
    };
    let stft = StftConfig::default();
    let load = |domain: &str, split: Split| -> Result<Vec<(PathBuf, MelSpectrogram)>> {
        manifest
            .domain(domain)?
            .files_in(split)
            .map(|p| {
                let full = resolve_path(manifest_path, p);
                load_recording_mel(&full, &stft).map(|m| (full, m))
            })
            .collect()
    };
    let mut out = Vec::new();
    for (source, target) in pairs {
        for d in [&source, &target] {
            if !domains.contains(d) {
                return Err(Error::UnknownDomain(d.clone()));
            }
        }
        let recordings = load(&source, cfg.split)?;
        let (mut sum_r, mut sum_c, mut n) = (0.0, 0.0, 0usize);
        for (_, mel) in &recordings {
            for start in excerpt_starts(mel.frames(), cfg.excerpt_stride) {
                let x = Tensor4::from_vec(patch_shape(1), excerpt_patch(mel, start))?;
                let (r, c) = reconstruction_ssim(model, &x, &source, &target)?;
                sum_r += r;
                sum_c += c;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData(format!(
                "no {PATCH}-frame excerpts in the {:?} split of '{source}'",
                cfg.split
            )));
        }
        let mut n_clips = 0;
        let fad = if cfg.skip_fad {
            None
        } else {
            let reference_paths: Vec<PathBuf> = manifest
                .domain(&target)?
                .files_in(cfg.reference_split)
                .map(|p| resolve_path(manifest_path, p))
                .collect();
            let real = take_clips(reference_paths.iter().map(PathBuf::as_path).collect(), cfg.max_clips)
                .into_iter()
                .map(|p| audio::read_wav(p).and_then(|c| embedder.embed(&c)))
                .collect::<Result<Vec<_>>>()?;
            let mut fake = Vec::new();
            for (_, mel) in recordings.iter().filter(|(_, m)| m.frames() >= PATCH) {
                if cfg.max_clips > 0 && fake.len() == cfg.max_clips {
                    break;
                }
                let moved = transfer_full(mel, &source, &target, model, &cfg.transfer)?;
                fake.push(embedder.embed(&vocoder.vocode(&moved)?)?);
            }
            n_clips = fake.len();
            Some(frechet_distance(&fit_gaussian(&real)?, &fit_gaussian(&fake)?)?)
        };
        out.push(PairMetrics {
            source,
            target,
            ssim_recon: sum_r / n as f64,
            ssim_cyclic: sum_c / n as f64,
            fad,
            n_excerpts: n,
            n_clips,
        });
    }
    let report = EvalReport {
        embedder: embedder.name().to_string(),
        pairs: out,
    };
    for v in report.ordering_violations() {
        log::warn!(
            "{} -> {}: cyclic SSIM {} exceeds one-pass SSIM {}",
            v.source,
            v.target,
            v.ssim_cyclic,
            v.ssim_recon
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen()).collect()
    }

    /// Direct 2-D window sums per output position.
    fn ssim_naive(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let k = gaussian_kernel();
        let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
        let (c1, c2) = (K1 * K1, K2 * K2);
        let mut total = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = k[i] * k[j];
                        let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                        ma += wt * p;
                        mb += wt * q;
                        aa += wt * p * p;
                        bb += wt * q * q;
                        ab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total / (oh * ow) as f64
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = random_grid(32 * 32, 1);
        assert_eq!(ssim(&x, &x, 32, 32).unwrap(), 1.0);
        let a = vec![0.2; 16 * 16];
        let b = vec![0.4; 16 * 16];
        let want = (2.0 * 0.08 + 1e-4) / (0.2 + 1e-4);
        assert!((ssim(&a, &b, 16, 16).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_naive() {
        for seed in 0..5 {
            let a = random_grid(32 * 32, seed);
            let b = random_grid(32 * 32, seed + 100);
            let fast = ssim(&a, &b, 32, 32).unwrap();
            assert!((fast - ssim_naive(&a, &b, 32, 32)).abs() < 1e-6);
            assert!((fast - ssim(&b, &a, 32, 32).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_errors() {
        let a = vec![0.0; 100];
        assert!(matches!(ssim(&a, &a, 10, 10), Err(Error::Size { .. })));
        assert!(matches!(ssim(&a, &a[..99], 10, 10), Err(Error::Shape { .. })));
    }

    #[test]
    fn gaussian_fit_by_hand() {
        let s = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.covariance, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        let dup = fit_gaussian(&vec![vec![1.5, -2.0]; 3]).unwrap();
        assert!(dup.covariance.iter().all(|&v| v == 0.0));
        assert!(matches!(fit_gaussian(&[vec![1.0]]), Err(Error::InsufficientData(_))));
        assert!(fit_gaussian(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn frechet_closed_forms() {
        let unit = |m: &[f64]| GaussianStats {
            mean: DVector::from_row_slice(m),
            covariance: DMatrix::identity(m.len(), m.len()),
            count: 10,
        };
        assert_eq!(frechet_distance(&unit(&[0.0, 0.0]), &unit(&[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(frechet_distance(&unit(&[1.0, 2.0]), &unit(&[1.0, 2.0])).unwrap(), 0.0);
        let one_d = |m: f64, var: f64| GaussianStats {
            mean: DVector::from_element(1, m),
            covariance: DMatrix::from_element(1, 1, var),
            count: 10,
        };
        assert!((frechet_distance(&one_d(0.0, 1.0), &one_d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&unit(&[0.0]), &unit(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn embedder_properties() {
        let e = spectral_embedder();
        let rate = 16_000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = AudioClip::new((0..8000).map(|_| rng.gen_range(-0.5..0.5)).collect(), rate).unwrap();
        let tone = AudioClip::new(
            (0..8013)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            rate,
        )
        .unwrap();
        let en = e.embed(&noise).unwrap();
        let et = e.embed(&tone).unwrap();
        assert_eq!(en.len(), 64);
        assert_eq!(en, e.embed(&noise).unwrap());
        assert!(en.iter().zip(&et).any(|(a, b)| a != b));
        assert_eq!(e.embed(&tone.reversed()).unwrap(), et);
        let tiny = AudioClip::new(vec![0.1; 50], rate).unwrap();
        assert!(matches!(e.embed(&tiny), Err(Error::ShortAudio { .. })));
    }

    #[test]
    fn embeddings_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..128).map(|j| (i * 128 + j) as f64 / 7.0).collect())
            .collect();
        write_embeddings(&path, &rows).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), rows);
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "").unwrap();
        let empty = load_embeddings(&path).unwrap();
        assert!(matches!(fit_gaussian(&empty), Err(Error::InsufficientData(_))));
    }
}
