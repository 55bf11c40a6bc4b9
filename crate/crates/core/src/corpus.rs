//! Batch preprocessing of a `<root>/<domain>/*.wav` tree into a training corpus.

use std::path::{Component, Path, PathBuf};

use crate::audio::{self, PrepConfig};
use crate::dsp::{mel_spectrogram, write_mel_cache, StftConfig};
use crate::manifest::{split_dataset, DatasetManifest};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub prep: PrepConfig,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub manifest: DatasetManifest,
    pub files: usize,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Domains are the subdirectories of `root`; files are their `.wav` entries, sorted by name.
pub fn discover(root: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut domains = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let wavs: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        if !wavs.is_empty() {
            domains.push((name, wavs));
        }
    }
    if domains.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} has no domain subdirectories containing .wav files",
            root.display()
        )));
    }
    Ok(domains)
}

/// `path` relative to `base` when both are relative or both absolute; otherwise `path` unchanged.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    fn norm(p: &Path) -> Vec<Component<'_>> {
        p.components().filter(|c| *c != Component::CurDir).collect()
    }
    let (p, b) = (norm(path), norm(base));
    if path.is_absolute() != base.is_absolute() || b.contains(&Component::ParentDir) {
        return path.to_path_buf();
    }
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c.as_os_str());
    }
    out
}

fn prepare_file(src: &Path, dst: &Path, prep: &PrepConfig, stft: &StftConfig) -> Result<()> {
    let clip = audio::preprocess(&audio::read_wav(src)?, prep)?;
    audio::write_wav(dst, &clip)?;
    write_mel_cache(dst.with_extension("mels"), &mel_spectrogram(&clip, stft)?)
}

/// Preprocess every recording, write `<out>/<domain>/<name>.wav` with a `.mels` cache
/// beside it, and save a split manifest whose paths are relative to its own directory.
pub fn prepare_corpus(opts: &PrepareOptions) -> Result<PrepareSummary> {
    let found = discover(&opts.input_dir)?;
    let stft = StftConfig {
        sample_rate: opts.prep.sample_rate,
        ..StftConfig::default()
    };
    stft.validate()?;
    let manifest_dir = opts.manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut jobs_list = Vec::new();
    let mut listing = Vec::new();
    for (name, files) in &found {
        let out_dir = opts.output_dir.join(name);
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let mut rel = Vec::new();
        for src in files {
            let dst = out_dir.join(src.file_name().expect("listed files have names"));
            rel.push(relative_to(&dst, &manifest_dir));
            jobs_list.push((src.clone(), dst));
        }
        listing.push((name.clone(), rel));
    }
    let workers = opts.jobs.max(1).min(jobs_list.len().max(1));
    let chunk = jobs_list.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs_list
            .chunks(chunk.max(1))
            .map(|part| {
                s.spawn(move || -> Result<()> {
                    for (src, dst) in part {
                        prepare_file(src, dst, &opts.prep, &stft)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("preprocessing worker panicked"))
    })?;
    let manifest = split_dataset(&listing, opts.seed)?;
    if let Some(dir) = opts.manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest.save(&opts.manifest_path)?;
    Ok(PrepareSummary {
        manifest,
        files: jobs_list.len(),
    })
}
