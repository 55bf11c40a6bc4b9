//! Command-line front end for the timbre-forge pipeline.
//!
//! [`run`] parses arguments, dispatches to the library and maps the outcome to
//! an exit code: 0 on success, 1 for usage errors and 2 for runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use timbre_forge::audio::{self, PrepConfig, SilenceGate};
use timbre_forge::corpus::{prepare_corpus, PrepareOptions};
use timbre_forge::dsp::{mel_spectrogram, read_mel_cache, write_image, GriffinLimConfig, MelSpectrogram, StftConfig};
use timbre_forge::inference::{
    end_to_end, GriffinLimVocoder, InferenceConfig, OverlapMode, PlotPaths, TransferOptions, VocoderRegistry,
};
use timbre_forge::manifest::{DatasetManifest, Split};
use timbre_forge::metrics::{
    evaluate_model, fit_gaussian, frechet_distance, load_embeddings, spectral_embedder, EvalConfig,
};
use timbre_forge::model::PATCH;
use timbre_forge::trainer::{load_checkpoint, train, TrainConfig};

pub const SEED_ENV: &str = "TIMBRE_FORGE_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "timbre-forge",
    version,
    about = "Timbre transfer with a shared-latent VAE-GAN over mel-spectrograms"
)]
pub struct Cli {
    /// Seed for every random choice; falls back to $TIMBRE_FORGE_SEED, then to the command's default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample, level and gate a `<dir>/<domain>/*.wav` tree and write a split manifest.
    Preprocess(PreprocessArgs),
    /// Train a model from a JSON configuration.
    Train(TrainArgs),
    /// Transfer one recording from a source to a target domain.
    Infer(InferArgs),
    /// Report reconstruction SSIM and Fréchet distance per domain pair.
    Evaluate(EvaluateArgs),
    /// Render a recording or mel cache as a grayscale PNG.
    Plot(PlotArgs),
    /// Check a training configuration and print it with defaults filled in.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory with one subdirectory of WAV files per domain.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for processed WAVs and mel caches.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; entries are stored relative to its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Quiet recordings are raised to this RMS level (dBFS).
    #[arg(long, default_value_t = -30.0, allow_negative_numbers = true)]
    pub target_db: f64,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Frames quieter than this (dBFS) count as silence.
    #[arg(long, default_value_t = -60.0, allow_negative_numbers = true)]
    pub silence_db: f64,
    /// Shortest silent run that is zeroed, in milliseconds.
    #[arg(long, default_value_t = 500.0)]
    pub min_gap_ms: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint written by an earlier run with the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<out>_input.png` and `<out>_output.png`.
    #[arg(long)]
    pub plot: bool,
    /// Windows covering each frame (a power of two dividing 128).
    #[arg(long, default_value_t = 4)]
    pub overlap: usize,
    #[arg(long, value_enum, default_value_t = OverlapModeArg::Coverage)]
    pub overlap_mode: OverlapModeArg,
    /// Decode a latent sample instead of the latent mean.
    #[arg(long)]
    pub sample_latent: bool,
    #[arg(long, default_value_t = 60)]
    pub gl_iters: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gl_momentum: f64,
    #[arg(long, default_value_t = -30.0, allow_negative_numbers = true)]
    pub target_db: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OverlapModeArg {
    /// Each frame lies under up to `--overlap` windows.
    Coverage,
    /// Consecutive windows share `--overlap` frames.
    Frames,
}

impl From<OverlapModeArg> for OverlapMode {
    fn from(m: OverlapModeArg) -> Self {
        match m {
            OverlapModeArg::Coverage => OverlapMode::Coverage,
            OverlapModeArg::Frames => OverlapMode::Frames,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "real_embeddings")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, required_unless_present = "real_embeddings")]
    pub manifest: Option<PathBuf>,
    /// Report path stem; `.json` and `.csv` are written next to it.
    #[arg(long, required_unless_present = "real_embeddings")]
    pub out: Option<PathBuf>,
    /// Ordered pair `SOURCE:TARGET`; repeatable. Defaults to every ordered pair.
    #[arg(long = "pair", value_parser = parse_pair)]
    pub pairs: Vec<(String, String)>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Split of real target-domain audio for the Fréchet distance.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub reference_split: SplitArg,
    #[arg(long, default_value_t = PATCH)]
    pub excerpt_stride: usize,
    /// Clips embedded per side of the Fréchet distance; 0 means all.
    #[arg(long, default_value_t = 0)]
    pub max_clips: usize,
    #[arg(long, default_value_t = 4)]
    pub overlap: usize,
    #[arg(long, value_enum, default_value_t = OverlapModeArg::Coverage)]
    pub overlap_mode: OverlapModeArg,
    #[arg(long, default_value_t = 60)]
    pub gl_iters: usize,
    /// Only compute SSIM.
    #[arg(long)]
    pub skip_fad: bool,
    /// Precomputed real embeddings (CSV, no header); with --fake-embeddings, prints their Fréchet distance.
    #[arg(long, requires = "fake_embeddings")]
    pub real_embeddings: Option<PathBuf>,
    #[arg(long, requires = "real_embeddings")]
    pub fake_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// WAV recording or `.mels` cache.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// First frame of the excerpt to draw.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Excerpt length in frames; defaults to the rest of the grid.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(format!("expected SOURCE:TARGET, got '{s}'")),
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] timbre_forge::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) | CliError::Invalid(_) => EXIT_RUNTIME,
        }
    }
}

/// `--seed`, else the environment fallback.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn say(msg: impl AsRef<str>) {
    println!("{}", msg.as_ref());
}

/// Parse `argv` (including the program name) and execute it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let seed = resolve_seed(cli.seed)?;
    let jobs = cli.jobs as usize;
    match cli.command {
        Command::Preprocess(a) => preprocess(a, seed.unwrap_or(0), jobs),
        Command::Train(a) => train_cmd(a, seed),
        Command::Infer(a) => infer(a, seed.unwrap_or(0)),
        Command::Evaluate(a) => evaluate(a, seed.unwrap_or(0)),
        Command::Plot(a) => plot(a),
        Command::ValidateConfig(a) => validate(a),
    }
}

fn preprocess(a: PreprocessArgs, seed: u64, jobs: usize) -> Result<(), CliError> {
    let opts = PrepareOptions {
        input_dir: a.input,
        output_dir: a.out,
        manifest_path: a.manifest.clone(),
        prep: PrepConfig {
            sample_rate: a.sample_rate,
            target_db: a.target_db,
            silence: SilenceGate {
                threshold_db: a.silence_db,
                min_gap_ms: a.min_gap_ms,
                ..SilenceGate::default()
            },
        },
        seed,
        jobs,
    };
    let summary = prepare_corpus(&opts)?;
    for d in &summary.manifest.domains {
        say(format!(
            "{}: {} train, {} valid, {} test",
            d.name,
            d.count(Split::Train),
            d.count(Split::Valid),
            d.count(Split::Test)
        ));
    }
    say(format!("wrote {} files and {}", summary.files, a.manifest.display()));
    Ok(())
}

fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig::load(path)?)
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let outcome = train(&cfg, &manifest, a.resume.as_deref())?;
    if let Some(r) = &outcome.last_report {
        say(format!("last step: {r}"));
    }
    say(format!(
        "{} steps; losses in {}; final checkpoint {}",
        outcome.steps,
        outcome.loss_csv.display(),
        outcome.final_checkpoint.display()
    ));
    Ok(())
}

/// `<dir>/<stem>_<tag>.png` next to `out`.
pub fn plot_path(out: &Path, tag: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_{tag}.png"))
}

fn infer(a: InferArgs, seed: u64) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cfg = InferenceConfig {
        prep: PrepConfig {
            target_db: a.target_db,
            ..PrepConfig::default()
        },
        transfer: TransferOptions {
            overlap: a.overlap,
            overlap_mode: a.overlap_mode.into(),
            deterministic: !a.sample_latent,
            seed,
        },
        griffin_lim: GriffinLimConfig {
            iters: a.gl_iters,
            momentum: a.gl_momentum,
        },
        ..InferenceConfig::default()
    };
    let registry = VocoderRegistry::new(cfg.griffin_lim);
    let (pin, pout) = (plot_path(&a.out, "input"), plot_path(&a.out, "output"));
    let plots = a.plot.then_some(PlotPaths {
        input: &pin,
        output: &pout,
    });
    let out = end_to_end(
        &a.input,
        &a.source,
        &a.target,
        &ckpt.bundle,
        &cfg,
        &registry,
        &a.out,
        plots,
    )?;
    say(format!(
        "{} -> {}: {} frames, wrote {}",
        a.source,
        a.target,
        out.output_mel.frames(),
        a.out.display()
    ));
    if a.plot {
        say(format!("plots {} and {}", pin.display(), pout.display()));
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, seed: u64) -> Result<(), CliError> {
    if let (Some(real), Some(fake)) = (&a.real_embeddings, &a.fake_embeddings) {
        let d = frechet_distance(
            &fit_gaussian(&load_embeddings(real)?)?,
            &fit_gaussian(&load_embeddings(fake)?)?,
        )?;
        say(format!("fad={d}"));
        return Ok(());
    }
    let missing = |what: &str| CliError::Usage(format!("--{what} is required"));
    let ckpt = load_checkpoint(a.ckpt.as_ref().ok_or_else(|| missing("ckpt"))?)?;
    let manifest_path = a.manifest.ok_or_else(|| missing("manifest"))?;
    let out = a.out.ok_or_else(|| missing("out"))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let cfg = EvalConfig {
        pairs: a.pairs,
        split: a.split.into(),
        reference_split: a.reference_split.into(),
        excerpt_stride: a.excerpt_stride,
        max_clips: a.max_clips,
        transfer: TransferOptions {
            overlap: a.overlap,
            overlap_mode: a.overlap_mode.into(),
            seed,
            ..TransferOptions::default()
        },
        skip_fad: a.skip_fad,
    };
    let vocoder = GriffinLimVocoder {
        stft: StftConfig::default(),
        griffin_lim: GriffinLimConfig {
            iters: a.gl_iters,
            ..GriffinLimConfig::default()
        },
    };
    let report = evaluate_model(
        &ckpt.bundle,
        &manifest,
        &manifest_path,
        &cfg,
        &spectral_embedder(),
        &vocoder,
    )?;
    let (json, csv) = report.write(&out)?;
    for p in &report.pairs {
        let fad = p.fad.map(|f| format!(" fad={f}")).unwrap_or_default();
        say(format!(
            "{} -> {}: ssim_recon={} ssim_cyclic={}{fad} ({} excerpts)",
            p.source, p.target, p.ssim_recon, p.ssim_cyclic, p.n_excerpts
        ));
    }
    say(format!("wrote {} and {}", json.display(), csv.display()));
    Ok(())
}

fn load_mel(path: &Path) -> Result<MelSpectrogram, CliError> {
    if path.extension().is_some_and(|e| e == "mels") {
        return Ok(read_mel_cache(path)?);
    }
    let stft = StftConfig::default();
    let clip = audio::resample(&audio::read_wav(path)?, stft.sample_rate)?;
    Ok(mel_spectrogram(&clip, &stft)?)
}

fn plot(a: PlotArgs) -> Result<(), CliError> {
    let mel = load_mel(&a.input)?;
    let len = a.frames.unwrap_or(mel.frames().saturating_sub(a.start));
    let view = if a.start == 0 && len == mel.frames() {
        mel
    } else {
        mel.excerpt(a.start, len)?
    };
    write_image(&view, &a.out)?;
    say(format!(
        "{}x{} image written to {}",
        view.frames(),
        view.n_mels(),
        a.out.display()
    ));
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let problems = match DatasetManifest::load(&cfg.manifest) {
        Ok(m) => cfg.problems_with(&m),
        Err(e) => {
            let mut p = cfg.problems();
            p.push(format!("manifest: {e}"));
            p
        }
    };
    if problems.is_empty() {
        say(cfg.to_json());
        Ok(())
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        Err(CliError::Invalid(format!(
            "{} problem(s) in {}",
            problems.len(),
            a.config.display()
        )))
    }
}
