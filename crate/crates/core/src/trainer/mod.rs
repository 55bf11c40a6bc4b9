//! Excerpt sampling, the simultaneous generator/discriminator pair-step, and
//! the epoch loop with checkpointing.

mod checkpoint;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use timbre_nn::{lr_schedule, Adam, AdamConfig, ParamId, Tensor4, Var};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_matching, named_values, save_checkpoint, Checkpoint, Progress, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::dsp::{mel_spectrogram, read_mel_cache, MelSpectrogram, StftConfig};
use crate::losses::{self, LossParts, LossReport, LossWeights, CSV_FIELDS};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{self, excerpt_patch, latent_noise, ModelBundle, ResidualKind, Tape, Topology, Variant, PATCH};
use crate::{audio, Error, Result};

/// Which decoder produces the VAE reconstruction of a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VaeReconPath {
    /// The source domain's own decoder.
    #[default]
    #[serde(rename = "self")]
    SelfPath,
    /// The other domain's decoder.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            alpha: a.alpha,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    4
}
fn default_checkpoint_every() -> usize {
    25
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub domains: Vec<String>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub residual_kind: ResidualKind,
    #[serde(default = "default_true")]
    pub cyclic_kld: bool,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub vae_recon_path: VaeReconPath,
    /// Align the means of every domain at each pair-step instead of only the active pair.
    #[serde(default)]
    pub latent_all_domains: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Defaults to one nominal pass over the training recordings per epoch.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
}

impl TrainConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, domains: &[&str]) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            domains: domains.iter().map(|d| d.to_string()).collect(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            residual_kind: ResidualKind::default(),
            cyclic_kld: true,
            topology: Topology::default(),
            vae_recon_path: VaeReconPath::default(),
            latent_all_domains: false,
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
            steps_per_epoch: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn variant(&self) -> Variant {
        Variant {
            residual_kind: self.residual_kind,
            cyclic_kld: self.cyclic_kld,
            topology: self.topology,
        }
    }

    /// Every problem found, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("epochs: must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size: must be >= 1".to_string());
        }
        if self.checkpoint_every == 0 {
            out.push("checkpoint_every: must be >= 1".to_string());
        }
        if self.steps_per_epoch == Some(0) {
            out.push("steps_per_epoch: must be >= 1".to_string());
        }
        if self.domains.len() < 2 {
            out.push(format!("domains: need at least 2, got {}", self.domains.len()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if self.domains[..i].contains(d) {
                out.push(format!("domains: duplicate '{d}'"));
            }
        }
        if self.topology == Topology::OneToOne && self.domains.len() != 2 {
            out.push(format!(
                "topology: one_to_one needs exactly 2 domains, got {}",
                self.domains.len()
            ));
        }
        if let Err(e) = self.weights.validate() {
            out.push(format!("weights: {e}"));
        }
        if let Err(e) = self.optimizer.adam().validate() {
            out.push(format!("optimizer: {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// [`TrainConfig::problems`] plus checks against the dataset manifest.
    pub fn problems_with(&self, manifest: &DatasetManifest) -> Vec<String> {
        let mut out = self.problems();
        for d in &self.domains {
            match manifest.domain(d) {
                Ok(entry) if entry.count(Split::Train) == 0 => {
                    out.push(format!("domains: '{d}' has no training files"))
                }
                Ok(_) => {}
                Err(_) => out.push(format!("domains: '{d}' not in manifest")),
            }
        }
        out
    }

    /// Unordered domain index pairs visited each step.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let k = self.domains.len();
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
    }
}

/// In-memory training recordings per domain.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub domains: Vec<String>,
    pub recordings: Vec<Vec<MelSpectrogram>>,
}

/// Resolve a manifest entry against the manifest's directory.
pub fn resolve_path(manifest_path: &Path, entry: &Path) -> PathBuf {
    if entry.is_absolute() {
        entry.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(entry)
    }
}

/// Mel grid for a recording: taken from a `.mels` cache next to the file when present.
pub fn load_recording_mel(path: &Path, stft: &StftConfig) -> Result<MelSpectrogram> {
    if path.extension().is_some_and(|e| e == "mels") {
        return read_mel_cache(path);
    }
    let cache = path.with_extension("mels");
    if cache.exists() {
        return read_mel_cache(&cache);
    }
    let clip = audio::read_wav(path)?;
    let clip = audio::resample(&clip, stft.sample_rate)?;
    mel_spectrogram(&clip, stft)
}

impl TrainingSet {
    pub fn load(manifest: &DatasetManifest, manifest_path: &Path, domains: &[String], split: Split) -> Result<Self> {
        let stft = StftConfig::default();
        let mut recordings = Vec::new();
        for d in domains {
            let entry = manifest.domain(d)?;
            let mels = entry
                .files_in(split)
                .map(|p| load_recording_mel(&resolve_path(manifest_path, p), &stft))
                .collect::<Result<Vec<_>>>()?;
            recordings.push(mels);
        }
        Ok(Self {
            domains: domains.to_vec(),
            recordings,
        })
    }
}

/// A batch of 128×128 excerpts from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcerptBatch {
    pub domain: String,
    /// `B×1×128×128`, mel bands along height, frames along width.
    pub patches: Tensor4<f32>,
    /// `(recording index, start frame)` per patch.
    pub sources: Vec<(usize, usize)>,
}

/// Uniform recording choice (redrawing recordings shorter than a patch), then a uniform start frame.
pub fn sample_batch<R: Rng + ?Sized>(
    domain: &str,
    recordings: &[MelSpectrogram],
    batch: usize,
    rng: &mut R,
) -> Result<ExcerptBatch> {
    if !recordings.iter().any(|m| m.frames() >= PATCH && m.n_mels() == PATCH) {
        return Err(Error::InsufficientData(format!(
            "domain '{domain}' has no training recording of at least {PATCH} frames"
        )));
    }
    let mut data = Vec::with_capacity(batch * PATCH * PATCH);
    let mut sources = Vec::with_capacity(batch);
    while sources.len() < batch {
        let r = rng.gen_range(0..recordings.len());
        let mel = &recordings[r];
        if mel.frames() < PATCH || mel.n_mels() != PATCH {
            continue;
        }
        let start = rng.gen_range(0..=mel.frames() - PATCH);
        data.extend(excerpt_patch(mel, start));
        sources.push((r, start));
    }
    Ok(ExcerptBatch {
        domain: domain.to_string(),
        patches: Tensor4::from_vec(model::patch_shape(batch), data)?,
        sources,
    })
}

/// Options a pair-step needs from the configuration.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub weights: LossWeights,
    pub include_cyclic_kld: bool,
    pub vae_recon_path: VaeReconPath,
}

impl From<&TrainConfig> for StepOptions {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            weights: cfg.weights,
            include_cyclic_kld: cfg.cyclic_kld,
            vae_recon_path: cfg.vae_recon_path,
        }
    }
}

/// The recorded forward pass of one pair-step, before any update.
pub struct PairGraph<'m> {
    pub tape: Tape<'m>,
    pub total_g: Var,
    pub total_d: Var,
    pub report: LossReport,
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.graph.value(v).item() as f64
}

fn reparam<R: Rng + ?Sized>(t: &mut Tape, mu: Var, noise: &mut R) -> Result<Var> {
    let shape = t.graph.value(mu).shape();
    let eta = t.input(latent_noise(shape, noise));
    Ok(t.graph.add(mu, eta)?)
}

fn sum_pair(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    Ok(tape.graph.sum_scalars(&[a, b])?)
}

/// Record both directions of the pair `(a, b)`: self, cross and cyclic paths, adversarial terms and totals.
///
/// `extra` holds batches of further domains whose means join the latent term.
pub fn pair_forward<'m, R: Rng + ?Sized>(
    bundle: &'m ModelBundle,
    a: &ExcerptBatch,
    b: &ExcerptBatch,
    extra: &[ExcerptBatch],
    opts: &StepOptions,
    noise: &mut R,
) -> Result<PairGraph<'m>> {
    if a.domain == b.domain {
        return Err(Error::Config(format!(
            "pair-step needs distinct domains, got '{}' twice",
            a.domain
        )));
    }
    let (da, db) = (bundle.domain_index(&a.domain)?, bundle.domain_index(&b.domain)?);
    let w = &opts.weights;
    let mut t = Tape::new(bundle, true);
    let xa = t.input(a.patches.clone());
    let xb = t.input(b.patches.clone());
    let mu_a = t.encode(xa)?;
    let mu_b = t.encode(xb)?;
    let z_a = reparam(&mut t, mu_a, noise)?;
    let z_b = reparam(&mut t, mu_b, noise)?;
    let x_ab = t.decode(z_a, db)?;
    let x_ba = t.decode(z_b, da)?;
    let (x_aa, x_bb) = match opts.vae_recon_path {
        VaeReconPath::SelfPath => (t.decode(z_a, da)?, t.decode(z_b, db)?),
        VaeReconPath::Inverse => (x_ab, x_ba),
    };
    let mu_ab = t.encode(x_ab)?;
    let mu_ba = t.encode(x_ba)?;
    let z_ab = reparam(&mut t, mu_ab, noise)?;
    let z_ba = reparam(&mut t, mu_ba, noise)?;
    let x_aba = t.decode(z_ab, da)?;
    let x_bab = t.decode(z_ba, db)?;

    let s_ab = t.discriminate(x_ab, db, false)?;
    let s_ba = t.discriminate(x_ba, da, false)?;
    let g1 = losses::adversarial_loss_g(&mut t.graph, s_ab);
    let g2 = losses::adversarial_loss_g(&mut t.graph, s_ba);
    let gan_g = sum_pair(&mut t, g1, g2)?;
    let k1 = losses::kl_loss(&mut t.graph, mu_a);
    let k2 = losses::kl_loss(&mut t.graph, mu_b);
    let kl = sum_pair(&mut t, k1, k2)?;
    let r1 = losses::recon_l1(&mut t.graph, xa, x_aa)?;
    let r2 = losses::recon_l1(&mut t.graph, xb, x_bb)?;
    let recon = sum_pair(&mut t, r1, r2)?;
    let c1 = losses::kl_loss(&mut t.graph, mu_ab);
    let c2 = losses::kl_loss(&mut t.graph, mu_ba);
    let cc_kl = sum_pair(&mut t, c1, c2)?;
    let c3 = losses::recon_l1(&mut t.graph, xa, x_aba)?;
    let c4 = losses::recon_l1(&mut t.graph, xb, x_bab)?;
    let cc_recon = sum_pair(&mut t, c3, c4)?;
    let mut means = vec![mu_a, mu_b];
    for e in extra {
        let x = t.input(e.patches.clone());
        means.push(t.encode(x)?);
    }
    let latent = losses::latent_pairs(&mut t.graph, &means)?;

    let mut weighted = vec![
        t.graph.scale(gan_g, w.lambda0 as f32),
        t.graph.scale(kl, w.lambda1 as f32),
        t.graph.scale(recon, w.lambda2 as f32),
        t.graph.scale(cc_recon, w.lambda4 as f32),
        t.graph.scale(latent, w.lambda5 as f32),
    ];
    if opts.include_cyclic_kld {
        weighted.push(t.graph.scale(cc_kl, w.lambda3 as f32));
    }
    let total_g = t.graph.sum_scalars(&weighted)?;

    let fake_ab = t.graph.detach(x_ab);
    let fake_ba = t.graph.detach(x_ba);
    let real_a = t.discriminate(xa, da, true)?;
    let fake_a = t.discriminate(fake_ba, da, true)?;
    let real_b = t.discriminate(xb, db, true)?;
    let fake_b = t.discriminate(fake_ab, db, true)?;
    let d1 = losses::adversarial_loss_d(&mut t.graph, real_a, fake_a)?;
    let d2 = losses::adversarial_loss_d(&mut t.graph, real_b, fake_b)?;
    let gan_d = sum_pair(&mut t, d1, d2)?;
    let total_d = t.graph.scale(gan_d, w.lambda0 as f32);

    let parts = LossParts {
        l_gan_g: scalar(&t, gan_g),
        l_gan_d: scalar(&t, gan_d),
        l_kl: scalar(&t, kl),
        l_recon: scalar(&t, recon),
        l_cc_kl: scalar(&t, cc_kl),
        l_cc_recon: scalar(&t, cc_recon),
        l_latent: scalar(&t, latent),
    };
    let report = losses::total_objective(parts, w, opts.include_cyclic_kld)?;
    Ok(PairGraph {
        tape: t,
        total_g,
        total_d,
        report,
    })
}

type GradList = Vec<(ParamId, Tensor4<f32>)>;

fn collect_grads(tape: &Tape, root: Var, trainable_disc: bool) -> Result<GradList> {
    let mut grads = tape.graph.backward(root)?;
    Ok(tape
        .bindings(trainable_disc)
        .into_iter()
        .filter_map(|(id, v)| grads.take(v).map(|g| (id, g)))
        .collect())
}

/// One simultaneous update: Adam on the generator against `total_g` and on both discriminators against `total_d`.
#[allow(clippy::too_many_arguments)]
pub fn train_pair_step<R: Rng + ?Sized>(
    bundle: &mut ModelBundle,
    adam_g: &mut Adam<f32>,
    adam_d: &mut Adam<f32>,
    a: &ExcerptBatch,
    b: &ExcerptBatch,
    extra: &[ExcerptBatch],
    opts: &StepOptions,
    lr: f64,
    noise: &mut R,
) -> Result<LossReport> {
    let (report, gen, disc) = {
        let pg = pair_forward(bundle, a, b, extra, opts, noise)?;
        let gen = collect_grads(&pg.tape, pg.total_g, false)?;
        let disc = collect_grads(&pg.tape, pg.total_d, true)?;
        (pg.report, gen, disc)
    };
    adam_g.step(bundle.params_mut(), &gen, lr)?;
    adam_d.step(bundle.params_mut(), &disc, lr)?;
    Ok(report)
}

/// Steps per epoch: the configured value, or enough to draw every training recording about once.
pub fn steps_per_epoch(cfg: &TrainConfig, data: &TrainingSet) -> usize {
    cfg.steps_per_epoch.unwrap_or_else(|| {
        let total: usize = data.recordings.iter().map(Vec::len).sum();
        let per_step = data.domains.len() * cfg.batch_size;
        total.div_ceil(per_step).max(1)
    })
}

pub const CSV_PREFIX: [&str; 3] = ["step", "epoch", "pair"];

pub fn csv_header() -> String {
    let mut cols: Vec<&str> = CSV_PREFIX.to_vec();
    cols.extend(CSV_FIELDS);
    cols.push("lr");
    cols.join(",")
}

/// Whether a periodic checkpoint follows the `done`-th completed epoch.
pub fn checkpoint_due(done: usize, every: usize, epochs: usize) -> bool {
    done == epochs || (every > 0 && done.is_multiple_of(every))
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.tfck")
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub last_report: Option<LossReport>,
    pub steps: usize,
}

/// Live training state; [`Trainer::run`] resumes wherever it stands.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub data: TrainingSet,
    pub bundle: ModelBundle,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
    pub progress: Progress,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: TrainingSet) -> Result<Self> {
        cfg.validate()?;
        if data.domains != cfg.domains {
            return Err(Error::Config(
                "training set domains differ from the configuration".into(),
            ));
        }
        let bundle = ModelBundle::build(&cfg.domains, cfg.variant(), cfg.seed)?;
        log::info!("parameters:\n{}", bundle.param_report());
        let adam = Adam::new(cfg.optimizer.adam())?;
        Ok(Self {
            progress: Progress {
                epoch: 0,
                step: 0,
                sample_rng: stream_rng(cfg.seed, 1),
                noise_rng: stream_rng(cfg.seed, 2),
            },
            adam_g: adam.clone(),
            adam_d: adam,
            bundle,
            cfg,
            data,
        })
    }

    /// Continue from a checkpoint written by a run of the same configuration.
    pub fn resume(cfg: TrainConfig, data: TrainingSet, path: &Path) -> Result<Self> {
        let mut t = Self::new(cfg, data)?;
        let ckpt = load_checkpoint_matching(path, &t.cfg.domains, t.cfg.variant())?;
        let (Some(adam_g), Some(adam_d), Some(progress)) = (ckpt.adam_g, ckpt.adam_d, ckpt.progress) else {
            return Err(Error::Config(format!(
                "{} carries no optimizer state and cannot be resumed",
                path.display()
            )));
        };
        t.bundle = ckpt.bundle;
        t.adam_g = adam_g;
        t.adam_d = adam_d;
        t.progress = progress;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            config: Some(self.cfg.clone()),
            adam_g: Some(self.adam_g.clone()),
            adam_d: Some(self.adam_d.clone()),
            progress: Some(self.progress.clone()),
        }
    }

    /// Perform one step: a pair-step for every pair of the topology.
    /// Returns `(pair label, report)` per pair-step.
    pub fn step(&mut self, lr: f64) -> Result<Vec<(String, LossReport)>> {
        let opts = StepOptions::from(&self.cfg);
        let mut out = Vec::new();
        for (i, j) in self.cfg.pairs() {
            let name = |k: usize| self.data.domains[k].clone();
            let rng = &mut self.progress.sample_rng;
            let a = sample_batch(&name(i), &self.data.recordings[i], self.cfg.batch_size, rng)?;
            let b = sample_batch(&name(j), &self.data.recordings[j], self.cfg.batch_size, rng)?;
            let mut extra = Vec::new();
            if self.cfg.latent_all_domains {
                for k in (0..self.data.domains.len()).filter(|&k| k != i && k != j) {
                    extra.push(sample_batch(
                        &name(k),
                        &self.data.recordings[k],
                        self.cfg.batch_size,
                        rng,
                    )?);
                }
            }
            let report = train_pair_step(
                &mut self.bundle,
                &mut self.adam_g,
                &mut self.adam_d,
                &a,
                &b,
                &extra,
                &opts,
                lr,
                &mut self.progress.noise_rng,
            )?;
            out.push((format!("{}/{}", name(i), name(j)), report));
        }
        self.progress.step += 1;
        Ok(out)
    }

    /// Train the remaining epochs, appending to `loss.csv` and writing checkpoints into the output directory.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let dir = self.cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let csv_path = dir.join("loss.csv");
        let mut csv = open_loss_csv(&csv_path, self.progress.step)?;
        let spe = steps_per_epoch(&self.cfg, &self.data);
        let mut checkpoints = Vec::new();
        let mut last = None;
        let final_path = dir.join("final.tfck");
        log::info!("training {} epochs of {spe} steps", self.cfg.epochs);
        while self.progress.epoch < self.cfg.epochs {
            let epoch = self.progress.epoch;
            let lr = lr_schedule(epoch, self.cfg.epochs, self.cfg.optimizer.alpha);
            for _ in 0..spe {
                let step = self.progress.step;
                for (pair, report) in self.step(lr)? {
                    writeln!(csv, "{step},{epoch},{pair},{},{lr}", report.csv_fields())
                        .and_then(|_| csv.flush())
                        .map_err(|e| Error::io(&csv_path, e))?;
                    last = Some(report);
                }
            }
            self.progress.epoch += 1;
            log::info!(
                "epoch {} done, last {}",
                self.progress.epoch,
                last.map(|r| r.to_string()).unwrap_or_default()
            );
            let done = self.progress.epoch;
            if checkpoint_due(done, self.cfg.checkpoint_every, self.cfg.epochs) {
                let path = dir.join(checkpoint_name(done));
                save_checkpoint(&path, &self.checkpoint())?;
                checkpoints.push(path);
            }
        }
        save_checkpoint(&final_path, &self.checkpoint())?;
        checkpoints.push(final_path.clone());
        Ok(TrainOutcome {
            loss_csv: csv_path,
            checkpoints,
            final_checkpoint: final_path,
            last_report: last,
            steps: self.progress.step,
        })
    }
}

/// Open the loss CSV for a run that has completed `done_steps`, dropping rows of any later steps.
fn open_loss_csv(path: &Path, done_steps: usize) -> Result<BufWriter<File>> {
    let io = |e| Error::io(path, e);
    let mut kept = vec![csv_header()];
    if done_steps > 0 && path.exists() {
        let reader = BufReader::new(File::open(path).map_err(io)?);
        for line in reader.lines().skip(1) {
            let line = line.map_err(io)?;
            let step: Option<usize> = line.split(',').next().and_then(|s| s.parse().ok());
            if step.is_some_and(|s| s < done_steps) {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for l in kept {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(w)
}

/// Load the manifest's training data and train from scratch, or from `resume`.
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest, resume: Option<&Path>) -> Result<TrainOutcome> {
    let problems = cfg.problems_with(manifest);
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let data = TrainingSet::load(manifest, &cfg.manifest, &cfg.domains, Split::Train)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(cfg.clone(), data, p)?,
        None => Trainer::new(cfg.clone(), data)?,
    };
    trainer.run()
}

/// Parsed rows of a loss CSV written by [`Trainer::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub pair: String,
    pub report: LossReport,
    pub lr: f64,
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(csv_header().as_str()) {
        return Err(Error::format(path, "unexpected loss CSV header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: &str| Error::format(path, format!("row {}: {m}", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 + CSV_FIELDS.len() + 1 {
                return Err(bad("wrong column count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("not a number"));
            let v: Vec<f64> = cols[3..12].iter().map(|s| num(s)).collect::<Result<_>>()?;
            Ok(LossRow {
                step: cols[0].parse().map_err(|_| bad("bad step"))?,
                epoch: cols[1].parse().map_err(|_| bad("bad epoch"))?,
                pair: cols[2].to_string(),
                report: LossReport {
                    l_gan_g: v[0],
                    l_gan_d: v[1],
                    l_kl: v[2],
                    l_recon: v[3],
                    l_cc_kl: v[4],
                    l_cc_recon: v[5],
                    l_latent: v[6],
                    total_g: v[7],
                    total_d: v[8],
                },
                lr: num(cols[12])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::NormStats;

    fn mel(frames: usize, fill: f32) -> MelSpectrogram {
        MelSpectrogram::new(
            frames,
            128,
            vec![fill; frames * 128],
            Some(NormStats { min: 0.0, max: 1.0 }),
        )
        .unwrap()
    }

    #[test]
    fn exact_length_recording_starts_at_zero() {
        let recs = vec![mel(128, 0.3)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let b = sample_batch("a", &recs, 2, &mut rng).unwrap();
            assert!(b.sources.iter().all(|&(r, s)| r == 0 && s == 0));
            assert_eq!(b.patches.shape(), model::patch_shape(2));
        }
    }

    #[test]
    fn short_recordings_skipped_or_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch("a", &[mel(100, 0.0)], 1, &mut rng),
            Err(Error::InsufficientData(_))
        ));
        let recs = vec![mel(100, 0.0), mel(200, 0.5)];
        for _ in 0..20 {
            let b = sample_batch("a", &recs, 1, &mut rng).unwrap();
            assert_eq!(b.sources[0].0, 1);
        }
    }

    #[test]
    fn sampling_is_seeded_and_balanced() {
        let recs = vec![mel(300, 0.1), mel(300, 0.9)];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_batch("a", &recs, 4, &mut rng).unwrap()
        };
        assert_eq!(draw(5), draw(5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let firsts = (0..n)
            .filter(|_| sample_batch("a", &recs, 1, &mut rng).unwrap().sources[0].0 == 0)
            .count();
        let f = firsts as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.03, "{f}");
    }

    #[test]
    fn patch_layout_is_band_by_frame() {
        let mut m = mel(130, 0.0);
        m.set(5, 7, 1.0);
        let p = excerpt_patch(&m, 2);
        assert_eq!(p[7 * 128 + 3], 1.0);
        assert_eq!(p.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn config_defaults_and_rejections() {
        let cfg =
            TrainConfig::from_json(r#"{"manifest": "m.json", "output_dir": "o", "domains": ["a", "b"]}"#).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.weights, LossWeights::default());
        assert_eq!(cfg.optimizer.alpha, 1e-4);
        assert_eq!(cfg.vae_recon_path, VaeReconPath::SelfPath);
        assert!(cfg.validate().is_ok());
        let back = TrainConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_json(r#"{"manifest": "m", "output_dir": "o", "domains": [], "bogus": 1}"#).is_err());
        let mut m2m = cfg.clone();
        m2m.topology = Topology::ManyToMany;
        m2m.domains = vec!["a".into()];
        assert!(m2m.validate().is_err());
        let inverse = TrainConfig::from_json(
            r#"{"manifest": "m", "output_dir": "o", "domains": ["a","b"], "vae_recon_path": "inverse"}"#,
        )
        .unwrap();
        assert_eq!(inverse.vae_recon_path, VaeReconPath::Inverse);
    }

    #[test]
    fn pairs_for_four_domains() {
        let mut cfg = TrainConfig::new("m", "o", &["a", "b", "c", "d"]);
        cfg.topology = Topology::ManyToMany;
        assert_eq!(cfg.pairs().len(), 6);
    }

    #[test]
    fn default_steps_per_epoch() {
        let mut cfg = TrainConfig::new("m", "o", &["a", "b"]);
        cfg.batch_size = 4;
        let data = TrainingSet {
            domains: cfg.domains.clone(),
            recordings: vec![vec![mel(128, 0.0); 9], vec![mel(128, 0.0); 8]],
        };
        assert_eq!(steps_per_epoch(&cfg, &data), 3);
        cfg.steps_per_epoch = Some(7);
        assert_eq!(steps_per_epoch(&cfg, &data), 7);
    }
}
