//! Shared-encoder VAE-GAN: universal encoder, one shared decoder residual
//! block, and a decoder/discriminator pair per domain.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use timbre_nn::ops::ConvSpec;
use timbre_nn::{init, Graph, ParamId, ParamStore, Shape4, Tensor4, Var};

use crate::dsp::MelSpectrogram;
use crate::{Error, Result};

pub const PATCH: usize = 128;
pub const LATENT_CHANNELS: usize = 128;
pub const LATENT_SIZE: usize = 16;
pub const SCORE_SIZE: usize = 4;
const SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-5;

pub fn patch_shape(batch: usize) -> Shape4 {
    Shape4::new(batch, 1, PATCH, PATCH)
}

pub fn latent_shape(batch: usize) -> Shape4 {
    Shape4::new(batch, LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    #[default]
    Basic,
    Bottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    OneToOne,
    ManyToMany,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Variant {
    pub residual_kind: ResidualKind,
    /// Include the KL term of the cyclic reconstruction.
    pub cyclic_kld: bool,
    pub topology: Topology,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            residual_kind: ResidualKind::Basic,
            cyclic_kld: true,
            topology: Topology::OneToOne,
        }
    }
}

/// Copy `PATCH` frames starting at `start` into the `1×1×128×128` patch layout:
/// mel bands along height, frames along width.
pub fn excerpt_patch(mel: &MelSpectrogram, start: usize) -> Vec<f32> {
    let mut out = vec![0.0; PATCH * PATCH];
    for t in 0..PATCH {
        for (m, &v) in mel.frame(start + t).iter().enumerate() {
            out[m * PATCH + t] = v;
        }
    }
    out
}

/// Which sub-network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    SharedResidual,
    Decoder(usize),
    Discriminator(usize),
}

impl ParamGroup {
    pub fn is_generator(self) -> bool {
        !matches!(self, ParamGroup::Discriminator(_))
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
}

#[derive(Debug, Clone)]
struct ResBlock {
    kind: ResidualKind,
    convs: Vec<ParamId>,
}

#[derive(Debug, Clone)]
struct Decoder {
    res: Vec<ResBlock>,
    up: [Conv; 3],
}

#[derive(Debug, Clone)]
struct Discriminator {
    convs: [Conv; 5],
}

struct Builder<'a> {
    params: ParamStore<f32>,
    groups: Vec<ParamGroup>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, group: ParamGroup, name: String, value: Tensor4<f32>) -> ParamId {
        self.groups.push(group);
        self.params.add(name, value)
    }

    fn conv(
        &mut self,
        group: ParamGroup,
        name: &str,
        shape: (usize, usize, usize),
        spec: ConvSpec,
        bias: bool,
    ) -> Conv {
        let (out_c, in_c, k) = shape;
        let w = init::conv_weight(out_c, in_c, k, self.rng);
        let weight = self.add(group, format!("{name}.weight"), w);
        let bias = bias.then(|| self.add(group, format!("{name}.bias"), init::bias(out_c)));
        Conv { weight, bias, spec }
    }

    fn conv_transpose(
        &mut self,
        group: ParamGroup,
        name: &str,
        shape: (usize, usize, usize),
        spec: ConvSpec,
        bias: bool,
    ) -> Conv {
        let (in_c, out_c, k) = shape;
        let w = init::conv_transpose_weight(in_c, out_c, k, spec.stride, self.rng);
        let weight = self.add(group, format!("{name}.weight"), w);
        let bias = bias.then(|| self.add(group, format!("{name}.bias"), init::bias(out_c)));
        Conv { weight, bias, spec }
    }

    fn res_block(&mut self, group: ParamGroup, name: &str, kind: ResidualKind) -> ResBlock {
        let c = LATENT_CHANNELS;
        let shapes: Vec<(usize, usize, usize)> = match kind {
            ResidualKind::Basic => vec![(c, c, 3), (c, c, 3)],
            ResidualKind::Bottleneck => vec![(c / 4, c, 1), (c / 4, c / 4, 3), (c, c / 4, 1)],
        };
        let convs = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (o, inp, k))| {
                let w = init::conv_weight(o, inp, k, self.rng);
                self.add(group, format!("{name}.conv{i}.weight"), w)
            })
            .collect();
        ResBlock { kind, convs }
    }
}

/// Per-component parameter counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub encoder: usize,
    pub shared_residual: usize,
    pub decoders: Vec<(String, usize)>,
    pub discriminators: Vec<(String, usize)>,
    pub total: usize,
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "encoder          {:>10}", self.encoder)?;
        writeln!(f, "shared residual  {:>10}", self.shared_residual)?;
        for (name, n) in &self.decoders {
            writeln!(f, "decoder {name:<8} {n:>10}")?;
        }
        for (name, n) in &self.discriminators {
            writeln!(f, "disc {name:<11} {n:>10}")?;
        }
        write!(f, "total            {:>10}", self.total)
    }
}

/// Complete set of networks for a group of timbre domains.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    domains: Vec<String>,
    variant: Variant,
    seed: u64,
    params: ParamStore<f32>,
    groups: Vec<ParamGroup>,
    down: [Conv; 3],
    encoder_res: Vec<ResBlock>,
    shared_res: ResBlock,
    decoders: Vec<Decoder>,
    discriminators: Vec<Discriminator>,
}

impl ModelBundle {
    /// Deterministically initialize all networks from `seed`.
    pub fn build(domains: &[String], variant: Variant, seed: u64) -> Result<Self> {
        if domains.len() < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {}", domains.len())));
        }
        let mut seen = HashSet::new();
        for d in domains {
            if d.is_empty() {
                return Err(Error::Config("empty domain name".into()));
            }
            if !seen.insert(d.as_str()) {
                return Err(Error::Config(format!("duplicate domain '{d}'")));
            }
        }
        if variant.topology == Topology::OneToOne && domains.len() != 2 {
            return Err(Error::Config(format!(
                "one_to_one topology needs exactly 2 domains, got {}",
                domains.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::new(),
            groups: Vec::new(),
            rng: &mut rng,
        };
        let kind = variant.residual_kind;
        let s2p0 = ConvSpec::new(2, 0);
        let s2p1 = ConvSpec::new(2, 1);
        let g = ParamGroup::Encoder;
        let down = [
            b.conv(g, "encoder.down0", (32, 1, 7), s2p0, false),
            b.conv(g, "encoder.down1", (64, 32, 4), s2p1, false),
            b.conv(g, "encoder.down2", (128, 64, 4), s2p1, false),
        ];
        let encoder_res = (0..3)
            .map(|i| b.res_block(g, &format!("encoder.res{i}"), kind))
            .collect();
        let shared_res = b.res_block(ParamGroup::SharedResidual, "shared.res", kind);
        let mut decoders = Vec::new();
        for (i, d) in domains.iter().enumerate() {
            let g = ParamGroup::Decoder(i);
            let res = (0..2)
                .map(|r| b.res_block(g, &format!("decoder.{d}.res{r}"), kind))
                .collect();
            let up = [
                b.conv_transpose(g, &format!("decoder.{d}.up0"), (128, 64, 4), s2p1, false),
                b.conv_transpose(g, &format!("decoder.{d}.up1"), (64, 32, 4), s2p1, false),
                b.conv_transpose(
                    g,
                    &format!("decoder.{d}.up2"),
                    (32, 1, 7),
                    ConvSpec::new(2, 3).with_output_pad(1),
                    true,
                ),
            ];
            decoders.push(Decoder { res, up });
        }
        let mut discriminators = Vec::new();
        for (i, d) in domains.iter().enumerate() {
            let g = ParamGroup::Discriminator(i);
            let n = |l: usize| format!("disc.{d}.conv{l}");
            let convs = [
                b.conv(g, &n(0), (64, 1, 4), s2p1, true),
                b.conv(g, &n(1), (128, 64, 4), s2p1, false),
                b.conv(g, &n(2), (256, 128, 4), s2p1, false),
                b.conv(g, &n(3), (512, 256, 4), s2p1, false),
                b.conv(g, &n(4), (1, 512, 3), s2p1, true),
            ];
            discriminators.push(Discriminator { convs });
        }
        let Builder { params, groups, .. } = b;
        Ok(Self {
            domains: domains.to_vec(),
            variant,
            seed,
            params,
            groups,
            down,
            encoder_res,
            shared_res,
            decoders,
            discriminators,
        })
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.index()]
    }

    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.params.ids().filter(|&id| self.group(id) == group).collect()
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn param_report(&self) -> ParamReport {
        let count = |g| self.params.count(self.group_ids(g));
        let decoders: Vec<_> = (0..self.domains.len())
            .map(|i| (self.domains[i].clone(), count(ParamGroup::Decoder(i))))
            .collect();
        let discriminators: Vec<_> = (0..self.domains.len())
            .map(|i| (self.domains[i].clone(), count(ParamGroup::Discriminator(i))))
            .collect();
        ParamReport {
            encoder: count(ParamGroup::Encoder),
            shared_residual: count(ParamGroup::SharedResidual),
            decoders,
            discriminators,
            total: self.params.count(self.params.ids()),
        }
    }

    /// Latent mean for a `B×1×128×128` batch, without gradient tracking.
    pub fn encode(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        let mut tape = Tape::new(self, false);
        let x = tape.input(x.clone());
        let mu = tape.encode(x)?;
        Ok(tape.graph.value(mu).clone())
    }

    pub fn decode(&self, z: &Tensor4<f32>, domain: &str) -> Result<Tensor4<f32>> {
        let d = self.domain_index(domain)?;
        let mut tape = Tape::new(self, false);
        let z = tape.input(z.clone());
        let out = tape.decode(z, d)?;
        Ok(tape.graph.value(out).clone())
    }

    pub fn discriminate(&self, x: &Tensor4<f32>, domain: &str) -> Result<Tensor4<f32>> {
        let d = self.domain_index(domain)?;
        let mut tape = Tape::new(self, false);
        let x = tape.input(x.clone());
        let out = tape.discriminate(x, d, false)?;
        Ok(tape.graph.value(out).clone())
    }

    /// Zero every weight inside residual branches, turning each block into the identity.
    pub fn zero_residual_branches(&mut self) {
        let blocks: Vec<ParamId> = self
            .encoder_res
            .iter()
            .chain(std::iter::once(&self.shared_res))
            .chain(self.decoders.iter().flat_map(|d| d.res.iter()))
            .flat_map(|b| b.convs.iter().copied())
            .collect();
        for id in blocks {
            self.params.value_mut(id).data_mut().fill(0.0);
        }
    }
}

/// `z = μ + η`, `η ~ N(0, 1)`; `z = μ` when `deterministic`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &Tensor4<f32>, rng: &mut R, deterministic: bool) -> Tensor4<f32> {
    if deterministic {
        return mu.clone();
    }
    let mut z = mu.clone();
    for v in z.data_mut() {
        *v += rng.sample::<f32, _>(StandardNormal);
    }
    z
}

/// Gaussian noise shaped like `shape`, for graph-side reparameterization.
pub fn latent_noise<R: Rng + ?Sized>(shape: Shape4, rng: &mut R) -> Tensor4<f32> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.sample(StandardNormal))
}

/// Forward recorder binding bundle parameters into a [`Graph`].
///
/// Generator parameters are bound once per tape and require gradients when
/// `train` is set. Discriminators keep two bindings: a frozen one for the
/// generator's adversarial term and a trainable one for their own update.
pub struct Tape<'m> {
    model: &'m ModelBundle,
    pub graph: Graph<f32>,
    train: bool,
    bound: Vec<Option<Var>>,
    bound_trainable_disc: Vec<Option<Var>>,
}

impl<'m> Tape<'m> {
    pub fn new(model: &'m ModelBundle, train: bool) -> Self {
        let n = model.params.len();
        Self {
            model,
            graph: Graph::new(),
            train,
            bound: vec![None; n],
            bound_trainable_disc: vec![None; n],
        }
    }

    pub fn model(&self) -> &'m ModelBundle {
        self.model
    }

    pub fn input(&mut self, value: Tensor4<f32>) -> Var {
        self.graph.leaf(value, false)
    }

    fn param(&mut self, id: ParamId, trainable_disc: bool) -> Var {
        let group = self.model.group(id);
        let (slot, grad) = if group.is_generator() {
            (&mut self.bound[id.index()], self.train)
        } else if trainable_disc {
            (&mut self.bound_trainable_disc[id.index()], self.train)
        } else {
            (&mut self.bound[id.index()], false)
        };
        if let Some(v) = *slot {
            return v;
        }
        let v = self.graph.leaf(self.model.params.value(id).clone(), grad);
        *slot = Some(v);
        v
    }

    /// Parameter leaves bound on this tape for generator (`false`) or trainable discriminator (`true`) use.
    pub fn bindings(&self, trainable_disc: bool) -> Vec<(ParamId, Var)> {
        let table = if trainable_disc {
            &self.bound_trainable_disc
        } else {
            &self.bound
        };
        self.model
            .params
            .ids()
            .filter_map(|id| table[id.index()].map(|v| (id, v)))
            .filter(|&(id, _)| trainable_disc || self.model.group(id).is_generator())
            .collect()
    }

    fn conv(&mut self, x: Var, c: Conv, transpose: bool, disc: bool) -> Result<Var> {
        let w = self.param(c.weight, disc);
        let b = c.bias.map(|b| self.param(b, disc));
        Ok(if transpose {
            self.graph.conv_transpose2d(x, w, b, c.spec)?
        } else {
            self.graph.conv2d(x, w, b, c.spec)?
        })
    }

    fn plain_conv(&mut self, x: Var, id: ParamId) -> Result<Var> {
        let w = self.param(id, false);
        Ok(self.graph.conv2d(x, w, None, ConvSpec::new(1, 0))?)
    }

    fn res_block(&mut self, x: Var, block: &ResBlock) -> Result<Var> {
        let branch = match block.kind {
            ResidualKind::Basic => {
                let h = self.graph.reflection_pad2d(x, 1)?;
                let h = self.plain_conv(h, block.convs[0])?;
                let h = self.graph.instance_norm(h, NORM_EPS);
                let h = self.graph.relu(h);
                let h = self.graph.reflection_pad2d(h, 1)?;
                let h = self.plain_conv(h, block.convs[1])?;
                self.graph.instance_norm(h, NORM_EPS)
            }
            ResidualKind::Bottleneck => {
                let h = self.plain_conv(x, block.convs[0])?;
                let h = self.graph.instance_norm(h, NORM_EPS);
                let h = self.graph.relu(h);
                let h = self.graph.reflection_pad2d(h, 1)?;
                let h = self.plain_conv(h, block.convs[1])?;
                let h = self.graph.instance_norm(h, NORM_EPS);
                let h = self.graph.relu(h);
                let h = self.plain_conv(h, block.convs[2])?;
                self.graph.instance_norm(h, NORM_EPS)
            }
        };
        Ok(self.graph.add(x, branch)?)
    }

    fn check_shape(&self, x: Var, op: &'static str, want: Shape4) -> Result<()> {
        let got = self.graph.value(x).shape();
        if got.c != want.c || got.h != want.h || got.w != want.w {
            return Err(Error::Shape {
                op,
                expected: format!("Bx{}x{}x{}", want.c, want.h, want.w),
                got: got.to_string(),
            });
        }
        Ok(())
    }

    /// `B×1×128×128` patches to `B×128×16×16` latent means.
    pub fn encode(&mut self, x: Var) -> Result<Var> {
        self.check_shape(x, "encode", patch_shape(1))?;
        let model = self.model;
        let mut h = self.graph.reflection_pad2d(x, 3)?;
        for c in model.down {
            h = self.conv(h, c, false, false)?;
            h = self.graph.leaky_relu(h, SLOPE);
            h = self.graph.instance_norm(h, NORM_EPS);
        }
        for block in &model.encoder_res {
            h = self.res_block(h, block)?;
        }
        Ok(h)
    }

    /// Latent codes to `B×1×128×128` patches in `[0, 1]` through the decoder of domain `d`.
    pub fn decode(&mut self, z: Var, d: usize) -> Result<Var> {
        self.check_shape(z, "decode", latent_shape(1))?;
        let model = self.model;
        let dec = &model.decoders[d];
        let mut h = self.res_block(z, &model.shared_res)?;
        for block in &dec.res {
            h = self.res_block(h, block)?;
        }
        for c in &dec.up[..2] {
            h = self.conv(h, *c, true, false)?;
            h = self.graph.leaky_relu(h, SLOPE);
            h = self.graph.instance_norm(h, NORM_EPS);
        }
        h = self.conv(h, dec.up[2], true, false)?;
        Ok(self.graph.unit_tanh(h))
    }

    /// Raw `B×1×4×4` patch scores from the discriminator of domain `d`.
    pub fn discriminate(&mut self, x: Var, d: usize, trainable: bool) -> Result<Var> {
        self.check_shape(x, "discriminate", patch_shape(1))?;
        let model = self.model;
        let convs = &model.discriminators[d].convs;
        let mut h = x;
        for (l, c) in convs.iter().enumerate() {
            h = self.conv(h, *c, false, trainable)?;
            if l < 4 {
                h = self.graph.leaky_relu(h, SLOPE);
            }
            if (1..4).contains(&l) {
                h = self.graph.instance_norm(h, NORM_EPS);
            }
        }
        Ok(h)
    }
}

/// Encode/decode surface needed by inference and evaluation.
pub trait Translator {
    fn domains(&self) -> Vec<String>;
    fn encode(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>>;
    fn decode(&self, z: &Tensor4<f32>, domain: &str) -> Result<Tensor4<f32>>;
}

impl Translator for ModelBundle {
    fn domains(&self) -> Vec<String> {
        self.domains.clone()
    }

    fn encode(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        ModelBundle::encode(self, x)
    }

    fn decode(&self, z: &Tensor4<f32>, domain: &str) -> Result<Tensor4<f32>> {
        ModelBundle::decode(self, z, domain)
    }
}

/// Stand-in whose encoder and decoders are the identity map.
#[derive(Debug, Clone)]
pub struct IdentityStub {
    domains: Vec<String>,
}

impl IdentityStub {
    pub fn new(domains: &[&str]) -> Self {
        Self {
            domains: domains.iter().map(|d| d.to_string()).collect(),
        }
    }
}

impl Translator for IdentityStub {
    fn domains(&self) -> Vec<String> {
        self.domains.clone()
    }

    fn encode(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        Ok(x.clone())
    }

    fn decode(&self, z: &Tensor4<f32>, domain: &str) -> Result<Tensor4<f32>> {
        if !self.domains.iter().any(|d| d == domain) {
            return Err(Error::UnknownDomain(domain.to_string()));
        }
        Ok(z.clone())
    }
}
