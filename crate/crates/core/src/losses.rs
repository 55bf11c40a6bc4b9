//! Adversarial (least-squares), VAE, cyclic and latent-alignment losses.
//!
//! Each loss records onto a [`Graph`] so it can be differentiated; values are
//! read back with [`Graph::value`].

use std::fmt;

use serde::{Deserialize, Serialize};
use timbre_nn::{Graph, Scalar, Var};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Adversarial terms.
    pub lambda0: f64,
    /// KL of the self path.
    pub lambda1: f64,
    /// L1 of the self reconstruction.
    pub lambda2: f64,
    /// KL of the cyclic path.
    pub lambda3: f64,
    /// L1 of the cyclic reconstruction.
    pub lambda4: f64,
    /// Latent alignment.
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            lambda1: 0.1,
            lambda2: 100.0,
            lambda3: 0.1,
            lambda4: 100.0,
            lambda5: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda0,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
        ];
        if let Some(i) = all.iter().position(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!(
                "lambda{i} must be finite and >= 0, got {}",
                all[i]
            )));
        }
        Ok(())
    }
}

fn c<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

fn same_shape<T: Scalar>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(Error::Shape {
            op,
            expected: sa.to_string(),
            got: sb.to_string(),
        });
    }
    Ok(())
}

/// `mean((real - 1)^2) + mean(fake^2)`, unweighted.
pub fn adversarial_loss_d<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    same_shape(g, "adversarial_loss_d", real, fake)?;
    let r = g.mse_to_const(real, T::one());
    let f = g.mse_to_const(fake, T::zero());
    Ok(g.sum_scalars(&[r, f])?)
}

/// `mean((fake - 1)^2)`, unweighted.
pub fn adversarial_loss_g<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Var {
    g.mse_to_const(fake, T::one())
}

/// KL between `N(mu, I)` and `N(0, I)`: half the squared norm per sample, averaged over the batch.
pub fn kl_loss<T: Scalar>(g: &mut Graph<T>, mu: Var) -> Var {
    g.half_squared_norm(mu)
}

/// Mean absolute difference.
pub fn recon_l1<T: Scalar>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    same_shape(g, "recon_l1", x, x_hat)?;
    Ok(g.mean_abs_diff(x, x_hat)?)
}

/// `λ1·KL(mu) + λ2·L1(x, x_hat)`.
pub fn vae_loss<T: Scalar>(g: &mut Graph<T>, mu: Var, x: Var, x_hat: Var, w: &LossWeights) -> Result<Var> {
    let kl = kl_loss(g, mu);
    let l1 = recon_l1(g, x, x_hat)?;
    let a = g.scale(kl, c(w.lambda1));
    let b = g.scale(l1, c(w.lambda2));
    Ok(g.sum_scalars(&[a, b])?)
}

/// `λ3·KL(mu_cc) + λ4·L1(x, x_cc)`, dropping the KL term when `include_kld` is off.
pub fn cyclic_loss<T: Scalar>(
    g: &mut Graph<T>,
    mu_cc: Var,
    x: Var,
    x_cc: Var,
    w: &LossWeights,
    include_kld: bool,
) -> Result<Var> {
    let l1 = recon_l1(g, x, x_cc)?;
    let b = g.scale(l1, c(w.lambda4));
    if !include_kld {
        return Ok(b);
    }
    let kl = kl_loss(g, mu_cc);
    let a = g.scale(kl, c(w.lambda3));
    Ok(g.sum_scalars(&[a, b])?)
}

/// Mean over unordered pairs of `mean|mu_i - mu_j|`, unweighted.
pub fn latent_pairs<T: Scalar>(g: &mut Graph<T>, mus: &[Var]) -> Result<Var> {
    if mus.len() < 2 {
        return Err(Error::Config(format!(
            "latent loss needs at least 2 means, got {}",
            mus.len()
        )));
    }
    let mut terms = Vec::new();
    for i in 0..mus.len() {
        for j in i + 1..mus.len() {
            terms.push(recon_l1(g, mus[i], mus[j])?);
        }
    }
    let n = terms.len();
    let sum = g.sum_scalars(&terms)?;
    Ok(g.scale(sum, c(1.0 / n as f64)))
}

/// `λ5` times [`latent_pairs`].
pub fn latent_loss<T: Scalar>(g: &mut Graph<T>, mus: &[Var], w: &LossWeights) -> Result<Var> {
    let l = latent_pairs(g, mus)?;
    Ok(g.scale(l, c(w.lambda5)))
}

/// Unweighted loss components of one pair-step, summed over both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_gan_g: f64,
    pub l_gan_d: f64,
    pub l_kl: f64,
    pub l_recon: f64,
    pub l_cc_kl: f64,
    pub l_cc_recon: f64,
    pub l_latent: f64,
}

/// Loss components and their weighted totals for one pair-step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_gan_g: f64,
    pub l_gan_d: f64,
    pub l_kl: f64,
    pub l_recon: f64,
    pub l_cc_kl: f64,
    pub l_cc_recon: f64,
    pub l_latent: f64,
    pub total_g: f64,
    pub total_d: f64,
}

pub const CSV_FIELDS: [&str; 9] = [
    "l_gan_g",
    "l_gan_d",
    "l_kl",
    "l_recon",
    "l_cc_kl",
    "l_cc_recon",
    "l_latent",
    "total_g",
    "total_d",
];

impl LossReport {
    pub fn parts(&self) -> LossParts {
        LossParts {
            l_gan_g: self.l_gan_g,
            l_gan_d: self.l_gan_d,
            l_kl: self.l_kl,
            l_recon: self.l_recon,
            l_cc_kl: self.l_cc_kl,
            l_cc_recon: self.l_cc_recon,
            l_latent: self.l_latent,
        }
    }

    pub fn values(&self) -> [f64; 9] {
        [
            self.l_gan_g,
            self.l_gan_d,
            self.l_kl,
            self.l_recon,
            self.l_cc_kl,
            self.l_cc_recon,
            self.l_latent,
            self.total_g,
            self.total_d,
        ]
    }

    /// Comma-separated scalar fields in [`CSV_FIELDS`] order.
    pub fn csv_fields(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in CSV_FIELDS.iter().zip(self.values()).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{name}={v}")?;
        }
        Ok(())
    }
}

/// Weighted totals from unweighted parts, rejecting any non-finite value.
pub fn total_objective(parts: LossParts, w: &LossWeights, include_kld: bool) -> Result<LossReport> {
    let cc_kl = if include_kld { w.lambda3 * parts.l_cc_kl } else { 0.0 };
    let total_g = w.lambda0 * parts.l_gan_g
        + w.lambda1 * parts.l_kl
        + w.lambda2 * parts.l_recon
        + cc_kl
        + w.lambda4 * parts.l_cc_recon
        + w.lambda5 * parts.l_latent;
    let report = LossReport {
        l_gan_g: parts.l_gan_g,
        l_gan_d: parts.l_gan_d,
        l_kl: parts.l_kl,
        l_recon: parts.l_recon,
        l_cc_kl: parts.l_cc_kl,
        l_cc_recon: parts.l_cc_recon,
        l_latent: parts.l_latent,
        total_g,
        total_d: w.lambda0 * parts.l_gan_d,
    };
    if let Some(i) = report.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            term: CSV_FIELDS[i],
            report: report.to_string(),
        });
    }
    Ok(report)
}
