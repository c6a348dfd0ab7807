//! Objectives of the four model families, built on the autodiff tape so the
//! same code yields values and gradients.
//!
//! Per-sample terms are combined with equal class weights: each class present
//! in the batch contributes the mean over its samples, and the class means
//! are summed. Without conditioning this is the plain batch mean.

use super::constants::log_constants;
use super::{ClassPriors, EncoderOutput, Family, ModelConfig};
use crate::error::{ensure, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub latent_mean_term: f64,
    pub trace_term: f64,
    pub logdet_term: f64,
    pub total: f64,
}

/// Scalar loss nodes on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub reconstruction: Var<'t>,
    pub latent_mean: Var<'t>,
    pub trace: Var<'t>,
    pub logdet: Var<'t>,
    pub total: Var<'t>,
}

impl LossTerms<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            reconstruction: self.reconstruction.item(),
            latent_mean_term: self.latent_mean.item(),
            trace_term: self.trace.item(),
            logdet_term: self.logdet.item(),
            total: self.total.item(),
        }
    }
}

/// Per-sample weights 1/|class| (or 1/B without conditioning).
pub fn class_weights(
    config: &ModelConfig,
    labels: Option<&[usize]>,
    batch: usize,
) -> Result<Vec<f64>> {
    if !config.family.is_conditional() {
        return Ok(vec![1.0 / batch as f64; batch]);
    }
    let labels =
        labels.ok_or_else(|| Error::Contract(format!("family {} needs labels", config.family)))?;
    ensure!(
        labels.len() == batch,
        Dimension,
        "{} labels for a batch of {batch}",
        labels.len()
    );
    let mut counts = vec![0usize; config.k];
    for &y in labels {
        ensure!(y < config.k, Contract, "label {y} outside 0..{}", config.k);
        counts[y] += 1;
    }
    Ok(labels.iter().map(|&y| 1.0 / counts[y] as f64).collect())
}

/// Builds the loss of `config.family` from encoder outputs (mean and
/// log-variance, `B × m`), decoder means `recon` and data `x` (`B × n`).
/// `prior_means` is the `K × m` table of class means for conditional
/// families and is ignored otherwise.
pub fn loss_graph<'t>(
    config: &ModelConfig,
    mu: Var<'t>,
    logvar: Var<'t>,
    recon: Var<'t>,
    x: Var<'t>,
    prior_means: Option<Var<'t>>,
    labels: Option<&[usize]>,
) -> Result<LossTerms<'t>> {
    let tape = mu.tape();
    let (b, m, n) = (mu.rows(), config.m, config.n);
    ensure!(b >= 1, Dimension, "empty batch");
    ensure!(
        mu.shape() == vec![b, m] && logvar.shape() == vec![b, m],
        Dimension,
        "encoder outputs must be {b}x{m}, got {:?} and {:?}",
        mu.shape(),
        logvar.shape()
    );
    ensure!(
        recon.shape() == vec![b, n] && x.shape() == vec![b, n],
        Dimension,
        "reconstruction and data must be {b}x{n}, got {:?} and {:?}",
        recon.shape(),
        x.shape()
    );
    let weights = tape.constant(&Tensor::matrix(b, 1, class_weights(config, labels, b)?)?);
    let reduce = |per_sample: Var<'t>| -> Result<Var<'t>> { Ok(per_sample.mul(weights)?.sum()) };

    let s2 = config.sigma * config.sigma;
    let reconstruction = reduce(x.sub(recon)?.square().sum_rows().scale(1.0 / s2))?;

    let diff = if config.family.is_conditional() {
        let table = prior_means
            .ok_or_else(|| Error::Contract("conditional family needs class means".into()))?;
        ensure!(
            table.shape() == vec![config.k, m],
            Dimension,
            "class means must be {}x{m}, got {:?}",
            config.k,
            table.shape()
        );
        mu.sub(table.gather_rows(labels.expect("checked by class_weights"))?)?
    } else {
        mu
    };
    let dist2 = diff.square().sum_rows();
    let var_sum = logvar.exp().sum_rows();
    let logvar_sum = logvar.sum_rows();

    let (latent, trace, logdet) = match config.family {
        Family::Vae | Family::Cvae => (
            dist2.scale(0.5),
            var_sum.add_scalar(-(m as f64)).scale(0.5),
            logvar_sum.scale(-0.5),
        ),
        Family::T3vae | Family::Ct3vae => {
            let nu = config.nu;
            let g = config.gamma();
            let (log_c1, log_c2) = log_constants(config)?;
            let coef = nu * (log_c1 - log_c2).exp();
            (
                dist2,
                var_sum.scale(nu / (nu + n as f64 - 2.0)),
                logvar_sum.scale(-g / (2.0 * (1.0 + g))).exp().scale(-coef),
            )
        }
    };
    let latent_mean = reduce(latent)?;
    let trace = reduce(trace)?;
    let logdet = reduce(logdet)?;
    let regular = latent_mean.add(trace)?.add(logdet)?;
    let total = reconstruction.add(regular.scale(config.beta))?;
    Ok(LossTerms {
        reconstruction,
        latent_mean,
        trace,
        logdet,
        total,
    })
}

fn evaluate(
    config: &ModelConfig,
    enc: &EncoderOutput,
    priors: Option<&ClassPriors>,
    labels: Option<&[usize]>,
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let mu = tape.constant(&enc.mu_phi);
    let logvar = tape.constant(&enc.log_variance());
    let table = priors.map(|p| tape.constant(&p.mu_y));
    let terms = loss_graph(
        config,
        mu,
        logvar,
        tape.constant(recon),
        tape.constant(x),
        table,
        labels,
    )?;
    Ok(terms.breakdown())
}

fn require(config: &ModelConfig, family: Family) -> Result<()> {
    ensure!(
        config.family == family,
        Contract,
        "config is for {}, this objective is {}",
        config.family,
        family
    );
    Ok(())
}

/// Negative β-ELBO against N(0, I) with an analytic KL.
pub fn elbo_loss(
    config: &ModelConfig,
    enc: &EncoderOutput,
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    require(config, Family::Vae)?;
    evaluate(config, enc, None, None, recon, x)
}

/// Class-weighted negative β-ELBO against N(μ_y, I).
pub fn cvae_loss(
    config: &ModelConfig,
    enc: &EncoderOutput,
    priors: &ClassPriors,
    labels: &[usize],
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    require(config, Family::Cvae)?;
    evaluate(config, enc, Some(priors), Some(labels), recon, x)
}

pub fn t3vae_loss(
    config: &ModelConfig,
    enc: &EncoderOutput,
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    require(config, Family::T3vae)?;
    evaluate(config, enc, None, None, recon, x)
}

/// L(γ, y) on a batch drawn from class `y`.
pub fn ct3vae_class_loss(
    config: &ModelConfig,
    enc: &EncoderOutput,
    priors: &ClassPriors,
    y: usize,
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    require(config, Family::Ct3vae)?;
    let labels = vec![y; enc.mu_phi.rows()];
    evaluate(config, enc, Some(priors), Some(&labels), recon, x)
}

/// Σ_y L(γ, y) on a mixed batch.
pub fn ct3vae_loss(
    config: &ModelConfig,
    enc: &EncoderOutput,
    priors: &ClassPriors,
    labels: &[usize],
    recon: &Tensor,
    x: &Tensor,
) -> Result<LossBreakdown> {
    require(config, Family::Ct3vae)?;
    evaluate(config, enc, Some(priors), Some(labels), recon, x)
}
