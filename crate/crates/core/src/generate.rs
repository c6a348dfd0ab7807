//! Decoding latent draws of a trained model into data space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::models::{decoder_distribution, Model};
use crate::sampling::{tau_squared, MixtureSampler, TauMode};
use crate::special::sample_standard_normal;
use crate::tensor::Tensor;

/// What is emitted per latent draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecoderOutput {
    /// x̂ ~ p_θ(x|z, y): N(μ_θ(z), σ²I) or the Student-t decoder.
    #[default]
    Sample,
    /// μ_θ(z) only.
    Mean,
}

impl std::str::FromStr for DecoderOutput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(DecoderOutput::Sample),
            "mean" => Ok(DecoderOutput::Mean),
            _ => Err(Error::Config(format!(
                "unknown decoder output '{s}' (sample|mean)"
            ))),
        }
    }
}

impl std::fmt::Display for DecoderOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderOutput::Sample => "sample",
            DecoderOutput::Mean => "mean",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub count: usize,
    pub seed: u64,
    pub tau_mode: TauMode,
    /// Overrides the τ from `tau_mode`; also scales the Gaussian families' priors.
    pub tau: Option<f64>,
    /// Class weights, normalized to sum 1; conditional families only.
    pub alpha: Option<Vec<f64>>,
    pub decoder: DecoderOutput,
}

impl GenerateOptions {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            tau_mode: TauMode::default(),
            tau: None,
            alpha: None,
            decoder: DecoderOutput::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub latents: Tensor,
    pub samples: Tensor,
    /// Present for conditional families.
    pub labels: Option<Vec<usize>>,
    /// Latent scale used; 1 for Gaussian families without an override.
    pub tau2: f64,
}

fn normalized_alpha(alpha: &[f64], k: usize) -> Result<Vec<f64>> {
    ensure!(
        alpha.len() == k,
        Config,
        "alpha has {} entries, model has K = {k}",
        alpha.len()
    );
    ensure!(
        alpha.iter().all(|a| a.is_finite() && *a >= 0.0),
        Config,
        "alpha entries must be nonnegative"
    );
    let total: f64 = alpha.iter().sum();
    ensure!(total > 0.0, Config, "alpha must have positive mass");
    Ok(alpha.iter().map(|a| a / total).collect())
}

/// Latent draws per family, then x = μ_θ(z):
/// VAE N(0, τ²I); CVAE y ~ α, N(μ_y, τ²I); t³VAE t_m(0, τ²I, ν+n);
/// C-t³VAE the α-weighted mixture of t_m(μ_y, τ²I, ν+n).
pub fn generate(
    model: &Model,
    mean_log_det: Option<f64>,
    opts: &GenerateOptions,
) -> Result<Generated> {
    let c = &model.config;
    let conditional = c.family.is_conditional();
    if opts.alpha.is_some() {
        ensure!(
            conditional,
            Config,
            "alpha weights need a conditional family, not {}",
            c.family
        );
    }
    if let Some(t) = opts.tau {
        ensure!(
            t.is_finite() && t > 0.0,
            Config,
            "τ must be positive, got {t}"
        );
    }
    let k = model.priors.k();
    let alpha = opts
        .alpha
        .as_deref()
        .map(|a| normalized_alpha(a, k))
        .transpose()?;
    let m = c.m;

    let (tau2, latents, labels) = if c.family.is_student_t() {
        let tau2 = match opts.tau {
            Some(t) => t * t,
            None => tau_squared(c, opts.tau_mode, mean_log_det)?,
        };
        let sampler = MixtureSampler::from_priors(c, &model.priors, tau2, alpha)?;
        let (z, y) = sampler.sample(opts.count, opts.seed);
        (tau2, z, y)
    } else {
        let tau2 = opts.tau.map_or(1.0, |t| t * t);
        let scale = tau2.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let weights = alpha.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        let picker = WeightedIndex::new(&weights)
            .map_err(|e| crate::Error::Config(format!("alpha: {e}")))?;
        let mut data = Vec::with_capacity(opts.count * m);
        let mut labels = Vec::with_capacity(opts.count);
        for _ in 0..opts.count {
            let y = if conditional {
                picker.sample(&mut rng)
            } else {
                0
            };
            let mu = model.priors.mean(y)?;
            data.extend(
                mu.iter()
                    .map(|&c| c + scale * sample_standard_normal(&mut rng)),
            );
            labels.push(y);
        }
        (tau2, Tensor::matrix(opts.count, m, data)?, labels)
    };
    let mut samples = if opts.count == 0 {
        Tensor::zeros(&[0, c.n])
    } else {
        model.decode(&latents, &labels)?
    };
    if opts.decoder == DecoderOutput::Sample && opts.count > 0 {
        add_decoder_noise(model, &latents, &labels, &mut samples, opts.seed)?;
    }
    Ok(Generated {
        latents,
        samples,
        labels: conditional.then_some(labels),
        tau2,
    })
}

/// Replaces each decoder mean by a draw from p_θ(x|z, y); uses its own
/// stream so the latents do not depend on the output mode.
#[allow(clippy::needless_range_loop)]
fn add_decoder_noise(
    model: &Model,
    z: &Tensor,
    labels: &[usize],
    x: &mut Tensor,
    seed: u64,
) -> Result<()> {
    let c = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let n = c.n;
    let mut row = vec![0.0; n];
    for i in 0..x.rows() {
        let mean = x.row(i).to_vec();
        if c.family.is_student_t() {
            decoder_distribution(c, &model.priors, labels[i], z.row(i), &mean)?
                .sample_one(&mut rng, &mut row);
        } else {
            for (r, m) in row.iter_mut().zip(&mean) {
                *r = m + c.sigma * sample_standard_normal(&mut rng);
            }
        }
        x.data_mut()[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, Family, ModelConfig};
    use crate::Error;

    fn model(family: Family) -> Model {
        let c = ModelConfig::new(5, 2, 3, 10.0, 1.0, 1.0, family).unwrap();
        Model::new(
            c,
            &Architecture { hidden: vec![8] },
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn shapes_and_labels_per_family() {
        for f in Family::ALL {
            let g = generate(&model(f), None, &GenerateOptions::new(50, 3)).unwrap();
            assert_eq!(g.samples.shape(), &[50, 5]);
            assert_eq!(g.latents.shape(), &[50, 2]);
            assert_eq!(g.labels.is_some(), f.is_conditional());
            let mut o = GenerateOptions::new(50, 3);
            o.decoder = DecoderOutput::Mean;
            let means = generate(&model(f), None, &o).unwrap();
            assert!(means.samples.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(means.latents, g.latents);
            assert_ne!(means.samples, g.samples);
        }
    }

    #[test]
    fn empty_and_deterministic() {
        let m = model(Family::Ct3vae);
        let g = generate(&m, None, &GenerateOptions::new(0, 3)).unwrap();
        assert_eq!(g.samples.shape(), &[0, 5]);
        assert_eq!(g.labels, Some(vec![]));
        let a = generate(&m, None, &GenerateOptions::new(20, 9)).unwrap();
        let b = generate(&m, None, &GenerateOptions::new(20, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_rules() {
        let mut o = GenerateOptions::new(200, 1);
        o.alpha = Some(vec![0.0, 0.0, 2.0]);
        let g = generate(&model(Family::Cvae), None, &o).unwrap();
        assert!(g.labels.unwrap().iter().all(|&y| y == 2));
        assert!(matches!(
            generate(&model(Family::T3vae), None, &o),
            Err(Error::Config(_))
        ));
        o.alpha = Some(vec![1.0, 1.0]);
        assert!(matches!(
            generate(&model(Family::Ct3vae), None, &o),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tau_override_and_exact_needs_log_det() {
        let m = model(Family::T3vae);
        let mut o = GenerateOptions::new(5, 1);
        o.tau = Some(0.5);
        assert_eq!(generate(&m, None, &o).unwrap().tau2, 0.25);
        o.tau = None;
        o.tau_mode = TauMode::Exact;
        assert!(generate(&m, None, &o).is_err());
        assert!(generate(&m, Some(-1.0), &o).is_ok());
    }
}
