//! The prior, decoder and posterior families of the conditional model.

use super::{ClassPriors, ModelConfig};
use crate::error::{ensure, Result};
use crate::student_t::{log_norm_const, TDistParams};

/// p(z|y) = t_m(μ_y, I, ν).
pub fn conditional_latent_prior(
    config: &ModelConfig,
    priors: &ClassPriors,
    y: usize,
) -> Result<TDistParams> {
    let mu = priors.mean(y)?;
    TDistParams::isotropic(mu.to_vec(), 1.0, config.nu)
}

/// p_θ(x|z,y) = t_n(μ_θ(z), (1 + ‖z−μ_y‖²/ν)/(1 + m/ν)·σ²I, ν+m).
pub fn decoder_distribution(
    config: &ModelConfig,
    priors: &ClassPriors,
    y: usize,
    z: &[f64],
    mu_theta_z: &[f64],
) -> Result<TDistParams> {
    let mu_y = priors.mean(y)?;
    ensure!(
        z.len() == config.m,
        Dimension,
        "z has length {}, m = {}",
        z.len(),
        config.m
    );
    ensure!(
        mu_theta_z.len() == config.n,
        Dimension,
        "decoder mean has length {}, n = {}",
        mu_theta_z.len(),
        config.n
    );
    let nu = config.nu;
    let dist2: f64 = z.iter().zip(mu_y).map(|(a, b)| (a - b) * (a - b)).sum();
    let factor = (1.0 + dist2 / nu) / (1.0 + config.m as f64 / nu);
    TDistParams::isotropic(
        mu_theta_z.to_vec(),
        factor * config.sigma * config.sigma,
        nu + config.m as f64,
    )
}

/// q_φ(z|x) = t_m(μ_φ, Σ_φ/(1 + n/ν), ν+n).
pub fn approximate_posterior(
    config: &ModelConfig,
    mu_phi: &[f64],
    sigma_phi_diag: &[f64],
) -> Result<TDistParams> {
    ensure!(
        config.n >= 1,
        Contract,
        "data dimension n must be at least 1"
    );
    ensure!(
        mu_phi.len() == config.m && sigma_phi_diag.len() == config.m,
        Dimension,
        "posterior rows must have length m = {}",
        config.m
    );
    let shrink = 1.0 + config.n as f64 / config.nu;
    TDistParams::diagonal(
        mu_phi.to_vec(),
        sigma_phi_diag.iter().map(|s| s / shrink).collect(),
        config.nu + config.n as f64,
    )
}

/// log p_θ(x, z | y) of the joint prior, given μ_θ(z).
pub fn joint_log_density(
    config: &ModelConfig,
    priors: &ClassPriors,
    y: usize,
    x: &[f64],
    z: &[f64],
    mu_theta_z: &[f64],
) -> Result<f64> {
    let mu_y = priors.mean(y)?;
    ensure!(
        x.len() == config.n && z.len() == config.m && mu_theta_z.len() == config.n,
        Dimension,
        "joint density needs x, μ_θ(z) of length n and z of length m"
    );
    let (n, m, nu) = (config.n as f64, config.m as f64, config.nu);
    let s2 = config.sigma * config.sigma;
    let qz: f64 = z.iter().zip(mu_y).map(|(a, b)| (a - b) * (a - b)).sum();
    let qx: f64 = x
        .iter()
        .zip(mu_theta_z)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s2;
    Ok(log_norm_const(nu, config.n + config.m)?.value
        - 0.5 * n * s2.ln()
        - 0.5 * (nu + m + n) * ((qz + qx) / nu).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use crate::tensor::Tensor;

    fn setup() -> (ModelConfig, ClassPriors) {
        let cfg = ModelConfig::new(1, 1, 2, 5.0, 0.7, 1.0, Family::Ct3vae).unwrap();
        let priors = ClassPriors::new(Tensor::matrix(2, 1, vec![0.0, 1.5]).unwrap()).unwrap();
        (cfg, priors)
    }

    #[test]
    fn prior_is_unit_scale_t_around_class_mean() {
        let (cfg, priors) = setup();
        let p = conditional_latent_prior(&cfg, &priors, 1).unwrap();
        assert_eq!(p.mean(), &[1.5]);
        assert_eq!(p.dof(), 5.0);
        assert_eq!(p.log_det_scale(), 0.0);
        assert!(conditional_latent_prior(&cfg, &priors, 2).is_err());
    }

    #[test]
    fn decoder_scale_at_class_mean() {
        let (cfg, priors) = setup();
        let d = decoder_distribution(&cfg, &priors, 1, &[1.5], &[0.2]).unwrap();
        let expected: f64 = 0.49 / (1.0 + 1.0 / 5.0);
        assert!((d.log_det_scale() - expected.ln()).abs() < 1e-15);
        assert_eq!(d.dof(), 6.0);
    }

    #[test]
    fn chain_rule_matches_joint() {
        let (cfg, priors) = setup();
        for y in 0..2 {
            for i in -20..=20 {
                for j in -20..=20 {
                    let z = [0.25 * i as f64];
                    let x = [0.3 * j as f64];
                    let mu_theta = [0.5 * z[0].sin()];
                    let joint = joint_log_density(&cfg, &priors, y, &x, &z, &mu_theta).unwrap();
                    let prior = conditional_latent_prior(&cfg, &priors, y)
                        .unwrap()
                        .log_density(&z)
                        .unwrap();
                    let dec = decoder_distribution(&cfg, &priors, y, &z, &mu_theta)
                        .unwrap()
                        .log_density(&x)
                        .unwrap();
                    assert!((prior + dec - joint).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn posterior_scale_and_covariance() {
        let cfg = ModelConfig::new(4, 2, 1, 10.0, 1.0, 1.0, Family::T3vae).unwrap();
        let q = approximate_posterior(&cfg, &[0.1, 0.2], &[1.0, 2.0]).unwrap();
        assert_eq!(q.dof(), 14.0);
        let cov = q.moment_covariance().unwrap();
        let expected = 14.0 / 12.0 * 2.0 / 1.4;
        assert!((cov[(1, 1)] - expected).abs() < 1e-14);
    }

    #[test]
    fn posterior_gaussian_limit() {
        let cfg = ModelConfig::new(3, 2, 1, 1e9, 1.0, 1.0, Family::T3vae).unwrap();
        let q = approximate_posterior(&cfg, &[0.0, 0.5], &[1.0, 0.5]).unwrap();
        let x = [0.4, -0.3];
        let gauss =
            -(2.0 * std::f64::consts::PI).ln() - 0.5 * 0.5f64.ln() - 0.5 * (0.16 + 0.64 / 0.5);
        assert!((q.log_density(&x).unwrap() - gauss).abs() < 1e-4);
    }
}
