//! Post-training latent samplers.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::gamma_div::{gamma_power_divergence_with, ClosedForm};
use crate::models::{approximate_posterior, ClassPriors, ModelConfig};
use crate::special::sample_standard_normal;
use crate::student_t::{log_norm_const, TDistParams};
use crate::tensor::Tensor;

/// Which τ² expression the sampler uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TauMode {
    #[default]
    Approx,
    Exact,
    Original,
}

impl TauMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TauMode::Approx => "approx",
            TauMode::Exact => "exact",
            TauMode::Original => "original",
        }
    }
}

impl fmt::Display for TauMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TauMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(TauMode::Approx),
            "exact" => Ok(TauMode::Exact),
            "original" => Ok(TauMode::Original),
            _ => Err(Error::Config(format!(
                "unknown tau mode '{s}' (approx|exact|original)"
            ))),
        }
    }
}

fn check_nu(config: &ModelConfig) -> Result<()> {
    ensure!(config.nu > 2.0, Domain, "τ² needs ν > 2, got {}", config.nu);
    Ok(())
}

/// ln(C_{ν,n} σ⁻ⁿ (ν−2)/(ν+n−2)).
fn log_base(config: &ModelConfig) -> Result<f64> {
    let (nu, n) = (config.nu, config.n as f64);
    Ok(log_norm_const(nu, config.n)?.value - n * config.sigma.ln()
        + ((nu - 2.0) / (nu + n - 2.0)).ln())
}

fn shrink(config: &ModelConfig) -> f64 {
    1.0 + config.n as f64 / config.nu
}

/// (1+n/ν)⁻¹ (C_{ν,n}σ⁻ⁿ(ν−2)/(ν+n−2))^{2/(ν+n−2)}.
pub fn tau_squared_original(config: &ModelConfig) -> Result<f64> {
    check_nu(config)?;
    let expo = 2.0 / (config.nu + config.n as f64 - 2.0);
    Ok((expo * log_base(config)?).exp() / shrink(config))
}

/// With `log_det_sigma_phi` the exact expression
/// (1+n/ν)⁻¹ (σⁿ C⁻¹ |Σ_φ|^{γ/2} (ν+n−2)/(ν−2))^{2γ/((1+γ)(2+γm))};
/// without it the γ≈0 form (1+n/ν)⁻¹ (C σ⁻ⁿ (ν−2)/(ν+n−2))^{−2γ/(2+γm)}.
pub fn tau_squared_corrected(config: &ModelConfig, log_det_sigma_phi: Option<f64>) -> Result<f64> {
    check_nu(config)?;
    let g = config.gamma();
    let m = config.m as f64;
    let lb = log_base(config)?;
    let log_tau2 = match log_det_sigma_phi {
        None => -2.0 * g / (2.0 + g * m) * lb,
        Some(ld) => {
            ensure!(ld.is_finite(), Domain, "log|Σ_φ| must be finite, got {ld}");
            2.0 * g / ((1.0 + g) * (2.0 + g * m)) * (0.5 * g * ld - lb)
        }
    };
    Ok(log_tau2.exp() / shrink(config))
}

pub fn tau_squared(
    config: &ModelConfig,
    mode: TauMode,
    log_det_sigma_phi: Option<f64>,
) -> Result<f64> {
    match mode {
        TauMode::Approx => tau_squared_corrected(config, None),
        TauMode::Exact => {
            let ld = log_det_sigma_phi
                .ok_or_else(|| Error::Config("exact τ² needs a representative log|Σ_φ|".into()))?;
            tau_squared_corrected(config, Some(ld))
        }
        TauMode::Original => tau_squared_original(config),
    }
}

/// argmin over τ of D_γ(q‖t_m(μ, τ²I, ν+n)) with q the approximate posterior
/// at μ_φ = μ and the given Σ_φ diagonal. Returns τ*².
pub fn tau_star_numeric(
    config: &ModelConfig,
    sigma_phi_diag: &[f64],
    form: ClosedForm,
) -> Result<f64> {
    check_nu(config)?;
    ensure!(
        sigma_phi_diag.iter().all(|s| s.is_finite() && *s > 0.0),
        Contract,
        "Σ_φ must be strictly positive"
    );
    let mean = vec![0.0; config.m];
    let q = approximate_posterior(config, &mean, sigma_phi_diag)?;
    let dof = q.dof();
    let objective = |tau: f64| -> Result<f64> {
        let p = TDistParams::isotropic(mean.clone(), tau * tau, dof)?;
        gamma_power_divergence_with(&q, &p, form)
    };

    let (mut lo, mut hi) = (1e-3f64, 10.0f64);
    for attempt in 0..2 {
        // Coarse log grid to locate the basin before refining.
        let grid = 400;
        let taus: Vec<f64> = (0..=grid)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / grid as f64).exp())
            .collect();
        let vals = taus
            .iter()
            .map(|&t| objective(t))
            .collect::<Result<Vec<_>>>()?;
        let best = (0..vals.len())
            .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
            .expect("non-empty grid");
        let local_minima = (1..grid)
            .filter(|&i| vals[i] < vals[i - 1] && vals[i] <= vals[i + 1])
            .count();
        if best == 0 || best == grid || local_minima > 1 {
            if attempt == 0 {
                lo /= 100.0;
                hi *= 100.0;
                continue;
            }
            return Err(Error::Resolution(format!(
                "no interior unimodal minimum of D_γ for τ in ({lo}, {hi})"
            )));
        }
        let tau = golden_section(&objective, taus[best - 1], taus[best + 1], 1e-12)?;
        return Ok(tau * tau);
    }
    unreachable!("loop returns on every path of the final attempt")
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol * (a.abs() + b.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Σ_y α_y t_m(μ_y, τ²I, ν+n).
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    weights: Vec<f64>,
    components: Vec<TDistParams>,
}

impl MixtureSampler {
    pub fn new(weights: Vec<f64>, components: Vec<TDistParams>) -> Result<Self> {
        ensure!(
            !components.is_empty(),
            Contract,
            "mixture needs at least one component"
        );
        ensure!(
            weights.len() == components.len(),
            Dimension,
            "{} weights for {} components",
            weights.len(),
            components.len()
        );
        ensure!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            Contract,
            "mixture weights must be nonnegative"
        );
        let total: f64 = weights.iter().sum();
        ensure!(
            (total - 1.0).abs() <= 1e-12,
            Contract,
            "mixture weights sum to {total}, not 1"
        );
        let (m, dof) = (components[0].dim(), components[0].dof());
        ensure!(
            components.iter().all(|c| c.dim() == m && c.dof() == dof),
            Contract,
            "components must share dimension and dof"
        );
        Ok(Self {
            weights,
            components,
        })
    }

    /// Components t_m(μ_y, τ²I, ν+n); uniform weights unless given.
    pub fn from_priors(
        config: &ModelConfig,
        priors: &ClassPriors,
        tau2: f64,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        ensure!(
            tau2.is_finite() && tau2 > 0.0,
            Domain,
            "τ² must be positive, got {tau2}"
        );
        let k = priors.k();
        let components = (0..k)
            .map(|y| {
                TDistParams::isotropic(priors.mean(y)?.to_vec(), tau2, config.nu + config.n as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        Self::new(weights, components)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[TDistParams] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Component index from α, then a t draw from that component.
    pub fn sample(&self, count: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.dim();
        let picker = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        let mut data = vec![0.0; count * m];
        let mut labels = Vec::with_capacity(count);
        for row in data.chunks_mut(m.max(1)).take(count) {
            let y = picker.sample(&mut rng);
            self.components[y].sample_one(&mut rng, row);
            labels.push(y);
        }
        (
            Tensor::matrix(count, m, data).expect("shape matches"),
            labels,
        )
    }
}

/// z ~ N_m(μ_y, I).
pub fn gaussian_class_sample(
    priors: &ClassPriors,
    label: usize,
    count: usize,
    seed: u64,
) -> Result<Tensor> {
    let mu = priors.mean(label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mu.len();
    let mut data = Vec::with_capacity(count * m);
    for _ in 0..count {
        data.extend(mu.iter().map(|&c| c + sample_standard_normal(&mut rng)));
    }
    Tensor::matrix(count, m, data)
}
