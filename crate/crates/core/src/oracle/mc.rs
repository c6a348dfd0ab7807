//! Monte Carlo estimates of the γ-power integrals between Student-t laws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::gamma_div::gamma_of;
use crate::student_t::TDistParams;

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// |value − reference| / std_error.
    pub fn z_score(&self, reference: f64) -> f64 {
        let gap = (self.value - reference).abs();
        if self.std_error > 0.0 {
            gap / self.std_error
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Mean of exp(log_target(x) − log r(x)) for x ~ r.
pub(crate) fn importance_mean(
    proposal: &TDistParams,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
    log_target: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<Estimate> {
    let d = proposal.dim();
    let mut x = vec![0.0; d];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        proposal.sample_one(rng, &mut x);
        let w = (log_target(&x)? - proposal.log_density(&x)?).exp();
        if !w.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite integrand {w} at sample {x:?}"
            )));
        }
        sum += w;
        sum_sq += w * w;
    }
    Ok(mean_and_error(sum, sum_sq, n_samples))
}

pub(crate) fn mean_and_error(sum: f64, sum_sq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Estimate {
        value: mean,
        std_error: (var / nf).sqrt(),
    }
}

/// ∫q^{1+γ}, ∫q·p^γ and ∫p^{1+γ}, each from an independent stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIntegrals {
    pub q_power: Estimate,
    pub cross: Estimate,
    pub p_power: Estimate,
    pub gamma: f64,
}

/// Proposal with the integrand's own tail: location and scale of `base`,
/// dof ν−2, so the importance weights stay bounded.
fn proposal(base: &TDistParams) -> Result<TDistParams> {
    base.with_dof(base.dof() - 2.0)
}

pub fn mc_power_integrals(
    q: &TDistParams,
    p: &TDistParams,
    n_samples: usize,
    seed: u64,
) -> Result<PowerIntegrals> {
    ensure!(
        q.dim() == p.dim(),
        Contract,
        "dimensions differ: {} vs {}",
        q.dim(),
        p.dim()
    );
    ensure!(
        q.dof() == p.dof(),
        Contract,
        "dof differ: {} vs {}",
        q.dof(),
        p.dof()
    );
    ensure!(
        q.dof() > 2.0,
        Domain,
        "γ-power integrals need dof > 2, got {}",
        q.dof()
    );
    ensure!(
        n_samples >= MIN_SAMPLES,
        Contract,
        "need at least {MIN_SAMPLES} samples, got {n_samples}"
    );
    let g = gamma_of(q.dof(), q.dim()).gamma;
    let mut rng_q = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_c = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut rng_p = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03);

    let q_power = importance_mean(&proposal(q)?, n_samples, &mut rng_q, &|x| {
        Ok((1.0 + g) * q.log_density(x)?)
    })?;
    let cross = importance_mean(&proposal(q)?, n_samples, &mut rng_c, &|x| {
        Ok(q.log_density(x)? + g * p.log_density(x)?)
    })?;
    let p_power = importance_mean(&proposal(p)?, n_samples, &mut rng_p, &|x| {
        Ok((1.0 + g) * p.log_density(x)?)
    })?;
    Ok(PowerIntegrals {
        q_power,
        cross,
        p_power,
        gamma: g,
    })
}

impl PowerIntegrals {
    /// H_γ(q) = −a^{1/(1+γ)}.
    pub fn entropy(&self) -> Estimate {
        let (g, a) = (self.gamma, self.q_power);
        let e = 1.0 / (1.0 + g);
        Estimate {
            value: -a.value.powf(e),
            std_error: (e * a.value.powf(e - 1.0) * a.std_error).abs(),
        }
    }

    /// C_γ(q,p) = −b·c^{−γ/(1+γ)}.
    pub fn cross_entropy(&self) -> Estimate {
        let (g, b, c) = (self.gamma, self.cross, self.p_power);
        let e = -g / (1.0 + g);
        let db = -c.value.powf(e);
        let dc = -b.value * e * c.value.powf(e - 1.0);
        Estimate {
            value: -b.value * c.value.powf(e),
            std_error: (db * db * b.std_error * b.std_error + dc * dc * c.std_error * c.std_error)
                .sqrt(),
        }
    }

    /// D_γ(q‖p) = γ⁻¹(C_γ(q,p) − H_γ(q)); delta-method error over the three
    /// independent estimates.
    pub fn divergence(&self) -> Estimate {
        let g = self.gamma;
        let (h, c) = (self.entropy(), self.cross_entropy());
        Estimate {
            value: (c.value - h.value) / g,
            std_error: (c.std_error * c.std_error + h.std_error * h.std_error).sqrt() / g.abs(),
        }
    }
}

/// (estimate, standard error) of D_γ(q‖p).
pub fn mc_gamma_divergence(
    q: &TDistParams,
    p: &TDistParams,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = mc_power_integrals(q, p, n_samples, seed)?.divergence();
    Ok((d.value, d.std_error))
}
