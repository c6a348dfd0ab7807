//! Model families, their prior/posterior distributions, objectives and the
//! MLP encoder/decoder networks.

mod config;
pub mod constants;
pub mod distributions;
pub mod losses;
mod network;

pub use config::{Family, ModelConfig};
pub use constants::constants_c1_c2;
pub use distributions::{
    approximate_posterior, conditional_latent_prior, decoder_distribution, joint_log_density,
};
pub use losses::{
    ct3vae_class_loss, ct3vae_loss, cvae_loss, elbo_loss, loss_graph, t3vae_loss, LossBreakdown,
    LossTerms,
};
pub use network::{Architecture, Batch, Model, Noise, ParamGroup};

use rand::Rng;

use crate::error::{ensure, Result};
use crate::special::sample_standard_normal;
use crate::tensor::{Parameters, Tensor};

/// Learnable class centres μ_y (K × m); Σ_y is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPriors {
    pub mu_y: Tensor,
}

impl ClassPriors {
    pub fn new(mu_y: Tensor) -> Result<Self> {
        ensure!(
            mu_y.shape().len() == 2,
            Dimension,
            "class means must be a K x m matrix"
        );
        ensure!(mu_y.is_finite(), Domain, "class means must be finite");
        Ok(Self {
            mu_y: mu_y.with_grad(),
        })
    }

    /// Entries drawn i.i.d. from N(0, 1) and scaled by 0.1.
    pub fn init<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Self {
        let data = (0..k * m)
            .map(|_| 0.1 * sample_standard_normal(rng))
            .collect();
        Self {
            mu_y: Tensor::matrix(k, m, data)
                .expect("shape matches")
                .with_grad(),
        }
    }

    pub fn k(&self) -> usize {
        self.mu_y.rows()
    }

    pub fn m(&self) -> usize {
        self.mu_y.cols()
    }

    pub fn mean(&self, y: usize) -> Result<&[f64]> {
        ensure!(y < self.k(), Contract, "label {y} outside 0..{}", self.k());
        Ok(self.mu_y.row(y))
    }
}

impl Parameters for ClassPriors {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.mu_y);
    }
}

/// Per-sample posterior mean and diagonal of Σ_φ.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mu_phi: Tensor,
    pub sigma_phi_diag: Tensor,
}

impl EncoderOutput {
    pub fn new(mu_phi: Tensor, sigma_phi_diag: Tensor) -> Result<Self> {
        ensure!(
            mu_phi.shape() == sigma_phi_diag.shape() && mu_phi.shape().len() == 2,
            Dimension,
            "posterior mean {:?} and scale {:?} must be equal-shaped matrices",
            mu_phi.shape(),
            sigma_phi_diag.shape()
        );
        ensure!(
            sigma_phi_diag
                .data()
                .iter()
                .all(|v| *v > 0.0 && v.is_finite()),
            Contract,
            "posterior variances must be positive and finite"
        );
        Ok(Self {
            mu_phi,
            sigma_phi_diag,
        })
    }

    pub fn log_variance(&self) -> Tensor {
        let data = self.sigma_phi_diag.data().iter().map(|v| v.ln()).collect();
        Tensor::matrix(self.sigma_phi_diag.rows(), self.sigma_phi_diag.cols(), data)
            .expect("shape matches")
    }
}
