use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Vae,
    Cvae,
    T3vae,
    Ct3vae,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Vae, Family::Cvae, Family::T3vae, Family::Ct3vae];

    pub fn is_conditional(self) -> bool {
        matches!(self, Family::Cvae | Family::Ct3vae)
    }

    pub fn is_student_t(self) -> bool {
        matches!(self, Family::T3vae | Family::Ct3vae)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Vae => "vae",
            Family::Cvae => "cvae",
            Family::T3vae => "t3vae",
            Family::Ct3vae => "ct3vae",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vae" | "beta-vae" => Ok(Family::Vae),
            "cvae" => Ok(Family::Cvae),
            "t3vae" => Ok(Family::T3vae),
            "ct3vae" | "c-t3vae" => Ok(Family::Ct3vae),
            other => Err(Error::Config(format!(
                "unknown family `{other}` (expected vae, cvae, t3vae or ct3vae)"
            ))),
        }
    }
}

/// Dimensions and objective hyperparameters shared by every model family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Data dimension.
    pub n: usize,
    /// Latent dimension.
    pub m: usize,
    /// Number of classes.
    pub k: usize,
    pub nu: f64,
    /// Decoder output scale, Σ_x = σ²I.
    pub sigma: f64,
    pub beta: f64,
    pub family: Family,
}

impl ModelConfig {
    pub fn new(
        n: usize,
        m: usize,
        k: usize,
        nu: f64,
        sigma: f64,
        beta: f64,
        family: Family,
    ) -> Result<Self> {
        let c = Self {
            n,
            m,
            k,
            nu,
            sigma,
            beta,
            family,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1, Contract, "data dimension n must be at least 1");
        ensure!(
            self.m >= 1,
            Contract,
            "latent dimension m must be at least 1"
        );
        ensure!(self.k >= 1, Contract, "class count K must be at least 1");
        ensure!(
            self.nu > 2.0 && self.nu.is_finite(),
            Domain,
            "ν must exceed 2, got {}",
            self.nu
        );
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            Domain,
            "σ must be positive, got {}",
            self.sigma
        );
        ensure!(
            self.beta > 0.0 && self.beta.is_finite(),
            Domain,
            "β must be positive, got {}",
            self.beta
        );
        Ok(())
    }

    /// γ = −2/(ν+n+m) of the joint model.
    pub fn gamma(&self) -> f64 {
        -2.0 / (self.nu + (self.n + self.m) as f64)
    }

    /// Classes the loss actually conditions on.
    pub fn effective_classes(&self) -> usize {
        if self.family.is_conditional() {
            self.k
        } else {
            1
        }
    }
}
