//! Multivariate Student's t distribution t_d(μ, Σ, ν) with Σ the scale
//! matrix, so the covariance is ν/(ν−2)·Σ.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::special::{ln_gamma_ratio, sample_chi_squared, sample_standard_normal};
use crate::tensor::Tensor;

/// log C_{ν,d}, the log normalizing constant of a d-dimensional t with
/// identity scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormConst {
    pub value: f64,
}

impl LogNormConst {
    pub fn exp(self) -> f64 {
        self.value.exp()
    }
}

/// `ln Γ((ν+d)/2) − ln Γ(ν/2) − (d/2)·ln(νπ)`.
pub fn log_norm_const(nu: f64, d: usize) -> Result<LogNormConst> {
    ensure!(
        nu > 0.0 && nu.is_finite(),
        Domain,
        "degrees of freedom must be positive and finite, got {nu}"
    );
    ensure!(d >= 1, Domain, "dimension must be at least 1");
    let half_d = 0.5 * d as f64;
    Ok(LogNormConst {
        value: ln_gamma_ratio(0.5 * nu, half_d) - half_d * (nu * PI).ln(),
    })
}

#[derive(Clone, Debug)]
pub enum Scale {
    /// Diagonal entries of Σ.
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct TDistParams {
    mean: Vec<f64>,
    scale: Scale,
    dof: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    log_det: f64,
}

impl TDistParams {
    /// Diagonal-scale t. Any positive ν is accepted here; operations that
    /// need finite moments check ν > 2 themselves.
    pub fn diagonal(mean: Vec<f64>, scale_diag: Vec<f64>, dof: f64) -> Result<Self> {
        check_dof(dof)?;
        ensure!(!mean.is_empty(), Dimension, "dimension must be at least 1");
        ensure!(
            mean.len() == scale_diag.len(),
            Dimension,
            "mean has length {}, scale diagonal {}",
            mean.len(),
            scale_diag.len()
        );
        ensure!(
            mean.iter().all(|v| v.is_finite()),
            Domain,
            "mean must be finite"
        );
        if let Some(bad) = scale_diag.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Decomposition(format!(
                "scale diagonal entry {bad} is not positive"
            )));
        }
        let log_det = scale_diag.iter().map(|s| s.ln()).sum();
        Ok(Self {
            mean,
            scale: Scale::Diagonal(scale_diag),
            dof,
            chol: None,
            log_det,
        })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64, dof: f64) -> Result<Self> {
        let d = mean.len();
        Self::diagonal(mean, vec![variance; d], dof)
    }

    /// Full symmetric positive-definite scale, factored once by Cholesky.
    pub fn full(mean: Vec<f64>, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        check_dof(dof)?;
        let d = mean.len();
        ensure!(d >= 1, Dimension, "dimension must be at least 1");
        ensure!(
            scale.nrows() == d && scale.ncols() == d,
            Dimension,
            "scale is {}x{}, mean has length {d}",
            scale.nrows(),
            scale.ncols()
        );
        let norm = scale.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                ensure!(
                    (scale[(i, j)] - scale[(j, i)]).abs() <= 1e-10 * norm,
                    Contract,
                    "scale matrix is not symmetric at ({i}, {j})"
                );
            }
        }
        let chol = Cholesky::new(scale.clone())
            .ok_or_else(|| Error::Decomposition("scale matrix is not positive definite".into()))?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        ensure!(
            log_det.is_finite(),
            Decomposition,
            "scale matrix is singular"
        );
        Ok(Self {
            mean,
            scale: Scale::Full(scale),
            dof,
            chol: Some(chol),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &Scale {
        &self.scale
    }

    pub fn scale_matrix(&self) -> DMatrix<f64> {
        match &self.scale {
            Scale::Diagonal(s) => DMatrix::from_diagonal(&DVector::from_column_slice(s)),
            Scale::Full(m) => m.clone(),
        }
    }

    /// log |Σ|.
    pub fn log_det_scale(&self) -> f64 {
        self.log_det
    }

    /// Same scale and dof, different location.
    pub fn with_mean(&self, mean: Vec<f64>) -> Result<Self> {
        ensure!(
            mean.len() == self.dim(),
            Dimension,
            "mean length {} for dimension {}",
            mean.len(),
            self.dim()
        );
        let mut out = self.clone();
        out.mean = mean;
        Ok(out)
    }

    /// Same location and scale, different dof.
    pub fn with_dof(&self, dof: f64) -> Result<Self> {
        check_dof(dof)?;
        let mut out = self.clone();
        out.dof = dof;
        Ok(out)
    }

    /// (x−μ)ᵀΣ⁻¹(x−μ).
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        ensure!(
            x.len() == self.dim(),
            Dimension,
            "point has length {}, distribution dimension {}",
            x.len(),
            self.dim()
        );
        Ok(match (&self.scale, &self.chol) {
            (Scale::Diagonal(s), _) => x
                .iter()
                .zip(&self.mean)
                .zip(s)
                .map(|((x, m), s)| (x - m) * (x - m) / s)
                .sum(),
            (Scale::Full(_), Some(chol)) => {
                let diff = DVector::from_iterator(
                    self.dim(),
                    x.iter().zip(&self.mean).map(|(x, m)| x - m),
                );
                let y = chol
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .ok_or_else(|| Error::Decomposition("triangular solve failed".into()))?;
                y.norm_squared()
            }
            (Scale::Full(_), None) => unreachable!("full scale always carries its factor"),
        })
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        let q = self.mahalanobis(x)?;
        let c = log_norm_const(self.dof, d)?.value;
        Ok(c - 0.5 * self.log_det - 0.5 * (self.dof + d as f64) * (q / self.dof).ln_1p())
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// tr(Σ_other⁻¹ Σ_self).
    pub fn trace_inv_product(&self, other: &TDistParams) -> Result<f64> {
        ensure!(
            self.dim() == other.dim(),
            Dimension,
            "dimensions {} and {} differ",
            self.dim(),
            other.dim()
        );
        match (&self.scale, &other.scale, &other.chol) {
            (Scale::Diagonal(s0), Scale::Diagonal(s1), _) => {
                Ok(s0.iter().zip(s1).map(|(a, b)| a / b).sum())
            }
            (_, Scale::Diagonal(s1), _) => {
                let m0 = self.scale_matrix();
                Ok((0..self.dim()).map(|i| m0[(i, i)] / s1[i]).sum())
            }
            (_, Scale::Full(_), Some(chol)) => Ok(chol.solve(&self.scale_matrix()).trace()),
            (_, Scale::Full(_), None) => unreachable!("full scale always carries its factor"),
        }
    }

    /// ν/(ν−2)·Σ.
    pub fn moment_covariance(&self) -> Result<DMatrix<f64>> {
        ensure!(
            self.dof > 2.0,
            Domain,
            "covariance needs dof > 2, got {}",
            self.dof
        );
        Ok(self.scale_matrix() * (self.dof / (self.dof - 2.0)))
    }

    /// One reparameterized draw: μ + Z·√(ν/V), Z ~ N(0, Σ), V ~ χ²(ν).
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        for o in out.iter_mut().take(d) {
            *o = sample_standard_normal(rng);
        }
        let w = (self.dof / sample_chi_squared(self.dof, rng)).sqrt();
        match (&self.scale, &self.chol) {
            (Scale::Diagonal(s), _) => {
                for i in 0..d {
                    out[i] = self.mean[i] + out[i] * s[i].sqrt() * w;
                }
            }
            (Scale::Full(_), Some(chol)) => {
                let l = chol.l_dirty();
                for i in (0..d).rev() {
                    let mut z = 0.0;
                    for j in 0..=i {
                        z += l[(i, j)] * out[j];
                    }
                    out[i] = self.mean[i] + z * w;
                }
            }
            (Scale::Full(_), None) => unreachable!("full scale always carries its factor"),
        }
    }

    /// `count × d` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Tensor {
        let d = self.dim();
        let mut data = vec![0.0; count * d];
        for row in data.chunks_mut(d) {
            self.sample_one(rng, row);
        }
        Tensor::matrix(count, d, data).expect("shape matches by construction")
    }

    pub fn sample_seeded(&self, count: usize, seed: u64) -> Tensor {
        self.sample(count, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

fn check_dof(dof: f64) -> Result<()> {
    ensure!(
        dof > 0.0 && dof.is_finite(),
        Domain,
        "degrees of freedom must be positive and finite, got {dof}"
    );
    Ok(())
}
