//! Python bindings. Matrices cross the boundary as lists of rows.

use std::collections::HashMap;
use std::path::PathBuf;

use ct3vae::config::ExperimentConfig;
use ct3vae::data::{exponential_decay_counts, synth_classes, ClusterFamily, SynthSpec};
use ct3vae::experiment::run_trial;
use ct3vae::gamma_div::{gamma_power_divergence_with, ClosedForm};
use ct3vae::generate::{generate, GenerateOptions};
use ct3vae::kv::KeyValues;
use ct3vae::metrics::{frechet_from_samples, knn_precision_recall};
use ct3vae::models::ModelConfig;
use ct3vae::oracle::{mc_gamma_divergence, run_suite, Level, Mutation};
use ct3vae::sampling::{tau_squared, TauMode};
use ct3vae::student_t::TDistParams;
use ct3vae::tensor::Tensor;
use ct3vae::train::Trainer;
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pyct3vae, Ct3vaeError, PyException);

type Matrix = Vec<Vec<f64>>;

fn err(e: ct3vae::Error) -> PyErr {
    Ct3vaeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = ct3vae::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_tensor(rows: Matrix) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn to_rows(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn closed_form(name: &str) -> PyResult<ClosedForm> {
    match name {
        "corrected" => Ok(ClosedForm::Corrected),
        "original" => Ok(ClosedForm::Original),
        _ => Err(Ct3vaeError::new_err(format!(
            "unknown closed form '{name}' (corrected|original)"
        ))),
    }
}

/// Multivariate Student-t with location, scale matrix and degrees of freedom.
#[pyclass(name = "TDist", module = "pyct3vae", skip_from_py_object)]
#[derive(Clone)]
struct PyTDist {
    inner: TDistParams,
}

#[pymethods]
impl PyTDist {
    #[new]
    fn new(mean: Vec<f64>, scale: Matrix, nu: f64) -> PyResult<Self> {
        let d = mean.len();
        if scale.len() != d || scale.iter().any(|r| r.len() != d) {
            return Err(Ct3vaeError::new_err(format!("scale must be {d}x{d}")));
        }
        let m = DMatrix::from_row_slice(d, d, &scale.concat());
        Ok(Self {
            inner: TDistParams::full(mean, m, nu).map_err(err)?,
        })
    }

    #[staticmethod]
    fn diagonal(mean: Vec<f64>, scale_diag: Vec<f64>, nu: f64) -> PyResult<Self> {
        Ok(Self {
            inner: TDistParams::diagonal(mean, scale_diag, nu).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.dof()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.log_density(&x).map_err(err)
    }

    /// Covariance ν/(ν−2)·Σ.
    fn covariance(&self) -> PyResult<Matrix> {
        let c = self.inner.moment_covariance().map_err(err)?;
        Ok(c.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    #[pyo3(signature = (count, seed = 0))]
    fn sample(&self, count: usize, seed: u64) -> Matrix {
        to_rows(&self.inner.sample_seeded(count, seed))
    }

    fn __repr__(&self) -> String {
        format!("TDist(dim={}, nu={})", self.inner.dim(), self.inner.dof())
    }
}

#[pyfunction]
#[pyo3(signature = (q, p, form = "corrected"))]
fn gamma_power_divergence(q: &PyTDist, p: &PyTDist, form: &str) -> PyResult<f64> {
    gamma_power_divergence_with(&q.inner, &p.inner, closed_form(form)?).map_err(err)
}

/// Importance-sampled estimate and standard error.
#[pyfunction]
#[pyo3(signature = (q, p, n_samples = 100_000, seed = 0))]
fn mc_divergence(
    py: Python<'_>,
    q: &PyTDist,
    p: &PyTDist,
    n_samples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let (q, p) = (q.inner.clone(), p.inner.clone());
    py.detach(|| mc_gamma_divergence(&q, &p, n_samples, seed))
        .map_err(err)
}

#[pyfunction]
#[pyo3(name = "tau_squared", signature = (n, m, nu, sigma, mode = "approx", log_det_sigma_phi = None))]
fn py_tau_squared(
    n: usize,
    m: usize,
    nu: f64,
    sigma: f64,
    mode: &str,
    log_det_sigma_phi: Option<f64>,
) -> PyResult<f64> {
    let cfg =
        ModelConfig::new(n, m, 1, nu, sigma, 1.0, ct3vae::models::Family::Ct3vae).map_err(err)?;
    tau_squared(&cfg, parse::<TauMode>(mode)?, log_det_sigma_phi).map_err(err)
}

#[pyfunction]
#[pyo3(name = "exponential_decay_counts")]
fn py_decay_counts(m: usize, rho: f64, k: usize) -> PyResult<Vec<usize>> {
    exponential_decay_counts(m, rho, k).map_err(err)
}

/// Balanced synthetic clusters in [0, 1]^n: (samples, labels).
#[pyfunction]
#[pyo3(signature = (k, n, per_class, family = "student_t", dof = 3.0, separation = 4.0, seed = 0))]
fn synth(
    k: usize,
    n: usize,
    per_class: usize,
    family: &str,
    dof: f64,
    separation: f64,
    seed: u64,
) -> PyResult<(Matrix, Vec<usize>)> {
    let family = match parse::<ClusterFamily>(family)? {
        ClusterFamily::StudentT { .. } => ClusterFamily::StudentT { dof },
        other => other,
    };
    let out = synth_classes(&SynthSpec {
        k,
        n,
        per_class,
        family,
        separation,
        seed,
    })
    .map_err(err)?;
    Ok((to_rows(&out.dataset.samples), out.dataset.labels))
}

#[pyfunction]
fn frechet(a: Matrix, b: Matrix) -> PyResult<f64> {
    frechet_from_samples(&to_tensor(a)?, &to_tensor(b)?).map_err(err)
}

/// k-NN manifold (precision, recall).
#[pyfunction]
#[pyo3(signature = (real, generated, k = 3))]
fn precision_recall(real: Matrix, generated: Matrix, k: usize) -> PyResult<(f64, f64)> {
    knn_precision_recall(&to_tensor(real)?, &to_tensor(generated)?, k).map_err(err)
}

/// A trained model loaded from a checkpoint directory.
#[pyclass(name = "Checkpoint", module = "pyct3vae")]
struct PyCheckpoint {
    trainer: Trainer,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            trainer: Trainer::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.trainer.model.config.family.as_str()
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.trainer.epochs_done()
    }

    /// (epoch, total, reconstruction, regularizer) per epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.trainer
            .history
            .iter()
            .map(|r| (r.epoch, r.total, r.reconstruction, r.regularizer))
            .collect()
    }

    /// Posterior means and variances.
    fn encode(&self, x: Matrix, labels: Vec<usize>) -> PyResult<(Matrix, Matrix)> {
        let enc = self
            .trainer
            .model
            .encode(&to_tensor(x)?, &labels)
            .map_err(err)?;
        Ok((to_rows(&enc.mu_phi), to_rows(&enc.sigma_phi_diag)))
    }

    fn decode(&self, z: Matrix, labels: Vec<usize>) -> PyResult<Matrix> {
        Ok(to_rows(
            &self
                .trainer
                .model
                .decode(&to_tensor(z)?, &labels)
                .map_err(err)?,
        ))
    }

    /// (samples, labels or None, tau^2).
    #[pyo3(signature = (count, seed = 0, tau_mode = "approx", tau = None, alpha = None, decoder = "sample"))]
    fn generate(
        &self,
        count: usize,
        seed: u64,
        tau_mode: &str,
        tau: Option<f64>,
        alpha: Option<Vec<f64>>,
        decoder: &str,
    ) -> PyResult<(Matrix, Option<Vec<usize>>, f64)> {
        let mut opts = GenerateOptions::new(count, seed);
        opts.tau_mode = parse(tau_mode)?;
        opts.tau = tau;
        opts.alpha = alpha;
        opts.decoder = parse(decoder)?;
        let g = generate(&self.trainer.model, self.trainer.mean_log_det, &opts).map_err(err)?;
        Ok((to_rows(&g.samples), g.labels, g.tau2))
    }
}

/// Trains and evaluates one configuration given config-key overrides.
#[pyfunction]
#[pyo3(signature = (overrides = None))]
fn trial<'py>(
    py: Python<'py>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut kv = KeyValues::default();
    for (k, v) in overrides.unwrap_or_default() {
        kv.set(&k, v);
    }
    let cfg = ExperimentConfig::resolve(None, &kv).map_err(err)?;
    let result = py.detach(|| run_trial(&cfg)).map_err(err)?;
    let r = &result.report;
    let out = PyDict::new(py);
    out.set_item("macro_precision", r.macro_precision)?;
    out.set_item("macro_recall", r.macro_recall)?;
    out.set_item("macro_f1", r.macro_f1)?;
    out.set_item("pooled_frechet", r.pooled_frechet)?;
    out.set_item(
        "recall",
        r.classes.iter().map(|c| c.recall).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "precision",
        r.classes.iter().map(|c| c.precision).collect::<Vec<_>>(),
    )?;
    out.set_item("f1", r.classes.iter().map(|c| c.f1).collect::<Vec<_>>())?;
    out.set_item("collapsed", r.collapsed_classes())?;
    Ok(out)
}

/// Runs the oracle suite; true when every gating check passes.
#[pyfunction]
#[pyo3(signature = (level = "quick"))]
fn verify(py: Python<'_>, level: &str) -> PyResult<bool> {
    let level: Level = parse(level)?;
    py.detach(|| run_suite(level, Mutation::None))
        .map(|r| r.passed())
        .map_err(err)
}

/// Runs the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| ct3vae::cli::run(std::iter::once("ct3vae".to_string()).chain(args)))
}

#[pymodule]
pub fn pyct3vae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Ct3vaeError", m.py().get_type::<Ct3vaeError>())?;
    m.add_class::<PyTDist>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(gamma_power_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(mc_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(py_tau_squared, m)?)?;
    m.add_function(wrap_pyfunction!(py_decay_counts, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(frechet, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(trial, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
