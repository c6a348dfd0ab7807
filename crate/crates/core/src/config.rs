//! Experiment configuration: defaults, then a key=value file, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use crate::data::ClusterFamily;
use crate::error::{ensure, Error, Result};
use crate::generate::DecoderOutput;
use crate::kv::KeyValues;
use crate::metrics::FeatureSpace;
use crate::models::{Architecture, Family, ModelConfig};
use crate::sampling::TauMode;
use crate::tensor::AdamWConfig;
use crate::train::{parse_list, TrainConfig};

/// Every recognised key with its default ("" means unset).
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("family", "ct3vae", "vae | cvae | t3vae | ct3vae"),
    (
        "seed",
        "0",
        "master seed for data subsampling, initialization and batches",
    ),
    ("latent_dim", "4", "latent dimension m"),
    ("nu", "10", "degrees of freedom ν (> 2)"),
    ("sigma", "0.1", "decoder scale σ"),
    ("beta", "1", "regularizer weight β"),
    ("epochs", "150", "training epochs"),
    ("batch_size", "64", "minibatch size"),
    ("lr", "0.001", "AdamW learning rate"),
    ("weight_decay", "0.01", "AdamW decoupled weight decay"),
    ("hidden", "64", "comma-separated hidden widths"),
    (
        "rho",
        "1",
        "imbalance ratio applied to the balanced training set",
    ),
    (
        "dataset",
        "",
        "dataset manifest; empty selects the synthetic fixture",
    ),
    ("synth_k", "5", "synthetic classes"),
    ("synth_n", "16", "synthetic data dimension"),
    (
        "synth_per_class",
        "500",
        "synthetic training samples per class before decay",
    ),
    (
        "synth_test_per_class",
        "200",
        "synthetic test samples per class",
    ),
    ("synth_family", "student_t", "gaussian | student_t"),
    ("synth_dof", "3", "cluster dof for student_t"),
    ("synth_separation", "4", "distance between cluster means"),
    ("synth_seed", "", "data seed; defaults to seed"),
    ("tau_mode", "approx", "approx | exact | original"),
    ("tau", "", "latent sampling τ override"),
    ("alpha", "", "comma-separated class weights for sampling"),
    (
        "decoder_output",
        "sample",
        "sample draws x from the decoder distribution, mean emits μ_θ(z)",
    ),
    ("count", "1000", "samples drawn by `sample`"),
    (
        "feature_space",
        "auto",
        "auto | raw | projection[:dim[:seed]]",
    ),
    ("knn_k", "3", "k for k-NN precision/recall"),
    ("out_dir", "out", "output directory"),
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic(SynthSettings),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub k: usize,
    pub n: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub family: ClusterFamily,
    pub separation: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub family: Family,
    pub seed: u64,
    pub latent_dim: usize,
    pub nu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub arch: Architecture,
    pub rho: f64,
    pub data: DataSource,
    pub tau_mode: TauMode,
    pub tau: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub decoder_output: DecoderOutput,
    pub count: usize,
    /// `None` picks the default for the data dimension.
    pub feature_space: Option<FeatureSpace>,
    pub knn_k: usize,
    pub out_dir: PathBuf,
}

fn defaults() -> KeyValues {
    let mut kv = KeyValues::default();
    for (k, v, _) in DEFAULTS {
        if !v.is_empty() {
            kv.set(k, *v);
        }
    }
    kv
}

fn check_known(kv: &KeyValues, origin: &str) -> Result<()> {
    for key in kv.keys() {
        ensure!(
            DEFAULTS.iter().any(|(k, _, _)| *k == key),
            Config,
            "unknown key '{key}' in {origin}"
        );
    }
    Ok(())
}

impl ExperimentConfig {
    /// Layers `file` then `overrides` over the defaults. Relative dataset
    /// paths in the file resolve against the file's directory.
    pub fn resolve(file: Option<&Path>, overrides: &KeyValues) -> Result<Self> {
        let mut kv = defaults();
        if let Some(path) = file {
            let f = KeyValues::read(path)?;
            check_known(&f, &path.display().to_string())?;
            for key in f.keys() {
                let mut value = f.get(key).unwrap_or("").to_string();
                if key == "dataset" && !value.is_empty() && Path::new(&value).is_relative() {
                    if let Some(dir) = path.parent() {
                        value = dir.join(&value).display().to_string();
                    }
                }
                kv.set(key, value);
            }
        }
        check_known(overrides, "command-line overrides")?;
        for key in overrides.keys() {
            kv.set(key, overrides.get(key).unwrap_or(""));
        }
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let nonempty = |k: &str| kv.get(k).filter(|v| !v.is_empty());
        let seed: u64 = kv.require("seed")?;
        let dataset = nonempty("dataset");
        let data = match dataset {
            Some(p) => DataSource::Manifest(PathBuf::from(p)),
            None => {
                let family = match kv.require::<ClusterFamily>("synth_family")? {
                    ClusterFamily::StudentT { .. } => ClusterFamily::StudentT {
                        dof: kv.require("synth_dof")?,
                    },
                    g => g,
                };
                DataSource::Synthetic(SynthSettings {
                    k: kv.require("synth_k")?,
                    n: kv.require("synth_n")?,
                    per_class: kv.require("synth_per_class")?,
                    test_per_class: kv.require("synth_test_per_class")?,
                    family,
                    separation: kv.require("synth_separation")?,
                    seed: match nonempty("synth_seed") {
                        Some(s) => s
                            .parse()
                            .map_err(|e| Error::Config(format!("synth_seed: {e}")))?,
                        None => seed,
                    },
                })
            }
        };
        let tau = match nonempty("tau") {
            Some(_) => kv.parse_opt::<f64>("tau")?,
            None => None,
        };
        let alpha = nonempty("alpha").map(parse_list::<f64>).transpose()?;
        let feature_space = match kv.get("feature_space").unwrap_or("auto") {
            "auto" => None,
            other => Some(other.parse()?),
        };
        let c = Self {
            family: kv.require("family")?,
            seed,
            latent_dim: kv.require("latent_dim")?,
            nu: kv.require("nu")?,
            sigma: kv.require("sigma")?,
            beta: kv.require("beta")?,
            epochs: kv.require("epochs")?,
            batch_size: kv.require("batch_size")?,
            optimizer: AdamWConfig {
                lr: kv.require("lr")?,
                weight_decay: kv.require("weight_decay")?,
                ..AdamWConfig::default()
            },
            arch: Architecture {
                hidden: parse_list(kv.get("hidden").unwrap_or(""))?,
            },
            rho: kv.require("rho")?,
            data,
            tau_mode: kv.require("tau_mode")?,
            tau,
            alpha,
            decoder_output: kv.require("decoder_output")?,
            count: kv.require("count")?,
            feature_space,
            knn_k: kv.require("knn_k")?,
            out_dir: PathBuf::from(kv.require::<String>("out_dir")?),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.nu > 2.0 && self.nu.is_finite(),
            Config,
            "nu must exceed 2, got {}",
            self.nu
        );
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            Config,
            "sigma must be positive"
        );
        ensure!(
            self.beta > 0.0 && self.beta.is_finite(),
            Config,
            "beta must be positive"
        );
        ensure!(
            self.latent_dim >= 1,
            Config,
            "latent_dim must be at least 1"
        );
        ensure!(
            self.batch_size >= 1,
            Config,
            "batch_size must be at least 1"
        );
        ensure!(
            self.rho >= 1.0 && self.rho.is_finite(),
            Config,
            "rho must be ≥ 1, got {}",
            self.rho
        );
        ensure!(self.knn_k >= 1, Config, "knn_k must be at least 1");
        ensure!(
            !self.arch.hidden.is_empty() && self.arch.hidden.iter().all(|&h| h > 0),
            Config,
            "hidden widths must be positive"
        );
        if let Some(t) = self.tau {
            ensure!(t > 0.0 && t.is_finite(), Config, "tau must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self, n: usize, k: usize) -> Result<TrainConfig> {
        let model = ModelConfig::new(
            n,
            self.latent_dim,
            k,
            self.nu,
            self.sigma,
            self.beta,
            self.family,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(TrainConfig {
            model,
            arch: self.arch.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
        })
    }

    pub fn feature_space_for(&self, n: usize) -> FeatureSpace {
        self.feature_space
            .clone()
            .unwrap_or_else(|| FeatureSpace::default_for(n, self.seed))
    }
}

/// Text listing of keys and defaults.
pub fn describe_keys() -> String {
    DEFAULTS
        .iter()
        .map(|(k, v, d)| format!("{k:<22} {:<12} {d}\n", if v.is_empty() { "-" } else { v }))
        .collect()
}
