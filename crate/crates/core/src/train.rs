//! Minibatch AdamW training, per-epoch loss log and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{read_tensor, write_tensor, LabeledDataset};
use crate::error::{ensure, Error, Result};
use crate::kv::KeyValues;
use crate::models::{Architecture, Batch, Family, Model, ModelConfig, Noise};
use crate::tensor::{zero_grads, AdamW, AdamWConfig, Parameters, Tensor};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.txt";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub arch: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            model,
            arch: Architecture::default(),
            epochs: 150,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        ensure!(
            self.batch_size >= 1,
            Config,
            "batch size must be at least 1"
        );
        ensure!(
            !self.arch.hidden.is_empty() && self.arch.hidden.iter().all(|&h| h > 0),
            Config,
            "hidden widths must be positive"
        );
        ensure!(
            self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite(),
            Config,
            "learning rate must be positive"
        );
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub regularizer: f64,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamW,
    pub history: Vec<EpochRecord>,
    /// Training-set mean of log|Σ_φ(x)|, refreshed by [`Trainer::refresh_log_det`].
    pub mean_log_det: Option<f64>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.model, &config.arch, &mut rng)?;
        Ok(Self {
            optimizer: AdamW::new(config.optimizer),
            config,
            model,
            history: Vec::new(),
            mean_log_det: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        let c = &self.config.model;
        ensure!(!data.is_empty(), Config, "training set is empty");
        ensure!(
            data.dim() == c.n,
            Config,
            "data dimension {} differs from n = {}",
            data.dim(),
            c.n
        );
        if c.family.is_conditional() {
            ensure!(
                data.k == c.k,
                Config,
                "dataset has {} classes, model expects K = {}",
                data.k,
                c.k
            );
        }
        Ok(())
    }

    /// One pass over a shuffled copy of the data. Randomness depends only on
    /// (seed, epoch), so a resumed run replays the same batches and noise.
    pub fn run_epoch(&mut self, data: &LabeledDataset) -> Result<EpochRecord> {
        self.check_data(data)?;
        let epoch = self.epochs_done();
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let conditional = self.config.model.family.is_conditional();
        let (mut total, mut recon, mut reg) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.config.batch_size) {
            let labels = if conditional {
                chunk.iter().map(|&i| data.labels[i]).collect()
            } else {
                vec![0; chunk.len()]
            };
            let batch = Batch {
                x: data.samples.select_rows(chunk),
                labels,
            };
            let noise = Noise::draw(&self.config.model, chunk.len(), &mut rng);
            zero_grads(&mut self.model);
            let loss = self.model.loss_and_grad(&batch, &noise)?;
            ensure!(
                loss.total.is_finite(),
                Evaluation,
                "non-finite loss at epoch {epoch}"
            );
            self.optimizer.step(&mut self.model)?;
            let w = chunk.len() as f64;
            total += w * loss.total;
            recon += w * loss.reconstruction;
            reg += w * (loss.total - loss.reconstruction);
        }
        zero_grads(&mut self.model);
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            total: total / n,
            reconstruction: recon / n,
            regularizer: reg / n,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are done, then refreshes log|Σ_φ|.
    pub fn fit(&mut self, data: &LabeledDataset) -> Result<&[EpochRecord]> {
        self.check_data(data)?;
        while self.epochs_done() < self.config.epochs {
            self.run_epoch(data)?;
        }
        self.refresh_log_det(data)?;
        Ok(&self.history)
    }

    pub fn refresh_log_det(&mut self, data: &LabeledDataset) -> Result<f64> {
        let labels = if self.config.model.family.is_conditional() {
            data.labels.clone()
        } else {
            vec![0; data.len()]
        };
        let post = self.model.encode(&data.samples, &labels)?;
        let m = post.sigma_phi_diag.cols();
        let sum: f64 = post.sigma_phi_diag.data().iter().map(|v| v.ln()).sum();
        let value = sum / (post.sigma_phi_diag.numel() / m) as f64;
        ensure!(value.is_finite(), Evaluation, "mean log|Σ_φ| is not finite");
        self.mean_log_det = Some(value);
        Ok(value)
    }

    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "total", "reconstruction", "regularizer"])?;
        for r in &self.history {
            out.write_record([
                r.epoch.to_string(),
                format!("{:.12e}", r.total),
                format!("{:.12e}", r.reconstruction),
                format!("{:.12e}", r.regularizer),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Directory with `checkpoint.txt`, parameter and optimizer-moment tensors
    /// and the loss history, all stored bit-exactly.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let mut kv = KeyValues::default();
        kv.set("format_version", FORMAT_VERSION.to_string());
        kv.set("family", c.model.family.as_str());
        kv.set("n", c.model.n.to_string());
        kv.set("m", c.model.m.to_string());
        kv.set("k", c.model.k.to_string());
        kv.set("nu", c.model.nu.to_string());
        kv.set("sigma", c.model.sigma.to_string());
        kv.set("beta", c.model.beta.to_string());
        kv.set("hidden", join(&c.arch.hidden));
        kv.set("epochs", c.epochs.to_string());
        kv.set("batch_size", c.batch_size.to_string());
        kv.set("seed", c.seed.to_string());
        kv.set("lr", c.optimizer.lr.to_string());
        kv.set("adam_beta1", c.optimizer.beta1.to_string());
        kv.set("adam_beta2", c.optimizer.beta2.to_string());
        kv.set("adam_eps", c.optimizer.eps.to_string());
        kv.set("weight_decay", c.optimizer.weight_decay.to_string());
        kv.set("adam_step", self.optimizer.state.step.to_string());
        kv.set("epochs_done", self.epochs_done().to_string());
        if let Some(ld) = self.mean_log_det {
            kv.set("mean_log_det", ld.to_string());
        }
        let names: Vec<String> = self
            .model
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        kv.set("parameters", names.join(","));

        for (name, t) in self.model.named_tensors() {
            write_tensor(&dir.join(format!("param.{name}.htvt")), t)?;
        }
        let st = &self.optimizer.state;
        for (i, name) in names.iter().enumerate() {
            if let (Some(m), Some(v)) = (st.m.get(i), st.v.get(i)) {
                write_tensor(
                    &dir.join(format!("adam_m.{name}.htvt")),
                    &Tensor::new(vec![m.len()], m.clone())?,
                )?;
                write_tensor(
                    &dir.join(format!("adam_v.{name}.htvt")),
                    &Tensor::new(vec![v.len()], v.clone())?,
                )?;
            }
        }
        kv.set("adam_buffers", st.m.len().to_string());
        let hist: Vec<f64> = self
            .history
            .iter()
            .flat_map(|r| [r.total, r.reconstruction, r.regularizer])
            .collect();
        write_tensor(
            &dir.join("history.htvt"),
            &Tensor::matrix(self.history.len(), 3, hist)?,
        )?;

        let path = dir.join(CHECKPOINT_MANIFEST);
        fs::write(&path, kv.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Accepts the checkpoint directory or its manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = if path.is_file() {
            path.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            path.to_path_buf()
        };
        let kv = KeyValues::read(&dir.join(CHECKPOINT_MANIFEST))?;
        let version: u32 = kv.require("format_version")?;
        ensure!(
            version == FORMAT_VERSION,
            Config,
            "unsupported checkpoint version {version}"
        );
        let family: Family = kv.require("family")?;
        let model = ModelConfig::new(
            kv.require("n")?,
            kv.require("m")?,
            kv.require("k")?,
            kv.require("nu")?,
            kv.require("sigma")?,
            kv.require("beta")?,
            family,
        )?;
        let hidden = parse_list(kv.get("hidden").unwrap_or(""))?;
        let config = TrainConfig {
            model,
            arch: Architecture { hidden },
            epochs: kv.require("epochs")?,
            batch_size: kv.require("batch_size")?,
            optimizer: AdamWConfig {
                lr: kv.require("lr")?,
                beta1: kv.require("adam_beta1")?,
                beta2: kv.require("adam_beta2")?,
                eps: kv.require("adam_eps")?,
                weight_decay: kv.require("weight_decay")?,
            },
            seed: kv.require("seed")?,
        };
        let mut trainer = Trainer::new(config)?;
        let names: Vec<String> = trainer
            .model
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let stored = kv.get("parameters").unwrap_or("");
        ensure!(
            stored == names.join(","),
            Config,
            "checkpoint parameter list does not match the architecture"
        );

        let mut loaded = Vec::with_capacity(names.len());
        for name in &names {
            loaded.push(read_tensor(&dir.join(format!("param.{name}.htvt")))?);
        }
        let mut idx = 0;
        let mut mismatch = None;
        trainer.model.visit_mut(&mut |t| {
            let src = &loaded[idx];
            if src.shape() == t.shape() {
                t.data_mut().copy_from_slice(src.data());
            } else if mismatch.is_none() {
                mismatch = Some(format!(
                    "{}: stored {:?}, expected {:?}",
                    names[idx],
                    src.shape(),
                    t.shape()
                ));
            }
            idx += 1;
        });
        if let Some(msg) = mismatch {
            return Err(Error::Config(format!(
                "checkpoint shape mismatch for {msg}"
            )));
        }

        let buffers: usize = kv.require("adam_buffers")?;
        ensure!(
            buffers <= names.len(),
            Config,
            "checkpoint lists {buffers} optimizer buffers for {} tensors",
            names.len()
        );
        let st = &mut trainer.optimizer.state;
        st.step = kv.require("adam_step")?;
        for name in names.iter().take(buffers) {
            st.m.push(read_tensor(&dir.join(format!("adam_m.{name}.htvt")))?.into_data());
            st.v.push(read_tensor(&dir.join(format!("adam_v.{name}.htvt")))?.into_data());
        }
        let hist = read_tensor(&dir.join("history.htvt"))?;
        let done: usize = kv.require("epochs_done")?;
        ensure!(
            hist.rows() == done || (done == 0 && hist.numel() == 0),
            Config,
            "history length differs from epochs_done"
        );
        for e in 0..done {
            let r = hist.row(e);
            trainer.history.push(EpochRecord {
                epoch: e + 1,
                total: r[0],
                reconstruction: r[1],
                regularizer: r[2],
            });
        }
        trainer.mean_log_det = kv.parse_opt("mean_log_det")?;
        Ok(trainer)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|e| Error::Config(format!("cannot parse list item '{p}': {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_classes, ClusterFamily, SynthSpec};

    fn data() -> LabeledDataset {
        synth_classes(&SynthSpec {
            k: 3,
            n: 6,
            per_class: 40,
            family: ClusterFamily::Gaussian,
            separation: 4.0,
            seed: 1,
        })
        .unwrap()
        .dataset
    }

    fn config(family: Family, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::new(
            ModelConfig::new(6, 2, 3, 10.0, 1.0, 1.0, family).unwrap(),
            7,
        );
        c.arch = Architecture { hidden: vec![16] };
        c.epochs = epochs;
        c.batch_size = 16;
        c
    }

    #[test]
    fn loss_decreases_for_every_family() {
        let d = data();
        for f in Family::ALL {
            let mut t = Trainer::new(config(f, 30)).unwrap();
            let h = t.fit(&d).unwrap().to_vec();
            assert!(
                h.last().unwrap().total < h[0].total,
                "{f}: {:?} -> {:?}",
                h[0],
                h.last()
            );
            assert!(t.mean_log_det.unwrap().is_finite());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let d = data();
        let dir = tempfile::tempdir().unwrap();
        for f in [Family::Ct3vae, Family::Vae] {
            let mut full = Trainer::new(config(f, 4)).unwrap();
            full.fit(&d).unwrap();

            let mut first = Trainer::new(config(f, 4)).unwrap();
            first.run_epoch(&d).unwrap();
            first.run_epoch(&d).unwrap();
            let ck = dir.path().join(f.as_str());
            first.save(&ck).unwrap();
            let mut resumed = Trainer::load(&ck).unwrap();
            assert_eq!(resumed.history, first.history);
            assert_eq!(resumed.optimizer.state, first.optimizer.state);
            assert_eq!(resumed.model, first.model);
            resumed.fit(&d).unwrap();
            for (a, b) in resumed.history.iter().zip(&full.history) {
                assert!((a.total - b.total).abs() <= 1e-10, "{a:?} {b:?}");
            }
            assert_eq!(resumed.model, full.model);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let d = data();
        let mut c = config(Family::Cvae, 1);
        c.model.n = 5;
        let mut t = Trainer::new(c).unwrap();
        assert!(matches!(t.run_epoch(&d), Err(Error::Config(_))));
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let mut t = Trainer::new(config(Family::T3vae, 3)).unwrap();
        t.fit(&data()).unwrap();
        let mut buf = Vec::new();
        t.write_history_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
