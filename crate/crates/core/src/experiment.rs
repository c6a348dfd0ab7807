//! Data preparation, train-then-evaluate trials and the imbalance comparison.

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{make_longtail, synth_classes, DatasetManifest, LabeledDataset, SynthSpec};
use crate::error::{ensure, Result};
use crate::generate::{generate, GenerateOptions, Generated};
use crate::metrics::{per_class_report, ClassReport};
use crate::models::{Family, Model};
use crate::tensor::Tensor;
use crate::train::Trainer;

const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Clone, Debug)]
pub struct PreparedData {
    /// Training set after the configured long-tail decay.
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
}

/// Loads or synthesizes the data and applies the ρ decay to the training set.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test) = match &cfg.data {
        DataSource::Manifest(path) => {
            let m = DatasetManifest::read(path)?;
            (m.load_train()?, m.load_test()?)
        }
        DataSource::Synthetic(s) => {
            let spec = |per_class, seed| SynthSpec {
                k: s.k,
                n: s.n,
                per_class,
                family: s.family,
                separation: s.separation,
                seed,
            };
            let train = synth_classes(&spec(s.per_class, s.seed))?.dataset;
            let test = synth_classes(&spec(
                s.test_per_class,
                s.seed.wrapping_add(TEST_SEED_OFFSET),
            ))?
            .dataset;
            (train, Some(test))
        }
    };
    let train = if cfg.rho == 1.0 {
        train
    } else {
        make_longtail(&train, cfg.rho, cfg.seed)?
    };
    Ok(PreparedData { train, test })
}

/// Class of the nearest class centroid, for labelling unconditional samples.
pub fn nearest_centroid_labels(reference: &LabeledDataset, samples: &Tensor) -> Vec<usize> {
    let idx = reference.class_indices();
    let d = reference.dim();
    let centroids: Vec<Vec<f64>> = idx
        .iter()
        .map(|rows| {
            let mut c = vec![0.0; d];
            for &i in rows {
                c.iter_mut()
                    .zip(reference.samples.row(i))
                    .for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= rows.len().max(1) as f64);
            c
        })
        .collect();
    (0..samples.rows())
        .map(|i| {
            let x = samples.row(i);
            let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..centroids.len())
                .filter(|&y| !idx[y].is_empty())
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap_or(0)
        })
        .collect()
}

/// Labels for evaluation: the sampled class for conditional families,
/// nearest test-class centroid otherwise.
pub fn evaluation_labels(generated: &Generated, reference: &LabeledDataset) -> Vec<usize> {
    generated
        .labels
        .clone()
        .unwrap_or_else(|| nearest_centroid_labels(reference, &generated.samples))
}

/// Balances the test set, draws as many samples as it holds and reports.
pub fn evaluate_model(
    model: &Model,
    mean_log_det: Option<f64>,
    test: &LabeledDataset,
    cfg: &ExperimentConfig,
    sample_seed: u64,
) -> Result<ClassReport> {
    for (c, &count) in test.class_counts.iter().enumerate() {
        ensure!(count > 0, Protocol, "class {c} is absent from the test set");
    }
    let balanced = test.balanced(cfg.seed)?;
    let mut opts = GenerateOptions::new(balanced.len(), sample_seed);
    opts.tau_mode = cfg.tau_mode;
    opts.tau = cfg.tau;
    opts.alpha = cfg.alpha.clone();
    opts.decoder = cfg.decoder_output;
    let generated = generate(model, mean_log_det, &opts)?;
    let labels = evaluation_labels(&generated, &balanced);
    per_class_report(
        &balanced,
        &generated.samples,
        &labels,
        &cfg.feature_space_for(balanced.dim()),
        cfg.knn_k,
    )
}

#[derive(Clone, Debug)]
pub struct Trial {
    pub trainer: Trainer,
    pub report: ClassReport,
}

pub fn run_trial(cfg: &ExperimentConfig) -> Result<Trial> {
    let data = prepare_data(cfg)?;
    let test = data
        .test
        .as_ref()
        .ok_or_else(|| crate::Error::Config("dataset has no test split".into()))?;
    let mut trainer = Trainer::new(cfg.train_config(data.train.dim(), data.train.k)?)?;
    trainer.fit(&data.train)?;
    let report = evaluate_model(&trainer.model, trainer.mean_log_det, test, cfg, cfg.seed)?;
    Ok(Trial { trainer, report })
}

/// Seed-by-seed comparison of two families at one ρ.
#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceComparison {
    pub rho: f64,
    pub seeds: Vec<u64>,
    /// Recall of the last (rarest) class, per seed.
    pub tail_recall: [Vec<f64>; 2],
    pub macro_f1: [Vec<f64>; 2],
    pub families: [Family; 2],
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ImbalanceComparison {
    /// Seeds where the first family's tail recall is strictly higher.
    pub fn tail_wins(&self) -> usize {
        self.tail_recall[0]
            .iter()
            .zip(&self.tail_recall[1])
            .filter(|(a, b)| a > b)
            .count()
    }

    pub fn median_macro_f1(&self) -> [f64; 2] {
        [median(&self.macro_f1[0]), median(&self.macro_f1[1])]
    }
}

pub fn compare_families(
    base: &ExperimentConfig,
    families: [Family; 2],
    rho: f64,
    seeds: &[u64],
) -> Result<ImbalanceComparison> {
    ensure!(!seeds.is_empty(), Config, "need at least one seed");
    let mut tail_recall = [Vec::new(), Vec::new()];
    let mut macro_f1 = [Vec::new(), Vec::new()];
    for &seed in seeds {
        for (i, family) in families.iter().enumerate() {
            let cfg = ExperimentConfig {
                family: *family,
                seed,
                rho,
                ..base.clone()
            };
            let trial = run_trial(&cfg)?;
            let classes = &trial.report.classes;
            tail_recall[i].push(classes[classes.len() - 1].recall);
            macro_f1[i].push(trial.report.macro_f1);
        }
    }
    Ok(ImbalanceComparison {
        rho,
        seeds: seeds.to_vec(),
        tail_recall,
        macro_f1,
        families,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::KeyValues;

    fn small() -> ExperimentConfig {
        let mut kv = KeyValues::default();
        for (k, v) in [
            ("synth_k", "3"),
            ("synth_n", "6"),
            ("synth_per_class", "60"),
            ("synth_test_per_class", "30"),
            ("epochs", "5"),
            ("hidden", "16"),
            ("latent_dim", "2"),
        ] {
            kv.set(k, v);
        }
        ExperimentConfig::resolve(None, &kv).unwrap()
    }

    #[test]
    fn longtail_applied_to_training_only() {
        let cfg = ExperimentConfig {
            rho: 10.0,
            ..small()
        };
        let d = prepare_data(&cfg).unwrap();
        assert_eq!(d.train.class_counts, vec![60, 18, 6]);
        assert_eq!(d.test.unwrap().class_counts, vec![30, 30, 30]);
    }

    #[test]
    fn trials_are_deterministic_for_every_family() {
        for family in Family::ALL {
            let cfg = ExperimentConfig { family, ..small() };
            let a = run_trial(&cfg).unwrap();
            let b = run_trial(&cfg).unwrap();
            assert_eq!(a.report, b.report);
            assert_eq!(a.report.classes.len(), 3);
        }
    }

    #[test]
    fn centroid_labels_recover_real_classes() {
        let d = prepare_data(&ExperimentConfig {
            family: Family::Vae,
            ..small()
        })
        .unwrap()
        .test
        .unwrap();
        let labels = nearest_centroid_labels(&d, &d.samples);
        let agree = labels.iter().zip(&d.labels).filter(|(a, b)| a == b).count();
        assert!(agree as f64 / d.len() as f64 > 0.9);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
