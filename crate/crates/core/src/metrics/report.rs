use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::frechet::frechet_from_samples;
use super::knn::knn_precision_recall_capped;
use crate::data::LabeledDataset;
use crate::error::{ensure, Result};
use crate::special::sample_standard_normal;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSpace {
    Raw,
    RandomProjection { seed: u64, dim: usize },
}

impl FeatureSpace {
    pub const DEFAULT_DIM: usize = 64;

    /// Projection to 64 dims for inputs wider than 64, raw otherwise.
    pub fn default_for(n: usize, seed: u64) -> Self {
        if n > Self::DEFAULT_DIM {
            FeatureSpace::RandomProjection {
                seed,
                dim: Self::DEFAULT_DIM,
            }
        } else {
            FeatureSpace::Raw
        }
    }

    /// n × dim matrix with orthonormal columns, or `None` for raw features.
    pub fn projection(&self, n: usize) -> Result<Option<DMatrix<f64>>> {
        match *self {
            FeatureSpace::Raw => Ok(None),
            FeatureSpace::RandomProjection { seed, dim } => {
                ensure!(
                    dim >= 1 && dim <= n,
                    Config,
                    "projection dim {dim} must be in 1..={n}"
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = DMatrix::from_fn(n, dim, |_, _| sample_standard_normal(&mut rng));
                Ok(Some(g.qr().q()))
            }
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.apply_with(&self.projection(x.cols())?, x)
    }

    fn apply_with(&self, proj: &Option<DMatrix<f64>>, x: &Tensor) -> Result<Tensor> {
        let Some(q) = proj else {
            return Ok(x.clone());
        };
        ensure!(
            x.cols() == q.nrows(),
            Dimension,
            "features have width {}, projection expects {}",
            x.cols(),
            q.nrows()
        );
        let m = DMatrix::from_row_slice(x.rows(), x.cols(), x.data()) * q;
        let mut out = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            out.extend(m.row(i).iter());
        }
        Tensor::matrix(m.nrows(), m.ncols(), out)
    }
}

impl std::fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureSpace::Raw => write!(f, "raw"),
            FeatureSpace::RandomProjection { seed, dim } => write!(f, "projection:{dim}:{seed}"),
        }
    }
}

impl std::str::FromStr for FeatureSpace {
    type Err = crate::Error;

    /// `raw` or `projection[:dim[:seed]]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        match parts.next() {
            Some("raw") if parts.next().is_none() => Ok(FeatureSpace::Raw),
            Some("projection") => {
                let dim = parts.next().map(str::parse).transpose();
                let seed = parts.next().map(str::parse).transpose();
                match (dim, seed, parts.next()) {
                    (Ok(dim), Ok(seed), None) => Ok(FeatureSpace::RandomProjection {
                        dim: dim.unwrap_or(Self::DEFAULT_DIM),
                        seed: seed.unwrap_or(0),
                    }),
                    _ => Err(crate::Error::Config(format!("bad feature space '{s}'"))),
                }
            }
            _ => Err(crate::Error::Config(format!(
                "unknown feature space '{s}' (raw | projection[:dim[:seed]])"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Infinite when the class was never generated.
    pub frechet: f64,
    pub real_count: usize,
    pub generated_count: usize,
    pub collapsed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub pooled_frechet: f64,
}

pub(crate) fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Per-class k-NN precision/recall/F1 and Fréchet distances between the real
/// test set and generated samples, both mapped through the same feature space.
/// A class with no generated samples scores zero and is flagged as collapsed.
pub fn per_class_report(
    real: &LabeledDataset,
    generated: &Tensor,
    generated_labels: &[usize],
    features: &FeatureSpace,
    k: usize,
) -> Result<ClassReport> {
    ensure!(k >= 1, Contract, "k must be at least 1");
    ensure!(
        generated.rows() == generated_labels.len(),
        Dimension,
        "generated samples and labels differ in length"
    );
    ensure!(
        generated.rows() == 0 || generated.cols() == real.dim(),
        Dimension,
        "generated width {} differs from data width {}",
        generated.cols(),
        real.dim()
    );
    for c in 0..real.k {
        ensure!(
            real.class_counts[c] > 0,
            Protocol,
            "class {c} is absent from the test set"
        );
    }
    ensure!(
        generated_labels.iter().all(|&y| y < real.k),
        Contract,
        "generated label out of range 0..{}",
        real.k
    );
    let proj = features.projection(real.dim())?;
    let real_feats = features.apply_with(&proj, &real.samples)?;
    let gen_feats = if generated.rows() == 0 {
        Tensor::zeros(&[0, real_feats.cols()])
    } else {
        features.apply_with(&proj, generated)?
    };

    let class_idx = real.class_indices();
    let mut classes = Vec::with_capacity(real.k);
    for (c, real_idx) in class_idx.iter().enumerate() {
        let gen_idx: Vec<usize> = (0..generated_labels.len())
            .filter(|&i| generated_labels[i] == c)
            .collect();
        let r = real_feats.select_rows(real_idx);
        let g = gen_feats.select_rows(&gen_idx);
        let collapsed = gen_idx.is_empty();
        let (precision, recall) = knn_precision_recall_capped(&r, &g, k);
        let frechet = if collapsed {
            f64::INFINITY
        } else {
            frechet_from_samples(&r, &g)?
        };
        classes.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1: f1_score(precision, recall),
            frechet,
            real_count: real_idx.len(),
            generated_count: gen_idx.len(),
            collapsed,
        });
    }
    let kf = real.k as f64;
    let pooled_frechet = if gen_feats.rows() == 0 {
        f64::INFINITY
    } else {
        frechet_from_samples(&real_feats, &gen_feats)?
    };
    Ok(ClassReport {
        macro_precision: classes.iter().map(|c| c.precision).sum::<f64>() / kf,
        macro_recall: classes.iter().map(|c| c.recall).sum::<f64>() / kf,
        macro_f1: classes.iter().map(|c| c.f1).sum::<f64>() / kf,
        pooled_frechet,
        classes,
    })
}

impl ClassReport {
    pub fn collapsed_classes(&self) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| c.collapsed)
            .map(|c| c.class)
            .collect()
    }

    /// One row per class and a final `macro` row carrying the pooled Fréchet distance.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "class",
            "precision",
            "recall",
            "f1",
            "frechet",
            "real_count",
            "generated_count",
            "collapsed",
        ])?;
        for c in &self.classes {
            out.write_record([
                c.class.to_string(),
                format!("{:.6}", c.precision),
                format!("{:.6}", c.recall),
                format!("{:.6}", c.f1),
                format!("{:.6}", c.frechet),
                c.real_count.to_string(),
                c.generated_count.to_string(),
                c.collapsed.to_string(),
            ])?;
        }
        let real: usize = self.classes.iter().map(|c| c.real_count).sum();
        let gen: usize = self.classes.iter().map(|c| c.generated_count).sum();
        out.write_record([
            "macro".to_string(),
            format!("{:.6}", self.macro_precision),
            format!("{:.6}", self.macro_recall),
            format!("{:.6}", self.macro_f1),
            format!("{:.6}", self.pooled_frechet),
            real.to_string(),
            gen.to_string(),
            (!self.collapsed_classes().is_empty()).to_string(),
        ])?;
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        let collapsed: Vec<String> = self
            .collapsed_classes()
            .iter()
            .map(usize::to_string)
            .collect();
        format!(
            "macro_precision={:.6} macro_recall={:.6} macro_f1={:.6} pooled_frechet={:.6} collapsed=[{}]",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.pooled_frechet,
            collapsed.join(",")
        )
    }
}
