//! Labeled datasets, long-tail subsampling, synthetic clusters and the
//! binary tensor format.

mod manifest;
mod tensorfile;

pub use manifest::DatasetManifest;
pub use tensorfile::{
    read_labels, read_tensor, write_labels, write_tensor, TensorData, TensorFile,
};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::special::{sample_chi_squared, sample_standard_normal};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub k: usize,
    /// max/min class count (∞ if a class is empty).
    pub rho: f64,
    pub class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, k: usize) -> Result<Self> {
        ensure!(
            samples.shape().len() == 2,
            Dimension,
            "samples must be an N x n matrix"
        );
        ensure!(
            samples.rows() == labels.len(),
            Dimension,
            "{} samples but {} labels",
            samples.rows(),
            labels.len()
        );
        ensure!(k >= 1, Contract, "need at least one class");
        let mut class_counts = vec![0usize; k];
        for &y in &labels {
            ensure!(y < k, Contract, "label {y} outside 0..{k}");
            class_counts[y] += 1;
        }
        let max = *class_counts.iter().max().unwrap_or(&0);
        let min = *class_counts.iter().min().unwrap_or(&0);
        let rho = if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        };
        Ok(Self {
            samples,
            labels,
            k,
            rho,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.samples.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.k,
        )
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Rows of class `y`.
    pub fn class_samples(&self, y: usize) -> Tensor {
        self.samples.select_rows(&self.class_indices()[y])
    }

    /// Per-class subsample of `counts[y]` indices without replacement; the
    /// result keeps dataset order.
    pub fn subsample(&self, counts: &[usize], seed: u64) -> Result<Self> {
        ensure!(
            counts.len() == self.k,
            Dimension,
            "{} counts for {} classes",
            counts.len(),
            self.k
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        for (y, idx) in self.class_indices().into_iter().enumerate() {
            ensure!(
                counts[y] <= idx.len(),
                Contract,
                "class {y}: requested {} samples, only {} available",
                counts[y],
                idx.len()
            );
            keep.extend(
                sample_indices(&mut rng, idx.len(), counts[y])
                    .into_iter()
                    .map(|j| idx[j]),
            );
        }
        keep.sort_unstable();
        self.subset(&keep)
    }

    /// Uniform per-class downsample to the smallest class count.
    pub fn balanced(&self, seed: u64) -> Result<Self> {
        let min = *self.class_counts.iter().min().expect("k >= 1");
        ensure!(
            min > 0,
            Contract,
            "cannot balance: some class is empty ({:?})",
            self.class_counts
        );
        self.subsample(&vec![min; self.k], seed)
    }
}

/// floor(M·ρ^{−(y−1)/(K−1)}), at least 1, for y = 1..K.
pub fn exponential_decay_counts(m: usize, rho: f64, k: usize) -> Result<Vec<usize>> {
    ensure!(
        rho.is_finite() && rho >= 1.0,
        Domain,
        "imbalance ratio must be ≥ 1, got {rho}"
    );
    ensure!(m >= 1 && k >= 1, Contract, "need M ≥ 1 and K ≥ 1");
    if k == 1 {
        ensure!(rho == 1.0, Contract, "a single class admits only ρ = 1");
        return Ok(vec![m]);
    }
    Ok((0..k)
        .map(|y| {
            let v = m as f64 * rho.powf(-(y as f64) / (k - 1) as f64);
            // absorb representation error of exact integers such as 500·100⁻¹
            ((v * (1.0 + 1e-12)).floor() as usize).max(1)
        })
        .collect())
}

/// Long-tail subsample of a balanced dataset.
pub fn make_longtail(balanced: &LabeledDataset, rho: f64, seed: u64) -> Result<LabeledDataset> {
    let m = balanced.class_counts[0];
    ensure!(
        balanced.class_counts.iter().all(|&c| c == m),
        Contract,
        "input must be balanced, got counts {:?}",
        balanced.class_counts
    );
    let counts = exponential_decay_counts(m, rho, balanced.k)?;
    balanced.subsample(&counts, seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClusterFamily {
    Gaussian,
    StudentT { dof: f64 },
}

impl std::str::FromStr for ClusterFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ClusterFamily::Gaussian),
            "student_t" => Ok(ClusterFamily::StudentT { dof: 3.0 }),
            _ => Err(Error::Config(format!(
                "unknown cluster family '{s}' (gaussian|student_t)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub k: usize,
    pub n: usize,
    pub per_class: usize,
    pub family: ClusterFamily,
    pub separation: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub dataset: LabeledDataset,
    /// Draws before the affine map and clamp.
    pub raw: Tensor,
    pub means: Vec<Vec<f64>>,
}

/// Pairwise-equidistant means (`separation` apart) on a scaled simplex for
/// K ≤ n, otherwise evenly spaced on a circle in the first two coordinates
/// with adjacent chord `separation`.
pub fn cluster_means(k: usize, n: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; n]; k];
    if k <= n {
        let r = separation / std::f64::consts::SQRT_2;
        for (y, mu) in means.iter_mut().enumerate() {
            mu[y] = r;
        }
    } else {
        let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
        for (y, mu) in means.iter_mut().enumerate() {
            let a = 2.0 * std::f64::consts::PI * y as f64 / k as f64;
            mu[0] = radius * a.cos();
            mu[1] = radius * a.sin();
        }
    }
    means
}

/// K unit-scale clusters mapped into [0, 1] by u = clamp(½ + x/(2H)) with
/// H = max |mean coordinate| + 4.
pub fn synth_classes(spec: &SynthSpec) -> Result<SynthOutput> {
    ensure!(spec.n >= 2, Contract, "synthetic data needs n ≥ 2");
    ensure!(
        spec.per_class >= 10,
        Contract,
        "synthetic data needs at least 10 samples per class"
    );
    ensure!(spec.k >= 1, Contract, "need at least one class");
    ensure!(
        spec.separation >= 0.0 && spec.separation.is_finite(),
        Domain,
        "separation must be ≥ 0"
    );
    if let ClusterFamily::StudentT { dof } = spec.family {
        ensure!(
            dof > 0.0 && dof.is_finite(),
            Domain,
            "cluster dof must be positive, got {dof}"
        );
    }
    let means = cluster_means(spec.k, spec.n, spec.separation);
    let half = means.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())) + 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.k * spec.per_class;
    let mut raw = Vec::with_capacity(total * spec.n);
    let mut labels = Vec::with_capacity(total);
    for (y, mu) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            let w = match spec.family {
                ClusterFamily::Gaussian => 1.0,
                ClusterFamily::StudentT { dof } => (dof / sample_chi_squared(dof, &mut rng)).sqrt(),
            };
            raw.extend(mu.iter().map(|m| m + w * sample_standard_normal(&mut rng)));
            labels.push(y);
        }
    }
    let squashed = raw
        .iter()
        .map(|x| (0.5 + x / (2.0 * half)).clamp(0.0, 1.0))
        .collect();
    Ok(SynthOutput {
        dataset: LabeledDataset::new(Tensor::matrix(total, spec.n, squashed)?, labels, spec.k)?,
        raw: Tensor::matrix(total, spec.n, raw)?,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(k: usize, per: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..k * per).map(|i| i / per).collect();
        let x = Tensor::matrix(k * per, 1, (0..k * per).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(x, labels, k).unwrap()
    }

    #[test]
    fn decay_reference_values() {
        let c = exponential_decay_counts(4656, 100.0, 10).unwrap();
        assert_eq!((c[0], c[9]), (4656, 46));
        assert_eq!(exponential_decay_counts(7, 1.0, 4).unwrap(), vec![7; 4]);
        assert_eq!(
            exponential_decay_counts(100, 4.0, 2).unwrap(),
            vec![100, 25]
        );
        assert_eq!(exponential_decay_counts(500, 100.0, 10).unwrap()[9], 5);
        assert!(matches!(
            exponential_decay_counts(10, 0.5, 3),
            Err(Error::Domain(_))
        ));
        assert_eq!(exponential_decay_counts(3, 1e6, 3).unwrap(), vec![3, 1, 1]);
    }

    proptest! {
        #[test]
        fn decay_is_monotone_with_ratio_close_to_rho(m in 10usize..5000, rho in 1.0f64..50.0, k in 2usize..20) {
            prop_assume!(m as f64 / rho >= 2.0);
            let c = exponential_decay_counts(m, rho, k).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
            let last = c[k - 1] as f64;
            // floor moves the last count by < 1, so ρ̂ = M/last lies in [ρ, M/(M/ρ − 1)).
            prop_assert!(c[0] as f64 / last >= rho * (1.0 - 1e-9));
            prop_assert!(c[0] as f64 / last < m as f64 / (m as f64 / rho - 1.0));
        }
    }

    #[test]
    fn longtail_counts_and_determinism() {
        let d = toy(10, 500);
        let lt = make_longtail(&d, 100.0, 3).unwrap();
        assert_eq!(
            lt.class_counts,
            exponential_decay_counts(500, 100.0, 10).unwrap()
        );
        assert_eq!(lt.class_counts[9], 5);
        assert_eq!(lt, make_longtail(&d, 100.0, 3).unwrap());
        let mut vals: Vec<i64> = lt.samples.data().iter().map(|v| *v as i64).collect();
        vals.dedup();
        assert_eq!(vals.len(), lt.len());
        assert_eq!(make_longtail(&d, 1.0, 9).unwrap(), d);
        let unbalanced = d.subset(&(0..4999).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            make_longtail(&unbalanced, 2.0, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn balancing() {
        let d = toy(2, 100);
        let uneven = d.subset(&(0..120).collect::<Vec<_>>()).unwrap();
        assert_eq!(uneven.class_counts, vec![100, 20]);
        let b = uneven.balanced(4).unwrap();
        assert_eq!(b.class_counts, vec![20, 20]);
        assert_eq!(b, uneven.balanced(4).unwrap());
        assert_eq!(d.balanced(1).unwrap(), d);
        let empty_class = LabeledDataset::new(Tensor::zeros(&[2, 1]), vec![0, 0], 2).unwrap();
        assert!(matches!(empty_class.balanced(0), Err(Error::Contract(_))));
    }

    #[test]
    fn means_respect_separation() {
        for (k, n) in [(3, 5), (5, 16), (7, 2), (10, 3)] {
            let mu = cluster_means(k, n, 2.5);
            for i in 0..k {
                for j in i + 1..k {
                    let d: f64 = mu[i]
                        .iter()
                        .zip(&mu[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= 2.5 * (1.0 - 1e-9), "k={k} n={n}: {d}");
                }
            }
        }
    }

    #[test]
    fn zero_separation_gives_identical_classes() {
        let out = synth_classes(&SynthSpec {
            k: 2,
            n: 3,
            per_class: 20_000,
            family: ClusterFamily::Gaussian,
            separation: 0.0,
            seed: 1,
        })
        .unwrap();
        let d = &out.dataset;
        for col in 0..3 {
            let stats = |y: usize| {
                let v: Vec<f64> = (0..d.len())
                    .filter(|&i| d.labels[i] == y)
                    .map(|i| d.samples.get(i, col))
                    .collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                (m, var / v.len() as f64)
            };
            let ((m0, s0), (m1, s1)) = (stats(0), stats(1));
            assert!((m0 - m1).abs() < 3.0 * (s0 + s1).sqrt());
        }
        assert!(d.samples.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn student_t_clusters_have_heavier_tails() {
        let kurtosis = |family| {
            let out = synth_classes(&SynthSpec {
                k: 1,
                n: 2,
                per_class: 100_000,
                family,
                separation: 0.0,
                seed: 8,
            })
            .unwrap();
            let v: Vec<f64> = out.raw.data().iter().step_by(2).copied().collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / v.len() as f64;
            m4 / (m2 * m2) - 3.0
        };
        let g = kurtosis(ClusterFamily::Gaussian);
        let t = kurtosis(ClusterFamily::StudentT { dof: 3.0 });
        assert!(t > g + 1.0, "gaussian {g}, t {t}");
    }
}
