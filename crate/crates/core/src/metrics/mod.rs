//! Fréchet distance, k-NN manifold precision/recall and the per-class
//! report against a balanced test set.

mod frechet;
mod knn;
mod report;

pub use frechet::{frechet_distance, frechet_from_samples, mean_and_covariance};
pub use knn::knn_precision_recall;
pub use report::{per_class_report, ClassMetrics, ClassReport, FeatureSpace};

pub use crate::data::LabeledDataset;

/// Uniform per-class downsample to the smallest class count.
pub fn balance_test_set(dataset: &LabeledDataset, seed: u64) -> crate::Result<LabeledDataset> {
    dataset.balanced(seed)
}
