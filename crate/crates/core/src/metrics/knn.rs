use crate::error::{ensure, Result};
use crate::tensor::Tensor;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distinct points of `x` with their squared k-NN radius among the other
/// distinct points; k is capped at (distinct − 1).
fn manifold(x: &Tensor, k: usize) -> (Vec<&[f64]>, Vec<f64>) {
    let mut points: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).collect();
    points.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    points.dedup();
    let k_eff = k.min(points.len().saturating_sub(1));
    let radii = (0..points.len())
        .map(|i| {
            if k_eff == 0 {
                return 0.0;
            }
            let mut d: Vec<f64> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| sq_dist(points[i], points[j]))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k_eff - 1, f64::total_cmp);
            *kth
        })
        .collect();
    (points, radii)
}

fn coverage(manifold: &(Vec<&[f64]>, Vec<f64>), queries: &Tensor) -> f64 {
    let (points, radii) = manifold;
    let hit = (0..queries.rows())
        .filter(|&i| {
            let q = queries.row(i);
            points.iter().zip(radii).any(|(p, r)| sq_dist(p, q) <= *r)
        })
        .count();
    hit as f64 / queries.rows() as f64
}

/// Precision: fraction of generated points inside the real k-NN manifold.
/// Recall: fraction of real points inside the generated manifold.
pub fn knn_precision_recall(real: &Tensor, generated: &Tensor, k: usize) -> Result<(f64, f64)> {
    ensure!(k >= 1, Contract, "k must be at least 1");
    ensure!(
        real.shape().len() == 2 && generated.shape().len() == 2 && real.cols() == generated.cols(),
        Dimension,
        "feature sets must be matrices with equal width"
    );
    ensure!(
        k < real.rows() && k < generated.rows(),
        Contract,
        "k = {k} needs more than k points in each set (real {}, generated {})",
        real.rows(),
        generated.rows()
    );
    let precision = coverage(&manifold(real, k), generated);
    let recall = coverage(&manifold(generated, k), real);
    Ok((precision, recall))
}

/// As above but with k capped per set; empty sets give zero.
pub(crate) fn knn_precision_recall_capped(
    real: &Tensor,
    generated: &Tensor,
    k: usize,
) -> (f64, f64) {
    if real.rows() == 0 || generated.rows() == 0 {
        return (0.0, 0.0);
    }
    let precision = coverage(&manifold(real, k), generated);
    let recall = coverage(&manifold(generated, k), real);
    (precision, recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::sample_standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(
            n,
            d,
            (0..n * d)
                .map(|_| shift + sample_standard_normal(&mut rng))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_sets() {
        let x = cloud(200, 3, 0.0, 1);
        assert_eq!(knn_precision_recall(&x, &x, 3).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn disjoint_sets() {
        let x = cloud(200, 3, 0.0, 1);
        let y = cloud(200, 3, 100.0, 2);
        assert_eq!(knn_precision_recall(&x, &y, 3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn single_mode_of_two() {
        let a = cloud(300, 2, 0.0, 3);
        let b = cloud(300, 2, 20.0, 4);
        let real = Tensor::matrix(600, 2, [a.data(), b.data()].concat()).unwrap();
        let gen = cloud(300, 2, 0.0, 5);
        let (p, r) = knn_precision_recall(&real, &gen, 3).unwrap();
        assert!(p > 0.9, "{p}");
        assert!((r - 0.5).abs() < 0.1, "{r}");
    }

    #[test]
    fn duplicates_never_decrease_scores() {
        let real = cloud(60, 2, 0.0, 6);
        let gen = cloud(60, 2, 0.5, 7);
        let (p0, r0) = knn_precision_recall(&real, &gen, 3).unwrap();
        let real_man = manifold(&real, 3);
        let covered = (0..gen.rows())
            .find(|&i| coverage(&real_man, &gen.select_rows(&[i])) == 1.0)
            .unwrap();
        let gen2 = Tensor::matrix(61, 2, [gen.data(), gen.row(covered)].concat()).unwrap();
        let (p1, r1) = knn_precision_recall(&real, &gen2, 3).unwrap();
        assert!(p1 >= p0 && r1 >= r0);
        let gen_man = manifold(&gen, 3);
        let covered = (0..real.rows())
            .find(|&i| coverage(&gen_man, &real.select_rows(&[i])) == 1.0)
            .unwrap();
        let real2 = Tensor::matrix(61, 2, [real.data(), real.row(covered)].concat()).unwrap();
        let (p2, r2) = knn_precision_recall(&real2, &gen, 3).unwrap();
        assert!(p2 >= p0 && r2 >= r0);
    }

    #[test]
    fn k_must_be_smaller_than_sets() {
        let x = cloud(3, 2, 0.0, 1);
        assert!(knn_precision_recall(&x, &x, 3).is_err());
        assert!(knn_precision_recall(&x, &x, 0).is_err());
        assert!(knn_precision_recall(&x, &x, 2).is_ok());
    }
}
