use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

fn check_symmetric(c: &DMatrix<f64>, name: &str) -> Result<()> {
    ensure!(c.is_square(), Dimension, "{name} is not square");
    let n = c.nrows();
    for i in 0..n {
        for j in i + 1..n {
            ensure!(
                (c[(i, j)] - c[(j, i)]).abs() <= 1e-10,
                Contract,
                "{name} is not symmetric at ({i}, {j}): {} vs {}",
                c[(i, j)],
                c[(j, i)]
            );
        }
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric PSD matrix; eigenvalues in (−1e−8, 0)
/// are clamped to zero, anything lower is rejected.
fn psd_eigen(c: &DMatrix<f64>, name: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut e = SymmetricEigen::new(c.clone());
    for v in e.eigenvalues.iter_mut() {
        ensure!(*v >= -1e-8, Domain, "{name} has eigenvalue {v} < 0");
        *v = v.max(0.0);
    }
    Ok(e)
}

fn sqrt_psd(c: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let e = psd_eigen(c, name)?;
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Ok(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// ‖μ₁−μ₂‖² + tr(C₁ + C₂ − 2(C₁C₂)^{1/2}), with tr((C₁C₂)^{1/2}) taken from
/// the eigenvalues of C₂^{1/2} C₁ C₂^{1/2}.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    ensure!(
        mu2.len() == d && cov1.shape() == (d, d) && cov2.shape() == (d, d),
        Dimension,
        "moment shapes differ"
    );
    check_symmetric(cov1, "first covariance")?;
    check_symmetric(cov2, "second covariance")?;
    psd_eigen(cov1, "first covariance")?;
    let s2 = sqrt_psd(cov2, "second covariance")?;
    let mut inner = &s2 * cov1 * &s2;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = psd_eigen(&inner, "C₂^{1/2}C₁C₂^{1/2}")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    let value = (mu1 - mu2).norm_squared() + cov1.trace() + cov2.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Sample mean and unbiased covariance (zero for a single row).
pub fn mean_and_covariance(x: &Tensor) -> Result<(DVector<f64>, DMatrix<f64>)> {
    ensure!(
        x.shape().len() == 2 && x.rows() >= 1,
        Dimension,
        "need a non-empty N x d matrix"
    );
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = DVector::from_fn(d, |j, _| m.column(j).mean());
    if n == 1 {
        return Ok((mean, DMatrix::zeros(d, d)));
    }
    let centred = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let mut cov = centred.transpose() * &centred / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

pub fn frechet_from_samples(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (m1, c1) = mean_and_covariance(a)?;
    let (m2, c2) = mean_and_covariance(b)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_values() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z = DVector::zeros(2);
        assert!(frechet_distance(&z, &i2, &z, &i2).unwrap().abs() < 1e-12);
        let shifted = DVector::from_vec(vec![1.0, 0.0]);
        assert!((frechet_distance(&z, &i2, &shifted, &i2).unwrap() - 1.0).abs() < 1e-12);
        let four = &i2 * 4.0;
        assert!((frechet_distance(&z, &four, &z, &i2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_and_indefinite_rejected() {
        let z = DVector::zeros(2);
        let i2 = DMatrix::<f64>::identity(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            frechet_distance(&z, &bad, &z, &i2),
            Err(Error::Contract(_))
        ));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            frechet_distance(&z, &neg, &z, &i2),
            Err(Error::Domain(_))
        ));
    }

    fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d + 1, |_, _| rng.random_range(-1.0..1.0));
        let c = &a * a.transpose();
        (&c + c.transpose()) * 0.5
    }

    #[test]
    fn symmetric_and_zero_iff_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 1..6 {
            let (c1, c2) = (random_psd(d, &mut rng), random_psd(d, &mut rng));
            let m1 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let m2 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let ab = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
            let ba = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
            assert!((ab - ba).abs() < 1e-8, "{ab} {ba}");
            assert!(ab > 1e-6);
            assert!(frechet_distance(&m1, &c1, &m1, &c1).unwrap() < 1e-8);
        }
    }

    #[test]
    fn sample_moments() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        let (m, c) = mean_and_covariance(&x).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 3.0]);
        assert_eq!(c[(0, 0)], 4.0);
        assert_eq!(c[(0, 1)], 4.0);
        assert!(frechet_from_samples(&x, &x).unwrap() < 1e-10);
    }
}
