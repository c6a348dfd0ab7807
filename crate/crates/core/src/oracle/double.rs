//! Monte Carlo and closed forms for the three double integrals of the
//! conditional objective, on a linear encoder/decoder fixture with p_data
//! uniform on [0, 1]ⁿ.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mc::{mean_and_error, Estimate, MIN_SAMPLES};
use crate::error::{ensure, Error, Result};
use crate::models::{ClassPriors, ModelConfig};
use crate::special::gauss_legendre;
use crate::student_t::{log_norm_const, TDistParams};

/// μ_θ(z) = Wz + c, μ_φ(x) = Ax + b, log Σ_φ(x)_j = l_j + (Gx)_j, Σ_y = s·I.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFixture {
    pub w: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub log_var_offset: DVector<f64>,
    pub log_var_slope: DMatrix<f64>,
    pub sigma_y2: f64,
}

impl LinearFixture {
    /// Small deterministic coefficients for given (n, m).
    pub fn standard(n: usize, m: usize) -> Self {
        let f = |i: usize, j: usize, s: f64| s * (((i * 7 + j * 3) % 5) as f64 - 2.0) / 4.0;
        Self {
            w: DMatrix::from_fn(n, m, |i, j| f(i, j, 0.8)),
            c: DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64),
            a: DMatrix::from_fn(m, n, |i, j| f(j, i, 1.2) + 0.3),
            b: DVector::from_fn(m, |i, _| -0.2 + 0.15 * i as f64),
            log_var_offset: DVector::from_fn(m, |i, _| -0.5 + 0.2 * i as f64),
            log_var_slope: DMatrix::from_fn(m, n, |i, j| f(i + 1, j, 0.6)),
            sigma_y2: 1.0,
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        let (n, m) = (config.n, config.m);
        ensure!(
            n <= 2 && m <= 2 && n >= 1 && m >= 1,
            Contract,
            "double-integral oracle needs 1 ≤ n, m ≤ 2"
        );
        ensure!(
            self.w.shape() == (n, m)
                && self.c.len() == n
                && self.a.shape() == (m, n)
                && self.b.len() == m
                && self.log_var_offset.len() == m
                && self.log_var_slope.shape() == (m, n),
            Dimension,
            "fixture shapes do not match n = {n}, m = {m}"
        );
        ensure!(self.sigma_y2 > 0.0, Domain, "Σ_y scale must be positive");
        ensure!(
            config.nu > 4.0,
            Domain,
            "finite-variance estimates need ν > 4, got {}",
            config.nu
        );
        Ok(())
    }

    fn mu_phi(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    fn var_phi(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.log_var_offset + &self.log_var_slope * x).map(f64::exp)
    }

    fn posterior(&self, config: &ModelConfig, x: &DVector<f64>) -> Result<TDistParams> {
        let shrink = 1.0 + config.n as f64 / config.nu;
        TDistParams::diagonal(
            self.mu_phi(x).iter().copied().collect(),
            self.var_phi(x).iter().map(|v| v / shrink).collect(),
            config.nu + config.n as f64,
        )
    }
}

struct Joint<'a> {
    config: &'a ModelConfig,
    fixture: &'a LinearFixture,
    mu_y: DVector<f64>,
}

impl Joint<'_> {
    fn log_det(&self) -> f64 {
        let c = self.config;
        c.n as f64 * (c.sigma * c.sigma).ln() + c.m as f64 * self.fixture.sigma_y2.ln()
    }

    fn log_density(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        let c = self.config;
        let qz = (z - &self.mu_y).norm_squared() / self.fixture.sigma_y2;
        let qx = (x - (&self.fixture.w * z + &self.fixture.c)).norm_squared() / (c.sigma * c.sigma);
        Ok(log_norm_const(c.nu, c.n + c.m)?.value
            - 0.5 * self.log_det()
            - 0.5 * (c.nu + (c.n + c.m) as f64) * ((qz + qx) / c.nu).ln_1p())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<(DVector<f64>, DVector<f64>)> {
        let c = self.config;
        let prior = TDistParams::isotropic(
            self.mu_y.iter().copied().collect(),
            self.fixture.sigma_y2,
            c.nu,
        )?;
        let mut z = vec![0.0; c.m];
        prior.sample_one(rng, &mut z);
        let z = DVector::from_vec(z);
        let qz = (&z - &self.mu_y).norm_squared() / self.fixture.sigma_y2;
        let factor = (1.0 + qz / c.nu) / (1.0 + c.m as f64 / c.nu);
        let mean = &self.fixture.w * &z + &self.fixture.c;
        let dec = TDistParams::isotropic(
            mean.iter().copied().collect(),
            factor * c.sigma * c.sigma,
            c.nu + c.m as f64,
        )?;
        let mut x = vec![0.0; c.n];
        dec.sample_one(rng, &mut x);
        Ok((DVector::from_vec(x), z))
    }
}

fn uniform_x(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleIntegrals<T> {
    /// ∬ p^{1+γ}
    pub p_power: T,
    /// ∬ q·p^γ
    pub cross: T,
    /// ∬ q^{1+γ}
    pub q_power: T,
}

/// Which law the cross-term expectation is taken under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossSource {
    /// p_data(x)·q_φ(z|x)
    Posterior,
    /// the joint prior itself (coincidence check q = p)
    Joint,
}

fn finite(v: f64, what: &str, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!(
            "non-finite {what} integrand {v} at x = {:?}, z = {:?}",
            x.as_slice(),
            z.as_slice()
        )))
    }
}

fn joint<'a>(
    config: &'a ModelConfig,
    priors: &ClassPriors,
    label: usize,
    fixture: &'a LinearFixture,
) -> Result<Joint<'a>> {
    fixture.check(config)?;
    ensure!(
        priors.m() == config.m,
        Dimension,
        "class priors have m = {}, config m = {}",
        priors.m(),
        config.m
    );
    Ok(Joint {
        config,
        fixture,
        mu_y: DVector::from_column_slice(priors.mean(label)?),
    })
}

/// ∬ q·p^γ estimated under `source`.
pub fn mc_cross_term(
    config: &ModelConfig,
    priors: &ClassPriors,
    label: usize,
    fixture: &LinearFixture,
    source: CrossSource,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let p = joint(config, priors, label, fixture)?;
    ensure!(
        n_samples >= MIN_SAMPLES,
        Contract,
        "need at least {MIN_SAMPLES} samples, got {n_samples}"
    );
    let g = config.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    let mut zbuf = vec![0.0; config.m];
    for _ in 0..n_samples {
        let (x, z) = match source {
            CrossSource::Joint => p.sample(&mut rng)?,
            CrossSource::Posterior => {
                let x = uniform_x(config.n, &mut rng);
                fixture
                    .posterior(config, &x)?
                    .sample_one(&mut rng, &mut zbuf);
                (x, DVector::from_column_slice(&zbuf))
            }
        };
        let v = finite((g * p.log_density(&x, &z)?).exp(), "cross", &x, &z)?;
        s += v;
        s2 += v * v;
    }
    Ok(mean_and_error(s, s2, n_samples))
}

/// MC estimates of the three double integrals, one independent stream each.
pub fn mc_double_integrals(
    config: &ModelConfig,
    priors: &ClassPriors,
    label: usize,
    fixture: &LinearFixture,
    n_samples: usize,
    seed: u64,
) -> Result<DoubleIntegrals<Estimate>> {
    let p = joint(config, priors, label, fixture)?;
    ensure!(
        n_samples >= MIN_SAMPLES,
        Contract,
        "need at least {MIN_SAMPLES} samples, got {n_samples}"
    );
    let g = config.gamma();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let (x, z) = p.sample(&mut rng)?;
        let v = finite((g * p.log_density(&x, &z)?).exp(), "p-power", &x, &z)?;
        s += v;
        s2 += v * v;
    }
    let p_power = mean_and_error(s, s2, n_samples);

    let cross = mc_cross_term(
        config,
        priors,
        label,
        fixture,
        CrossSource::Posterior,
        n_samples,
        seed ^ 0x5851_f42d_4c95_7f2d,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1405_7b7e_f767_814f);
    let (mut s, mut s2) = (0.0, 0.0);
    let mut zbuf = vec![0.0; config.m];
    for _ in 0..n_samples {
        let x = uniform_x(config.n, &mut rng);
        let q = fixture.posterior(config, &x)?;
        q.sample_one(&mut rng, &mut zbuf);
        let z = DVector::from_column_slice(&zbuf);
        // p_data^γ = 1 on the cube
        let v = finite((g * q.log_density(&zbuf)?).exp(), "q-power", &x, &z)?;
        s += v;
        s2 += v * v;
    }
    let q_power = mean_and_error(s, s2, n_samples);
    Ok(DoubleIntegrals {
        p_power,
        cross,
        q_power,
    })
}

/// Tensor-product Gauss–Legendre integral over [0, 1]ⁿ.
fn cube_integral(n: usize, order: usize, f: &dyn Fn(&DVector<f64>) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let x = DVector::from_fn(n, |i, _| 0.5 * (nodes[idx[i]] + 1.0));
        let w: f64 = idx.iter().map(|&k| 0.5 * weights[k]).product();
        total += w * f(&x);
        let mut d = 0;
        loop {
            if d == n {
                return total;
            }
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Closed forms; the remaining x-integrals over the cube use 24-point
/// Gauss–Legendre per axis.
pub fn closed_double_integrals(
    config: &ModelConfig,
    priors: &ClassPriors,
    label: usize,
    fixture: &LinearFixture,
) -> Result<DoubleIntegrals<f64>> {
    let p = joint(config, priors, label, fixture)?;
    let (n, m, nu) = (config.n as f64, config.m as f64, config.nu);
    let g = config.gamma();
    let s2 = config.sigma * config.sigma;
    let sy = fixture.sigma_y2;
    let pref = (g * log_norm_const(nu, config.n + config.m)?.value - 0.5 * g * p.log_det()).exp();

    let p_power = pref * (1.0 + (m + n) / (nu - 2.0));

    let wtw = fixture.w.transpose() * &fixture.w;
    let cov_factor = nu / (nu + n - 2.0);
    let cross_inner = |x: &DVector<f64>| {
        let mu = fixture.mu_phi(x);
        let var = fixture.var_phi(x);
        let tr_y = var.sum() / sy;
        let maha = (&mu - &p.mu_y).norm_squared() / sy;
        let resid = (x - (&fixture.w * &mu + &fixture.c)).norm_squared();
        let spread: f64 = (0..config.m).map(|j| wtw[(j, j)] * var[j]).sum::<f64>() * cov_factor;
        1.0 + tr_y / (nu + n - 2.0) + maha / nu + (resid + spread) / (s2 * nu)
    };
    let cross = pref * cube_integral(config.n, 24, &cross_inner);

    let q_pref = (g * log_norm_const(nu + n, config.m)?.value).exp()
        * (1.0 + n / nu).powf(g * m / 2.0)
        * (1.0 + m / (nu + n - 2.0));
    let det_term = |x: &DVector<f64>| (-0.5 * g * fixture.var_phi(x).map(f64::ln).sum()).exp();
    let q_power = q_pref * cube_integral(config.n, 24, &det_term);
    Ok(DoubleIntegrals {
        p_power,
        cross,
        q_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;
    use crate::tensor::Tensor;

    fn setup(n: usize, m: usize, nu: f64) -> (ModelConfig, ClassPriors, LinearFixture) {
        let cfg = ModelConfig::new(n, m, 2, nu, 0.7, 1.0, Family::Ct3vae).unwrap();
        let priors = ClassPriors::new(
            Tensor::matrix(2, m, (0..2 * m).map(|i| 0.3 * i as f64 - 0.2).collect()).unwrap(),
        )
        .unwrap();
        (cfg, priors, LinearFixture::standard(n, m))
    }

    #[test]
    fn cube_quadrature_is_exact_for_polynomials() {
        let v = cube_integral(2, 6, &|x| x[0] * x[0] * x[1]);
        assert!((v - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn estimates_match_closed_forms() {
        for (n, m, nu) in [(1, 1, 6.0), (2, 1, 10.0), (2, 2, 8.0)] {
            let (cfg, priors, fx) = setup(n, m, nu);
            let mc = mc_double_integrals(&cfg, &priors, 1, &fx, 200_000, 11).unwrap();
            let cf = closed_double_integrals(&cfg, &priors, 1, &fx).unwrap();
            assert!(
                mc.p_power.z_score(cf.p_power) < 3.0,
                "p n={n} m={m}: {:?} vs {}",
                mc.p_power,
                cf.p_power
            );
            assert!(
                mc.cross.z_score(cf.cross) < 3.0,
                "cross n={n} m={m}: {:?} vs {}",
                mc.cross,
                cf.cross
            );
            assert!(
                mc.q_power.z_score(cf.q_power) < 3.0,
                "q n={n} m={m}: {:?} vs {}",
                mc.q_power,
                cf.q_power
            );
        }
    }

    #[test]
    fn cross_under_joint_equals_p_power() {
        let (cfg, priors, fx) = setup(1, 1, 6.0);
        let est = mc_cross_term(&cfg, &priors, 0, &fx, CrossSource::Joint, 200_000, 5).unwrap();
        let cf = closed_double_integrals(&cfg, &priors, 0, &fx).unwrap();
        assert!(est.z_score(cf.p_power) < 3.0);
    }

    #[test]
    fn sigma_y_exponent_by_ratio() {
        let (cfg, priors, fx) = setup(1, 1, 6.0);
        let wide = LinearFixture {
            sigma_y2: 3.0,
            ..fx.clone()
        };
        let a = mc_double_integrals(&cfg, &priors, 0, &fx, 200_000, 2)
            .unwrap()
            .p_power;
        let b = mc_double_integrals(&cfg, &priors, 0, &wide, 200_000, 3)
            .unwrap()
            .p_power;
        let ratio = b.value / a.value;
        let se = ratio * ((a.std_error / a.value).powi(2) + (b.std_error / b.value).powi(2)).sqrt();
        let expected = 3f64.powf(-cfg.gamma() / 2.0);
        let closed = closed_double_integrals(&cfg, &priors, 0, &wide)
            .unwrap()
            .p_power
            / closed_double_integrals(&cfg, &priors, 0, &fx)
                .unwrap()
                .p_power;
        assert!((closed - expected).abs() < 1e-12);
        assert!(
            (ratio - expected).abs() < 3.0 * se,
            "{ratio} ± {se} vs {expected}"
        );
    }

    #[test]
    fn preconditions() {
        let (cfg, priors, fx) = setup(1, 1, 6.0);
        assert!(matches!(
            mc_double_integrals(&cfg, &priors, 0, &fx, 10, 0),
            Err(Error::Contract(_))
        ));
        let (big, p3, _) = setup(3, 1, 6.0);
        assert!(
            mc_double_integrals(&big, &p3, 0, &LinearFixture::standard(3, 1), 10_000, 0).is_err()
        );
    }
}
