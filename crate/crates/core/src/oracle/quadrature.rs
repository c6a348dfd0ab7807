//! Trapezoid marginalization of the joint p(x, z | y) over x for n = m = 1.

use crate::error::{ensure, Error, Result};
use crate::models::{
    conditional_latent_prior, decoder_distribution, joint_log_density, ClassPriors, ModelConfig,
};

/// Grids are expressed in scale units: z around μ_y in units of 1, x around
/// μ_θ(z) in units of the conditional decoder scale at that z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub z_half_width: f64,
    pub z_points: usize,
    pub x_half_width: f64,
    pub x_points: usize,
    /// Largest tolerated |I_N − I_2N| before the grid is declared too coarse.
    pub richardson_tolerance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            z_half_width: 20.0,
            z_points: 161,
            x_half_width: 20.0,
            x_points: 801,
            richardson_tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalReport {
    pub max_abs_error: f64,
    pub richardson_gap: f64,
}

fn check(config: &ModelConfig, grid: &GridSpec) -> Result<()> {
    ensure!(
        config.n == 1 && config.m == 1,
        Contract,
        "quadrature oracle needs n = m = 1"
    );
    ensure!(
        2.0 * grid.z_half_width >= 40.0 && 2.0 * grid.x_half_width >= 40.0,
        Contract,
        "grid must span at least 40 scale units per axis"
    );
    ensure!(
        grid.z_points >= 2 && grid.x_points >= 2,
        Contract,
        "grid needs at least two points per axis"
    );
    Ok(())
}

fn z_grid(mu_y: f64, grid: &GridSpec) -> impl Iterator<Item = f64> + '_ {
    let h = 2.0 * grid.z_half_width / (grid.z_points - 1) as f64;
    (0..grid.z_points).map(move |i| mu_y - grid.z_half_width + i as f64 * h)
}

fn x_scale(config: &ModelConfig, z: f64, mu_y: f64) -> f64 {
    let nu = config.nu;
    config.sigma * ((1.0 + (z - mu_y).powi(2) / nu) / (1.0 + 1.0 / nu)).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn trapezoid(
    config: &ModelConfig,
    priors: &ClassPriors,
    y: usize,
    z: f64,
    mt: f64,
    scale: f64,
    half: f64,
    points: usize,
) -> Result<f64> {
    let h = 2.0 * half * scale / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let x = mt - half * scale + i as f64 * h;
        let w = if i == 0 || i + 1 == points { 0.5 } else { 1.0 };
        total += w * joint_log_density(config, priors, y, &[x], &[z], &[mt])?.exp();
    }
    Ok(total * h)
}

/// max_z |∫ p(x, z | y) dx − p(z | y)| over the z grid, with a Richardson
/// self-check against twice the x resolution.
pub fn quadrature_joint_marginal(
    config: &ModelConfig,
    priors: &ClassPriors,
    label: usize,
    grid: &GridSpec,
    mu_theta: &dyn Fn(f64) -> f64,
) -> Result<MarginalReport> {
    check(config, grid)?;
    let prior = conditional_latent_prior(config, priors, label)?;
    let mu_y = prior.mean()[0];
    let (mut worst, mut gap) = (0.0f64, 0.0f64);
    for z in z_grid(mu_y, grid) {
        let mt = mu_theta(z);
        let s = x_scale(config, z, mu_y);
        let coarse = trapezoid(
            config,
            priors,
            label,
            z,
            mt,
            s,
            grid.x_half_width,
            grid.x_points,
        )?;
        let fine = trapezoid(
            config,
            priors,
            label,
            z,
            mt,
            s,
            grid.x_half_width,
            2 * grid.x_points - 1,
        )?;
        worst = worst.max((coarse - prior.density(&[z])?).abs());
        gap = gap.max((coarse - fine).abs());
    }
    if gap > grid.richardson_tolerance {
        return Err(Error::Resolution(format!(
            "x grid too coarse: halving the step moves the marginal by {gap:.3e} (> {:.3e})",
            grid.richardson_tolerance
        )));
    }
    Ok(MarginalReport {
        max_abs_error: worst,
        richardson_gap: gap,
    })
}

/// max |log p(z|y) + log p(x|z,y) − log p(x,z|y)| over the grid.
pub fn chain_rule_gap(
    config: &ModelConfig,
    priors: &ClassPriors,
    label: usize,
    grid: &GridSpec,
    mu_theta: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    check(config, grid)?;
    let prior = conditional_latent_prior(config, priors, label)?;
    let mu_y = prior.mean()[0];
    let mut worst = 0.0f64;
    for z in z_grid(mu_y, grid) {
        let mt = mu_theta(z);
        let dec = decoder_distribution(config, priors, label, &[z], &[mt])?;
        let s = x_scale(config, z, mu_y);
        let h = 2.0 * grid.x_half_width * s / (grid.x_points - 1) as f64;
        for i in 0..grid.x_points {
            let x = mt - grid.x_half_width * s + i as f64 * h;
            let joint = joint_log_density(config, priors, label, &[x], &[z], &[mt])?;
            let product = prior.log_density(&[z])? + dec.log_density(&[x])?;
            worst = worst.max((joint - product).abs());
        }
    }
    Ok(worst)
}
