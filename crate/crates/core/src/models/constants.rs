use super::ModelConfig;
use crate::error::{ensure, Result};
use crate::student_t::log_norm_const;

/// ln C₁ and ln C₂ of the class-wise objective with Σ_x = σ²I, Σ_y = I.
pub fn log_constants(config: &ModelConfig) -> Result<(f64, f64)> {
    ensure!(
        config.nu > 2.0,
        Domain,
        "ν must exceed 2, got {}",
        config.nu
    );
    let (nu, n, m) = (config.nu, config.n as f64, config.m as f64);
    let g = config.gamma();
    let log_c1 = (g * log_norm_const(nu + n, config.m)?.value
        + 0.5 * g * m * (n / nu).ln_1p()
        + ((nu + n + m - 2.0) / (nu + n - 2.0)).ln())
        / (1.0 + g);
    // |Σ_x|^{−γ/2} = σ^{−nγ}; |Σ_y| = 1
    let log_c2 = (g * log_norm_const(nu, config.n + config.m)?.value
        - n * g * config.sigma.ln()
        - g * ((m + n) / (nu - 2.0)).ln_1p())
        / (1.0 + g);
    Ok((log_c1, log_c2))
}

pub fn constants_c1_c2(config: &ModelConfig) -> Result<(f64, f64)> {
    let (a, b) = log_constants(config)?;
    Ok((a.exp(), b.exp()))
}

/// C₁/C₂ through the simplified expression
/// σ^{nγ/(1+γ)} C_{ν,n}^{−γ/(1+γ)} (1+m/(ν+n−2))^{1/(1+γ)} (1+(m+n)/(ν−2))^{γ/(1+γ)}.
pub fn c1_over_c2_simplified(config: &ModelConfig) -> Result<f64> {
    ensure!(
        config.nu > 2.0,
        Domain,
        "ν must exceed 2, got {}",
        config.nu
    );
    let (nu, n, m) = (config.nu, config.n as f64, config.m as f64);
    let g = config.gamma();
    let e = 1.0 / (1.0 + g);
    let log = e
        * (n * g * config.sigma.ln() - g * log_norm_const(nu, config.n)?.value
            + (m / (nu + n - 2.0)).ln_1p()
            + g * ((m + n) / (nu - 2.0)).ln_1p());
    Ok(log.exp())
}
