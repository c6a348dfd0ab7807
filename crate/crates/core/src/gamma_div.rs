//! γ-power entropy, cross-entropy and divergence between Student's t
//! distributions that share ν, with γ = −2/(ν + d).
//!
//! With A = 1 + d/(ν−2) and B = 1 + tr(Σ₁⁻¹Σ₀)/(ν−2) + (μ₀−μ₁)ᵀΣ₁⁻¹(μ₀−μ₁)/ν:
//!
//! ```text
//! ∫ p^{1+γ}   = C^γ |Σ₁|^{−γ/2} A
//! ∫ q·p^γ     = C^γ |Σ₁|^{−γ/2} B
//! H_γ(q)      = −C^{γ/(1+γ)} |Σ₀|^{−γ/(2(1+γ))} A^{1/(1+γ)}
//! C_γ(q, p)   = −C^{γ/(1+γ)} A^{−γ/(1+γ)} |Σ₁|^{−γ/(2(1+γ))} B
//! ```
//!
//! The divergence is `γ⁻¹(C_γ(q,p) − H_γ(q))`, which factors as
//! `pre · (−|Σ₀|^{−γ/(2(1+γ))} A + S(Σ₀, Σ₁) B)` with
//! `pre = −C^{γ/(1+γ)} A^{−γ/(1+γ)} / γ`. [`ClosedForm`] selects the
//! determinant factor `S`.

use crate::error::{ensure, Result};
use crate::student_t::{log_norm_const, TDistParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaConfig {
    pub gamma: f64,
}

/// γ = −2/(ν + d). Requires ν > 0.
pub fn gamma_of(nu: f64, d: usize) -> GammaConfig {
    GammaConfig {
        gamma: -2.0 / (nu + d as f64),
    }
}

/// Determinant factor on the B term of the divergence bracket.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosedForm {
    /// `|Σ₁|^{−γ/2} |Σ₀|^{γ²/(2(1+γ))}`.
    Corrected,
    /// `|Σ₁|^{−γ/(2(1+γ))}`; equals `γ⁻¹(C_γ(q,p) − H_γ(q))` exactly.
    Original,
}

fn check_single(q: &TDistParams) -> Result<()> {
    ensure!(
        q.dof() > 2.0,
        Domain,
        "γ-power quantities need dof > 2, got {}",
        q.dof()
    );
    Ok(())
}

fn check_pair(q: &TDistParams, p: &TDistParams) -> Result<()> {
    ensure!(
        q.dim() == p.dim(),
        Contract,
        "dimensions differ: {} vs {}",
        q.dim(),
        p.dim()
    );
    ensure!(
        q.dof() == p.dof(),
        Contract,
        "closed forms need a shared dof, got {} and {}",
        q.dof(),
        p.dof()
    );
    check_single(q)
}

/// 1 + d/(ν−2).
fn a_term(nu: f64, d: usize) -> f64 {
    1.0 + d as f64 / (nu - 2.0)
}

/// 1 + tr(Σ₁⁻¹Σ₀)/(ν−2) + Mahalanobis(μ₀; p)/ν.
pub fn b_term(q: &TDistParams, p: &TDistParams) -> Result<f64> {
    check_pair(q, p)?;
    let nu = q.dof();
    let tr = q.trace_inv_product(p)?;
    let maha = p.mahalanobis(q.mean())?;
    Ok(1.0 + tr / (nu - 2.0) + maha / nu)
}

/// ∫ p^{1+γ} in closed form.
pub fn power_integral(p: &TDistParams) -> Result<f64> {
    check_single(p)?;
    let (nu, d) = (p.dof(), p.dim());
    let g = gamma_of(nu, d).gamma;
    let log_c = log_norm_const(nu, d)?.value;
    Ok((g * log_c - 0.5 * g * p.log_det_scale()).exp() * a_term(nu, d))
}

/// ∫ q·p^γ in closed form.
pub fn cross_power_integral(q: &TDistParams, p: &TDistParams) -> Result<f64> {
    let b = b_term(q, p)?;
    let (nu, d) = (p.dof(), p.dim());
    let g = gamma_of(nu, d).gamma;
    let log_c = log_norm_const(nu, d)?.value;
    Ok((g * log_c - 0.5 * g * p.log_det_scale()).exp() * b)
}

/// H_γ(q) = −(∫q^{1+γ})^{1/(1+γ)}.
pub fn gamma_entropy(q: &TDistParams) -> Result<f64> {
    check_single(q)?;
    let (nu, d) = (q.dof(), q.dim());
    let g = gamma_of(nu, d).gamma;
    let log_c = log_norm_const(nu, d)?.value;
    let log_abs = (g * log_c - 0.5 * g * q.log_det_scale() + a_term(nu, d).ln()) / (1.0 + g);
    Ok(-log_abs.exp())
}

/// C_γ(q, p) = −∫ q·(p/‖p‖_{1+γ})^γ.
pub fn gamma_cross_entropy(q: &TDistParams, p: &TDistParams) -> Result<f64> {
    let b = b_term(q, p)?;
    let (nu, d) = (q.dof(), q.dim());
    let g = gamma_of(nu, d).gamma;
    let log_c = log_norm_const(nu, d)?.value;
    let log_abs =
        (g * log_c - g * a_term(nu, d).ln() - 0.5 * g * p.log_det_scale()) / (1.0 + g) + b.ln();
    Ok(-log_abs.exp())
}

/// D_γ(q‖p) with the corrected determinant factor.
pub fn gamma_power_divergence(q: &TDistParams, p: &TDistParams) -> Result<f64> {
    gamma_power_divergence_with(q, p, ClosedForm::Corrected)
}

pub fn gamma_power_divergence_with(
    q: &TDistParams,
    p: &TDistParams,
    form: ClosedForm,
) -> Result<f64> {
    let b = b_term(q, p)?;
    let (nu, d) = (q.dof(), q.dim());
    let g = gamma_of(nu, d).gamma;
    let a = a_term(nu, d);
    let log_c = log_norm_const(nu, d)?.value;
    let (ld0, ld1) = (q.log_det_scale(), p.log_det_scale());
    let e = -g / (2.0 * (1.0 + g));

    // pre > 0 because γ < 0
    let pre = (g * log_c / (1.0 + g) - g / (1.0 + g) * a.ln()).exp() / -g;
    let first = (e * ld0).exp() * a;
    let det = match form {
        ClosedForm::Corrected => (-0.5 * g * ld1 + g * g / (2.0 * (1.0 + g)) * ld0).exp(),
        ClosedForm::Original => (e * ld1).exp(),
    };
    Ok(pre * (det * b - first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(mean: &[f64], scale: &[f64], nu: f64) -> TDistParams {
        TDistParams::diagonal(mean.to_vec(), scale.to_vec(), nu).unwrap()
    }

    #[test]
    fn gamma_values() {
        assert!((gamma_of(10.0, 2).gamma + 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(gamma_of(10.0, 6).gamma, -0.125);
        assert!(gamma_of(10.0, 1_000_000).gamma > -1e-5);
    }

    #[test]
    fn entropy_matches_quadrature_of_its_definition() {
        let q = diag(&[0.0], &[1.0], 5.0);
        let g = gamma_of(5.0, 1).gamma;
        let (lo, hi, n) = (-2000.0, 2000.0, 4_000_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * ((1.0 + g) * q.log_density(&[lo + i as f64 * h]).unwrap()).exp();
        }
        let oracle = -(total * h).powf(1.0 / (1.0 + g));
        assert!((gamma_entropy(&q).unwrap() - oracle).abs() < 1e-4);
    }

    #[test]
    fn entropy_depends_on_scale_only_through_determinant_power() {
        let q = diag(&[0.0, 0.0], &[1.0, 2.0], 6.0);
        let c = 3.0;
        let scaled = diag(&[5.0, -1.0], &[c, 2.0 * c], 6.0);
        let g = gamma_of(6.0, 2).gamma;
        let ratio = gamma_entropy(&scaled).unwrap() / gamma_entropy(&q).unwrap();
        let expected = (c * c).powf(-g / (2.0 * (1.0 + g)));
        assert!((ratio - expected).abs() < 1e-13);
        let shifted = diag(&[9.0, 9.0], &[1.0, 2.0], 6.0);
        assert_eq!(gamma_entropy(&q).unwrap(), gamma_entropy(&shifted).unwrap());
    }

    #[test]
    fn cross_entropy_with_itself_is_entropy() {
        let q = diag(&[0.3, -1.0, 2.0], &[0.5, 1.5, 2.0], 4.2);
        let c = gamma_cross_entropy(&q, &q).unwrap();
        assert!((c - gamma_entropy(&q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_affine_in_mahalanobis_term() {
        let p = diag(&[0.0, 0.0], &[1.0, 2.0], 6.0);
        let c_at = |shift: f64| {
            let q = diag(&[shift * 0.7, -shift * 0.4], &[0.5, 3.0], 6.0);
            gamma_cross_entropy(&q, &p).unwrap()
        };
        let (c0, c1, c2) = (c_at(0.0), c_at(1.0), c_at(2.0));
        assert!(((c2 - c0) - 4.0 * (c1 - c0)).abs() < 1e-12);
    }

    #[test]
    fn self_divergence_vanishes() {
        let q = diag(&[1.0, 2.0], &[0.3, 4.0], 3.1);
        for form in [ClosedForm::Corrected, ClosedForm::Original] {
            assert!(gamma_power_divergence_with(&q, &q, form).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn mean_shift_divergence_is_positive() {
        let q = diag(&[0.0, 0.0], &[1.0, 1.0], 6.0);
        let p = diag(&[1.0, 0.0], &[1.0, 1.0], 6.0);
        let d = gamma_power_divergence(&q, &p).unwrap();
        assert!(d > 0.0);
        let o = gamma_power_divergence_with(&q, &p, ClosedForm::Original).unwrap();
        assert!((d - o).abs() < 1e-14, "forms coincide for equal scales");
    }

    #[test]
    fn divergence_is_asymmetric() {
        let q = diag(&[0.0, 0.5], &[1.0, 2.0], 5.0);
        let p = diag(&[1.0, 0.0], &[0.5, 1.0], 5.0);
        let forward = gamma_power_divergence(&q, &p).unwrap();
        let backward = gamma_power_divergence(&p, &q).unwrap();
        assert!((forward - backward).abs() > 1e-6);
    }

    #[test]
    fn forms_differ_when_scales_differ() {
        let q = diag(&[0.0], &[1.0], 10.0);
        let p = diag(&[0.0], &[1.5], 10.0);
        let corrected = gamma_power_divergence(&q, &p).unwrap();
        let original = gamma_power_divergence_with(&q, &p, ClosedForm::Original).unwrap();
        assert!((corrected - original).abs() > 1e-3);
        // The corrected factor drops below zero on this pair.
        assert!(corrected < 0.0);
        assert!(original > 0.0);
    }

    #[test]
    fn original_form_is_the_definition() {
        let q = diag(&[0.2, -0.1], &[0.7, 1.3], 4.0);
        let p = diag(&[-0.4, 0.6], &[1.1, 0.9], 4.0);
        let g = gamma_of(4.0, 2).gamma;
        let via_defs = (gamma_cross_entropy(&q, &p).unwrap() - gamma_entropy(&q).unwrap()) / g;
        let closed = gamma_power_divergence_with(&q, &p, ClosedForm::Original).unwrap();
        assert!((via_defs - closed).abs() < 1e-12);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let q = diag(&[0.0], &[1.0], 5.0);
        let p2 = diag(&[0.0, 0.0], &[1.0, 1.0], 5.0);
        let other_dof = diag(&[0.0], &[1.0], 6.0);
        let heavy = diag(&[0.0], &[1.0], 2.0);
        assert!(matches!(
            gamma_power_divergence(&q, &p2),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            gamma_cross_entropy(&q, &other_dof),
            Err(crate::Error::Contract(_))
        ));
        assert!(matches!(
            gamma_entropy(&heavy),
            Err(crate::Error::Domain(_))
        ));
    }

    fn params(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(0.05..5.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(0.05..5.0f64, d),
            2.1..100.0f64,
        )
    }

    proptest! {
        #[test]
        fn self_divergence_is_zero_everywhere((m0, s0, _m1, _s1, nu) in (1usize..5).prop_flat_map(params)) {
            let q = TDistParams::diagonal(m0, s0, nu).unwrap();
            prop_assert!(gamma_power_divergence(&q, &q).unwrap().abs() < 1e-10);
        }

        #[test]
        fn definition_consistent_divergence_is_nonnegative((m0, s0, m1, s1, nu) in (1usize..5).prop_flat_map(params)) {
            let q = TDistParams::diagonal(m0, s0, nu).unwrap();
            let p = TDistParams::diagonal(m1, s1, nu).unwrap();
            let d = gamma_power_divergence_with(&q, &p, ClosedForm::Original).unwrap();
            prop_assert!(d >= -1e-10, "{}", d);
        }
    }
}
