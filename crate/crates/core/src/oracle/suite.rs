//! The verification suite behind `verify`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gamma_div::{
    b_term, gamma_cross_entropy, gamma_entropy, gamma_of, gamma_power_divergence_with, ClosedForm,
};
use crate::models::{ClassPriors, Family, ModelConfig};
use crate::student_t::{log_norm_const, TDistParams};
use crate::tensor::Tensor;

use super::double::{closed_double_integrals, mc_double_integrals, LinearFixture};
use super::mc::{mc_power_integrals, Estimate};
use super::quadrature::{chain_rule_gap, quadrature_joint_marginal, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    fn samples(self) -> usize {
        match self {
            Level::Quick => 100_000,
            Level::Full => 1_000_000,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(Error::Config(format!(
                "unknown verify level '{s}' (quick|full)"
            ))),
        }
    }
}

/// Deliberate faults used to confirm the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Flips the sign of the Mahalanobis term inside the bracket
    /// 1 + tr(Σ₁⁻¹Σ₀)/(ν−2) + Δᵀ Σ₁⁻¹ Δ / ν.
    BracketSign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub estimate: f64,
    pub reference: f64,
    /// MC standard error, or NaN for deterministic checks.
    pub std_error: f64,
    /// z-score for MC checks, absolute error otherwise.
    pub statistic: f64,
    pub threshold: f64,
    pub gating: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<CheckRow>,
}

impl Report {
    /// True when every gating row passes.
    pub fn passed(&self) -> bool {
        self.rows.iter().filter(|r| r.gating).all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "check",
            "estimate",
            "reference",
            "std_error",
            "statistic",
            "threshold",
            "gating",
            "pass",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:.12e}", r.estimate),
                format!("{:.12e}", r.reference),
                format!("{:.6e}", r.std_error),
                format!("{:.6e}", r.statistic),
                format!("{:.6e}", r.threshold),
                r.gating.to_string(),
                r.pass.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn mc_row(name: &str, est: Estimate, reference: f64, gating: bool) -> CheckRow {
    let z = est.z_score(reference);
    CheckRow {
        name: name.to_string(),
        estimate: est.value,
        reference,
        std_error: est.std_error,
        statistic: z,
        threshold: 3.0,
        gating,
        pass: z < 3.0,
    }
}

fn abs_row(name: &str, estimate: f64, reference: f64, tol: f64) -> CheckRow {
    let err = (estimate - reference).abs();
    CheckRow {
        name: name.to_string(),
        estimate,
        reference,
        std_error: f64::NAN,
        statistic: err,
        threshold: tol,
        gating: true,
        pass: err < tol,
    }
}

fn mutated_cross_entropy(q: &TDistParams, p: &TDistParams) -> Result<f64> {
    let (nu, d) = (q.dof(), q.dim());
    let maha = p.mahalanobis(q.mean())?;
    let b = b_term(q, p)? - 2.0 * maha / nu;
    let g = gamma_of(nu, d).gamma;
    let a = 1.0 + d as f64 / (nu - 2.0);
    let log_c = log_norm_const(nu, d)?.value;
    let scale = ((g * log_c - g * a.ln() - 0.5 * g * p.log_det_scale()) / (1.0 + g)).exp();
    Ok(-scale * b)
}

pub fn run_suite(level: Level, mutation: Mutation) -> Result<Report> {
    let n = level.samples();
    let mut rows = Vec::new();

    let q = TDistParams::full(
        vec![0.4, -0.3],
        nalgebra::DMatrix::from_row_slice(2, 2, &[1.3, 0.4, 0.4, 0.9]),
        5.0,
    )?;
    let p = TDistParams::diagonal(vec![-1.1, 0.8], vec![0.7, 1.6], 5.0)?;
    let pi = mc_power_integrals(&q, &p, n, 101)?;
    rows.push(mc_row(
        "gamma_entropy",
        pi.entropy(),
        gamma_entropy(&q)?,
        true,
    ));
    let cross_closed = match mutation {
        Mutation::None => gamma_cross_entropy(&q, &p)?,
        Mutation::BracketSign => mutated_cross_entropy(&q, &p)?,
    };
    rows.push(mc_row(
        "gamma_cross_entropy",
        pi.cross_entropy(),
        cross_closed,
        true,
    ));
    rows.push(mc_row(
        "gamma_divergence_original",
        pi.divergence(),
        gamma_power_divergence_with(&q, &p, ClosedForm::Original)?,
        true,
    ));
    rows.push(mc_row(
        "gamma_divergence_corrected",
        pi.divergence(),
        gamma_power_divergence_with(&q, &p, ClosedForm::Corrected)?,
        false,
    ));
    rows.push(abs_row(
        "gamma_divergence_self",
        gamma_power_divergence_with(&q, &q, ClosedForm::Corrected)?,
        0.0,
        1e-10,
    ));

    let cfg = ModelConfig::new(1, 1, 1, 5.0, 1.0, 1.0, Family::Ct3vae)?;
    let priors = ClassPriors::new(Tensor::zeros(&[1, 1]))?;
    let decoder = |z: f64| 0.6 * z.tanh() + 0.1 * z;
    let marg = quadrature_joint_marginal(&cfg, &priors, 0, &GridSpec::default(), &decoder)?;
    rows.push(abs_row(
        "joint_marginal_quadrature",
        marg.max_abs_error,
        0.0,
        1e-3,
    ));
    let chain = chain_rule_gap(
        &cfg,
        &priors,
        0,
        &GridSpec {
            x_points: 101,
            z_points: 41,
            ..GridSpec::default()
        },
        &decoder,
    )?;
    rows.push(abs_row("chain_rule_log_density", chain, 0.0, 1e-8));

    for (i, (dn, dm, nu)) in [(1usize, 1usize, 6.0), (2, 1, 10.0)]
        .into_iter()
        .enumerate()
    {
        let cfg = ModelConfig::new(dn, dm, 2, nu, 0.7, 1.0, Family::Ct3vae)?;
        let priors = ClassPriors::new(Tensor::matrix(
            2,
            dm,
            (0..2 * dm).map(|k| 0.25 * k as f64 - 0.1).collect(),
        )?)?;
        let fx = LinearFixture::standard(dn, dm);
        let mc = mc_double_integrals(&cfg, &priors, 1, &fx, n, 200 + i as u64)?;
        let cf = closed_double_integrals(&cfg, &priors, 1, &fx)?;
        let tag = format!("n{dn}_m{dm}_nu{nu}");
        rows.push(mc_row(
            &format!("double_p_power_{tag}"),
            mc.p_power,
            cf.p_power,
            true,
        ));
        rows.push(mc_row(
            &format!("double_cross_{tag}"),
            mc.cross,
            cf.cross,
            true,
        ));
        rows.push(mc_row(
            &format!("double_q_power_{tag}"),
            mc.q_power,
            cf.q_power,
            true,
        ));
    }
    Ok(Report { rows })
}
