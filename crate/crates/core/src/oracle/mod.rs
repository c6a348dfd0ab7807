//! Independent brute-force checks of the closed forms.

pub mod double;
pub mod mc;
pub mod quadrature;
pub mod suite;

pub use double::{
    closed_double_integrals, mc_cross_term, mc_double_integrals, CrossSource, DoubleIntegrals,
    LinearFixture,
};
pub use mc::{mc_gamma_divergence, mc_power_integrals, Estimate, PowerIntegrals};
pub use quadrature::{chain_rule_gap, quadrature_joint_marginal, GridSpec, MarginalReport};
pub use suite::{run_suite, CheckRow, Level, Mutation, Report};
