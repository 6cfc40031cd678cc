//! Posterior-versus-Gaussian distances, convergence diagnostics and the
//! Monte Carlo verification studies.

mod bvm;
mod experiments;
mod mcmc;
mod regularity;

pub use bvm::{
    bvm_distance, bvm_from_matrix, kolmogorov_p_value, ks_statistic, ks_statistic_normal,
    wasserstein1_normal, wasserstein1_two_sample, BvmReport, CoordinateBvm, MIN_BVM_DRAWS,
    QUANTILE_LEVELS, SCHEMA_VERSION, TV_PROXY_NOTE,
};
pub use experiments::{
    binomial_band, compare_parametrizations, contraction_curve, coverage_experiment, empirical_l2,
    empirical_process_check, multiplier_processes, nuisance_risk, ols_line, ComparisonReport,
    ComparisonRow, ContractionReport, CoverageReport, CoverageSampler, EmpiricalProcessReport,
    Experiment, Regime, ReplicationRecord, MIN_COVERAGE_REPLICATIONS,
};
pub use mcmc::{effective_sample_size, rhat, split_rhat};
pub use regularity::{beta_eta_conditions, beta_m_conditions, Inequality, RegularityCheck};
