//! Non-parametric competing-risks survival analysis with multiplier-bootstrap
//! inference.
//!
//! The crate estimates cumulative incidence functions (Aalen-Johansen),
//! cause-specific cumulative hazards (Nelson-Aalen) and overall survival
//! (Kaplan-Meier) from right-censored, left-truncated two-cause data, and
//! approximates the law of the normalized estimators by a multiplier bootstrap
//! in which every subject's counting-process jump is reweighted by an external
//! random weight. Three weight schemes are built in: standard normal, centered
//! Poisson(1), and the "weird" binomial weights `B(Y, 1/Y) - 1` that keep the
//! risk set fixed.
//!
//! On top of the resampling engine sit simultaneous confidence bands
//! (equal-precision and Hall-Wellner, log-log or identity transform),
//! pointwise confidence intervals, a one-sample containment test and
//! two-sample Kolmogorov-Smirnov / Cramér-von-Mises tests, plus a Monte Carlo
//! harness for coverage and size/power studies.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the `*64` aliases at the crate root fix `f64`.

pub mod bands;
pub mod data;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod export;
pub mod multipliers;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use bands::{
    confidence_band, empirical_quantile, one_sample_ks, pointwise_ci, two_sample_cvm,
    two_sample_ks, two_sample_tests, BandConfig, BandType, ConfidenceBand, TestKind, TestResult,
    Transform, TwoSampleConfig,
};
pub use data::{
    break_ties, build_risk_table, ingest_csv, parse_csv, Cause, Cohort, CsvSchema, Observation,
    RiskTable, Status,
};
pub use engine::{
    bootstrap_covariance, one_sample_paths, precompute_z, two_sample_paths, Adjust, BootstrapPaths,
    ZComponents,
};
pub use error::{Error, Result};
pub use estimators::{
    aalen_johansen, kaplan_meier, nelson_aalen, sigma2_hat, zeta_plugin, CovarianceGrid,
    StepFunction,
};
pub use multipliers::{
    conditional_moments, diagnose_conditions, draw_weights, DiagnosticReport, DiagnosticThresholds,
    Moments, MultiplierScheme, WeightDraw,
};
pub use scalar::Real;
pub use simulation::{
    calibrate_rates, coverage_study, generate_cohort, size_power_study, CalibratedRates,
    CoverageConfig, DgpSpec, MixTarget, SizePowerConfig, SizePowerReport, StudyReport,
};

/// `f64` instantiations of the core types.
pub type Cohort64 = Cohort<f64>;
pub type RiskTable64 = RiskTable<f64>;
pub type StepFunction64 = StepFunction<f64>;
pub type ZComponents64 = ZComponents<f64>;
pub type BootstrapPaths64 = BootstrapPaths<f64>;
pub type ConfidenceBand64 = ConfidenceBand<f64>;
pub type TestResult64 = TestResult<f64>;
pub type DgpSpec64 = DgpSpec<f64>;
pub type StudyReport64 = StudyReport<f64>;
