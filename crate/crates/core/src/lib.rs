//! Hypothesis tests and confidence intervals for a single coefficient of a
//! high-dimensional logistic regression.
//!
//! The pipeline is: split the sample, fit an L1-penalized pilot on one half,
//! linearize the model around the pilot on the other half, decouple the
//! tested coordinate with two linear programs, then compare a studentized
//! score against a normal critical value.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod linearize;
pub mod lp;
pub mod mds;
pub mod model;
pub mod montecarlo;

pub use error::{Error, Result, Stage};
pub use inference::{
    confidence_interval, normal_cdf, normal_quantile, prepare, run_test, ConfidenceInterval, Grid,
    GridSpec, PipelineConfig, PreparedInference, TestOutcome,
};
pub use lasso::{fit_logistic_lasso, LassoConfig, LassoFit};
pub use linearize::{linearize, LinearizedData};
pub use lp::{solve_lp, LpProblem, LpSolution, LpStatus};
pub use mds::{solve_mds, MdsConfig, MdsFit, MdsStatus};
pub use model::{split_samples, Dataset, SplitDataset};
pub use montecarlo::{
    binomial_band, generate_dataset, run_coverage_experiment, run_power_experiment,
    run_size_experiment, sample_design, DesignKind, DesignSpec, ExperimentReport, ModelSpec,
    SimulationConfig,
};
