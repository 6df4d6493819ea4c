//! Scaling-law fits, smoothness estimation and the sparse/dense constant decomposition.

pub mod fit;
pub mod quadratic;
pub mod smoothness;
pub mod tables;
pub mod theory;

pub use fit::{fit_scaling, fit_table, predict_steps, FitForm, ScalingFit};
pub use quadratic::NoisyQuadratic;
pub use smoothness::{
    estimate_lipschitz, measure_smoothness, trace_smoothness, SmoothnessMeasurement, SmoothnessSample, SmoothnessTrace,
};
pub use theory::{average_gradient_bound, estimate_beta, estimate_delta, ratio_report, RatioReport, TheoryParams};
