//! Confounder selection in high-dimensional linear models and post-selection
//! effect estimation.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod benchmark;
pub mod effects;
pub mod error;
pub mod linalg;
pub mod screening;
pub mod silasso;
pub mod simgen;
pub mod sisis;

pub use benchmark::{
    run_benchmark, select_confounders, BenchmarkReport, Method, MethodOptions, MethodSelection, MethodSummary, ReplicationRecord,
};
pub use effects::{
    adjusted_effect, dr_ate, dwh_test, iv_adaptive, iv_median, tsls, DwhTest, EffectEstimate, EffectWarning, Estimator,
    IvAdaptiveFit, IvArtifacts,
};
pub use error::{Error, Result};
pub use linalg::{standardize, CoefVector, DataMatrix};
pub use silasso::{classify, PenaltyConfig, SelectionResult, SilassoFit, SilassoOptions};
pub use simgen::{compute_metrics, generate, Metrics, Role, ScenarioConfig, SimDataset};
pub use sisis::{sisis_select, SisisOutput};
