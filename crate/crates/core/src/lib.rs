//! Calibration and verification of single- and dual-resolution ensemble
//! temperature forecasts with ensemble model output statistics (EMOS).
//!
//! Modules:
//!
//! - [`data`]: station-matched forecasts and observations, CSV I/O,
//!   orographic correction, rolling training windows
//! - [`scoring`]: CRPS, Brier, quantile and logarithmic scores
//! - [`emos`]: Gaussian EMOS variants and minimum-CRPS estimation
//! - [`selection`]: local, regional and k-means semi-local training scopes
//! - [`inference`]: Diebold-Mariano tests and stationary bootstrap intervals
//! - [`synth`]: synthetic dual-resolution data with known truth
//! - [`experiment`]: the rolling calibrate/verify pipeline and report files

pub mod data;
pub mod emos;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod scoring;
pub mod selection;
pub mod synth;

pub use data::{
    build_training_window, build_training_window_for, load_dataset, load_dataset_dir,
    orographic_correction, Case, Dataset, GroupedEnsembleForecast, MemberGroup, Observation,
    StationMeta, TrainingWindow,
};
pub use emos::{
    fit, fit_with, predictive, summarize, EmosParameters, EmosVariant, EnsembleSummary, FitOptions,
    VariantTag,
};
pub use error::{Error, Result};
pub use experiment::{
    emit_reports, run_experiment, station_diagnostics, ConfigurationId, ExperimentConfig,
    ExperimentOutput, Method, ScoreTable,
};
pub use inference::{
    dm_test, significance_matrix, stationary_bootstrap_ci, BootstrapCi, DmFlag, DmResult,
    Functional, ScoreSeries,
};
pub use scoring::{
    crps_empirical, crps_gaussian, EmpiricalPredictive, GaussianPredictive, ScoreConfig,
};
pub use selection::{ClusterAssignment, ScopeMode, TrainingScope};
pub use synth::{cost_equivalent_sweep, generate, Mixture, SynthConfig};
