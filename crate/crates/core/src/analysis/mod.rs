//! Experiment procedures built on the integrators.

mod bounds;
mod convergence;
mod density;
mod likelihood;
mod moments;
mod spectral;
mod structure;

pub use bounds::{bounds_1d, lyapunov_constants, BoundSeries1D, LyapunovConstants};
pub use convergence::{fit_order, rmse_study, ConvergenceRecord, ConvergenceTable, RmseStudyConfig};
pub use density::{kde, nrd0_bandwidth, DensityGrid, KDE_GRID_POINTS};
pub use likelihood::{lt_nll, lt_nll_transitions, NllValue};
pub use moments::{moment_series, MomentSeries};
pub use spectral::{periodogram, raw_periodogram, smooth_modified_daniell, SpectralDensity};
pub use structure::{
    check_assumptions, hypoellipticity_report, AssumptionCheckConfig, AssumptionEntry, AssumptionReport, HypoEntry,
    HypoReport, Verdict,
};

use thiserror::Error;

use crate::integrators::IntegratorError;
use crate::linalg::LinalgError;
use crate::models::ModelError;
use crate::noise::NoiseError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("one-step covariance is singular (det {det:e}); the scheme is not 1-step hypoelliptic")]
    NotHypoelliptic { det: f64 },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
