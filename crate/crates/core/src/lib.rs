//! Sufficient forecasting with high-dimensional predictors.
//!
//! The pipeline extracts principal-component factors from a large predictor
//! panel ([`factors`]), estimates a few forecasting indices with
//! inverse-moment dimension reduction ([`sdr`]), and forecasts the target with
//! an additive model on those indices ([`forecaster`]). [`simulation`]
//! reproduces Monte Carlo designs for the whole pipeline.

// `!(x > tol)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod factors;
pub mod forecaster;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod sdr;
pub mod simulation;

pub use error::{Error, ErrorKind, Result};
pub use factors::{
    estimated_factors_known_loadings, fit_factors, residuals, select_num_factors, FactorEstimate, FactorPenalty,
    NumFactorsSelection,
};
pub use forecaster::{
    fit_additive, fit_index_model, fit_pc_baseline, predict, rolling_evaluate, EvalReport, ForecastMethod,
    ForecastModel, OrderPolicy, PcMode, RollingConfig,
};
pub use panel::{load_csv, make_h_step_target, standardize, CsvOptions, PanelData, StandardizationRecord};
pub use sdr::{
    dr_kernel, dr_kernel_pairform, ensemble_kernel, extract_directions, select_dimension, sir_kernel, slice,
    tm_kernel, KernelEstimate, KernelMethod, SliceAssignment, VarianceMode,
};
pub use simulation::{
    identifiability_rotation, monte_carlo_study, subspace_r2, Dgp, DgpSpec, Link, SimDraw, StudyConfig, StudyTable,
};
