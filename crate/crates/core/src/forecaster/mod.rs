//! Forecast models on extracted indices, baselines, and rolling evaluation.

mod additive;
mod rolling;

pub use additive::{
    fit_additive, fit_linear, reference_bandwidth, AdditiveFit, LinearFit, Smoother, BACKFIT_MAX_SWEEPS,
    BACKFIT_TOL, MIN_TRAINING,
};
pub use rolling::{
    evaluate_forecasts, forecast_origin, rolling_evaluate, rolling_evaluate_with, Benchmark, EvalReport, EvalSummary,
    ForecastMetrics, OrderPolicy, OriginForecast, OriginRecord, RollingConfig, WindowInput,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdr::KernelMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMethod {
    Sir,
    Dr,
    Tm,
    Ens,
    /// Linear regression on all factors.
    Pc,
    /// Additive model on all factors.
    Nlpc,
}

impl ForecastMethod {
    pub const ALL: [ForecastMethod; 6] = [
        ForecastMethod::Sir,
        ForecastMethod::Dr,
        ForecastMethod::Tm,
        ForecastMethod::Ens,
        ForecastMethod::Pc,
        ForecastMethod::Nlpc,
    ];

    /// Kernel behind a dimension-reduction method; `None` for the PC baselines.
    pub fn kernel(self) -> Option<KernelMethod> {
        match self {
            ForecastMethod::Sir => Some(KernelMethod::Sir),
            ForecastMethod::Dr => Some(KernelMethod::Dr),
            ForecastMethod::Tm => Some(KernelMethod::Tm),
            ForecastMethod::Ens => Some(KernelMethod::Ensemble),
            ForecastMethod::Pc | ForecastMethod::Nlpc => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ForecastMethod::Sir => "SIR",
            ForecastMethod::Dr => "DR",
            ForecastMethod::Tm => "TM",
            ForecastMethod::Ens => "ENS",
            ForecastMethod::Pc => "PC",
            ForecastMethod::Nlpc => "NL-PC",
        }
    }
}

impl fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ForecastMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sir" => Ok(ForecastMethod::Sir),
            "dr" => Ok(ForecastMethod::Dr),
            "tm" => Ok(ForecastMethod::Tm),
            "ens" | "dr+tm" => Ok(ForecastMethod::Ens),
            "pc" => Ok(ForecastMethod::Pc),
            "nlpc" | "nl-pc" => Ok(ForecastMethod::Nlpc),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Additive(AdditiveFit),
    Linear(LinearFit),
}

/// A fitted forecast: factors are projected on `directions` (K x L) and the
/// resulting indices fed to the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub directions: DMatrix<f64>,
    pub predictor: Predictor,
    pub method: ForecastMethod,
    pub horizon: usize,
}

impl ForecastModel {
    pub fn n_indices(&self) -> usize {
        self.directions.ncols()
    }
}

/// Project factors on `directions` and fit an additive model to the indices.
pub fn fit_index_model(
    factors: &DMatrix<f64>,
    targets: &[f64],
    directions: &DMatrix<f64>,
    method: ForecastMethod,
    bandwidths: Option<&[f64]>,
) -> Result<ForecastModel> {
    if factors.ncols() != directions.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors but directions have {} rows",
            factors.ncols(),
            directions.nrows()
        )));
    }
    if directions.ncols() == 0 {
        return Err(Error::InvalidArgument("at least one direction required".into()));
    }
    let indices = factors * directions;
    let fit = fit_additive(&indices, targets, bandwidths)?;
    Ok(ForecastModel {
        directions: directions.clone(),
        predictor: Predictor::Additive(fit),
        method,
        horizon: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcMode {
    Linear,
    Additive,
}

/// Principal-components baselines on all `K` factors: least squares
/// (`PC`) or an additive model with one smoother per factor (`NL-PC`).
pub fn fit_pc_baseline(factors: &DMatrix<f64>, targets: &[f64], mode: PcMode) -> Result<ForecastModel> {
    let k = factors.ncols();
    let identity = DMatrix::identity(k, k);
    match mode {
        PcMode::Linear => Ok(ForecastModel {
            directions: identity,
            predictor: Predictor::Linear(fit_linear(factors, targets)?),
            method: ForecastMethod::Pc,
            horizon: 1,
        }),
        PcMode::Additive => fit_index_model(factors, targets, &identity, ForecastMethod::Nlpc, None),
    }
}

/// Forecast from a new factor vector (length K).
pub fn predict(model: &ForecastModel, f_new: &[f64]) -> Result<f64> {
    if f_new.len() != model.directions.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "factor vector has {} entries, model expects {}",
            f_new.len(),
            model.directions.nrows()
        )));
    }
    if f_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction input"));
    }
    match &model.predictor {
        Predictor::Linear(fit) => fit.predict(f_new),
        Predictor::Additive(fit) => {
            let z = model.directions.transpose() * DVector::from_column_slice(f_new);
            fit.predict(z.as_slice())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_at_training_row_with_tiny_bandwidth() {
        let f = DMatrix::from_row_slice(6, 2, &[0.1, 1.0, 0.5, -0.3, -1.2, 0.4, 2.0, 0.9, -0.7, -1.1, 1.3, 0.0]);
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let dir = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let model = fit_index_model(&f, &y, &dir, ForecastMethod::Dr, Some(&[1e-7])).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = f.row(i).iter().copied().collect();
            assert!((predict(&model, &row).unwrap() - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_smoothers_give_intercept() {
        let f = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let mut model = fit_pc_baseline(&f, &y, PcMode::Additive).unwrap();
        if let Predictor::Additive(fit) = &mut model.predictor {
            for c in &mut fit.components {
                c.partial_residuals.iter_mut().for_each(|r| *r = 0.0);
            }
        }
        assert_eq!(predict(&model, &[10.0]).unwrap(), 3.0);
        assert_eq!(model.method, ForecastMethod::Nlpc);
    }

    #[test]
    fn hand_case_through_predict() {
        let f = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 1000.0, -1000.0]);
        let y = [0.0, 1.0, 0.0, 0.0, 0.0];
        let model = fit_index_model(&f, &y, &DMatrix::identity(1, 1), ForecastMethod::Dr, Some(&[1.0])).unwrap();
        let e = (-0.5f64).exp();
        assert!((predict(&model, &[1.0]).unwrap() - 1.0 / (1.0 + 2.0 * e)).abs() < 1e-15);
    }

    #[test]
    fn pc_linear_exact() {
        let f = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let model = fit_pc_baseline(&f, &[3.0, 5.0, 7.0, 9.0], PcMode::Linear).unwrap();
        assert!((predict(&model, &[10.0]).unwrap() - 21.0).abs() < 1e-10);
    }

    #[test]
    fn method_parsing() {
        for m in ForecastMethod::ALL {
            let s = serde_json::to_string(&m).unwrap();
            let back: ForecastMethod = serde_json::from_str(&s).unwrap();
            assert_eq!(back, m);
            assert_eq!(s.trim_matches('"').parse::<ForecastMethod>().unwrap(), m);
        }
        assert!("foo".parse::<ForecastMethod>().is_err());
    }

    #[test]
    fn predict_rejects_wrong_length() {
        let f = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let model = fit_pc_baseline(&f, &[3.0, 5.0, 7.0, 9.0], PcMode::Linear).unwrap();
        assert!(predict(&model, &[1.0, 2.0]).is_err());
        assert!(predict(&model, &[f64::NAN]).is_err());
    }
}
