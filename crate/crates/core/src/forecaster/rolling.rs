//! Rolling-window out-of-sample evaluation.
//!
//! At forecast origin `t` the window holds panel columns `t-w+1..=t`. The
//! training pairs are `(f_s, z_s)` for window columns `s <= t-h`, where
//! `z_s = mean(y[s+1..=s+h])` is fully observed by time `t`. The forecast of
//! `z_t` uses the factor estimate at column `t` of the same window fit, so no
//! value after `t` is ever read.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{fit_index_model, fit_pc_baseline, predict, ForecastMethod, PcMode};
use crate::error::{Error, Result};
use crate::factors::{fit_factors, select_num_factors, FactorPenalty};
use crate::io::{ensure_dir, io_err, write_json};
use crate::panel::{make_h_step_target, PanelData};
use crate::sdr::{
    build_kernel, default_c_t, extract_directions, select_dimension, slice, VarianceMode, DEFAULT_CENSORING,
    DEFAULT_SLICES,
};

/// Either a fixed order or "select from the data".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for OrderPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(OrderPolicy::Auto);
        }
        s.parse::<usize>()
            .map(OrderPolicy::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("expected \"auto\" or a positive integer, got {s:?}")))
    }
}

impl std::fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderPolicy::Auto => f.write_str("auto"),
            OrderPolicy::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for OrderPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OrderPolicy::Auto => s.serialize_str("auto"),
            OrderPolicy::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for OrderPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(OrderPolicy::Fixed(n)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Mean used in the out-of-sample R^2 denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Mean of the training targets in each window.
    #[default]
    RollingMean,
    /// Mean of the whole target series.
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollingConfig {
    pub window: usize,
    pub horizon: usize,
    pub method: ForecastMethod,
    pub k: OrderPolicy,
    /// Upper bound for the factor-number search when `k` is `auto`.
    pub k_max: usize,
    pub l: OrderPolicy,
    pub h_count: usize,
    /// Number of forecast origins, taken from the end of the sample.
    pub n_eval: usize,
    pub variance_mode: VarianceMode,
    pub standardize: bool,
    pub benchmark: Benchmark,
    pub c_censor: f64,
    pub c_t_multiplier: f64,
    pub penalty: FactorPenalty,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            window: 120,
            horizon: 1,
            method: ForecastMethod::Dr,
            k: OrderPolicy::Fixed(8),
            k_max: 12,
            l: OrderPolicy::Fixed(2),
            h_count: DEFAULT_SLICES,
            n_eval: 240,
            variance_mode: VarianceMode::Identity,
            standardize: true,
            benchmark: Benchmark::RollingMean,
            c_censor: DEFAULT_CENSORING,
            c_t_multiplier: 1.0,
            penalty: FactorPenalty::Ic1,
        }
    }
}

/// Data visible at one forecast origin.
#[derive(Debug, Clone)]
pub struct WindowInput<'a> {
    /// Window predictors, `p x w`, standardized when configured; the last
    /// column is the origin.
    pub x: DMatrix<f64>,
    /// Training targets for window columns `0..w-h`.
    pub targets: &'a [f64],
    /// Panel column of the origin.
    pub origin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginForecast {
    pub forecast: f64,
    pub k: usize,
    pub l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginRecord {
    pub origin: usize,
    pub label: String,
    pub forecast: f64,
    pub realized: f64,
    pub benchmark: f64,
    pub k: usize,
    pub l: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub oos_r2: f64,
}

/// MSE and `1 - sum (y - yhat)^2 / sum (y - ybar)^2` with per-origin `ybar`.
pub fn evaluate_forecasts(forecasts: &[f64], realized: &[f64], benchmarks: &[f64]) -> Result<ForecastMetrics> {
    let n = forecasts.len();
    if n == 0 || realized.len() != n || benchmarks.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} forecasts, {} realized values, {} benchmarks",
            realized.len(),
            benchmarks.len()
        )));
    }
    let sse: f64 = forecasts.iter().zip(realized).map(|(f, y)| (y - f).powi(2)).sum();
    let sst: f64 = benchmarks.iter().zip(realized).map(|(b, y)| (y - b).powi(2)).sum();
    Ok(ForecastMetrics {
        mse: sse / n as f64,
        oos_r2: 1.0 - sse / sst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: ForecastMethod,
    pub horizon: usize,
    pub window: usize,
    pub n_eval: usize,
    pub mse: f64,
    pub pc_mse: f64,
    /// MSE relative to the linear PC baseline on the same windows.
    pub relative_mse: f64,
    pub oos_r2: f64,
    pub benchmark: Benchmark,
    /// Selected index dimension at each origin, when applicable.
    pub selected_l: Vec<Option<usize>>,
    pub selected_k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<OriginRecord>,
}

impl EvalReport {
    pub fn one_line(&self) -> String {
        let s = &self.summary;
        format!(
            "{} h={} MSE={} RMSE={} R2={}",
            s.method,
            s.horizon,
            sig3(s.mse),
            sig3(s.relative_mse),
            sig3(s.oos_r2)
        )
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("origin,label,forecast,realized,benchmark,k,l\n");
        for r in &self.records {
            let l = r.l.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.origin, r.label, r.forecast, r.realized, r.benchmark, r.k, l
            ));
        }
        out
    }

    /// Write `forecasts.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let path = dir.join("forecasts.csv");
        std::fs::write(&path, self.records_csv()).map_err(io_err(&path))?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}

/// Three significant digits for human-readable summaries.
pub(crate) fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 2 - v.abs().log10().floor() as i32;
    if digits > 0 {
        format!("{:.*}", digits as usize, v)
    } else {
        let scale = 10f64.powi(-digits);
        format!("{}", (v / scale).round() * scale)
    }
}

struct Schedule {
    targets: Vec<f64>,
    origins: Vec<usize>,
}

fn schedule(panel: &PanelData, config: &RollingConfig) -> Result<Schedule> {
    let t = panel.t_len();
    let (w, h) = (config.window, config.horizon);
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if config.n_eval == 0 {
        return Err(Error::InvalidArgument("n_eval must be at least 1".into()));
    }
    if w <= h || w - h < super::MIN_TRAINING {
        return Err(Error::InvalidArgument(format!(
            "window {w} leaves fewer than {} training targets at horizon {h}",
            super::MIN_TRAINING
        )));
    }
    if t < w + h {
        return Err(Error::InsufficientData(format!(
            "panel has {t} time points; window {w} and horizon {h} need at least {}",
            w + h
        )));
    }
    let targets = make_h_step_target(&panel.y, h)?;
    // origins t with t >= w-1 and z_t observed (t <= T-h-1)
    let last = t - h - 1;
    let first_possible = w - 1;
    let available = last + 1 - first_possible;
    let n = config.n_eval.min(available);
    Ok(Schedule {
        targets,
        origins: (last + 1 - n..=last).collect(),
    })
}

fn window_input<'a>(panel: &PanelData, config: &RollingConfig, targets: &'a [f64], origin: usize) -> Result<WindowInput<'a>> {
    let w = config.window;
    let start = origin + 1 - w;
    let raw = panel.x.columns(start, w).into_owned();
    let x = if config.standardize {
        let mut x = raw;
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let m = super::additive::mean(&row);
            let sd = super::additive::sample_sd(&row);
            if !(sd > 1e-300) {
                return Err(Error::ZeroVariance(panel.series_names[i].clone()));
            }
            x.row_mut(i).iter_mut().for_each(|v| *v = (*v - m) / sd);
        }
        x
    } else {
        raw
    };
    Ok(WindowInput {
        x,
        targets: &targets[start..=origin - config.horizon],
        origin,
    })
}

/// Run `forecaster` at every scheduled origin and score the forecasts.
/// Returns the per-origin records in time order.
pub fn rolling_evaluate_with<F>(panel: &PanelData, config: &RollingConfig, forecaster: F) -> Result<Vec<OriginRecord>>
where
    F: Fn(&WindowInput<'_>) -> Result<OriginForecast> + Sync,
{
    let plan = schedule(panel, config)?;
    let full_mean = super::additive::mean(&plan.targets);
    plan.origins
        .par_iter()
        .map(|&origin| {
            let input = window_input(panel, config, &plan.targets, origin).map_err(|e| Error::at_origin(origin, e))?;
            let out = forecaster(&input).map_err(|e| Error::at_origin(origin, e))?;
            let benchmark = match config.benchmark {
                Benchmark::RollingMean => super::additive::mean(input.targets),
                Benchmark::FullSample => full_mean,
            };
            Ok(OriginRecord {
                origin,
                label: panel.time_labels[origin].clone(),
                forecast: out.forecast,
                realized: plan.targets[origin],
                benchmark,
                k: out.k,
                l: out.l,
            })
        })
        .collect()
}

/// Forecast at one origin with the configured method.
pub fn forecast_origin(input: &WindowInput<'_>, config: &RollingConfig, method: ForecastMethod) -> Result<OriginForecast> {
    let (p, w) = input.x.shape();
    let k = match config.k {
        OrderPolicy::Fixed(k) => k,
        OrderPolicy::Auto => {
            let k_max = config.k_max.min(p).min(w);
            select_num_factors(&input.x, k_max, config.penalty)?.k_hat.max(1)
        }
    };
    let fit = fit_factors(&input.x, k)?;
    let n_train = input.targets.len();
    let train = fit.factors.rows(0, n_train).into_owned();
    let origin_row: Vec<f64> = fit.factors.row(w - 1).iter().copied().collect();

    let (model, l) = match method.kernel() {
        None => {
            let mode = if method == ForecastMethod::Pc {
                PcMode::Linear
            } else {
                PcMode::Additive
            };
            (fit_pc_baseline(&train, input.targets, mode)?, None)
        }
        Some(kernel_method) => {
            let slices = slice(input.targets, config.h_count.min(n_train))?;
            let kernel = build_kernel(kernel_method, &train, &slices, config.variance_mode)?;
            let l = match config.l {
                OrderPolicy::Fixed(l) => l.min(k),
                OrderPolicy::Auto => {
                    let c_t = config.c_t_multiplier * default_c_t(kernel_method, k, p, n_train);
                    select_dimension(&kernel, n_train, config.c_censor, c_t)?.l_hat
                }
            };
            let directions = extract_directions(&kernel, l)?;
            (fit_index_model(&train, input.targets, &directions, method, None)?, Some(l))
        }
    };
    Ok(OriginForecast {
        forecast: predict(&model, &origin_row)?,
        k,
        l,
    })
}

/// Rolling out-of-sample evaluation of `config.method`, scored against the
/// linear PC baseline on identical windows.
pub fn rolling_evaluate(panel: &PanelData, config: &RollingConfig) -> Result<EvalReport> {
    let run = |method: ForecastMethod| rolling_evaluate_with(panel, config, |input| forecast_origin(input, config, method));
    let records = run(config.method)?;
    let baseline = if config.method == ForecastMethod::Pc {
        None
    } else {
        Some(run(ForecastMethod::Pc)?)
    };
    let pc_records = baseline.as_ref().unwrap_or(&records);
    let metrics = metrics_of(&records)?;
    let pc = metrics_of(pc_records)?;
    Ok(EvalReport {
        summary: EvalSummary {
            method: config.method,
            horizon: config.horizon,
            window: config.window,
            n_eval: records.len(),
            mse: metrics.mse,
            pc_mse: pc.mse,
            relative_mse: metrics.mse / pc.mse,
            oos_r2: metrics.oos_r2,
            benchmark: config.benchmark,
            selected_l: records.iter().map(|r| r.l).collect(),
            selected_k: records.iter().map(|r| r.k).collect(),
        },
        records,
    })
}

fn metrics_of(records: &[OriginRecord]) -> Result<ForecastMetrics> {
    let f: Vec<f64> = records.iter().map(|r| r.forecast).collect();
    let y: Vec<f64> = records.iter().map(|r| r.realized).collect();
    let b: Vec<f64> = records.iter().map(|r| r.benchmark).collect();
    evaluate_forecasts(&f, &y, &b)
}
