//! Flat JSON run configurations. Values come from, in increasing priority:
//! built-in defaults, the `--config` file, and command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use suffcast::forecaster::{Benchmark, ForecastMethod, OrderPolicy, RollingConfig};
use suffcast::sdr::{DEFAULT_CENSORING, DEFAULT_SLICES};
use suffcast::simulation::{DgpSpec, Link, StudyConfig};
use suffcast::{CsvOptions, FactorPenalty, VarianceMode};

pub const OUTPUT_DIR_ENV: &str = "SUFFCAST_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "suffcast-out";

/// Invalid configuration; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Overlay `flags` (already stripped of unset values) on the file contents and
/// deserialize, rejecting unknown keys.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, flags: Value) -> Result<T, ConfigError> {
    let mut merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text)
                .map_err(|e| ConfigError(format!("config {} is not valid JSON: {e}", path.display())))?
            {
                Value::Object(map) => map,
                _ => return Err(ConfigError(format!("config {} must be a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(flags) = flags {
        for (key, value) in flags {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError(format!("invalid configuration: {e}")))
}

/// Explicit setting, else the environment variable, else `suffcast-out`.
pub fn output_dir(configured: &Option<PathBuf>) -> PathBuf {
    configured
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: Link,
    pub p: usize,
    pub t: usize,
    pub n_test: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub methods: Vec<ForecastMethod>,
    pub k: OrderPolicy,
    pub k_max: usize,
    pub l: usize,
    pub slices: usize,
    pub variance_mode: VarianceMode,
    pub sigma: f64,
    pub redraw_loadings: bool,
    pub burn_in: usize,
    pub direction_metrics: bool,
    pub forecast_metrics: bool,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let study = StudyConfig::default();
        let spec = study.spec;
        SimulateConfig {
            model: spec.link,
            p: spec.p,
            t: spec.t,
            n_test: spec.n_test,
            n_reps: study.n_reps,
            seed: spec.seed,
            methods: study.methods,
            k: study.k,
            k_max: study.k_max,
            l: study.l,
            slices: study.h_count,
            variance_mode: study.variance_mode,
            sigma: spec.sigma,
            redraw_loadings: spec.redraw_loadings,
            burn_in: spec.burn_in,
            direction_metrics: study.direction_metrics,
            forecast_metrics: study.forecast_metrics,
            output_dir: None,
            threads: None,
        }
    }
}

impl SimulateConfig {
    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            spec: DgpSpec {
                p: self.p,
                t: self.t,
                n_test: self.n_test,
                link: self.model,
                seed: self.seed,
                sigma: self.sigma,
                redraw_loadings: self.redraw_loadings,
                burn_in: self.burn_in,
                ..DgpSpec::default()
            },
            methods: self.methods.clone(),
            n_reps: self.n_reps,
            l: self.l,
            h_count: self.slices,
            variance_mode: self.variance_mode,
            k: self.k,
            k_max: self.k_max,
            direction_metrics: self.direction_metrics,
            forecast_metrics: self.forecast_metrics,
        }
    }
}

/// Input file settings shared by the data-driven commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub input: Option<PathBuf>,
    pub target: Option<String>,
    pub time_column: Option<String>,
    pub delimiter: char,
    pub strict: bool,
    pub method: ForecastMethod,
    pub k: OrderPolicy,
    pub k_max: usize,
    pub l: OrderPolicy,
    pub slices: usize,
    pub horizon: usize,
    pub window: usize,
    pub n_eval: usize,
    pub variance_mode: VarianceMode,
    pub standardize: bool,
    pub benchmark: Benchmark,
    pub c_censor: f64,
    pub c_t_multiplier: f64,
    pub penalty: FactorPenalty,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        let r = RollingConfig::default();
        ForecastConfig {
            input: None,
            target: None,
            time_column: None,
            delimiter: ',',
            strict: false,
            method: r.method,
            k: r.k,
            k_max: r.k_max,
            l: r.l,
            slices: r.h_count,
            horizon: r.horizon,
            window: r.window,
            n_eval: r.n_eval,
            variance_mode: r.variance_mode,
            standardize: r.standardize,
            benchmark: r.benchmark,
            c_censor: r.c_censor,
            c_t_multiplier: r.c_t_multiplier,
            penalty: r.penalty,
            output_dir: None,
            threads: None,
        }
    }
}

impl ForecastConfig {
    pub fn rolling(&self) -> RollingConfig {
        RollingConfig {
            window: self.window,
            horizon: self.horizon,
            method: self.method,
            k: self.k,
            k_max: self.k_max,
            l: self.l,
            h_count: self.slices,
            n_eval: self.n_eval,
            variance_mode: self.variance_mode,
            standardize: self.standardize,
            benchmark: self.benchmark,
            c_censor: self.c_censor,
            c_t_multiplier: self.c_t_multiplier,
            penalty: self.penalty,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub input: Option<PathBuf>,
    pub target: Option<String>,
    pub time_column: Option<String>,
    pub delimiter: char,
    pub strict: bool,
    /// Kernel used for the dimension search: sir, dr, tm or ens.
    pub method: ForecastMethod,
    /// Number of factors for the kernel; `auto` uses the selected K.
    pub k: OrderPolicy,
    pub k_max: usize,
    pub penalty: FactorPenalty,
    pub slices: usize,
    pub horizon: usize,
    pub variance_mode: VarianceMode,
    pub standardize: bool,
    pub c_censor: f64,
    pub c_t_multiplier: f64,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            input: None,
            target: None,
            time_column: None,
            delimiter: ',',
            strict: false,
            method: ForecastMethod::Dr,
            k: OrderPolicy::Auto,
            k_max: 12,
            penalty: FactorPenalty::Ic1,
            slices: DEFAULT_SLICES,
            horizon: 1,
            variance_mode: VarianceMode::Identity,
            standardize: true,
            c_censor: DEFAULT_CENSORING,
            c_t_multiplier: 1.0,
            output_dir: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorsConfig {
    pub input: Option<PathBuf>,
    pub target: Option<String>,
    pub time_column: Option<String>,
    pub delimiter: char,
    pub strict: bool,
    pub k: OrderPolicy,
    pub k_max: usize,
    pub penalty: FactorPenalty,
    pub standardize: bool,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for FactorsConfig {
    fn default() -> Self {
        FactorsConfig {
            input: None,
            target: None,
            time_column: None,
            delimiter: ',',
            strict: false,
            k: OrderPolicy::Auto,
            k_max: 12,
            penalty: FactorPenalty::Ic1,
            standardize: true,
            output_dir: None,
            threads: None,
        }
    }
}

/// Input location and CSV options, validated.
pub struct InputSpec {
    pub path: PathBuf,
    pub target: String,
    pub options: CsvOptions,
}

pub fn input_spec(
    input: &Option<PathBuf>,
    target: &Option<String>,
    time_column: &Option<String>,
    delimiter: char,
    strict: bool,
) -> Result<InputSpec, ConfigError> {
    let path = input.clone().ok_or_else(|| ConfigError("an input CSV is required (--input)".into()))?;
    let target = target.clone().ok_or_else(|| ConfigError("a target column is required (--target)".into()))?;
    if !delimiter.is_ascii() {
        return Err(ConfigError(format!("delimiter {delimiter:?} must be a single ASCII character")));
    }
    Ok(InputSpec {
        path,
        target,
        options: CsvOptions {
            delimiter: delimiter as u8,
            time_column: time_column.clone(),
            strict,
        },
    })
}
