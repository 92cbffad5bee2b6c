//! Synthetic factor-model designs and the Monte Carlo study driver.
//!
//! Predictors follow `x_it = b_i' f_t + u_it` with AR(1) factors and AR(1)
//! idiosyncratic errors; the target is `y_{t+1} = link(phi1'f_t, phi2'f_t) + sigma eps`.
//! `SimDraw::y[t]` holds `y_{t+1}`, paired with column `t` of `x`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{fit_factors, select_num_factors, FactorPenalty};
use crate::io::{ensure_dir, io_err, write_json};
use crate::forecaster::{fit_index_model, fit_pc_baseline, predict, ForecastMethod, OrderPolicy, PcMode};
use crate::linalg::{orthonormal_basis, sym_eigen};
use crate::sdr::{build_kernel, extract_directions, slice, VarianceMode, DEFAULT_SLICES};

/// Link functions of the four simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Link {
    /// `0.4 a^2 + 3 sin(b / 4)`
    #[serde(alias = "i", alias = "1")]
    I,
    /// `3 sin(a / 4) + 3 sin(b / 4)`
    #[serde(alias = "ii", alias = "2")]
    II,
    /// `0.4 a^2 + |b|^{1/2}`
    #[serde(alias = "iii", alias = "3")]
    III,
    /// `a (b + 1)`
    #[serde(alias = "iv", alias = "4")]
    IV,
}

impl Link {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Link::I => 0.4 * a * a + 3.0 * (b / 4.0).sin(),
            Link::II => 3.0 * (a / 4.0).sin() + 3.0 * (b / 4.0).sin(),
            Link::III => 0.4 * a * a + b.abs().sqrt(),
            Link::IV => a * (b + 1.0),
        }
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Link::I),
            "II" | "2" => Ok(Link::II),
            "III" | "3" => Ok(Link::III),
            "IV" | "4" => Ok(Link::IV),
            other => Err(Error::InvalidArgument(format!("unknown link {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub p: usize,
    /// Training length.
    pub t: usize,
    /// Extra periods generated after the training sample for forecasting.
    pub n_test: usize,
    pub k: usize,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub loading_range: (f64, f64),
    pub ar_range: (f64, f64),
    pub sigma: f64,
    pub link: Link,
    pub seed: u64,
    /// Redraw loadings in every replication instead of once per study.
    pub redraw_loadings: bool,
    pub burn_in: usize,
    /// Standard deviation of the factor innovations.
    pub factor_innovation_sd: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        let s3 = 3f64.sqrt();
        let s11 = 11f64.sqrt();
        DgpSpec {
            p: 100,
            t: 500,
            n_test: 100,
            k: 6,
            phi1: vec![1.0 / s3, 1.0 / s3, 1.0 / s3, 0.0, 0.0, 0.0],
            phi2: vec![1.0 / s11, 0.0, 0.0, 0.0, 1.0 / s11, 3.0 / s11],
            loading_range: (-1.0, 2.0),
            ar_range: (0.2, 0.8),
            sigma: 0.2,
            link: Link::I,
            seed: 1,
            redraw_loadings: false,
            burn_in: 100,
            factor_innovation_sd: 1.0,
        }
    }
}

impl DgpSpec {
    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.t < 2 || self.k == 0 {
            return Err(Error::InvalidArgument("p, k must be positive and t at least 2".into()));
        }
        if self.phi1.len() != self.k || self.phi2.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "direction vectors must have length k = {}",
                self.k
            )));
        }
        for phi in [&self.phi1, &self.phi2] {
            let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("direction has norm {norm}, expected 1")));
            }
        }
        let (lo, hi) = self.ar_range;
        if !(lo < hi && lo.abs() < 1.0 && hi.abs() < 1.0) && !(lo == hi && lo.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("AR range {:?} not stationary", self.ar_range)));
        }
        if !(self.loading_range.0 <= self.loading_range.1) {
            return Err(Error::InvalidArgument("empty loading range".into()));
        }
        if !(self.sigma >= 0.0 && self.factor_innovation_sd >= 0.0) {
            return Err(Error::InvalidArgument("noise scales must be nonnegative".into()));
        }
        Ok(())
    }

    /// Directions as a K x 2 matrix.
    pub fn phi(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.k, 2);
        m.set_column(0, &DVector::from_column_slice(&self.phi1));
        m.set_column(1, &DVector::from_column_slice(&self.phi2));
        m
    }
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    if lo == hi {
        Uniform::new_inclusive(lo, hi).expect("degenerate range")
    } else {
        Uniform::new(lo, hi).expect("valid range")
    }
}

/// Study-level parameters drawn once from the master seed.
#[derive(Debug, Clone)]
pub struct Dgp {
    pub spec: DgpSpec,
    pub alphas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub loadings: DMatrix<f64>,
}

/// One replication of the design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    /// `p x (t + n_test)`.
    pub x: DMatrix<f64>,
    /// `y[s]` is the target one period after column `s`.
    pub y: Vec<f64>,
    /// True factors, `(t + n_test) x K`.
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// True directions, K x 2.
    pub phi: DMatrix<f64>,
    /// True directions after the identifiability rotation computed on the
    /// training sample, `H^{-T} phi` (K x 2).
    pub rotated_phi: DMatrix<f64>,
    /// Orthonormal basis of `rotated_phi`.
    pub rotated_span: DMatrix<f64>,
    /// Training factors after the identifiability rotation, `t x K`.
    pub rotated_factors: DMatrix<f64>,
}

impl SimDraw {
    /// Basis of the rotated true span expressed in the sign convention of the
    /// estimated factors `f_hat` (`t x K`). The identifiability rotation fixes
    /// the factors only up to the sign of each column, so column `j` is
    /// flipped when it correlates negatively with `f_hat[:, j]`.
    pub fn aligned_span(&self, f_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let f = &self.rotated_factors;
        if f_hat.shape() != f.shape() {
            return Err(Error::DimensionMismatch(format!(
                "estimated factors are {:?}, rotated true factors {:?}",
                f_hat.shape(),
                f.shape()
            )));
        }
        let mut phi = self.rotated_phi.clone();
        for j in 0..f.ncols() {
            if f_hat.column(j).dot(&f.column(j)) < 0.0 {
                phi.row_mut(j).neg_mut();
            }
        }
        Ok(orthonormal_basis(&phi))
    }
}

impl Dgp {
    pub fn new(spec: DgpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let ar = uniform(spec.ar_range.0, spec.ar_range.1);
        let alphas = (0..spec.k).map(|_| ar.sample(&mut rng)).collect();
        let rhos = (0..spec.p).map(|_| ar.sample(&mut rng)).collect();
        let loadings = draw_loadings(&spec, &mut rng);
        Ok(Dgp {
            spec,
            alphas,
            rhos,
            loadings,
        })
    }

    /// Generate replication `rep`; fully determined by `(seed, rep)`.
    pub fn sample(&self, rep: u64) -> Result<SimDraw> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(rep + 1);
        let loadings = if spec.redraw_loadings {
            draw_loadings(spec, &mut rng)
        } else {
            self.loadings.clone()
        };
        let total = spec.t + spec.n_test;
        let factors = ar1_paths(&self.alphas, total, spec.burn_in, spec.factor_innovation_sd, &mut rng);
        let errors = ar1_paths(&self.rhos, total, spec.burn_in, 1.0, &mut rng);
        let x = &loadings * factors.transpose() + errors.transpose();
        let phi = spec.phi();
        let index = &factors * &phi;
        let y = (0..total)
            .map(|s| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                spec.link.eval(index[(s, 0)], index[(s, 1)]) + spec.sigma * eps
            })
            .collect();
        let train = factors.rows(0, spec.t).into_owned();
        let rotation = identifiability_rotation(&train, &loadings)?;
        let rotated_phi = rotation.rotate_directions(&phi);
        let rotated_span = orthonormal_basis(&rotated_phi);
        Ok(SimDraw {
            x,
            y,
            factors,
            loadings,
            phi,
            rotated_phi,
            rotated_span,
            rotated_factors: rotation.factors,
        })
    }
}

fn draw_loadings(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let dist = uniform(spec.loading_range.0, spec.loading_range.1);
    DMatrix::from_fn(spec.p, spec.k, |_, _| dist.sample(rng))
}

/// Independent AR(1) paths, one column per coefficient, after `burn_in`
/// discarded periods started at zero.
fn ar1_paths(coefs: &[f64], len: usize, burn_in: usize, sd: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(len, coefs.len());
    for (j, &a) in coefs.iter().enumerate() {
        let mut state = 0.0;
        for s in 0..burn_in + len {
            let e: f64 = StandardNormal.sample(rng);
            state = a * state + sd * e;
            if s >= burn_in {
                out[(s - burn_in, j)] = state;
            }
        }
    }
    out
}

/// Invertible `H` with `T^{-1} H F'F H' = I` and `H^{-T} B'B H^{-1}` diagonal
/// (descending), together with the rotated factors `F H'` and loadings `B H^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub h: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
}

impl Rotation {
    /// Map directions acting on `f` to directions acting on `H f`: `H^{-T} phi`.
    pub fn rotate_directions(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        self.h_inv.transpose() * phi
    }
}

pub fn identifiability_rotation(f: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Rotation> {
    if f.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "factors have {} columns, loadings {}",
            f.ncols(),
            b.ncols()
        )));
    }
    let t = f.nrows() as f64;
    let cov = f.transpose() * f / t;
    let eig = sym_eigen(&cov)?;
    let (hi, lo) = (eig.values[0], eig.values[eig.values.len() - 1]);
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient("factor second-moment matrix".into()));
    }
    let sqrt = &eig.vectors * DMatrix::from_diagonal(&eig.values.map(f64::sqrt)) * eig.vectors.transpose();
    let inv_sqrt = &eig.vectors * DMatrix::from_diagonal(&eig.values.map(|v| 1.0 / v.sqrt())) * eig.vectors.transpose();
    let btb = b.transpose() * b;
    let inner = sym_eigen(&(&sqrt * &btb * &sqrt))?;
    let min_inner = inner.values[inner.values.len() - 1];
    if !(min_inner > 1e-12 * inner.values[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient("loadings Gram matrix".into()));
    }
    let q = inner.vectors;
    let h = q.transpose() * &inv_sqrt;
    let h_inv = &sqrt * &q;
    Ok(Rotation {
        factors: f * h.transpose(),
        loadings: b * &h_inv,
        h,
        h_inv,
    })
}

/// Squared length of the projection of `phi_hat / |phi_hat|` onto the span of
/// the orthonormal columns of `span`: `max_{phi in span, |phi| = 1} (phi'phi_hat)^2`.
pub fn subspace_r2(phi_hat: &[f64], span: &DMatrix<f64>) -> Result<f64> {
    if phi_hat.len() != span.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries, span has {} rows",
            phi_hat.len(),
            span.nrows()
        )));
    }
    let v = DVector::from_column_slice(phi_hat);
    let norm2 = v.norm_squared();
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return Err(Error::InvalidArgument("direction must be a nonzero finite vector".into()));
    }
    let proj = span.transpose() * &v;
    Ok((proj.norm_squared() / norm2).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub methods: Vec<ForecastMethod>,
    pub n_reps: usize,
    /// Number of estimated directions.
    pub l: usize,
    pub h_count: usize,
    pub variance_mode: VarianceMode,
    /// Number of factors used for estimation; `auto` selects it per replication.
    pub k: OrderPolicy,
    pub k_max: usize,
    /// Score estimated directions against the rotated true span.
    pub direction_metrics: bool,
    /// Score forecasts on the `spec.n_test` held-out periods.
    pub forecast_metrics: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            spec: DgpSpec::default(),
            methods: vec![ForecastMethod::Sir, ForecastMethod::Dr, ForecastMethod::Pc],
            n_reps: 200,
            l: 2,
            h_count: DEFAULT_SLICES,
            variance_mode: VarianceMode::Identity,
            k: OrderPolicy::Fixed(6),
            k_max: 8,
            direction_metrics: true,
            forecast_metrics: true,
        }
    }
}

/// Metrics of one method in one replication; `None` where not applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub method: ForecastMethod,
    pub k: usize,
    pub r2_phi1: Option<f64>,
    pub r2_phi2: Option<f64>,
    pub oos_r2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub median: f64,
    pub sd: f64,
    pub n: usize,
}

impl CellStats {
    /// Median and sample standard deviation; the deviation of a single value is 0.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let sd = if n < 2 {
            0.0
        } else {
            let m = v.iter().sum::<f64>() / n as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(CellStats { median, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: ForecastMethod,
    pub n_ok: usize,
    pub n_failed: usize,
    pub r2_phi1: Option<CellStats>,
    pub r2_phi2: Option<CellStats>,
    pub oos_r2: Option<CellStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyMetadata {
    pub seed: u64,
    pub n_reps: usize,
    pub crate_version: String,
    pub runtime_secs: f64,
    pub failed_replications: usize,
    /// `(replication, method, message)` for every failure.
    pub failures: Vec<(usize, ForecastMethod, String)>,
    pub rows: Vec<MethodSummary>,
    pub config: StudyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub config: StudyConfig,
    pub rows: Vec<MethodSummary>,
    /// Every replication, ordered by replication then method.
    pub reps: Vec<RepResult>,
}

impl StudyTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.n_failed).sum()
    }

    pub fn row(&self, method: ForecastMethod) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Table in percent, one row per method: medians and standard deviations
    /// of `R^2(phi1)`, `R^2(phi2)` and the out-of-sample `R^2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,p,t,method,n_ok,n_failed,r2_phi1_median_pct,r2_phi1_sd_pct,r2_phi2_median_pct,r2_phi2_sd_pct,oos_r2_median_pct,oos_r2_sd_pct\n",
        );
        let cell = |c: &Option<CellStats>| match c {
            Some(s) => (format!("{}", 100.0 * s.median), format!("{}", 100.0 * s.sd)),
            None => (String::new(), String::new()),
        };
        let spec = &self.config.spec;
        for row in &self.rows {
            let (a, b) = cell(&row.r2_phi1);
            let (c, d) = cell(&row.r2_phi2);
            let (e, f) = cell(&row.oos_r2);
            let _ = writeln!(
                out,
                "{:?},{},{},{},{},{},{a},{b},{c},{d},{e},{f}",
                spec.link,
                spec.p,
                spec.t,
                row.method.label(),
                row.n_ok,
                row.n_failed
            );
        }
        out
    }

    /// Metadata block: configuration, seed, crate version, failure count and
    /// the supplied runtime. Kept out of the CSV so the table stays byte-stable.
    pub fn metadata(&self, runtime_secs: f64) -> StudyMetadata {
        StudyMetadata {
            seed: self.config.spec.seed,
            n_reps: self.config.n_reps,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            runtime_secs,
            failed_replications: self.failures(),
            failures: self
                .reps
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| (r.rep, r.method, e.clone())))
                .collect(),
            rows: self.rows.clone(),
            config: self.config.clone(),
        }
    }

    /// Write `table.csv`, `replications.csv` and `metadata.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, runtime_secs: f64) -> Result<()> {
        ensure_dir(dir)?;
        let table = dir.join("table.csv");
        std::fs::write(&table, self.to_csv()).map_err(io_err(&table))?;
        let reps = dir.join("replications.csv");
        std::fs::write(&reps, self.reps_csv()).map_err(io_err(&reps))?;
        write_json(&dir.join("metadata.json"), &self.metadata(runtime_secs))
    }

    pub fn reps_csv(&self) -> String {
        let mut out = String::from("rep,method,k,r2_phi1,r2_phi2,oos_r2,error\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.reps {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.rep,
                r.method.label(),
                r.k,
                opt(r.r2_phi1),
                opt(r.r2_phi2),
                opt(r.oos_r2),
                err
            );
        }
        out
    }
}

fn run_replication(dgp: &Dgp, config: &StudyConfig, rep: usize) -> Vec<RepResult> {
    let failed = |method, msg: String| RepResult {
        rep,
        method,
        k: 0,
        r2_phi1: None,
        r2_phi2: None,
        oos_r2: None,
        error: Some(msg),
    };
    let prepared = prepare_replication(dgp, config, rep);
    let (draw, fit) = match prepared {
        Ok(v) => v,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| failed(m, e.to_string()))
                .collect()
        }
    };
    config
        .methods
        .iter()
        .map(|&method| match score_method(&draw, &fit, config, method) {
            Ok(mut r) => {
                r.rep = rep;
                r
            }
            Err(e) => failed(method, e.to_string()),
        })
        .collect()
}

fn prepare_replication(dgp: &Dgp, config: &StudyConfig, rep: usize) -> Result<(SimDraw, crate::factors::FactorEstimate)> {
    let draw = dgp.sample(rep as u64)?;
    let t = dgp.spec.t;
    let x_train = draw.x.columns(0, t).into_owned();
    let k = match config.k {
        OrderPolicy::Fixed(k) => k,
        OrderPolicy::Auto => {
            let k_max = config.k_max.min(x_train.nrows()).min(t);
            select_num_factors(&x_train, k_max, FactorPenalty::Ic1)?.k_hat.max(1)
        }
    };
    let fit = fit_factors(&x_train, k)?;
    Ok((draw, fit))
}

fn score_method(
    draw: &SimDraw,
    fit: &crate::factors::FactorEstimate,
    config: &StudyConfig,
    method: ForecastMethod,
) -> Result<RepResult> {
    let spec = &config.spec;
    let t = spec.t;
    let y_train = &draw.y[..t];
    let k = fit.k();
    let mut result = RepResult {
        rep: 0,
        method,
        k,
        r2_phi1: None,
        r2_phi2: None,
        oos_r2: None,
        error: None,
    };
    let model = match method.kernel() {
        Some(kernel_method) => {
            let slices = slice(y_train, config.h_count)?;
            let kernel = build_kernel(kernel_method, &fit.factors, &slices, config.variance_mode)?;
            let l = config.l.min(k);
            let directions = extract_directions(&kernel, l)?;
            if config.direction_metrics && k == spec.k {
                let span = draw.aligned_span(&fit.factors)?;
                let r2 = |j: usize| -> Result<Option<f64>> {
                    if j < l {
                        let col: Vec<f64> = directions.column(j).iter().copied().collect();
                        subspace_r2(&col, &span).map(Some)
                    } else {
                        Ok(None)
                    }
                };
                result.r2_phi1 = r2(0)?;
                result.r2_phi2 = r2(1)?;
            }
            if !config.forecast_metrics {
                return Ok(result);
            }
            fit_index_model(&fit.factors, y_train, &directions, method, None)?
        }
        None => {
            if !config.forecast_metrics {
                return Ok(result);
            }
            let mode = if method == ForecastMethod::Pc {
                PcMode::Linear
            } else {
                PcMode::Additive
            };
            fit_pc_baseline(&fit.factors, y_train, mode)?
        }
    };
    if spec.n_test > 0 {
        let ybar = y_train.iter().sum::<f64>() / t as f64;
        let mut sse = 0.0;
        let mut sst = 0.0;
        for s in t..t + spec.n_test {
            let x_s: Vec<f64> = draw.x.column(s).iter().copied().collect();
            let f_s = fit.project(&x_s)?;
            let yhat = predict(&model, f_s.as_slice())?;
            sse += (draw.y[s] - yhat).powi(2);
            sst += (draw.y[s] - ybar).powi(2);
        }
        result.oos_r2 = Some(1.0 - sse / sst);
    }
    Ok(result)
}

/// Run `config.n_reps` replications (in parallel) and summarize each method.
/// Replication `r` draws from the random stream `(seed, r)`, so the table does
/// not depend on scheduling. Failed replications are counted per method.
pub fn monte_carlo_study(config: &StudyConfig) -> Result<StudyTable> {
    if config.n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    let dgp = Dgp::new(config.spec.clone())?;
    let reps: Vec<RepResult> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(&dgp, config, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let rows = config
        .methods
        .iter()
        .map(|&method| {
            let mine: Vec<&RepResult> = reps.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&&RepResult> = mine.iter().filter(|r| r.error.is_none()).collect();
            let stats = |get: fn(&RepResult) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
                CellStats::from_values(&vals)
            };
            MethodSummary {
                method,
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                r2_phi1: stats(|r| r.r2_phi1),
                r2_phi2: stats(|r| r.r2_phi2),
                oos_r2: stats(|r| r.oos_r2),
            }
        })
        .collect();
    Ok(StudyTable {
        config: config.clone(),
        rows,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_reference_values() {
        assert!((Link::I.eval(1.0, 0.0) - 0.4).abs() < 1e-15);
        assert!((Link::I.eval(0.0, 4.0) - 3.0 * 1f64.sin()).abs() < 1e-15);
        assert!((Link::II.eval(4.0, -4.0)).abs() < 1e-15);
        assert!((Link::III.eval(2.0, -9.0) - (1.6 + 3.0)).abs() < 1e-15);
        assert_eq!(Link::IV.eval(2.0, 3.0), 8.0);
        assert_eq!("iii".parse::<Link>().unwrap(), Link::III);
        assert!("V".parse::<Link>().is_err());
    }

    #[test]
    fn zero_innovations_give_zero_target() {
        let spec = DgpSpec {
            p: 10,
            t: 30,
            n_test: 0,
            sigma: 0.0,
            link: Link::IV,
            factor_innovation_sd: 0.0,
            ..DgpSpec::default()
        };
        let dgp = Dgp::new(spec).unwrap();
        // rotation needs full-rank factors, so build the draw by hand
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = ar1_paths(&dgp.alphas, 30, 100, 0.0, &mut rng);
        assert!(f.iter().all(|v| *v == 0.0));
        let idx = &f * dgp.spec.phi();
        for s in 0..30 {
            assert_eq!(Link::IV.eval(idx[(s, 0)], idx[(s, 1)]), 0.0);
        }
        assert!(matches!(dgp.sample(0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn same_seed_same_draw() {
        let spec = DgpSpec {
            p: 20,
            t: 50,
            n_test: 10,
            ..DgpSpec::default()
        };
        let a = Dgp::new(spec.clone()).unwrap().sample(3).unwrap();
        let b = Dgp::new(spec).unwrap().sample(3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x.ncols(), 60);
    }

    #[test]
    fn replications_differ() {
        let dgp = Dgp::new(DgpSpec {
            p: 20,
            t: 50,
            ..DgpSpec::default()
        })
        .unwrap();
        assert_ne!(dgp.sample(0).unwrap().y, dgp.sample(1).unwrap().y);
    }

    #[test]
    fn ar_paths_are_centered() {
        let coefs = [0.2, 0.5, 0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = 50_000;
        let f = ar1_paths(&coefs, t, 100, 1.0, &mut rng);
        for (j, a) in coefs.iter().enumerate() {
            let mean = f.column(j).sum() / t as f64;
            // long-run standard error of an AR(1) mean
            let se = (1.0 / (1.0 - a * a)).sqrt() * ((1.0 + a) / (1.0 - a)).sqrt() / (t as f64).sqrt();
            assert!(mean.abs() < 5.0 * se, "factor {j}: mean {mean}, se {se}");
            let var = f.column(j).map(|v| v * v).sum() / t as f64;
            assert!((var * (1.0 - a * a) - 1.0).abs() < 0.05, "factor {j}: variance {var}");
        }
    }

    #[test]
    fn ar_parameters_in_range() {
        let dgp = Dgp::new(DgpSpec::default()).unwrap();
        assert!(dgp.alphas.iter().chain(&dgp.rhos).all(|a| (0.2..0.8).contains(a)));
        assert!(dgp.loadings.iter().all(|b| (-1.0..2.0).contains(b)));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_phi = DgpSpec {
            phi1: vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            ..DgpSpec::default()
        };
        assert!(Dgp::new(bad_phi).is_err());
        let bad_ar = DgpSpec {
            ar_range: (0.5, 1.5),
            ..DgpSpec::default()
        };
        assert!(Dgp::new(bad_ar).is_err());
    }

    fn unit_rows(t: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, k, |_, _| StandardNormal.sample(&mut rng))
    }

    fn check_rotation(rot: &Rotation, f: &DMatrix<f64>, b: &DMatrix<f64>) {
        let k = f.ncols();
        let t = f.nrows() as f64;
        let c = &rot.h * f.transpose() * f * rot.h.transpose() / t;
        assert!((c - DMatrix::identity(k, k)).norm() < 1e-8);
        let d = rot.h_inv.transpose() * b.transpose() * b * &rot.h_inv;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    assert!(d[(i, j)].abs() < 1e-8 * d.norm());
                }
            }
        }
        assert!((&rot.h * &rot.h_inv - DMatrix::identity(k, k)).norm() < 1e-10);
    }

    #[test]
    fn rotation_constraints_random() {
        let f = unit_rows(200, 3, 1) * DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.0, 2.0, 0.5, 0.1, 0.0, 0.7]);
        let b = unit_rows(40, 3, 2);
        let rot = identifiability_rotation(&f, &b).unwrap();
        check_rotation(&rot, &f, &b);
        // the link index is preserved: phi'f_t = (H^{-T} phi)' (H f_t)
        let phi = DMatrix::from_column_slice(3, 1, &[0.6, 0.0, 0.8]);
        let before = &f * &phi;
        let after = &rot.factors * rot.rotate_directions(&phi);
        assert!((before - after).norm() < 1e-9);
    }

    fn standardized_factors(t: usize) -> DMatrix<f64> {
        // exact orthonormal columns scaled so F'F/T = I
        let raw = unit_rows(t, 2, 5);
        let q = orthonormal_basis(&raw);
        q * (t as f64).sqrt()
    }

    #[test]
    fn rotation_identity_when_already_identified() {
        let f = standardized_factors(50);
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let rot = identifiability_rotation(&f, &b).unwrap();
        assert!((rot.h.abs() - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn rotation_of_scaled_factors() {
        let f = standardized_factors(50) * 2.0;
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let rot = identifiability_rotation(&f, &b).unwrap();
        assert!((rot.h.abs() - DMatrix::identity(2, 2) * 0.5).norm() < 1e-10);
    }

    #[test]
    fn r2_projection_cases() {
        let span = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((subspace_r2(&[0.6, 0.8, 0.0], &span).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(subspace_r2(&[0.0, 0.0, 1.0], &span).unwrap(), 0.0);
        let s = 0.5f64.sqrt();
        assert!((subspace_r2(&[s, 0.0, s], &span).unwrap() - 0.5).abs() < 1e-15);
        assert!(subspace_r2(&[0.0, 0.0, 0.0], &span).is_err());
    }

    #[test]
    fn cell_stats_single_value() {
        let c = CellStats::from_values(&[0.7]).unwrap();
        assert_eq!(c.median, 0.7);
        assert_eq!(c.sd, 0.0);
        let c = CellStats::from_values(&[1.0, 3.0, 2.0, 10.0]).unwrap();
        assert_eq!(c.median, 2.5);
        assert!(CellStats::from_values(&[]).is_none());
    }

    #[test]
    fn single_replication_table() {
        let config = StudyConfig {
            spec: DgpSpec {
                p: 30,
                t: 80,
                n_test: 20,
                ..DgpSpec::default()
            },
            methods: vec![ForecastMethod::Dr, ForecastMethod::Pc],
            n_reps: 1,
            ..StudyConfig::default()
        };
        let table = monte_carlo_study(&config).unwrap();
        let dr = table.row(ForecastMethod::Dr).unwrap();
        assert_eq!(dr.n_ok, 1);
        assert_eq!(dr.r2_phi1.unwrap().sd, 0.0);
        assert!(table.row(ForecastMethod::Pc).unwrap().r2_phi1.is_none());
        assert_eq!(table.failures(), 0);
        let dir = tempfile::tempdir().unwrap();
        table.write_dir(dir.path(), 0.5).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
        assert_eq!(csv, table.to_csv());
        assert_eq!(csv.lines().count(), 3);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["failed_replications"], 0);
        assert_eq!(meta["config"]["n_reps"], 1);
    }
}
