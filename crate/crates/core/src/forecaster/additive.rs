//! Additive index models fitted by backfitting local-constant smoothers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;

/// Convergence threshold on the largest change of any fitted component value.
pub const BACKFIT_TOL: f64 = 1e-8;
pub const BACKFIT_MAX_SWEEPS: usize = 100;
/// Minimum number of training observations.
pub const MIN_TRAINING: usize = 5;

/// Normal-reference bandwidth `1.06 sd n^{-1/5}`.
pub fn reference_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    1.06 * sample_sd(values) * n.powf(-0.2)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Nadaraya-Watson smoother with a Gaussian kernel, holding the partial
/// residuals it was last fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub index: Vec<f64>,
    pub partial_residuals: Vec<f64>,
    pub bandwidth: f64,
    /// Zero-variance index: the component is identically zero.
    pub degenerate: bool,
    /// Subtracted from the smoothed value so the component has mean zero
    /// over the training indices.
    pub offset: f64,
}

impl Smoother {
    /// Normalized kernel weights at `x`. Exponents are shifted by the nearest
    /// squared distance, so far-away or narrow-bandwidth queries fall back to
    /// the nearest training points instead of underflowing.
    fn weights(&self, x: f64, out: &mut Vec<f64>) {
        out.clear();
        let two_h2 = 2.0 * self.bandwidth * self.bandwidth;
        let nearest = self
            .index
            .iter()
            .map(|xi| (x - xi) * (x - xi))
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for xi in &self.index {
            let w = (-((x - xi) * (x - xi) - nearest) / two_h2).exp();
            total += w;
            out.push(w);
        }
        for w in out.iter_mut() {
            *w /= total;
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let mut w = Vec::with_capacity(self.index.len());
        self.weights(x, &mut w);
        w.iter().zip(&self.partial_residuals).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }

    fn smoother_matrix(&self) -> DMatrix<f64> {
        let n = self.index.len();
        let mut m = DMatrix::zeros(n, n);
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            self.weights(self.index[i], &mut w);
            for (k, v) in w.iter().enumerate() {
                m[(i, k)] = *v;
            }
        }
        m
    }
}

/// Fitted additive model `y = intercept + sum_j s_j(z_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFit {
    pub intercept: f64,
    pub components: Vec<Smoother>,
    pub sweeps: usize,
    pub converged: bool,
}

impl AdditiveFit {
    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} index values for {} components",
                z.len(),
                self.components.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        Ok(self.intercept + self.components.iter().zip(z).map(|(s, &x)| s.eval(x)).sum::<f64>())
    }
}

/// Fit `targets ~ mean + sum_j s_j(indices[:, j])` by backfitting.
///
/// Each sweep updates `s_j <- S_j (y - mean - sum_{k != j} s_k)` in turn and
/// stops once no fitted value moves by more than [`BACKFIT_TOL`], or after
/// [`BACKFIT_MAX_SWEEPS`] sweeps. With two or more indices each component is
/// re-centered to mean zero after its update; otherwise constants shift
/// between components forever, because every smoother reproduces them. A
/// single index is left uncentered and reproduces the plain Nadaraya-Watson
/// fit of the targets.
pub fn fit_additive(indices: &DMatrix<f64>, targets: &[f64], bandwidths: Option<&[f64]>) -> Result<AdditiveFit> {
    let (n, l) = indices.shape();
    if n != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{n} index rows for {} targets",
            targets.len()
        )));
    }
    if n < MIN_TRAINING {
        return Err(Error::InsufficientData(format!(
            "additive fit needs at least {MIN_TRAINING} observations, got {n}"
        )));
    }
    if l == 0 {
        return Err(Error::InvalidArgument("additive fit needs at least one index".into()));
    }
    ensure_finite(indices, "additive model indices")?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("additive model targets"));
    }
    if let Some(bw) = bandwidths {
        if bw.len() != l {
            return Err(Error::DimensionMismatch(format!("{} bandwidths for {l} indices", bw.len())));
        }
        if bw.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidArgument("bandwidths must be positive and finite".into()));
        }
    }

    let intercept = mean(targets);
    let centered: Vec<f64> = targets.iter().map(|y| y - intercept).collect();
    let mut components = Vec::with_capacity(l);
    let mut smoothers = Vec::with_capacity(l);
    for j in 0..l {
        let index: Vec<f64> = indices.column(j).iter().copied().collect();
        let sd = sample_sd(&index);
        let scale = index.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let degenerate = !(sd > 1e-12 * scale.max(1e-300));
        if degenerate {
            log::warn!("index {j} has zero variance; its component is fixed at 0");
        }
        let bandwidth = match bandwidths {
            Some(bw) => bw[j],
            None if degenerate => 1.0,
            None => reference_bandwidth(&index),
        };
        let smoother = Smoother {
            index,
            partial_residuals: vec![0.0; n],
            bandwidth,
            degenerate,
            offset: 0.0,
        };
        smoothers.push((!degenerate).then(|| smoother.smoother_matrix()));
        components.push(smoother);
    }

    let mut fitted: Vec<DVector<f64>> = vec![DVector::zeros(n); l];
    let mut total = DVector::<f64>::zeros(n);
    let target_vec = DVector::from_column_slice(&centered);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < BACKFIT_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..l {
            let Some(matrix) = &smoothers[j] else { continue };
            let partial = &target_vec - (&total - &fitted[j]);
            let mut update = matrix * &partial;
            let offset = if l > 1 { update.mean() } else { 0.0 };
            update.add_scalar_mut(-offset);
            let change = (&update - &fitted[j]).amax();
            max_change = max_change.max(change);
            total += &update - &fitted[j];
            fitted[j] = update;
            components[j].partial_residuals = partial.iter().copied().collect();
            components[j].offset = offset;
        }
        if max_change < BACKFIT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("backfitting stopped after {sweeps} sweeps without converging");
    }
    Ok(AdditiveFit {
        intercept,
        components,
        sweeps,
        converged,
    })
}

/// Ordinary least squares with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearFit {
    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} regressors for {} coefficients",
                f.len(),
                self.coefficients.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        Ok(self.intercept + self.coefficients.iter().zip(f).map(|(b, x)| b * x).sum::<f64>())
    }
}

/// Least squares of `targets` on `[1, regressors]` via Householder QR.
pub fn fit_linear(regressors: &DMatrix<f64>, targets: &[f64]) -> Result<LinearFit> {
    let (n, k) = regressors.shape();
    if n != targets.len() {
        return Err(Error::DimensionMismatch(format!("{n} regressor rows for {} targets", targets.len())));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "linear fit with {k} regressors needs more than {k} observations, got {n}"
        )));
    }
    ensure_finite(regressors, "linear regressors")?;
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { regressors[(i, j - 1)] });
    let qr = design.qr();
    let r = qr.r();
    let diag_max = (0..=k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..=k).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient("linear design matrix".into()));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(targets);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("linear design matrix".into()))?;
    Ok(LinearFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}
