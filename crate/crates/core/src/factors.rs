//! Principal-components estimation of an approximate factor model.
//!
//! Solves `min |X - B F'|_F^2` subject to `F'F / T = I` and `B'B` diagonal.
//! The solution is read off a thin singular value decomposition of `X`:
//! the columns of `F / sqrt(T)` are the leading right singular vectors, which
//! are the leading eigenvectors of `X'X`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ensure_dir, numbered_header, write_matrix_csv};
use crate::linalg::{descending_order, ensure_finite, fix_column_signs};

/// Relative floor applied to the mean squared residual before taking logs.
const RESIDUAL_REL_FLOOR: f64 = 1e-20;
/// Absolute floor applied to the mean squared residual before taking logs.
const RESIDUAL_ABS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    /// `B`, p x K.
    pub loadings: DMatrix<f64>,
    /// `F`, T x K; row `t` is the factor vector at time `t`.
    pub factors: DMatrix<f64>,
    /// Leading eigenvalues of `X'X / (pT)`, descending.
    pub eigenvalues: DVector<f64>,
    /// `(B'B)^{-1} B'`, K x p.
    pub loadings_pinv: DMatrix<f64>,
}

impl FactorEstimate {
    pub fn k(&self) -> usize {
        self.factors.ncols()
    }

    /// Factor scores for a new cross-section `x_t` (length p).
    pub fn project(&self, x_t: &[f64]) -> Result<DVector<f64>> {
        if x_t.len() != self.loadings_pinv.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "cross-section has {} entries, loadings have {} rows",
                x_t.len(),
                self.loadings_pinv.ncols()
            )));
        }
        Ok(&self.loadings_pinv * DVector::from_column_slice(x_t))
    }

    /// Write `loadings.csv`, `factors.csv` and `eigenvalues.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let k = self.k();
        write_matrix_csv(&dir.join("loadings.csv"), &self.loadings, &numbered_header("b", k))?;
        write_matrix_csv(&dir.join("factors.csv"), &self.factors, &numbered_header("f", k))?;
        let ev = DMatrix::from_column_slice(k, 1, self.eigenvalues.as_slice());
        write_matrix_csv(&dir.join("eigenvalues.csv"), &ev, &["eigenvalue".to_string()])
    }
}

struct SortedSvd {
    /// Singular values, descending.
    values: Vec<f64>,
    /// Right singular vectors as columns (T x r).
    right: DMatrix<f64>,
}

fn sorted_svd(x: &DMatrix<f64>, vectors: bool) -> Result<SortedSvd> {
    let svd = nalgebra::linalg::SVD::try_new(x.clone(), false, vectors, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("singular value decomposition did not converge".into()))?;
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();
    if !vectors {
        let mut values = raw;
        values.sort_by(|a, b| b.total_cmp(a));
        return Ok(SortedSvd {
            values,
            right: DMatrix::zeros(0, 0),
        });
    }
    let w = svd
        .v_t
        .ok_or_else(|| Error::EigenFailure("missing right singular vectors".into()))?
        .transpose();
    let order = descending_order(&raw, &w);
    let mut right = DMatrix::zeros(w.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        right.set_column(dst, &w.column(src));
    }
    Ok(SortedSvd {
        values: order.iter().map(|&j| raw[j]).collect(),
        right,
    })
}

/// Estimate `k` factors and loadings from the `p x T` panel `x`.
pub fn fit_factors(x: &DMatrix<f64>, k: usize) -> Result<FactorEstimate> {
    let (p, t) = x.shape();
    if k == 0 || k > p.min(t) {
        return Err(Error::InvalidArgument(format!(
            "number of factors {k} must lie in 1..={}",
            p.min(t)
        )));
    }
    ensure_finite(x, "factor panel")?;
    let svd = sorted_svd(x, true)?;
    let tf = t as f64;
    let mut factors = svd.right.columns(0, k) * tf.sqrt();
    fix_column_signs(&mut factors);
    let loadings = x * &factors / tf;
    let eigenvalues = DVector::from_iterator(k, svd.values[..k].iter().map(|s| s * s / (p as f64 * tf)));
    let loadings_pinv = left_pinv(&loadings);
    Ok(FactorEstimate {
        loadings,
        factors,
        eigenvalues,
        loadings_pinv,
    })
}

/// `(B'B)^{-1} B'`, falling back to the Moore-Penrose inverse when `B'B` is
/// singular (loadings of an exactly rank-deficient panel).
fn left_pinv(b: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = b.transpose() * b;
    if let Some(chol) = gram.clone().cholesky() {
        let sol = chol.solve(&b.transpose());
        if sol.iter().all(|v| v.is_finite()) {
            return sol;
        }
    }
    let tol = 1e-12 * b.norm().max(f64::MIN_POSITIVE);
    b.clone()
        .pseudo_inverse(tol)
        .unwrap_or_else(|_| DMatrix::zeros(b.ncols(), b.nrows()))
}

/// Factors implied by known loadings: rows `(B'B)^{-1} B' x_t`.
pub fn estimated_factors_known_loadings(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} series, loadings have {} rows",
            x.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(x, "panel")?;
    ensure_finite(b, "loadings")?;
    let gram = b.transpose() * b;
    let eig = crate::linalg::sym_eigen(&gram)?;
    let (hi, lo) = (eig.values[0], eig.values[eig.values.len() - 1]);
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient(format!(
            "loadings Gram matrix has eigenvalue range [{lo:e}, {hi:e}]"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("loadings Gram matrix not positive definite".into()))?;
    Ok(chol.solve(&(b.transpose() * x)).transpose())
}

/// `X - B F'`.
pub fn residuals(x: &DMatrix<f64>, fit: &FactorEstimate) -> Result<DMatrix<f64>> {
    if x.nrows() != fit.loadings.nrows() || x.ncols() != fit.factors.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "panel is {}x{}, fit covers {}x{}",
            x.nrows(),
            x.ncols(),
            fit.loadings.nrows(),
            fit.factors.nrows()
        )));
    }
    Ok(x - &fit.loadings * fit.factors.transpose())
}

/// Penalty `g(p, T)` in the factor-number criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorPenalty {
    /// `(p+T)/(pT) * ln(pT/(p+T))`.
    #[default]
    Ic1,
    /// `(p+T)/(pT) * ln(min(p, T))`.
    Ic2,
    /// `ln(min(p, T)) / min(p, T)`.
    Ic3,
}

impl FactorPenalty {
    pub fn value(self, p: usize, t: usize) -> f64 {
        let (pf, tf) = (p as f64, t as f64);
        let c2 = pf.min(tf);
        match self {
            FactorPenalty::Ic1 => (pf + tf) / (pf * tf) * (pf * tf / (pf + tf)).ln(),
            FactorPenalty::Ic2 => (pf + tf) / (pf * tf) * c2.ln(),
            FactorPenalty::Ic3 => c2.ln() / c2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumFactorsSelection {
    pub k_hat: usize,
    pub k_max: usize,
    pub penalty: FactorPenalty,
    /// `ln` of the floored mean squared residual, for K = 0..=k_max.
    pub log_residual: Vec<f64>,
    /// `K * g(p, T)`, for K = 0..=k_max.
    pub penalty_term: Vec<f64>,
    /// Sum of the two terms.
    pub criterion: Vec<f64>,
}

/// Choose the number of factors by minimizing
/// `ln(|X - X F_K F_K' / T|_F^2 / (pT)) + K g(p, T)` over `0..=k_max`.
///
/// The residual for each `K` is the tail sum of squared singular values,
/// which equals the Frobenius residual of the `K`-factor fit. Ties go to the
/// smaller `K`.
pub fn select_num_factors(x: &DMatrix<f64>, k_max: usize, penalty: FactorPenalty) -> Result<NumFactorsSelection> {
    let (p, t) = x.shape();
    if k_max == 0 || k_max > p.min(t) {
        return Err(Error::InvalidArgument(format!(
            "k_max {k_max} must lie in 1..={}",
            p.min(t)
        )));
    }
    ensure_finite(x, "factor panel")?;
    let svd = sorted_svd(x, false)?;
    let squares: Vec<f64> = svd.values.iter().map(|s| s * s).collect();
    let n = (p * t) as f64;
    // tail[k] = sum_{i >= k} s_i^2, accumulated from the small end
    let mut tail = vec![0.0; squares.len() + 1];
    for i in (0..squares.len()).rev() {
        tail[i] = tail[i + 1] + squares[i];
    }
    let total = tail[0] / n;
    let floor = (RESIDUAL_REL_FLOOR * total).max(RESIDUAL_ABS_FLOOR);
    let g = penalty.value(p, t);
    let mut log_residual = Vec::with_capacity(k_max + 1);
    let mut penalty_term = Vec::with_capacity(k_max + 1);
    let mut criterion = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let v = (tail[k] / n).max(floor);
        log_residual.push(v.ln());
        penalty_term.push(k as f64 * g);
        criterion.push(v.ln() + k as f64 * g);
    }
    let mut k_hat = 0;
    for (k, c) in criterion.iter().enumerate() {
        if *c < criterion[k_hat] {
            k_hat = k;
        }
    }
    Ok(NumFactorsSelection {
        k_hat,
        k_max,
        penalty,
        log_residual,
        penalty_term,
        criterion,
    })
}
