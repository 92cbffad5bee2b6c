//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance under which two eigenvalues are treated as tied.
const TIE_RTOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues descending, vectors
/// sign-fixed so that the entry of largest magnitude is nonnegative.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Index of the entry of largest magnitude (first one on ties).
pub(crate) fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}

/// Flip column signs in place so each column's largest-magnitude entry is >= 0.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        if col.is_empty() {
            continue;
        }
        if col[argmax_abs(&col)] < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Order `(value, column)` pairs: descending value, and inside runs of tied
/// values by the position of each column's largest-magnitude entry.
pub(crate) fn descending_order(values: &[f64], vectors: &DMatrix<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let peak = |j: usize| {
        let col: Vec<f64> = vectors.column(j).iter().copied().collect();
        argmax_abs(&col)
    };
    let mut start = 0;
    while start < order.len() {
        let head = values[order[start]];
        let tol = TIE_RTOL * head.abs().max(1.0);
        let mut end = start + 1;
        while end < order.len() && (head - values[order[end]]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by_key(|&j| (peak(j), j));
        }
        start = end;
    }
    order
}

/// Symmetric eigendecomposition with deterministic ordering and signs.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("symmetric eigendecomposition"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(SortedEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure(format!("no convergence on {n}x{n} matrix")))?;
    let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = descending_order(&raw, &eig.eigenvectors);
    let values = DVector::from_iterator(n, order.iter().map(|&j| raw[j]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    Ok(SortedEigen { values, vectors })
}

/// Orthonormal basis for the column span of `m` (modified Gram-Schmidt,
/// dropping columns that are numerically dependent on earlier ones).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..m.ncols() {
        let mut v: DVector<f64> = m.column(j).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-12 * scale {
            cols.push(v / norm);
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Relative Frobenius distance `|a - b| / max(|a|, |b|, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
