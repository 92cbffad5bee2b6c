//! Slicing, inverse-moment kernel matrices, and index-dimension selection.
//!
//! All kernels are built from globally centered factors `f_t - mean(f)` and
//! slice proportions `c_h / T`. The leading eigenvectors of a kernel span the
//! estimated forecasting directions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, sym_eigen};

/// Eigenvalues above this count as strictly positive in [`select_dimension`].
pub const POSITIVE_EIGENVALUE_TOL: f64 = 1e-12;
pub const DEFAULT_SLICES: usize = 10;
pub const DEFAULT_CENSORING: f64 = 0.5;

/// Partition of the target sample into `h_count` equal-frequency slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceAssignment {
    pub h_count: usize,
    /// Slice of each observation, in time order.
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    /// Largest target value inside each slice (the upper empirical quantile).
    pub boundaries: Vec<f64>,
}

impl SliceAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Observation indices of each slice, in time order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.h_count];
        for (t, &h) in self.labels.iter().enumerate() {
            out[h].push(t);
        }
        out
    }
}

/// Split `y` into `h_count` slices by rank. Observations are ordered by
/// value with ties broken by time index, and rank `r` goes to slice
/// `floor(r * H / T)`, so slice sizes differ by at most one.
pub fn slice(y: &[f64], h_count: usize) -> Result<SliceAssignment> {
    let t = y.len();
    if h_count < 1 {
        return Err(Error::InvalidArgument("number of slices must be at least 1".into()));
    }
    if h_count > t {
        return Err(Error::InvalidArgument(format!(
            "{h_count} slices requested for {t} observations"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slicing target"));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut labels = vec![0; t];
    let mut counts = vec![0; h_count];
    let mut boundaries = vec![f64::NEG_INFINITY; h_count];
    for (rank, &idx) in order.iter().enumerate() {
        let h = rank * h_count / t;
        labels[idx] = h;
        counts[h] += 1;
        boundaries[h] = y[idx];
    }
    Ok(SliceAssignment {
        h_count,
        labels,
        counts,
        boundaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelMethod {
    #[serde(rename = "SIR")]
    Sir,
    #[serde(rename = "DR")]
    Dr,
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "DR+TM")]
    Ensemble,
}

impl KernelMethod {
    pub fn label(self) -> &'static str {
        match self {
            KernelMethod::Sir => "SIR",
            KernelMethod::Dr => "DR",
            KernelMethod::Tm => "TM",
            KernelMethod::Ensemble => "DR+TM",
        }
    }
}

/// Estimate of `var(f)` used inside the directional-regression kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `I_K`, matching the normalization of estimated factors.
    #[default]
    Identity,
    /// Pooled second moment of the centered factors.
    Pooled,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(VarianceMode::Identity),
            "pooled" => Ok(VarianceMode::Pooled),
            other => Err(Error::InvalidArgument(format!("unknown variance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub method: KernelMethod,
    /// Symmetric K x K kernel.
    pub matrix: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    /// Matching unit eigenvectors as columns, sign-fixed.
    pub eigenvectors: DMatrix<f64>,
    pub variance_mode: Option<VarianceMode>,
    pub h_count: usize,
    /// Leading directions, once extracted.
    pub directions: Option<DMatrix<f64>>,
}

impl KernelEstimate {
    pub fn from_matrix(
        method: KernelMethod,
        matrix: DMatrix<f64>,
        variance_mode: Option<VarianceMode>,
        h_count: usize,
    ) -> Result<Self> {
        ensure_finite(&matrix, "kernel matrix")?;
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym_eigen(&matrix)?;
        Ok(KernelEstimate {
            method,
            matrix,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
            variance_mode,
            h_count,
            directions: None,
        })
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    /// Extract and store the leading `l` directions.
    pub fn with_directions(mut self, l: usize) -> Result<Self> {
        self.directions = Some(extract_directions(&self, l)?);
        Ok(self)
    }

    /// Summary row for JSON export.
    pub fn summary(&self, selection: Option<&DimensionSelection>) -> KernelSummary {
        KernelSummary {
            method: self.method,
            h_count: self.h_count,
            variance_mode: self.variance_mode,
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            l_hat: selection.map(|s| s.l_hat),
            objective: selection.map(|s| s.objective.clone()),
        }
    }

    /// Write `kernel.csv`, `eigenvalues.csv` and `kernel.json` into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path, selection: Option<&DimensionSelection>) -> Result<()> {
        use crate::io::{ensure_dir, numbered_header, write_json, write_matrix_csv};
        ensure_dir(dir)?;
        let k = self.k();
        write_matrix_csv(&dir.join("kernel.csv"), &self.matrix, &numbered_header("m", k))?;
        let ev = DMatrix::from_column_slice(k, 1, self.eigenvalues.as_slice());
        write_matrix_csv(&dir.join("eigenvalues.csv"), &ev, &["eigenvalue".to_string()])?;
        write_json(&dir.join("kernel.json"), &self.summary(selection))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub method: KernelMethod,
    pub h_count: usize,
    pub variance_mode: Option<VarianceMode>,
    pub eigenvalues: Vec<f64>,
    pub l_hat: Option<usize>,
    pub objective: Option<Vec<f64>>,
}

/// Slice-level first and second moments of globally centered factors.
struct SliceMoments {
    centered: DMatrix<f64>,
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    second: Vec<DMatrix<f64>>,
    members: Vec<Vec<usize>>,
}

fn center_columns(f: &DMatrix<f64>) -> DMatrix<f64> {
    let t = f.nrows() as f64;
    let mut out = f.clone();
    for j in 0..f.ncols() {
        let mean = f.column(j).sum() / t;
        out.column_mut(j).add_scalar_mut(-mean);
    }
    out
}

fn slice_moments(factors: &DMatrix<f64>, slices: &SliceAssignment) -> Result<SliceMoments> {
    if factors.nrows() != slices.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} factor rows but {} sliced observations",
            factors.nrows(),
            slices.len()
        )));
    }
    if factors.ncols() == 0 {
        return Err(Error::InvalidArgument("factors have no columns".into()));
    }
    ensure_finite(factors, "factors")?;
    let centered = center_columns(factors);
    let t = factors.nrows() as f64;
    let k = factors.ncols();
    let members = slices.members();
    let mut weights = Vec::with_capacity(slices.h_count);
    let mut means = Vec::with_capacity(slices.h_count);
    let mut second = Vec::with_capacity(slices.h_count);
    for (h, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::EmptySlice(h));
        }
        let c = idx.len() as f64;
        let mut m = DVector::zeros(k);
        let mut s = DMatrix::zeros(k, k);
        for &row in idx {
            let f = centered.row(row).transpose();
            m += &f;
            s.ger(1.0, &f, &f, 1.0);
        }
        weights.push(c / t);
        means.push(m / c);
        second.push(s / c);
    }
    Ok(SliceMoments {
        centered,
        weights,
        means,
        second,
        members,
    })
}

impl SliceMoments {
    fn variance(&self, mode: VarianceMode) -> DMatrix<f64> {
        let k = self.centered.ncols();
        match mode {
            VarianceMode::Identity => DMatrix::identity(k, k),
            VarianceMode::Pooled => self
                .weights
                .iter()
                .zip(&self.second)
                .fold(DMatrix::zeros(k, k), |acc, (w, s)| acc + s * *w),
        }
    }

    /// `sum_h p_h m_h m_h'`.
    fn mean_outer(&self) -> DMatrix<f64> {
        let k = self.centered.ncols();
        let mut out = DMatrix::zeros(k, k);
        for (w, m) in self.weights.iter().zip(&self.means) {
            out.ger(*w, m, m, 1.0);
        }
        out
    }
}

/// Sliced inverse regression kernel `sum_h p_h m_h m_h'`.
pub fn sir_kernel(factors: &DMatrix<f64>, slices: &SliceAssignment) -> Result<KernelEstimate> {
    let mom = slice_moments(factors, slices)?;
    KernelEstimate::from_matrix(KernelMethod::Sir, mom.mean_outer(), None, slices.h_count)
}

/// Directional regression kernel from slice moments:
/// `2 sum_h p_h (V - S_h)^2 + 2 (sum_h p_h m_h m_h')^2
///  + 2 (sum_h p_h m_h'm_h) (sum_h p_h m_h m_h')`.
pub fn dr_kernel(factors: &DMatrix<f64>, slices: &SliceAssignment, mode: VarianceMode) -> Result<KernelEstimate> {
    let mom = slice_moments(factors, slices)?;
    let k = factors.ncols();
    let v = mom.variance(mode);
    let mut first = DMatrix::zeros(k, k);
    for (w, s) in mom.weights.iter().zip(&mom.second) {
        let d = &v - s;
        first += (&d * &d) * *w;
    }
    let outer = mom.mean_outer();
    let trace: f64 = mom.weights.iter().zip(&mom.means).map(|(w, m)| w * m.dot(m)).sum();
    let matrix = first * 2.0 + (&outer * &outer) * 2.0 + outer * (2.0 * trace);
    KernelEstimate::from_matrix(KernelMethod::Dr, matrix, Some(mode), slices.h_count)
}

/// Directional regression kernel as the weighted double sum over slice pairs
/// `sum_{h,g} p_h p_g A_hg^2` with
/// `A_hg = 2V - S_h - S_g + m_h m_g' + m_g m_h'`. Quadratic in the number of
/// slices; mainly a cross-check for [`dr_kernel`], which it equals exactly
/// in pooled mode.
pub fn dr_kernel_pairform(
    factors: &DMatrix<f64>,
    slices: &SliceAssignment,
    mode: VarianceMode,
) -> Result<KernelEstimate> {
    let mom = slice_moments(factors, slices)?;
    let k = factors.ncols();
    let v = mom.variance(mode);
    let mut matrix = DMatrix::zeros(k, k);
    let n = mom.weights.len();
    for h in 0..n {
        for g in 0..n {
            let mut a = &v * 2.0 - &mom.second[h] - &mom.second[g];
            a.ger(1.0, &mom.means[h], &mom.means[g], 1.0);
            a.ger(1.0, &mom.means[g], &mom.means[h], 1.0);
            matrix += (&a * &a) * (mom.weights[h] * mom.weights[g]);
        }
    }
    KernelEstimate::from_matrix(KernelMethod::Dr, matrix, Some(mode), slices.h_count)
}

/// Index pairs `(a, b)` with `a <= b`, in row-major order: the distinct rows
/// of a `K^2 x K` array `f (x) f f'`.
pub fn distinct_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect()
}

/// Inverse third-moment kernel `sum_h p_h mu_h' mu_h`, where `mu_h` holds the
/// distinct rows of the within-slice third central moment array minus the
/// global third moment array `T^{-1} sum_t f_t (x) f_t f_t'`.
pub fn tm_kernel(factors: &DMatrix<f64>, slices: &SliceAssignment) -> Result<KernelEstimate> {
    let mom = slice_moments(factors, slices)?;
    for (h, idx) in mom.members.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::SliceTooSmall {
                slice: h,
                count: idx.len(),
                required: 2,
            });
        }
    }
    let f = &mom.centered;
    let (t, k) = f.shape();
    let pairs = distinct_pairs(k);
    let third = |rows: &mut dyn Iterator<Item = DVector<f64>>, n: f64| {
        let mut out = DMatrix::zeros(pairs.len(), k);
        for d in rows {
            for (r, &(a, b)) in pairs.iter().enumerate() {
                let ab = d[a] * d[b];
                for c in 0..k {
                    out[(r, c)] += ab * d[c];
                }
            }
        }
        out / n
    };
    let global = third(&mut (0..t).map(|s| f.row(s).transpose()), t as f64);
    let mut matrix = DMatrix::zeros(k, k);
    for ((idx, m), w) in mom.members.iter().zip(&mom.means).zip(&mom.weights) {
        let mut rows = idx.iter().map(|&s| f.row(s).transpose() - m);
        let mu = third(&mut rows, idx.len() as f64) - &global;
        matrix += (mu.transpose() * &mu) * *w;
    }
    KernelEstimate::from_matrix(KernelMethod::Tm, matrix, None, slices.h_count)
}

/// Unweighted sum of a directional-regression and a third-moment kernel.
pub fn ensemble_kernel(dr: &KernelEstimate, tm: &KernelEstimate) -> Result<KernelEstimate> {
    if dr.k() != tm.k() {
        return Err(Error::DimensionMismatch(format!(
            "kernels are {}x{} and {}x{}",
            dr.k(),
            dr.k(),
            tm.k(),
            tm.k()
        )));
    }
    if dr.h_count != tm.h_count {
        return Err(Error::InvalidArgument(format!(
            "kernels built from {} and {} slices",
            dr.h_count, tm.h_count
        )));
    }
    KernelEstimate::from_matrix(
        KernelMethod::Ensemble,
        &dr.matrix + &tm.matrix,
        dr.variance_mode,
        dr.h_count,
    )
}

/// Build the kernel for `method` from factors and slices.
pub fn build_kernel(
    method: KernelMethod,
    factors: &DMatrix<f64>,
    slices: &SliceAssignment,
    mode: VarianceMode,
) -> Result<KernelEstimate> {
    match method {
        KernelMethod::Sir => sir_kernel(factors, slices),
        KernelMethod::Dr => dr_kernel(factors, slices, mode),
        KernelMethod::Tm => tm_kernel(factors, slices),
        KernelMethod::Ensemble => {
            let dr = dr_kernel(factors, slices, mode)?;
            let tm = tm_kernel(factors, slices)?;
            ensemble_kernel(&dr, &tm)
        }
    }
}

/// Unit eigenvectors for the `l` largest kernel eigenvalues (K x l).
pub fn extract_directions(kernel: &KernelEstimate, l: usize) -> Result<DMatrix<f64>> {
    let k = kernel.k();
    if l < 1 || l > k {
        return Err(Error::InvalidArgument(format!("number of directions {l} must lie in 1..={k}")));
    }
    Ok(kernel.eigenvectors.columns(0, l).into_owned())
}

/// Outcome of the BIC-type search for the index dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSelection {
    pub l_hat: usize,
    /// `G(l)` for `l = 1..=k_c` (entry `l - 1`).
    pub objective: Vec<f64>,
    pub k_c: usize,
    /// Number of eigenvalues above [`POSITIVE_EIGENVALUE_TOL`].
    pub tau: usize,
    pub c_t: f64,
}

/// Default penalty scale `C_T`: `sqrt(K/p) T + sqrt(T)` for first/second
/// moment kernels, `sqrt(K/p) T + sqrt(K T)` once third moments enter.
pub fn default_c_t(method: KernelMethod, k: usize, p: usize, t: usize) -> f64 {
    let (kf, pf, tf) = (k as f64, p as f64, t as f64);
    let loading_term = (kf / pf).sqrt() * tf;
    match method {
        KernelMethod::Sir | KernelMethod::Dr => loading_term + tf.sqrt(),
        KernelMethod::Tm | KernelMethod::Ensemble => loading_term + (kf * tf).sqrt(),
    }
}

/// Maximize
/// `G(l) = (T/2) sum_{i = 1 + min(tau, l)}^{K_c} (ln(1 + lambda_i) - lambda_i) - C_T l (2K - l + 1) / 2`
/// over `l = 1..=K_c`, `K_c = round(c_censor K)`. Ties go to the smaller `l`.
pub fn select_dimension(kernel: &KernelEstimate, t_len: usize, c_censor: f64, c_t: f64) -> Result<DimensionSelection> {
    if !(c_censor > 0.0 && c_censor < 1.0) {
        return Err(Error::InvalidArgument(format!("censoring constant {c_censor} outside (0, 1)")));
    }
    if !c_t.is_finite() {
        return Err(Error::InvalidArgument("penalty scale must be finite".into()));
    }
    let k = kernel.k();
    let k_c = (c_censor * k as f64).round() as usize;
    if k_c < 1 {
        return Err(Error::InvalidArgument(format!(
            "censored range is empty: round({c_censor} * {k}) = 0"
        )));
    }
    let lambda = &kernel.eigenvalues;
    let tau = lambda.iter().filter(|&&v| v > POSITIVE_EIGENVALUE_TOL).count();
    let half_t = t_len as f64 / 2.0;
    let kf = k as f64;
    let objective: Vec<f64> = (1..=k_c)
        .map(|l| {
            let start = tau.min(l); // zero-based index of i = 1 + min(tau, l)
            let w: f64 = (start..k_c).map(|i| (1.0 + lambda[i]).ln() - lambda[i]).sum();
            let lf = l as f64;
            half_t * w - c_t * lf * (2.0 * kf - lf + 1.0) / 2.0
        })
        .collect();
    let mut best = 0;
    for (i, g) in objective.iter().enumerate() {
        if *g > objective[best] {
            best = i;
        }
    }
    Ok(DimensionSelection {
        l_hat: best + 1,
        objective,
        k_c,
        tau,
        c_t,
    })
}
