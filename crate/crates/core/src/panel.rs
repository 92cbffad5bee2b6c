//! Predictor panels: ingestion, window standardization, and target construction.
//!
//! A [`PanelData`] stores the predictors as a `p x T` matrix (series in rows,
//! time in columns) next to the scalar target observed on the same time grid.
//! Column `t` of `x` and entry `t` of `y` share the time label `time_labels[t]`.
//! Forecast targets are built from `y` with [`make_h_step_target`], which pairs
//! column `t` with the average of the next `h` target values.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens read as a missing observation.
const MISSING_TOKENS: [&str; 7] = ["", "NA", "N/A", "NaN", "nan", ".", "NULL"];

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    /// Predictors, `p` rows (series) by `T` columns (time).
    pub x: DMatrix<f64>,
    pub series_names: Vec<String>,
    pub time_labels: Vec<String>,
    /// Target series, one value per column of `x`.
    pub y: Vec<f64>,
    /// Header of the time label column.
    pub time_header: String,
    /// Header of the target column.
    pub target_name: String,
}

impl PanelData {
    pub fn new(
        x: DMatrix<f64>,
        series_names: Vec<String>,
        time_labels: Vec<String>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let panel = PanelData {
            x,
            series_names,
            time_labels,
            y,
            time_header: "date".to_string(),
            target_name: "target".to_string(),
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Number of series.
    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    /// Number of time points.
    pub fn t_len(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, t) = self.x.shape();
        if p < 1 {
            return Err(Error::InsufficientData("panel has no series".into()));
        }
        if t < 2 {
            return Err(Error::InsufficientData(format!(
                "panel has {t} time points, at least 2 required"
            )));
        }
        if self.y.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "target has {} values but panel has {t} time points",
                self.y.len()
            )));
        }
        if self.series_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} series names for {p} series",
                self.series_names.len()
            )));
        }
        if self.time_labels.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} time labels for {t} time points",
                self.time_labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(t);
        for label in &self.time_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate time label {label:?}")));
            }
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("panel"));
        }
        Ok(())
    }

    /// Sub-panel restricted to the given time columns.
    pub fn columns(&self, range: Range<usize>) -> Result<PanelData> {
        if range.start >= range.end || range.end > self.t_len() {
            return Err(Error::InvalidArgument(format!(
                "column range {range:?} outside 0..{}",
                self.t_len()
            )));
        }
        let n = range.end - range.start;
        Ok(PanelData {
            x: self.x.columns(range.start, n).into_owned(),
            series_names: self.series_names.clone(),
            time_labels: self.time_labels[range.clone()].to_vec(),
            y: self.y[range].to_vec(),
            time_header: self.time_header.clone(),
            target_name: self.target_name.clone(),
        })
    }

    /// Serialize to the CSV layout read by [`load_csv`]: time label column,
    /// one column per series, then the target. Values use the shortest
    /// representation that parses back to the identical `f64`.
    pub fn to_csv_string(&self, delimiter: u8) -> String {
        let d = delimiter as char;
        let mut out = String::new();
        out.push_str(&self.time_header);
        for name in &self.series_names {
            out.push(d);
            out.push_str(name);
        }
        out.push(d);
        out.push_str(&self.target_name);
        out.push('\n');
        for t in 0..self.t_len() {
            out.push_str(&self.time_labels[t]);
            for i in 0..self.p() {
                let _ = write!(out, "{d}{}", self.x[(i, t)]);
            }
            let _ = write!(out, "{d}{}", self.y[t]);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, delimiter: u8) -> Result<()> {
        std::fs::write(path, self.to_csv_string(delimiter)).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Column holding time labels; the first column when `None`.
    pub time_column: Option<String>,
    /// Reject non-numeric cells instead of treating them as missing.
    pub strict: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            time_column: None,
            strict: false,
        }
    }
}

/// A loaded panel together with the rows that were discarded.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: PanelData,
    /// Zero-based data row numbers (header excluded) dropped for missing values.
    pub dropped_rows: Vec<usize>,
}

impl LoadedPanel {
    pub fn drop_count(&self) -> usize {
        self.dropped_rows.len()
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if MISSING_TOKENS.contains(&s) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read a panel from CSV text.
pub fn parse_csv(text: &str, target_column: &str, options: &CsvOptions) -> Result<LoadedPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let time_idx = match &options.time_column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("time column not found: {name}")))?,
        None => 0,
    };
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::TargetNotFound(target_column.to_string()))?;
    if target_idx == time_idx {
        return Err(Error::InvalidArgument(
            "target column is the time label column".into(),
        ));
    }
    let series_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| j != time_idx && j != target_idx)
        .collect();
    if series_idx.is_empty() {
        return Err(Error::InsufficientData("no predictor columns".into()));
    }

    let mut labels = Vec::new();
    let mut y = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                value: format!("{} fields, expected {}", record.len(), headers.len()),
            });
        }
        let mut values = Vec::with_capacity(series_idx.len() + 1);
        let mut complete = true;
        for &j in series_idx.iter().chain(std::iter::once(&target_idx)) {
            let raw = &record[j];
            match parse_cell(raw) {
                Some(v) => values.push(v),
                None => {
                    let token = raw.trim();
                    if options.strict && !MISSING_TOKENS.contains(&token) && token.parse::<f64>().is_err() {
                        return Err(Error::Parse {
                            row,
                            column: headers[j].clone(),
                            value: raw.to_string(),
                        });
                    }
                    complete = false;
                }
            }
        }
        if !complete {
            dropped.push(row);
            continue;
        }
        labels.push(record[time_idx].trim().to_string());
        y.push(values.pop().expect("target value present"));
        columns.push(values);
    }
    if !dropped.is_empty() {
        log::info!("dropped {} rows with missing values", dropped.len());
    }
    let t = columns.len();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "{t} usable time points after dropping incomplete rows, at least 2 required"
        )));
    }
    let p = series_idx.len();
    let x = DMatrix::from_fn(p, t, |i, tt| columns[tt][i]);
    let panel = PanelData {
        x,
        series_names: series_idx.iter().map(|&j| headers[j].clone()).collect(),
        time_labels: labels,
        y,
        time_header: headers[time_idx].clone(),
        target_name: target_column.to_string(),
    };
    panel.validate()?;
    Ok(LoadedPanel {
        panel,
        dropped_rows: dropped,
    })
}

/// Read a panel from a CSV file. Rows with any missing or non-numeric cell
/// are dropped (unless `options.strict`), and their positions reported.
pub fn load_csv(path: &Path, target_column: &str, options: &CsvOptions) -> Result<LoadedPanel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, target_column, options)
}

/// Per-series location and scale applied by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub window: Range<usize>,
}

impl StandardizationRecord {
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, t| {
            (x[(i, t)] - self.mean[i]) / self.sd[i]
        }))
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, t| {
            x[(i, t)] * self.sd[i] + self.mean[i]
        }))
    }

    fn check_rows(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "record covers {} series, matrix has {}",
                self.mean.len(),
                x.nrows()
            )));
        }
        Ok(())
    }
}

/// Standardize every series to mean 0 and sample standard deviation 1 over
/// `window`; columns outside the window use the same window statistics.
pub fn standardize(panel: &PanelData, window: Range<usize>) -> Result<(PanelData, StandardizationRecord)> {
    let t = panel.t_len();
    if window.start >= window.end || window.end > t {
        return Err(Error::InvalidArgument(format!(
            "standardization window {window:?} invalid for {t} time points"
        )));
    }
    let n = window.end - window.start;
    if n < 2 {
        return Err(Error::InsufficientData(
            "standardization window needs at least 2 points".into(),
        ));
    }
    let mut mean = Vec::with_capacity(panel.p());
    let mut sd = Vec::with_capacity(panel.p());
    for i in 0..panel.p() {
        let row = panel.x.row(i);
        let vals = row.columns(window.start, n);
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let s = var.sqrt();
        if !(s > 0.0) || s <= 1e-300 {
            return Err(Error::ZeroVariance(panel.series_names[i].clone()));
        }
        mean.push(m);
        sd.push(s);
    }
    let record = StandardizationRecord { mean, sd, window };
    let mut out = panel.clone();
    out.x = record.apply(&panel.x)?;
    Ok((out, record))
}

/// Multi-step target: entry `t` is the mean of `y[t+1..=t+h]`, so it is
/// forecast from information at time `t`. Length `T - h`.
pub fn make_h_step_target(y: &[f64], h: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if h >= y.len() {
        return Err(Error::InsufficientData(format!(
            "horizon {h} needs more than {h} observations, got {}",
            y.len()
        )));
    }
    Ok((0..y.len() - h)
        .map(|t| y[t + 1..=t + h].iter().sum::<f64>() / h as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_series(values: &[f64]) -> PanelData {
        let t = values.len();
        PanelData::new(
            DMatrix::from_row_slice(1, t, values),
            vec!["a".into()],
            (0..t).map(|i| i.to_string()).collect(),
            vec![0.0; t],
        )
        .unwrap()
    }

    #[test]
    fn three_column_csv_reshapes() {
        let text = "date,a,b\n2000-01,1,10\n2000-02,2,20\n2000-03,3,30\n2000-04,4,40\n2000-05,5,50\n";
        let loaded = parse_csv(text, "b", &CsvOptions::default()).unwrap();
        assert_eq!(loaded.panel.p(), 1);
        assert_eq!(loaded.panel.t_len(), 5);
        assert_eq!(loaded.panel.y, vec![10.0, 20.0, 30.0, 40.0, 50.0]);
        assert_eq!(loaded.panel.x[(0, 4)], 5.0);
        assert_eq!(loaded.drop_count(), 0);
    }

    #[test]
    fn non_numeric_cell_drops_row() {
        let text = "date,a,b\n1,1,10\n2,2,20\n3,oops,30\n4,4,40\n5,5,50\n";
        let loaded = parse_csv(text, "b", &CsvOptions::default()).unwrap();
        assert_eq!(loaded.drop_count(), 1);
        assert_eq!(loaded.dropped_rows, vec![2]);
        assert_eq!(loaded.panel.time_labels, vec!["1", "2", "4", "5"]);
    }

    #[test]
    fn strict_mode_reports_cell() {
        let text = "date,a,b\n1,1,10\n2,2,20\n3,oops,30\n";
        let opts = CsvOptions {
            strict: true,
            ..Default::default()
        };
        match parse_csv(text, "b", &opts) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        // plain missing markers are still dropped in strict mode
        let text = "date,a,b\n1,1,10\n2,NA,20\n3,3,30\n";
        assert_eq!(parse_csv(text, "b", &opts).unwrap().drop_count(), 1);
    }

    #[test]
    fn missing_target_column() {
        let text = "date,a,b\n1,1,10\n2,2,20\n";
        let err = parse_csv(text, "zzz", &CsvOptions::default()).unwrap_err();
        assert!(err.to_string().contains("target column not found"));
    }

    #[test]
    fn too_few_usable_rows() {
        let text = "date,a,b\n1,1,10\n2,,20\n";
        assert!(matches!(
            parse_csv(text, "b", &CsvOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn semicolon_delimiter_and_named_time_column() {
        let text = "a;when;b\n1;t1;10\n2;t2;20\n3;t3;30\n";
        let opts = CsvOptions {
            delimiter: b';',
            time_column: Some("when".into()),
            strict: false,
        };
        let panel = parse_csv(text, "b", &opts).unwrap().panel;
        assert_eq!(panel.time_labels, vec!["t1", "t2", "t3"]);
        assert_eq!(panel.series_names, vec!["a"]);
    }

    #[test]
    fn duplicate_time_labels_rejected() {
        let text = "date,a,b\n1,1,10\n1,2,20\n";
        assert!(parse_csv(text, "b", &CsvOptions::default()).is_err());
    }

    #[test]
    fn standardize_full_window() {
        let (out, rec) = standardize(&one_series(&[2.0, 4.0, 6.0]), 0..3).unwrap();
        assert_eq!(rec.sd, vec![2.0]);
        assert_eq!(out.x.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn standardize_constant_series_fails() {
        match standardize(&one_series(&[5.0, 5.0, 5.0]), 0..3) {
            Err(Error::ZeroVariance(name)) => assert_eq!(name, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardize_partial_window() {
        // window mean 1, sample sd sqrt(2)
        let (out, rec) = standardize(&one_series(&[0.0, 2.0, 4.0]), 0..2).unwrap();
        assert_relative_eq!(rec.sd[0], 2f64.sqrt(), epsilon = 1e-15);
        let expected = [-1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 3.0 / 2f64.sqrt()];
        for (got, want) in out.x.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn h_step_targets() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(make_h_step_target(&y, 1).unwrap(), vec![2.0, 3.0, 4.0]);
        assert_eq!(make_h_step_target(&y, 2).unwrap(), vec![2.5, 3.5]);
        assert!(make_h_step_target(&y[..3], 3).is_err());
        assert!(make_h_step_target(&y, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-20, 7.0, 2.5e10, -0.0]);
        let mut panel = PanelData::new(
            x,
            vec!["s1".into(), "s2".into()],
            vec!["2001-01".into(), "2001-02".into(), "2001-03".into()],
            vec![std::f64::consts::PI, 1.0, -2.0],
        )
        .unwrap();
        panel.target_name = "y".into();
        let text = panel.to_csv_string(b',');
        let back = parse_csv(&text, "y", &CsvOptions::default()).unwrap().panel;
        assert_eq!(back, panel);
        assert_eq!(back.to_csv_string(b','), text);
    }
}
