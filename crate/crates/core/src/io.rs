//! CSV/JSON helpers for dumping matrices and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Render a matrix as CSV with a header row. Values are written with the
/// shortest representation that parses back to the same `f64`.
pub fn matrix_to_csv(m: &DMatrix<f64>, header: &[String]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Default `c1,c2,...` header for `n` columns.
pub fn numbered_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    fs::write(path, matrix_to_csv(m, header)).map_err(io_err(path))
}

/// Parse a headered numeric CSV back into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: j.to_string(),
                    value: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}
