use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{CliError, Result};

pub const MIN_ROWS: usize = 10;

/// A parsed input file: outcome, treatment and the remaining columns as
/// covariates, in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub d: Array1<f64>,
    pub x: Array2<f64>,
    pub covariate_names: Vec<String>,
}

/// Reads a headed CSV with at least [`MIN_ROWS`] data rows. Every cell
/// outside the header must be a finite number.
pub fn ingest_csv(path: &Path, outcome: &str, treatment: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, outcome, treatment, MIN_ROWS)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, outcome: &str, treatment: &str, min_rows: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(|e| CliError::Csv(e.to_string()))?.iter().map(String::from).collect();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()));
    let y_col = find(outcome)?;
    let d_col = find(treatment)?;
    if y_col == d_col {
        return Err(CliError::Usage("outcome and treatment must be different columns".into()));
    }
    let cov_cols: Vec<usize> = (0..header.len()).filter(|&j| j != y_col && j != d_col).collect();

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |j: usize| -> Result<f64> {
            let raw = &record[j];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Parse { row: line, column: header[j].clone(), content: raw.to_string() }),
            }
        };
        y.push(cell(y_col)?);
        d.push(cell(d_col)?);
        for &j in &cov_cols {
            x.push(cell(j)?);
        }
    }
    let n = y.len();
    if n < min_rows {
        return Err(CliError::TooFewRows { rows: n, required: min_rows });
    }
    let x = Array2::from_shape_vec((n, cov_cols.len()), x).expect("one value per covariate per row");
    Ok(Dataset {
        y: Array1::from(y),
        d: Array1::from(d),
        x,
        covariate_names: cov_cols.iter().map(|&j| header[j].clone()).collect(),
    })
}

/// Writes `y, d, x1..xp` with shortest round-trip float formatting.
pub fn write_dataset_csv(path: &Path, y: &Array1<f64>, d: &Array1<f64>, x: &Array2<f64>, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Csv(e.to_string()))?;
    let io = |e: csv::Error| CliError::Csv(e.to_string());
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..y.len() {
        row.clear();
        row.push(y[i].to_string());
        row.push(d[i].to_string());
        row.extend(x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
