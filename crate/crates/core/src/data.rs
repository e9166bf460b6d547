//! Observed data `(Y, T, X)` and CSV ingestion.
//!
//! Input files carry a header row and numeric cells only. Categorical
//! covariates must be expanded to indicator columns beforehand, and missing
//! values must be encoded explicitly (for example by an indicator plus an
//! imputed value).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns; all remaining columns when absent.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub t: Vec<bool>,
    /// `n x k` covariate matrix.
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, t: Vec<bool>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if t.len() != n || x.nrows() != n {
            return Err(Error::Data(format!(
                "outcome has {n} rows, treatment {} and covariates {}",
                t.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::Data("one name per covariate column is required".into()));
        }
        Ok(Self { y, t, x, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|t| **t).count()
    }

    pub fn is_binary_outcome(&self) -> bool {
        self.y.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Rows in the given order, duplicates allowed.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: rows.iter().map(|i| self.y[*i]).collect(),
            t: rows.iter().map(|i| self.t[*i]).collect(),
            x: self.x.select_rows(rows),
            names: self.names.clone(),
        }
    }

    pub fn from_csv_path(path: &Path, roles: &ColumnRoles) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, roles)
    }

    pub fn from_csv_reader<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("column '{name}' not found")))
        };
        let yi = find(&roles.outcome)?;
        let ti = find(&roles.treatment)?;
        let cov_idx: Vec<usize> = match &roles.covariates {
            Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
            None => (0..headers.len()).filter(|j| *j != yi && *j != ti).collect(),
        };
        let names: Vec<String> = cov_idx.iter().map(|j| headers[*j].clone()).collect();
        let mut y = Vec::new();
        let mut t = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            let cell = |j: usize| -> Result<f64> {
                let raw = rec.get(j).map(str::trim).unwrap_or("");
                if raw.is_empty() {
                    return Err(Error::Data(format!("missing value at row {row}, column '{}'", headers[j])));
                }
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!(
                        "non-numeric value '{raw}' at row {row}, column '{}'",
                        headers[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite value at row {row}, column '{}'", headers[j])));
                }
                Ok(v)
            };
            y.push(cell(yi)?);
            let tv = cell(ti)?;
            if tv != 0.0 && tv != 1.0 {
                return Err(Error::Data(format!(
                    "treatment must be 0 or 1; found {tv} at row {row}"
                )));
            }
            t.push(tv == 1.0);
            for j in &cov_idx {
                xs.push(cell(*j)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("no data rows".into()));
        }
        let x = DMatrix::from_row_slice(n, cov_idx.len(), &xs);
        Self::new(y, t, x, names)
    }

    /// Writes `y,t,<covariates>` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W, outcome: &str, treatment: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![outcome.to_string(), treatment.to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.y[i].to_string(), if self.t[i] { "1" } else { "0" }.to_string()];
            rec.extend((0..self.x.ncols()).map(|j| self.x[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles() -> ColumnRoles {
        ColumnRoles {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: None,
        }
    }

    #[test]
    fn reads_small_file() {
        let text = "y,t,x1\n1.5,1,0\n0,0,2\n2,1,1\n";
        let d = Dataset::from_csv_reader(text.as_bytes(), &roles()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.names, vec!["x1".to_string()]);
        assert_eq!(d.t, vec![true, false, true]);
        assert_eq!(d.x[(1, 0)], 2.0);
    }

    #[test]
    fn non_binary_treatment_cites_row() {
        let text = "y,t,x1\n1,1,0\n0,2,2\n";
        let err = Dataset::from_csv_reader(text.as_bytes(), &roles()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn missing_cell_cites_coordinates() {
        let text = "y,t,x1\n1,1,\n";
        let err = Dataset::from_csv_reader(text.as_bytes(), &roles()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("x1"), "{msg}");
    }

    #[test]
    fn round_trip() {
        let text = "y,t,a,b\n1,1,0,3\n0,0,2,4\n";
        let d = Dataset::from_csv_reader(text.as_bytes(), &roles()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, "y", "t").unwrap();
        let e = Dataset::from_csv_reader(buf.as_slice(), &roles()).unwrap();
        assert_eq!(d, e);
    }
}
