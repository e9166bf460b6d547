use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::{dependent_columns, weighted_gram};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    MainEffects,
    MainPlusInteractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Terms,
    pub standardize: bool,
    /// Interaction columns with fewer nonzero entries than this are dropped.
    pub sparsity_min_count: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            terms: Terms::MainEffects,
            standardize: true,
            sparsity_min_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub center: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Sparse { nonzero: usize },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub name: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

/// Design matrix with an unpenalized, unstandardized intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<ColumnInfo>,
    pub dropped: Vec<Dropped>,
    /// Columns found to be linear combinations of earlier ones.
    pub rank_deficient: Vec<String>,
}

impl Design {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Design restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Design {
        Design {
            matrix: self.matrix.select_rows(rows),
            columns: self.columns.clone(),
            dropped: self.dropped.clone(),
            rank_deficient: self.rank_deficient.clone(),
        }
    }

    /// Linear predictor `X coef` as a plain vector.
    pub fn predict(&self, coef: &nalgebra::DVector<f64>) -> Vec<f64> {
        (&self.matrix * coef).iter().copied().collect()
    }

    /// Design from an already assembled matrix whose first column is the intercept.
    pub fn from_matrix(matrix: DMatrix<f64>, names: Vec<String>) -> Result<Design> {
        if names.len() != matrix.ncols() {
            return Err(Error::Design("one name per column is required".into()));
        }
        let columns = names
            .into_iter()
            .map(|name| ColumnInfo {
                name,
                center: 0.0,
                scale: 1.0,
            })
            .collect();
        Ok(Design {
            matrix,
            columns,
            dropped: Vec::new(),
            rank_deficient: Vec::new(),
        })
    }
}

/// Largest design for which rank deficiency is checked after construction.
const RANK_CHECK_MAX_COLS: usize = 400;

/// Builds `[1, main effects, (pairwise products)]` from raw covariates.
pub fn build_design(x: &DMatrix<f64>, names: &[String], spec: &DesignSpec) -> Result<Design> {
    let (n, k) = (x.nrows(), x.ncols());
    if names.len() != k {
        return Err(Error::Design(format!(
            "{} covariate names for {k} columns",
            names.len()
        )));
    }
    if n == 0 {
        return Err(Error::Design("no rows".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Design("covariates contain non-finite values".into()));
    }
    let mut raw: Vec<(String, Vec<f64>)> = (0..k)
        .map(|j| (names[j].clone(), x.column(j).iter().copied().collect()))
        .collect();
    let mut dropped = Vec::new();
    if spec.terms == Terms::MainPlusInteractions {
        for a in 0..k {
            for b in (a + 1)..k {
                let col: Vec<f64> = (0..n).map(|i| x[(i, a)] * x[(i, b)]).collect();
                let name = format!("{}:{}", names[a], names[b]);
                let nonzero = col.iter().filter(|v| **v != 0.0).count();
                if nonzero < spec.sparsity_min_count {
                    dropped.push(Dropped {
                        name,
                        reason: DropReason::Sparse { nonzero },
                    });
                } else {
                    raw.push((name, col));
                }
            }
        }
    }

    let mut columns = vec![ColumnInfo {
        name: "(intercept)".into(),
        center: 0.0,
        scale: 1.0,
    }];
    let mut data: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (name, col) in raw {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-24 * (1.0 + mean * mean) {
            dropped.push(Dropped {
                name,
                reason: DropReason::Constant,
            });
            continue;
        }
        let (center, scale) = if spec.standardize {
            (mean, var.sqrt())
        } else {
            (0.0, 1.0)
        };
        data.push(col.iter().map(|v| (v - center) / scale).collect());
        columns.push(ColumnInfo { name, center, scale });
    }
    let p = data.len();
    let matrix = DMatrix::from_fn(n, p, |i, j| data[j][i]);
    let rank_deficient = if p <= RANK_CHECK_MAX_COLS {
        let g = weighted_gram(&matrix, &vec![1.0; n]);
        dependent_columns(&g, 1e-10)
            .into_iter()
            .map(|j| columns[j].name.clone())
            .collect()
    } else {
        Vec::new()
    };
    Ok(Design {
        matrix,
        columns,
        dropped,
        rank_deficient,
    })
}
