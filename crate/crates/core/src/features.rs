//! Column standardization, basis expansions and the dense solve shared by the
//! regression-type learners.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column centering and scaling learned from training data.
/// Zero-variance columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j]))
    }
}

/// Feature map applied before a linear predictor. The intercept is handled
/// by the model, never by the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisExpansion {
    /// The columns themselves.
    Raw,
    /// Columns, their squares and all pairwise products.
    Polynomial2,
    /// Each column plus indicators `1{x > c}` at `cuts` empirical quantiles
    /// (levels `j / (cuts + 1)`); duplicate cut points are dropped.
    Piecewise { cuts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedExpansion {
    pub kind: BasisExpansion,
    pub scaler: Standardizer,
    /// Per-column cut points for the piecewise expansion.
    pub cut_points: Vec<Vec<f64>>,
}

impl FittedExpansion {
    pub fn fit(kind: BasisExpansion, x: &DMatrix<f64>, standardize: bool) -> Self {
        let scaler = if standardize { Standardizer::fit(x) } else { Standardizer::identity(x.ncols()) };
        let cut_points = match kind {
            BasisExpansion::Piecewise { cuts } => x
                .column_iter()
                .map(|col| {
                    let mut sorted: Vec<f64> = col.iter().copied().collect();
                    sorted.sort_by(f64::total_cmp);
                    let mut points: Vec<f64> = (1..=cuts)
                        .map(|j| {
                            let pos = (j as f64 / (cuts + 1) as f64) * (sorted.len() - 1) as f64;
                            sorted[pos.round() as usize]
                        })
                        .filter(|&c| c < *sorted.last().unwrap())
                        .collect();
                    points.dedup();
                    points
                })
                .collect(),
            _ => Vec::new(),
        };
        Self { kind, scaler, cut_points }
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let z = self.scaler.transform(x)?;
        let (n, d) = (z.nrows(), z.ncols());
        Ok(match self.kind {
            BasisExpansion::Raw => z,
            BasisExpansion::Polynomial2 => {
                let mut cols: Vec<DVector<f64>> = z.column_iter().map(|c| c.into_owned()).collect();
                for a in 0..d {
                    for b in a..d {
                        cols.push(z.column(a).component_mul(&z.column(b)));
                    }
                }
                columns_to_matrix(n, &cols)
            }
            BasisExpansion::Piecewise { .. } => {
                let mut cols: Vec<DVector<f64>> = z.column_iter().map(|c| c.into_owned()).collect();
                for (j, cuts) in self.cut_points.iter().enumerate() {
                    for &c in cuts {
                        cols.push(x.column(j).map(|v| if v > c { 1.0 } else { 0.0 }));
                    }
                }
                columns_to_matrix(n, &cols)
            }
        })
    }
}

fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Solves the symmetric positive (semi)definite system `a·x = b` and checks
/// `‖a·x − b‖∞ ≤ tol`, applying one step of iterative refinement if needed.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => a
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| Error::LinearSolve("matrix is singular".into()))?,
    };
    let residual = |x: &DVector<f64>| (a * x - b).amax();
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::LinearSolve("solution is not finite".into()));
    }
    if residual(&x) <= tol {
        return Ok(x);
    }
    let correction = a.clone().lu().solve(&(b - a * &x));
    match correction {
        Some(c) => {
            let refined = &x + c;
            let r = residual(&refined);
            if r <= tol && refined.iter().all(|v| v.is_finite()) {
                Ok(refined)
            } else {
                Err(Error::LinearSolve(format!("residual {r:e} exceeds {tol:e}")))
            }
        }
        None => Err(Error::LinearSolve("matrix is singular".into())),
    }
}
