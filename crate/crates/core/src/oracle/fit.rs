use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Payoffs of a two-player one-shot game, `values[row][column]`, together
/// with each player's utility per action.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffTable {
    pub values: Vec<Vec<f64>>,
    pub row_utilities: Vec<f64>,
    pub column_utilities: Vec<f64>,
}

impl PayoffTable {
    /// `values` with identity utilities: action `a` of either player is worth
    /// `action_values[a]`.
    pub fn with_identity_utilities(values: Vec<Vec<f64>>, action_values: Vec<f64>) -> Result<Self> {
        let t = PayoffTable {
            row_utilities: action_values.clone(),
            column_utilities: action_values,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    /// `r = v_row * v_col` over action values {1, 2}.
    pub fn product() -> Self {
        Self::from_fn([1.0, 2.0], |a, b| a * b)
    }

    /// `r = v_row + v_col` over action values {1, 2}.
    pub fn additive() -> Self {
        Self::from_fn([1.0, 2.0], |a, b| a + b)
    }

    pub fn from_fn(action_values: [f64; 2], f: impl Fn(f64, f64) -> f64) -> Self {
        let values = action_values
            .iter()
            .map(|&a| action_values.iter().map(|&b| f(a, b)).collect())
            .collect();
        PayoffTable {
            values,
            row_utilities: action_values.to_vec(),
            column_utilities: action_values.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.row_utilities.len()
            || self.values.iter().any(|r| r.len() != self.column_utilities.len())
        {
            return Err(Error::shape("payoff table does not match the utility vectors"));
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.values.iter().enumerate().flat_map(move |(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, &r)| (self.row_utilities[i], self.column_utilities[j], r))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fit {
    /// `[k0, k1, k2]`, plus `k12` for the multiplicative fit.
    pub coefficients: Vec<f64>,
    /// Sum of squared residuals over all table cells.
    pub residual: f64,
}

fn least_squares(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Fit> {
    let m = rows.len();
    let p = rows[0].len();
    let x = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
    let y = DVector::from_vec(targets);
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::contract(format!("least squares failed: {e}")))?;
    let r = &x * &beta - &y;
    Ok(Fit {
        coefficients: beta.iter().copied().collect(),
        residual: r.norm_squared(),
    })
}

/// Best `k0 + k1 Q1 + k2 Q2` in the least-squares sense.
pub fn additive_fit(table: &PayoffTable) -> Result<Fit> {
    table.validate()?;
    let (rows, y) = table.cells().map(|(a, b, r)| (vec![1.0, a, b], r)).unzip();
    least_squares(rows, y)
}

/// Best `k0 + k1 Q1 + k2 Q2 + k12 Q1 Q2` in the least-squares sense.
pub fn mvd_fit(table: &PayoffTable) -> Result<Fit> {
    table.validate()?;
    let (rows, y) = table
        .cells()
        .map(|(a, b, r)| (vec![1.0, a, b, a * b], r))
        .unzip();
    least_squares(rows, y)
}
