//! Weighted least squares with an unpenalized intercept and optional ridge
//! penalty on the slopes.

use nalgebra::{DMatrix, DVector};

use super::LearnerError;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Normal equations `X'WX` and `X'Wy` for the design with a leading
/// intercept column.
pub(super) fn normal_equations(x: &DMatrix<f64>, y: &[f64], w: impl Fn(usize) -> f64) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = x.shape();
    let k = p + 1;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        let wi = w(i);
        if wi == 0.0 {
            continue;
        }
        row[0] = 1.0;
        for j in 0..p {
            row[j + 1] = x[(i, j)];
        }
        for a in 0..k {
            let ra = wi * row[a];
            xty[a] += ra * y[i];
            for b in a..k {
                xtx[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    (xtx, xty)
}

/// Solves the symmetric system, reporting rank deficiency when the
/// eigenvalue spread exceeds twelve orders of magnitude.
pub(super) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LearnerError> {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(LearnerError::Rank);
    }
    let chol = a.cholesky().ok_or(LearnerError::Rank)?;
    Ok(chol.solve(b))
}

impl LinearModel {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, ridge: f64) -> Result<Self, LearnerError> {
        if ridge < 0.0 || !ridge.is_finite() {
            return Err(LearnerError::InvalidSpec(format!("ridge must be >= 0, got {ridge}")));
        }
        let (mut xtx, xty) = normal_equations(x, y, |i| weights.map_or(1.0, |w| w[i]));
        for j in 1..xtx.nrows() {
            xtx[(j, j)] += ridge;
        }
        let beta = solve_spd(xtx, &xty)?;
        Ok(LinearModel { intercept: beta[0], coefficients: beta.iter().skip(1).copied().collect() })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + self.coefficients.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_plane() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y: Vec<f64> = (0..4).map(|i| 1.0 + 2.0 * x[(i, 0)] - 3.0 * x[(i, 1)]).collect();
        let m = LinearModel::fit(&x, &y, None, 0.0).unwrap();
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.coefficients[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_rank_error() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert_eq!(LinearModel::fit(&x, &[1.0, 2.0, 3.0], None, 0.0).unwrap_err(), LearnerError::Rank);
        assert!(LinearModel::fit(&x, &[1.0, 2.0, 3.0], None, 1e-3).is_ok());
    }

    #[test]
    fn weights_select_rows() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 1.0, 100.0, 3.0];
        let m = LinearModel::fit(&x, &y, Some(&[1.0, 1.0, 0.0, 1.0]), 0.0).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-12);
    }
}
