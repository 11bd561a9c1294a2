//! Logistic regression fitted by iteratively reweighted least squares with
//! step halving. Converges when the largest coefficient change falls below
//! `1e-8`; gives up after 100 iterations.

use nalgebra::{DMatrix, DVector};

use super::linear::{normal_equations, solve_spd};
use super::LearnerError;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(eta))` without overflow.
fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| beta[0] + (0..x.ncols()).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>())
        .collect()
}

fn penalized_loglik(x: &DMatrix<f64>, y: &[f64], w: &dyn Fn(usize) -> f64, beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = linear_predictor(x, beta);
    let ll: f64 = eta.iter().enumerate().map(|(i, &e)| w(i) * (y[i] * e - log1pexp(e))).sum();
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum::<f64>();
    ll - 0.5 * ridge * pen
}

impl LogisticModel {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, ridge: f64) -> Result<Self, LearnerError> {
        if ridge < 0.0 || !ridge.is_finite() {
            return Err(LearnerError::InvalidSpec(format!("ridge must be >= 0, got {ridge}")));
        }
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let (mut w1, mut w0) = (0.0, 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 1.0 {
                w1 += w(i);
            } else {
                w0 += w(i);
            }
        }
        if w1 == 0.0 || w0 == 0.0 {
            return Err(LearnerError::DegenerateTarget("logistic target has a single class".into()));
        }
        let k = x.ncols() + 1;
        let mut beta = DVector::<f64>::zeros(k);
        beta[0] = (w1 / w0).ln();
        let mut ll = penalized_loglik(x, y, &w, &beta, ridge);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITER {
            iterations += 1;
            let eta = linear_predictor(x, &beta);
            let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
            // Newton step: (X'VX + ridge) delta = X'W(y - p) - ridge * beta.
            let (mut hess, _) = normal_equations(x, y, |i| w(i) * p[i] * (1.0 - p[i]));
            let resid: Vec<f64> = (0..y.len()).map(|i| y[i] - p[i]).collect();
            let (_, mut grad) = normal_equations(x, &resid, &w);
            for j in 1..k {
                hess[(j, j)] += ridge;
                grad[j] -= ridge * beta[j];
            }
            let delta = solve_spd(hess, &grad)?;
            let mut step = 1.0;
            let mut candidate = &beta + &delta;
            let mut cand_ll = penalized_loglik(x, y, &w, &candidate, ridge);
            while cand_ll < ll - 1e-12 * ll.abs().max(1.0) && step > 1e-10 {
                step *= 0.5;
                candidate = &beta + &delta * step;
                cand_ll = penalized_loglik(x, y, &w, &candidate, ridge);
            }
            let change = (&delta * step).amax();
            beta = candidate;
            ll = cand_ll;
            if change < TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("logistic regression did not converge in {MAX_ITER} iterations");
        }
        Ok(LogisticModel {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            iterations,
            converged,
        })
    }

    /// Predicted probabilities, kept strictly inside (0, 1).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let eta = self.intercept + self.coefficients.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>();
                expit(eta).clamp(1e-15, 1.0 - 1e-15)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_equation_matches_prevalence() {
        let xs = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
        let ys = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let x = DMatrix::from_row_slice(10, 1, &xs);
        let m = LogisticModel::fit(&x, &ys, None, 0.0).unwrap();
        assert!(m.converged);
        let p = m.predict(&x);
        let mean_p = p.iter().sum::<f64>() / 10.0;
        assert!((mean_p - 0.5).abs() < 1e-6);
        // Slope score equation as well.
        let s: f64 = (0..10).map(|i| xs[i] * (ys[i] - p[i])).sum();
        assert!(s.abs() < 1e-6);
    }

    #[test]
    fn separated_data_with_ridge_stays_finite() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = LogisticModel::fit(&x, &y, None, 1e-6).unwrap();
        assert!(m.intercept.is_finite() && m.coefficients[0].is_finite());
        for p in m.predict(&x) {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            LogisticModel::fit(&x, &[1.0, 1.0, 1.0], None, 0.0),
            Err(LearnerError::DegenerateTarget(_))
        ));
    }
}
