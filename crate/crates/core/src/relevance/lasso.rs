use serde::{Deserialize, Serialize};

use crate::dataio::Matrix;
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;

/// Standardised predictors and a response, ready for coordinate descent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    /// One standardised column per predictor.
    pub columns: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub column_mean: Vec<f64>,
    pub column_std: Vec<f64>,
}

impl RegressionProblem {
    /// Standardise each column of `x` to mean 0 and population std 1.
    /// Constant columns become all-zero.
    pub fn new(x: &Matrix, y: &[f64]) -> Result<Self> {
        if x.rows != y.len() {
            return Err(Error::Dimension(format!("{} predictor rows for {} responses", x.rows, y.len())));
        }
        if x.rows < 2 {
            return Err(Error::Usage("regression needs at least two observations".into()));
        }
        let n = x.rows as f64;
        let mut columns = Vec::with_capacity(x.cols);
        let mut column_mean = Vec::with_capacity(x.cols);
        let mut column_std = Vec::with_capacity(x.cols);
        for c in 0..x.cols {
            let col = x.column(c);
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let scaled = if std < 1e-12 {
                vec![0.0; col.len()]
            } else {
                col.iter().map(|v| (v - mean) / std).collect()
            };
            columns.push(scaled);
            column_mean.push(mean);
            column_std.push(std);
        }
        Ok(Self {
            columns,
            response: y.to_vec(),
            column_mean,
            column_std,
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn response_mean(&self) -> f64 {
        self.response.iter().sum::<f64>() / self.n() as f64
    }

    /// `y − ȳ − Xβ`.
    pub fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let ybar = self.response_mean();
        let mut r: Vec<f64> = self.response.iter().map(|y| y - ybar).collect();
        for (col, &b) in self.columns.iter().zip(beta) {
            if b != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col) {
                    *ri -= b * xi;
                }
            }
        }
        r
    }

    /// `(1/(2n))‖y − ȳ − Xβ‖² + λ‖β‖₁`.
    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let r = self.residual(beta);
        let rss: f64 = r.iter().map(|v| v * v).sum();
        rss / (2.0 * self.n() as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// `X_cᵀ r / n` for every column.
    pub fn correlations_with(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n() as f64;
        self.columns.iter().map(|col| dot(col, r) / n).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Coefficients in standardised-predictor units.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each full sweep.
    pub objective_trace: Vec<f64>,
}

/// Cyclic coordinate descent with soft-thresholding.
pub fn lasso_fit(problem: &RegressionProblem, lambda: f64) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Usage(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = problem.n() as f64;
    let p = problem.p();
    let norms: Vec<f64> = problem.columns.iter().map(|c| dot(c, c) / n).collect();
    let mut beta = vec![0.0; p];
    let mut r = problem.residual(&beta);
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for c in 0..p {
            if norms[c] == 0.0 {
                continue;
            }
            let col = &problem.columns[c];
            let rho = dot(col, &r) / n + norms[c] * beta[c];
            let updated = soft_threshold(rho, lambda) / norms[c];
            let delta = updated - beta[c];
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col) {
                    *ri -= delta * xi;
                }
                beta[c] = updated;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let rss: f64 = r.iter().map(|v| v * v).sum();
        objective_trace.push(rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>());
        if max_delta < TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(LassoFit {
        beta,
        intercept: problem.response_mean(),
        sweeps,
        converged,
        objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(x: Vec<f64>, cols: usize, y: Vec<f64>) -> RegressionProblem {
        let rows = y.len();
        RegressionProblem::new(&Matrix::new(rows, cols, x).unwrap(), &y).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.0, 0.001), 0.999);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
    }

    #[test]
    fn single_standardised_predictor() {
        let p = problem(vec![-1.0, 1.0], 1, vec![-1.0, 1.0]);
        let fit = lasso_fit(&p, 0.001).unwrap();
        assert!((fit.beta[0] - 0.999).abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn zero_lambda_single_predictor_is_ols() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![1.0, 2.9, 5.2, 7.1, 8.8];
        let p = problem(x.clone(), 1, y.clone());
        let fit = lasso_fit(&p, 0.0).unwrap();
        let xm = 2.0;
        let ym = y.iter().sum::<f64>() / 5.0;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
        let slope_raw = sxy / sxx;
        assert!((fit.beta[0] - slope_raw * p.column_std[0]).abs() < 1e-9);
    }

    #[test]
    fn large_lambda_gives_exact_zero() {
        let p = problem(vec![1.0, 3.0, 2.0, 5.0, 4.0, 1.0, 0.0, 2.0], 2, vec![0.5, 0.1, 2.0, 1.0]);
        let lmax = p
            .correlations_with(&p.residual(&[0.0, 0.0]))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let fit = lasso_fit(&p, lmax).unwrap();
        assert_eq!(fit.beta, vec![0.0, 0.0]);
    }

    #[test]
    fn constant_column_stays_zero() {
        let p = problem(vec![1.0, 7.0, 2.0, 7.0, 3.0, 7.0], 2, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.columns[1], vec![0.0; 3]);
        let fit = lasso_fit(&p, 0.0).unwrap();
        assert_eq!(fit.beta[1], 0.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        let p = problem(vec![0.0, 1.0], 1, vec![0.0, 1.0]);
        assert!(lasso_fit(&p, -1.0).is_err());
    }
}
