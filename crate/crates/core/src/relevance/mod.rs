//! Channel relevance from autoencoder reconstruction error and sparse
//! regression.

mod autoencoder;
mod lasso;

pub use autoencoder::{
    block_starts, reconstruction_errors, train_autoencoder, AutoencoderConfig, AutoencoderModel, AutoencoderSummary,
};
pub use lasso::{lasso_fit, soft_threshold, LassoFit, RegressionProblem, MAX_SWEEPS, TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::dataio::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.001;
pub const FALLBACK_FRACTION: f64 = 0.2;
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub mean: f64,
    pub max: f64,
}

/// How the final labels were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Non-zero coefficients at the requested λ.
    Lasso,
    /// Non-zero coefficients after halving λ.
    HalvedLambda,
    /// Every fit was all-zero; channels ranked by |corr(x_c, y)|.
    Correlation,
    /// Every coefficient was non-zero; channels ranked by |β_c|.
    TopBeta,
    /// Labels supplied directly.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRelevance {
    pub beta: Vec<f64>,
    pub labels: Vec<u8>,
    pub lambda_used: f64,
    pub response_summary: ResponseSummary,
    pub selection: Selection,
    pub converged: bool,
}

impl ChannelRelevance {
    pub fn from_labels(labels: Vec<u8>) -> Self {
        Self {
            beta: labels.iter().map(|&l| f64::from(l)).collect(),
            labels,
            lambda_used: 0.0,
            response_summary: ResponseSummary { mean: 0.0, max: 0.0 },
            selection: Selection::Manual,
            converged: true,
        }
    }

    pub fn relevant(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&c| self.labels[c] == 1).collect()
    }
}

/// `label(c) = 1` iff `β_c ≠ 0`.
pub fn labels_from_beta(beta: &[f64]) -> Vec<u8> {
    beta.iter().map(|&b| u8::from(b != 0.0)).collect()
}

/// Indices of the `k` largest `score` magnitudes, ties to the smaller index.
pub fn top_k(score: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].abs().total_cmp(&score[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

fn fallback_count(channels: usize) -> usize {
    ((FALLBACK_FRACTION * channels as f64).ceil() as usize).clamp(1, channels)
}

/// Regress the per-point error `y` on the inputs and label channels.
pub fn estimate_relevance(errors: &[f64], inputs: &Matrix, lambda: f64) -> Result<ChannelRelevance> {
    if errors.len() != inputs.rows {
        return Err(Error::Dimension(format!(
            "{} error values for {} input rows",
            errors.len(),
            inputs.rows
        )));
    }
    let problem = RegressionProblem::new(inputs, errors)?;
    let summary = ResponseSummary {
        mean: problem.response_mean(),
        max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let c = inputs.cols;
    let mut lambda_used = lambda;
    let mut fit = lasso_fit(&problem, lambda)?;
    let mut selection = Selection::Lasso;
    let mut halvings = 0;
    while fit.beta.iter().all(|&b| b == 0.0) && halvings < MAX_HALVINGS {
        halvings += 1;
        lambda_used /= 2.0;
        fit = lasso_fit(&problem, lambda_used)?;
        selection = Selection::HalvedLambda;
    }
    let mut labels = labels_from_beta(&fit.beta);
    if labels.iter().all(|&l| l == 0) {
        selection = Selection::Correlation;
        let r = problem.residual(&vec![0.0; c]);
        labels = vec![0; c];
        for ch in top_k(&problem.correlations_with(&r), fallback_count(c)) {
            labels[ch] = 1;
        }
    } else if c >= 2 && labels.iter().all(|&l| l == 1) {
        selection = Selection::TopBeta;
        labels = vec![0; c];
        for ch in top_k(&fit.beta, fallback_count(c)) {
            labels[ch] = 1;
        }
    }
    Ok(ChannelRelevance {
        beta: fit.beta,
        labels,
        lambda_used,
        response_summary: summary,
        selection,
        converged: fit.converged,
    })
}

/// Set-F1 of recovered channels against a reference set.
pub fn set_f1(found: &[usize], truth: &[usize]) -> f64 {
    let hits = found.iter().filter(|c| truth.contains(c)).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let p = hits / found.len() as f64;
    let r = hits / truth.len() as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_response_uses_correlation_fallback() {
        let x = Matrix::new(4, 6, (0..24).map(|v| (v as f64 * 1.3).sin()).collect()).unwrap();
        let rel = estimate_relevance(&[0.0; 4], &x, DEFAULT_LAMBDA).unwrap();
        assert_eq!(rel.selection, Selection::Correlation);
        assert_eq!(rel.labels.iter().filter(|&&l| l == 1).count(), 2);
        assert!(rel.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dense_fit_keeps_top_fraction() {
        let n = 50;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in 0..n {
            let row: Vec<f64> = (0..5).map(|c| ((t * (c + 2)) as f64 * 0.7).sin()).collect();
            y.push(3.0 * row[1] + 0.5 * row[0] + 0.4 * row[2] + 0.3 * row[3] + 0.2 * row[4]);
            x.extend(row);
        }
        let rel = estimate_relevance(&y, &Matrix::new(n, 5, x).unwrap(), DEFAULT_LAMBDA).unwrap();
        assert_eq!(rel.selection, Selection::TopBeta);
        assert_eq!(rel.relevant(), vec![1]);
    }

    #[test]
    fn sparse_fit_labels_follow_beta() {
        let n = 40;
        let x: Vec<f64> = (0..n * 3).map(|v| ((v * v) as f64 * 0.1).sin()).collect();
        let m = Matrix::new(n, 3, x).unwrap();
        let y: Vec<f64> = (0..n).map(|t| 2.0 * m.get(t, 2)).collect();
        let rel = estimate_relevance(&y, &m, 0.5).unwrap();
        assert_eq!(rel.selection, Selection::Lasso);
        assert_eq!(rel.labels, labels_from_beta(&rel.beta));
        assert_eq!(rel.relevant(), vec![2]);
    }

    #[test]
    fn top_k_tie_rule() {
        assert_eq!(top_k(&[1.0, -3.0, 3.0, 0.5], 2), vec![1, 2]);
        assert_eq!(top_k(&[0.0; 4], 2), vec![0, 1]);
    }

    #[test]
    fn set_f1_cases() {
        assert_eq!(set_f1(&[0, 1], &[0, 1]), 1.0);
        assert_eq!(set_f1(&[2, 3], &[0, 1]), 0.0);
        assert!((set_f1(&[0, 2], &[0, 1]) - 0.5).abs() < 1e-15);
    }
}
