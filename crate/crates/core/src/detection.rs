//! Latent-class labelling, anomaly scores and point-adjustment-free metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::model::CaladNetwork;
use crate::tensor::Prng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub normal_class: usize,
    pub histogram: Vec<usize>,
}

/// Index of the largest value, ties to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn profile_from_probabilities(probs: &[f64], classes: usize) -> Result<ClassProfile> {
    if classes == 0 || probs.is_empty() || !probs.len().is_multiple_of(classes) {
        return Err(Error::Dimension(format!(
            "{} probabilities do not form rows of {classes}",
            probs.len()
        )));
    }
    let mut histogram = vec![0; classes];
    for row in probs.chunks(classes) {
        histogram[argmax(row)] += 1;
    }
    let mut normal_class = 0;
    for (k, &count) in histogram.iter().enumerate() {
        if count > histogram[normal_class] {
            normal_class = k;
        }
    }
    Ok(ClassProfile {
        normal_class,
        histogram,
    })
}

pub fn fit_profile(network: &CaladNetwork, train_anchors: &WindowSet) -> Result<ClassProfile> {
    if train_anchors.is_empty() {
        return Err(Error::Usage("cannot fit a class profile without training windows".into()));
    }
    profile_from_probabilities(&network.probabilities(&train_anchors.windows)?, network.classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub label: u8,
    pub score: f64,
}

pub fn score_probabilities(probs: &[f64], profile: &ClassProfile) -> Vec<WindowScore> {
    let k = profile.histogram.len();
    probs
        .chunks(k)
        .map(|row| WindowScore {
            label: u8::from(argmax(row) != profile.normal_class),
            score: (1.0 - row[profile.normal_class]).clamp(0.0, 1.0),
        })
        .collect()
}

pub fn score_windows(network: &CaladNetwork, profile: &ClassProfile, windows: &WindowSet) -> Result<Vec<WindowScore>> {
    if profile.histogram.len() != network.classes {
        return Err(Error::Dimension(format!(
            "profile has {} classes, network {}",
            profile.histogram.len(),
            network.classes
        )));
    }
    Ok(score_probabilities(&network.probabilities(&windows.windows)?, profile))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub au_pr: f64,
}

/// Precision/recall/F1 of hard labels and step-wise area under the
/// precision-recall curve of the scores, tied scores forming one step.
pub fn compute_metrics(truth: &[u8], pred: &[u8], scores: &[f64]) -> Result<Metrics> {
    if truth.len() != pred.len() || truth.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} truths, {} predictions, {} scores",
            truth.len(),
            pred.len(),
            scores.len()
        )));
    }
    let positives = truth.iter().filter(|&&t| t == 1).count();
    if positives == 0 {
        return Err(Error::Numeric("AU-PR undefined: no positive windows in the ground truth".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN anomaly score".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut au_pr = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / positives as f64;
        au_pr += (r - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = r;
    }
    Ok(Metrics {
        precision,
        recall,
        f1,
        au_pr,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Uniform random scores thresholded at 0.5.
pub fn random_baseline(truth: &[u8], seed: u64) -> Result<(Metrics, Vec<WindowScore>)> {
    if truth.len() < 2 {
        return Err(Error::Usage("random baseline needs at least two windows".into()));
    }
    let mut rng = Prng::substream(seed, &[0x7a4d]);
    let windows: Vec<WindowScore> = truth
        .iter()
        .map(|_| {
            let score = rng.uniform();
            WindowScore {
                label: u8::from(score > 0.5),
                score,
            }
        })
        .collect();
    let pred: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let scores: Vec<f64> = windows.iter().map(|w| w.score).collect();
    Ok((compute_metrics(truth, &pred, &scores)?, windows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub origin: usize,
    pub score: f64,
    pub pred: u8,
    pub truth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub entity_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    pub profile: ClassProfile,
    pub prevalence: f64,
    pub metrics: Metrics,
    pub random_baseline: Metrics,
    pub windows: Vec<WindowRecord>,
}

pub fn window_records(windows: &WindowSet, scores: &[WindowScore]) -> Result<Vec<WindowRecord>> {
    let truth = windows
        .labels
        .as_ref()
        .ok_or_else(|| Error::Usage("test windows carry no labels".into()))?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, s)| WindowRecord {
            index: i,
            origin: windows.origin[i],
            score: s.score,
            pred: s.label,
            truth: truth[i],
        })
        .collect())
}

pub fn write_window_csv(path: &Path, records: &[WindowRecord]) -> Result<()> {
    let mut out = String::from("index,score,pred,true\n");
    for r in records {
        out.push_str(&format!("{},{:.16e},{},{}\n", r.index, r.score, r.pred, r.truth));
    }
    crate::io::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(normal: usize, k: usize) -> ClassProfile {
        let mut histogram = vec![0; k];
        histogram[normal] = 1;
        ClassProfile {
            normal_class: normal,
            histogram,
        }
    }

    #[test]
    fn unanimous_and_tied_profiles() {
        let mut probs = Vec::new();
        for _ in 0..4 {
            let mut row = vec![0.05; 10];
            row[3] = 0.55;
            probs.extend(row);
        }
        let p = profile_from_probabilities(&probs, 10).unwrap();
        assert_eq!(p.normal_class, 3);
        assert_eq!(p.histogram.iter().sum::<usize>(), 4);
        assert_eq!(p.histogram[3], 4);

        let mut probs = Vec::new();
        for c in [0, 1, 0, 1] {
            let mut row = vec![0.0; 3];
            row[c] = 1.0;
            probs.extend(row);
        }
        assert_eq!(profile_from_probabilities(&probs, 3).unwrap().normal_class, 0);
    }

    #[test]
    fn scoring_cases() {
        let mut certain = vec![0.0; 10];
        certain[0] = 1.0;
        let s = score_probabilities(&certain, &profile(0, 10));
        assert_eq!(s[0], WindowScore { label: 0, score: 0.0 });

        let uniform = vec![0.1; 10];
        let s = score_probabilities(&uniform, &profile(0, 10))[0];
        assert_eq!(s.label, 0);
        assert!((s.score - 0.9).abs() < 1e-12);
        assert_eq!(score_probabilities(&uniform, &profile(4, 10))[0].label, 1);

        let mut skew = vec![0.05; 10];
        skew[9] = 0.55;
        let s = score_probabilities(&skew, &profile(0, 10))[0];
        assert_eq!(s.label, 1);
        assert!((s.score - 0.95).abs() < 1e-12);
    }

    #[test]
    fn confusion_arithmetic() {
        let truth = [1, 1, 1, 1, 0];
        let pred = [1, 1, 0, 0, 1];
        let m = compute_metrics(&truth, &pred, &[0.0; 5]).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 0.5).abs() < 1e-15);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_detectors() {
        let truth = [0, 1, 0, 1, 1, 0, 0, 0];
        let scores: Vec<f64> = truth.iter().map(|&t| if t == 1 { 0.9 } else { 0.1 }).collect();
        let m = compute_metrics(&truth, &truth, &scores).unwrap();
        assert_eq!((m.f1, m.au_pr), (1.0, 1.0));
        let m = compute_metrics(&truth, &[0; 8], &[0.5; 8]).unwrap();
        assert!((m.au_pr - 3.0 / 8.0).abs() < 1e-12);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn no_positive_truth_is_an_error() {
        assert!(matches!(compute_metrics(&[0, 0], &[0, 1], &[0.1, 0.2]), Err(Error::Numeric(_))));
    }

    #[test]
    fn random_baseline_moments() {
        let truth: Vec<u8> = (0..10_000).map(|i| u8::from(i % 5 == 0)).collect();
        let (m, _) = random_baseline(&truth, 42).unwrap();
        assert!((m.recall - 0.5).abs() < 0.1);
        assert!((m.precision - 0.2).abs() < 0.05);
        assert_eq!(random_baseline(&truth, 42).unwrap().0, m);
    }
}
