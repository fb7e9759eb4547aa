use serde::{Deserialize, Serialize};

use super::{forward, AEParams};
use crate::datagen::Dataset;
use crate::dictionary;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::projector::{project_union, UnionProjector};

/// Encoder coefficients `(⟨d1,s⟩, ⟨d2,s⟩)` before and after ReLU.
pub fn relu_selection_demo(d1: &[f64], d2: &[f64], s: &[f64]) -> (Vector, Vector) {
    let pre = vec![numerics::dot(d1, s), numerics::dot(d2, s)];
    let post = pre.iter().map(|&x| x.max(0.0)).collect();
    (pre, post)
}

/// Cross-group leakage `‖Djᵀs‖` and its bound `θ/(1−δ)·‖x*‖ + √(1−θ²)·‖c_r‖`, where θ is the
/// restricted orthogonality constant of the blocks and δ the isometry constant of `Di`.
pub fn leakage_check(di: &Matrix, dj: &Matrix, s: &[f64], x_star: &[f64], c_r_norm: f64) -> Result<(f64, f64)> {
    if x_star.len() != di.cols() {
        return Err(Error::DimensionMismatch(format!("x* of length {} for {} atoms", x_star.len(), di.cols())));
    }
    let delta = dictionary::block_isometry_constant(di)?;
    if delta >= 1.0 {
        return Err(Error::DeltaTooLarge(delta));
    }
    let theta = dictionary::roc(di, dj)?;
    let measured = numerics::norm(&dj.tr_matvec(s)?);
    let bound = theta / (1.0 - delta) * numerics::norm(x_star) + (1.0 - theta * theta).max(0.0).sqrt() * c_r_norm;
    Ok((measured, bound))
}

/// Area under the ROC curve for "positive scores exceed negative scores", ties counted half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> f64 {
    if negatives.is_empty() || positives.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = negatives.iter().map(|&x| (x, false)).chain(positives.iter().map(|&x| (x, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with midranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

/// F1 of the rule "score > threshold means anomaly".
pub fn f1_score(negatives: &[f64], positives: &[f64], threshold: f64) -> f64 {
    let tp = positives.iter().filter(|&&x| x > threshold).count() as f64;
    let fp = negatives.iter().filter(|&&x| x > threshold).count() as f64;
    let fn_ = positives.len() as f64 - tp;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Threshold maximizing F1, searched over midpoints between sorted scores.
pub fn best_f1_threshold(negatives: &[f64], positives: &[f64]) -> f64 {
    let mut scores: Vec<f64> = negatives.iter().chain(positives).cloned().collect();
    scores.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, scores.first().map_or(0.0, |x| x - 1.0));
    let candidates = std::iter::once(scores[0] - 1.0).chain(scores.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    for t in candidates {
        let f = f1_score(negatives, positives, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// Chosen on the calibration half (even indices).
    pub threshold: f64,
    /// Measured on the evaluation half (odd indices).
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub recon_error: Vec<f64>,
    pub off_union_residual: Vec<f64>,
    pub mean_recon_error: f64,
    pub mean_off_union_residual: f64,
    /// Fraction of samples whose reconstruction lies nearest to the labeled component.
    pub assignment_accuracy: f64,
    /// Present when anomalies were supplied; score is the squared reconstruction error.
    pub anomaly_auroc: Option<f64>,
    pub anomaly_f1: Option<F1Report>,
}

/// Squared reconstruction error of every sample.
pub fn recon_scores(p: &AEParams, data: &Dataset) -> Result<Vec<f64>> {
    data.samples
        .iter()
        .map(|s| Ok(numerics::norm_sq(&numerics::sub(&forward(p, s)?.1, s))))
        .collect()
}

pub fn compactness_metrics(
    p: &AEParams,
    data: &Dataset,
    truth: &UnionProjector,
    anomalies: Option<&Dataset>,
) -> Result<CompactnessReport> {
    let mut recon_error = Vec::with_capacity(data.len());
    let mut off = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for (s, &label) in data.samples.iter().zip(&data.labels) {
        let (_, r) = forward(p, s)?;
        recon_error.push(numerics::norm_sq(&numerics::sub(&r, s)));
        let pr = project_union(truth, &r)?;
        off.push(pr.distance);
        if pr.component_index == label {
            correct += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (anomaly_auroc, anomaly_f1) = match anomalies {
        None => (None, None),
        Some(a) => {
            let pos = recon_scores(p, a)?;
            let halves = |v: &[f64], parity| -> Vec<f64> { v.iter().skip(parity).step_by(2).cloned().collect() };
            let threshold = best_f1_threshold(&halves(&recon_error, 0), &halves(&pos, 0));
            let f1 = f1_score(&halves(&recon_error, 1), &halves(&pos, 1), threshold);
            (Some(auroc(&recon_error, &pos)), Some(F1Report { threshold, f1 }))
        }
    };
    Ok(CompactnessReport {
        mean_recon_error: mean(&recon_error),
        mean_off_union_residual: mean(&off),
        assignment_accuracy: correct as f64 / data.len() as f64,
        recon_error,
        off_union_residual: off,
        anomaly_auroc,
        anomaly_f1,
    })
}
