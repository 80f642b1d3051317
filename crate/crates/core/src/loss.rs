//! Classification and box-regression losses with analytic gradients.
//!
//! The classification loss re-weights positive samples by `IoU^η`, normalised
//! so that the total positive cross-entropy is unchanged. Weights are treated
//! as constants when differentiating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Deltas;
use crate::landmark::NUM_CLASSES;

/// Default IoU exponent.
pub const DEFAULT_ETA: f64 = 1.75;

/// Lower clamp applied to the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

impl ClassScores {
    pub fn from_logits(logits: [f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = logits.map(|l| (l - max).exp());
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        ClassScores { logits, probs }
    }

    /// Index of the largest probability (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

fn check_label(label: usize) -> Result<()> {
    if label >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!("class label {label} out of range 0..{NUM_CLASSES}")));
    }
    Ok(())
}

pub fn cross_entropy(scores: &ClassScores, label: usize) -> Result<f64> {
    check_label(label)?;
    Ok(-scores.probs[label].max(PROB_FLOOR).ln())
}

/// d CE / d logits. Zero once the clamp is active, matching the clamped value.
pub fn cross_entropy_grad(scores: &ClassScores, label: usize) -> Result<[f64; NUM_CLASSES]> {
    check_label(label)?;
    if scores.probs[label] < PROB_FLOOR {
        return Ok([0.0; NUM_CLASSES]);
    }
    let mut g = scores.probs;
    g[label] -= 1.0;
    Ok(g)
}

/// Per-positive weights `IoU_i^η · ΣCE / Σ(IoU^η·CE)`.
///
/// When the normaliser vanishes (all IoUs or all CEs zero) every weight is 1.
pub fn iou_weights(ious: &[f64], ces: &[f64], eta: f64) -> Result<Vec<f64>> {
    if ious.len() != ces.len() {
        return Err(Error::InvalidArgument(format!(
            "iou_weights: {} IoUs but {} CE values",
            ious.len(),
            ces.len()
        )));
    }
    if ious.is_empty() {
        return Err(Error::InvalidArgument("iou_weights: empty input".into()));
    }
    if !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta must be finite, got {eta}")));
    }
    if let Some(v) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("IoU {v} outside [0, 1]")));
    }
    if let Some(v) = ces.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("cross-entropy {v} is negative or non-finite")));
    }
    let scaled: Vec<f64> = ious.iter().map(|v| v.powf(eta)).collect();
    if scaled.iter().all(|s| *s == scaled[0]) && scaled[0] > 0.0 {
        return Ok(vec![1.0; ious.len()]);
    }
    let total_ce: f64 = ces.iter().sum();
    let weighted: f64 = scaled.iter().zip(ces).map(|(s, c)| s * c).sum();
    if weighted == 0.0 {
        return Ok(vec![1.0; ious.len()]);
    }
    let norm = total_ce / weighted;
    Ok(scaled.iter().map(|s| s * norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveSample {
    pub scores: ClassScores,
    pub label: usize,
    /// IoU of the regressed box with its ground truth.
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls_loss: f64,
    pub reg_loss: f64,
    /// One weight per positive sample.
    pub weights: Vec<f64>,
    /// d cls_loss / d logits: positives first, then negatives.
    pub gradients: Vec<[f64; NUM_CLASSES]>,
}

/// `Σ_pos w_i·CE_i + Σ_neg CE_i`. With `eta = None` every weight is 1.
pub fn iou_balanced_cls_loss(pos: &[PositiveSample], neg: &[ClassScores], eta: Option<f64>) -> Result<LossReport> {
    let weights = match (eta, pos.is_empty()) {
        (_, true) => Vec::new(),
        (Some(eta), false) => {
            let ces = pos.iter().map(|p| cross_entropy(&p.scores, p.label)).collect::<Result<Vec<_>>>()?;
            let ious: Vec<f64> = pos.iter().map(|p| p.iou).collect();
            iou_weights(&ious, &ces, eta)?
        }
        (None, false) => vec![1.0; pos.len()],
    };
    weighted_cls_loss(pos, neg, &weights)
}

/// `Σ_pos w_i·CE_i + Σ_neg CE_i` for given weights, held constant in the
/// gradient.
pub fn weighted_cls_loss(pos: &[PositiveSample], neg: &[ClassScores], weights: &[f64]) -> Result<LossReport> {
    if weights.len() != pos.len() {
        return Err(Error::InvalidArgument(format!("{} weights for {} positives", weights.len(), pos.len())));
    }
    let mut report = LossReport { weights: weights.to_vec(), ..Default::default() };
    for (p, w) in pos.iter().zip(weights) {
        report.cls_loss += w * cross_entropy(&p.scores, p.label)?;
        let g = cross_entropy_grad(&p.scores, p.label)?;
        report.gradients.push(g.map(|v| v * w));
    }
    for s in neg {
        report.cls_loss += cross_entropy(s, 0)?;
        report.gradients.push(cross_entropy_grad(s, 0)?);
    }
    Ok(report)
}

/// Smooth-L1 summed over the six delta components, and its gradient with
/// respect to `pred`.
pub fn box_regression_loss(pred: &Deltas, target: &Deltas) -> (f64, [f64; 6]) {
    let p = pred.to_array();
    let t = target.to_array();
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    for i in 0..6 {
        let x = p[i] - t[i];
        if x.abs() < 1.0 {
            loss += 0.5 * x * x;
            grad[i] = x;
        } else {
            loss += x.abs() - 0.5;
            grad[i] = x.signum();
        }
    }
    (loss, grad)
}
