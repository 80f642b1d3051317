//! Detection metrics: AP at fixed and averaged IoU thresholds, mean IoU of
//! the selected boxes, and mean landmark distance in millimetres.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{iou3d, Box3, Detection};
use crate::landmark::{Landmark, NUM_LANDMARKS};

/// Thresholds reported individually alongside the averaged AP.
pub const REPORTED_THRESHOLDS: [f64; 3] = [0.35, 0.50, 0.75];

/// 0.50, 0.55, …, 0.95
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// One ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class: Landmark,
    pub bbox: Box3,
    pub landmark: [f64; 3],
}

impl GroundTruth {
    pub fn annotations(&self) -> Vec<Annotation> {
        Landmark::ALL
            .iter()
            .map(|&l| Annotation { class: l, bbox: self.bbox(l), landmark: self.landmark(l) })
            .collect()
    }
}

fn check_lengths(preds: &[Vec<Detection>], gts: &[Vec<Annotation>]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction sets for {} ground-truth volumes",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Area under the all-point interpolated precision/recall curve.
fn interpolated_area(recall: &[f64], precision: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        area += (r - prev_recall) * p;
        prev_recall = *r;
    }
    area
}

/// AP for one class, or `None` when no volume has that class annotated.
pub fn class_average_precision(
    preds: &[Vec<Detection>],
    gts: &[Vec<Annotation>],
    class: Landmark,
    iou_thresh: f64,
) -> Result<Option<f64>> {
    check_lengths(preds, gts)?;
    let n_pos: usize = gts.iter().map(|g| g.iter().filter(|a| a.class == class).count()).sum();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut ranked: Vec<(usize, &Detection)> = preds
        .iter()
        .enumerate()
        .flat_map(|(v, ds)| ds.iter().filter(|d| d.class == class).map(move |d| (v, d)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.anchor_index.cmp(&b.1.anchor_index))
    });

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for (rank, (v, det)) in ranked.iter().enumerate() {
        let best = gts[*v]
            .iter()
            .enumerate()
            .filter(|(j, a)| a.class == class && !matched[*v][*j])
            .map(|(j, a)| (j, iou3d(&det.bbox, &a.bbox)))
            .filter(|(_, iou)| *iou >= iou_thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            matched[*v][j] = true;
            tp += 1;
        }
        recall.push(tp as f64 / n_pos as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    Ok(Some(interpolated_area(&recall, &precision)))
}

/// Mean of the per-class APs over the classes present in the ground truth.
pub fn average_precision(preds: &[Vec<Detection>], gts: &[Vec<Annotation>], iou_thresh: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for class in Landmark::ALL {
        if let Some(ap) = class_average_precision(preds, gts, class, iou_thresh)? {
            sum += ap;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn mean_ap(preds: &[Vec<Detection>], gts: &[Vec<Annotation>]) -> Result<f64> {
    let ts = coco_thresholds();
    let mut sum = 0.0;
    for t in ts {
        sum += average_precision(preds, gts, t)?;
    }
    Ok(sum / ts.len() as f64)
}

/// Highest-scoring prediction of `class` in one volume.
fn selected(preds: &[Detection], class: Landmark) -> Option<&Detection> {
    preds
        .iter()
        .filter(|d| d.class == class)
        .max_by(|a, b| a.score.total_cmp(&b.score).then(b.anchor_index.cmp(&a.anchor_index)))
}

fn per_class_mean_iou(preds: &[Vec<Detection>], gts: &[Vec<Annotation>]) -> [Option<f64>; NUM_LANDMARKS] {
    std::array::from_fn(|c| {
        let class = Landmark::ALL[c];
        let ious: Vec<f64> = preds
            .iter()
            .zip(gts)
            .flat_map(|(p, g)| {
                let sel = selected(p, class);
                g.iter()
                    .filter(move |a| a.class == class)
                    .map(move |a| sel.map_or(0.0, |d| iou3d(&d.bbox, &a.bbox)))
            })
            .collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    })
}

/// IoU of each class's selected box, averaged over volumes and then classes.
/// A class with no prediction contributes 0.
pub fn mean_iou(preds: &[Vec<Detection>], gts: &[Vec<Annotation>]) -> Result<f64> {
    check_lengths(preds, gts)?;
    let present: Vec<f64> = per_class_mean_iou(preds, gts).into_iter().flatten().collect();
    Ok(if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    /// Mean over matched (volume, class) pairs; `None` when nothing was matched.
    pub d_mean_mm: Option<f64>,
    /// Fraction of annotated (volume, class) pairs without a prediction.
    pub miss_rate: f64,
    pub pairs: usize,
}

fn distances(preds: &[Vec<Detection>], gts: &[Vec<Annotation>], class: Option<Landmark>, spacing_mm: f64) -> DistanceStats {
    let mut total = 0.0;
    let mut hits = 0usize;
    let mut pairs = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for a in g.iter().filter(|a| class.is_none_or(|c| c == a.class)) {
            pairs += 1;
            if let Some(d) = selected(p, a.class) {
                let c = d.center();
                let dist = (0..3).map(|i| (c[i] - a.landmark[i]).powi(2)).sum::<f64>().sqrt();
                total += dist * spacing_mm;
                hits += 1;
            }
        }
    }
    DistanceStats {
        d_mean_mm: (hits > 0).then(|| total / hits as f64),
        miss_rate: if pairs == 0 { 0.0 } else { (pairs - hits) as f64 / pairs as f64 },
        pairs,
    }
}

/// Mean Euclidean distance between selected box centres and annotated
/// landmarks, in millimetres. Misses are excluded and reported as a rate.
pub fn d_mean(preds: &[Vec<Detection>], gts: &[Vec<Annotation>], spacing_mm: f64) -> Result<DistanceStats> {
    check_lengths(preds, gts)?;
    if !(spacing_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel spacing must be positive, got {spacing_mm}")));
    }
    Ok(distances(preds, gts, None, spacing_mm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Landmark,
    pub ap_mean: Option<f64>,
    pub ap_at: BTreeMap<String, Option<f64>>,
    pub miou: Option<f64>,
    pub d_mean_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_mean: f64,
    /// Keyed by threshold formatted with two decimals ("0.35", "0.50", "0.75").
    pub ap_at: BTreeMap<String, f64>,
    pub miou: f64,
    pub d_mean_mm: Option<f64>,
    pub miss_rate: f64,
    /// Wall-clock inference time per volume, when measured.
    pub time_ms: Option<f64>,
    pub volumes: usize,
    pub per_class: Vec<ClassMetrics>,
}

fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

impl EvalResult {
    pub fn ap_at(&self, t: f64) -> Option<f64> {
        self.ap_at.get(&threshold_key(t)).copied()
    }
}

pub fn evaluate(preds: &[Vec<Detection>], gts: &[Vec<Annotation>], spacing_mm: f64) -> Result<EvalResult> {
    let dist = d_mean(preds, gts, spacing_mm)?;
    let mut ap_at = BTreeMap::new();
    for t in REPORTED_THRESHOLDS {
        ap_at.insert(threshold_key(t), average_precision(preds, gts, t)?);
    }
    let class_iou = per_class_mean_iou(preds, gts);
    let mut per_class = Vec::new();
    for class in Landmark::ALL {
        let mut at = BTreeMap::new();
        for t in REPORTED_THRESHOLDS {
            at.insert(threshold_key(t), class_average_precision(preds, gts, class, t)?);
        }
        let aps = coco_thresholds()
            .iter()
            .map(|&t| class_average_precision(preds, gts, class, t))
            .collect::<Result<Vec<_>>>()?;
        let ap_mean = aps.iter().copied().collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / v.len() as f64);
        per_class.push(ClassMetrics {
            class,
            ap_mean,
            ap_at: at,
            miou: class_iou[class.index()],
            d_mean_mm: distances(preds, gts, Some(class), spacing_mm).d_mean_mm,
        });
    }
    Ok(EvalResult {
        ap_mean: mean_ap(preds, gts)?,
        ap_at,
        miou: mean_iou(preds, gts)?,
        d_mean_mm: dist.d_mean_mm,
        miss_rate: dist.miss_rate,
        time_ms: None,
        volumes: gts.len(),
        per_class,
    })
}

/// Plain-text table with columns AP, AP35, AP50, AP75, mIoU, d-mean, time(ms).
/// AP and mIoU are in percent, d-mean in millimetres.
pub fn format_table(rows: &[(String, &EvalResult)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_w$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}",
        "Method", "AP", "AP35", "AP50", "AP75", "mIoU", "d-mean", "time(ms)"
    );
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<label_w$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}",
            label,
            pct(Some(r.ap_mean)),
            pct(r.ap_at(0.35)),
            pct(r.ap_at(0.50)),
            pct(r.ap_at(0.75)),
            pct(Some(r.miou)),
            num(r.d_mean_mm),
            num(r.time_ms),
        );
    }
    out
}
