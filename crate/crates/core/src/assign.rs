//! Positive / negative / ignore labelling of anchors against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode, iou3d, AnchorGrid, Box3, Deltas};
use crate::landmark::{Landmark, NUM_LANDMARKS};

/// Ground-truth landmarks and their landmark-centred boxes, indexed by
/// [`Landmark::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub landmarks: [[f64; 3]; NUM_LANDMARKS],
    pub boxes: [Box3; NUM_LANDMARKS],
}

impl GroundTruth {
    /// Builds the boxes from the class-specific sizes (14³ eyes, 24³ otherwise).
    pub fn from_landmarks(landmarks: [[f64; 3]; NUM_LANDMARKS]) -> Result<Self> {
        let mut boxes = [Box3 { cx: 0.0, cy: 0.0, cz: 0.0, w: 1.0, h: 1.0, d: 1.0 }; NUM_LANDMARKS];
        for l in Landmark::ALL {
            boxes[l.index()] = Box3::cube(landmarks[l.index()], l.box_size())?;
        }
        Ok(GroundTruth { landmarks, boxes })
    }

    pub fn landmark(&self, l: Landmark) -> [f64; 3] {
        self.landmarks[l.index()]
    }

    pub fn bbox(&self, l: Landmark) -> Box3 {
        self.boxes[l.index()]
    }

    pub fn labelled_boxes(&self) -> Vec<(Landmark, Box3)> {
        Landmark::ALL.iter().map(|&l| (l, self.bbox(l))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Anchors with best IoU at or above this are positive.
    pub pos_iou: f64,
    /// Anchors with best IoU strictly below this are negative.
    pub neg_iou: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { pos_iou: 0.5, neg_iou: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelState {
    Positive(Landmark),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabel {
    pub state: LabelState,
    pub matched_gt: Option<usize>,
    pub regression_target: Option<Deltas>,
}

impl AnchorLabel {
    pub const NEGATIVE: AnchorLabel = AnchorLabel { state: LabelState::Negative, matched_gt: None, regression_target: None };
    pub const IGNORE: AnchorLabel = AnchorLabel { state: LabelState::Ignore, matched_gt: None, regression_target: None };

    /// Classifier target: landmark class id, or 0 for background.
    pub fn class_id(&self) -> Option<usize> {
        match self.state {
            LabelState::Positive(l) => Some(l.class_id()),
            LabelState::Negative => Some(0),
            LabelState::Ignore => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveMatch {
    pub anchor: usize,
    pub gt: usize,
    pub class: Landmark,
    /// IoU of the undeformed anchor with its ground truth.
    pub iou: f64,
    pub target: Deltas,
}

/// Sparse labelling: positives and ignored anchors are listed, every other
/// anchor is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub num_anchors: usize,
    /// Sorted by anchor index.
    pub positives: Vec<PositiveMatch>,
    /// Sorted anchor indices.
    pub ignored: Vec<usize>,
}

impl Assignment {
    fn positive(&self, anchor: usize) -> Option<&PositiveMatch> {
        self.positives
            .binary_search_by_key(&anchor, |p| p.anchor)
            .ok()
            .map(|i| &self.positives[i])
    }

    pub fn is_negative(&self, anchor: usize) -> bool {
        anchor < self.num_anchors
            && self.positive(anchor).is_none()
            && self.ignored.binary_search(&anchor).is_err()
    }

    pub fn num_negatives(&self) -> usize {
        self.num_anchors - self.positives.len() - self.ignored.len()
    }

    pub fn label(&self, anchor: usize) -> AnchorLabel {
        if let Some(p) = self.positive(anchor) {
            AnchorLabel {
                state: LabelState::Positive(p.class),
                matched_gt: Some(p.gt),
                regression_target: Some(p.target),
            }
        } else if self.ignored.binary_search(&anchor).is_ok() {
            AnchorLabel::IGNORE
        } else {
            AnchorLabel::NEGATIVE
        }
    }

    pub fn to_labels(&self) -> Vec<AnchorLabel> {
        let mut labels = vec![AnchorLabel::NEGATIVE; self.num_anchors];
        for &i in &self.ignored {
            labels[i] = AnchorLabel::IGNORE;
        }
        for p in &self.positives {
            labels[p.anchor] = self.label(p.anchor);
        }
        labels
    }
}

/// Labels anchors against arbitrary class-tagged boxes.
///
/// Rules, in precedence order: each box's highest-IoU anchor is positive for
/// it (when several boxes want the same anchor, the larger IoU wins and the
/// loser takes its next best); any anchor with best IoU ≥ `pos_iou` is
/// positive for its argmax box; best IoU < `neg_iou` is negative; the rest
/// are ignored. Boxes that overlap no anchor at all get no forced positive.
pub fn assign(grid: &AnchorGrid, gts: &[(Landmark, Box3)], cfg: &MatchConfig) -> Result<Assignment> {
    if !(cfg.neg_iou > 0.0 && cfg.neg_iou <= cfg.pos_iou && cfg.pos_iou <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "match thresholds must satisfy 0 < neg ≤ pos ≤ 1, got {cfg:?}"
        )));
    }
    for (_, b) in gts {
        b.validate()?;
    }
    let n_gt = gts.len();

    // Only anchors that touch some box can have a non-zero IoU.
    let mut ious: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (j, (_, gt)) in gts.iter().enumerate() {
        for a in grid.overlapping_candidates(gt) {
            let v = iou3d(&grid.box_at(a), gt);
            if v > 0.0 {
                ious.entry(a).or_insert_with(|| vec![0.0; n_gt])[j] = v;
            }
        }
    }

    // Per box, candidate anchors by descending IoU (ties: lower index first).
    let ranked: Vec<Vec<(usize, f64)>> = (0..n_gt)
        .map(|j| {
            let mut v: Vec<(usize, f64)> = ious
                .iter()
                .filter(|(_, row)| row[j] > 0.0)
                .map(|(&a, row)| (a, row[j]))
                .collect();
            v.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            v
        })
        .collect();
    let mut order: Vec<usize> = (0..n_gt).filter(|&j| !ranked[j].is_empty()).collect();
    order.sort_by(|&x, &y| ranked[y][0].1.total_cmp(&ranked[x][0].1).then(x.cmp(&y)));
    let mut forced: BTreeMap<usize, usize> = BTreeMap::new();
    for j in order {
        if let Some(&(a, _)) = ranked[j].iter().find(|(a, _)| !forced.contains_key(a)) {
            forced.insert(a, j);
        }
    }

    let mut positives = Vec::new();
    let mut ignored = Vec::new();
    for (&a, row) in &ious {
        let (best_j, best) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        let matched = match forced.get(&a) {
            Some(&j) => Some(j),
            None if best >= cfg.pos_iou => Some(best_j),
            None => None,
        };
        if let Some(j) = matched {
            let anchor = grid.box_at(a);
            positives.push(PositiveMatch {
                anchor: a,
                gt: j,
                class: gts[j].0,
                iou: row[j],
                target: encode(&anchor, &gts[j].1)?,
            });
        } else if best >= cfg.neg_iou {
            ignored.push(a);
        }
    }
    Ok(Assignment { num_anchors: grid.len(), positives, ignored })
}

/// Labels every anchor of `grid` against the five landmark boxes.
pub fn match_anchors(grid: &AnchorGrid, gt: &GroundTruth) -> Result<Vec<AnchorLabel>> {
    Ok(assign(grid, &gt.labelled_boxes(), &MatchConfig::default())?.to_labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode, generate_anchors, AnchorSpec};

    #[test]
    fn exact_anchor_is_positive_with_zero_deltas() {
        let grid = generate_anchors(&AnchorSpec::default(), [32, 32, 32]).unwrap();
        let target = grid.box_at(grid.anchor_index([3, 4, 2], 5));
        let a = assign(&grid, &[(Landmark::Nose, target)], &MatchConfig::default()).unwrap();
        let label = a.label(grid.anchor_index([3, 4, 2], 5));
        assert_eq!(label.state, LabelState::Positive(Landmark::Nose));
        assert_eq!(label.regression_target, Some(Deltas::default()));
    }

    #[test]
    fn lone_weak_overlap_is_forced_positive() {
        // One anchor at 0.3 IoU, everything else disjoint.
        let spec = AnchorSpec { base_sizes: vec![2.0], stride: 4 };
        let grid = generate_anchors(&spec, [12, 4, 4]).unwrap();
        let anchor = grid.box_at(1);
        // overlap x = 2 - δ, IoU = (2-δ)·4/(8+8-(2-δ)·4) = 0.3 → δ = 2 - 0.3·16/(1.3·4)
        let delta = 2.0 - 0.3 * 16.0 / (1.3 * 4.0);
        let gt = Box3::cube([anchor.cx + delta, anchor.cy, anchor.cz], 2.0).unwrap();
        assert!((iou3d(&anchor, &gt) - 0.3).abs() < 1e-12);
        let a = assign(&grid, &[(Landmark::Chin, gt)], &MatchConfig::default()).unwrap();
        let labels = a.to_labels();
        assert_eq!(labels[1].state, LabelState::Positive(Landmark::Chin));
        assert_eq!(labels[0], AnchorLabel::NEGATIVE);
        assert_eq!(labels[2], AnchorLabel::NEGATIVE);
        assert_eq!(a.num_negatives(), 2);
    }

    #[test]
    fn contested_anchor_goes_to_larger_iou() {
        let spec = AnchorSpec { base_sizes: vec![4.0], stride: 4 };
        let grid = generate_anchors(&spec, [8, 4, 4]).unwrap();
        // anchor 0 spans x∈[0,4), anchor 1 spans [4,8)
        let strong = Box3::new([2.5, 2.0, 2.0], [4.0, 4.0, 4.0]).unwrap();
        let weak = Box3::new([3.5, 2.0, 2.0], [4.0, 4.0, 4.0]).unwrap();
        let a = assign(
            &grid,
            &[(Landmark::LeftEye, weak), (Landmark::RightEye, strong)],
            &MatchConfig::default(),
        )
        .unwrap();
        assert_eq!(a.label(0).state, LabelState::Positive(Landmark::RightEye));
        assert_eq!(a.label(1).state, LabelState::Positive(Landmark::LeftEye));
    }

    #[test]
    fn regression_targets_round_trip() {
        let grid = generate_anchors(&AnchorSpec::default(), [64, 64, 64]).unwrap();
        let gt = GroundTruth::from_landmarks([
            [20.3, 30.0, 31.7],
            [32.0, 36.1, 30.0],
            [43.2, 30.5, 29.0],
            [32.4, 20.0, 38.0],
            [31.0, 9.9, 30.0],
        ])
        .unwrap();
        let labels = match_anchors(&grid, &gt).unwrap();
        for (i, label) in labels.iter().enumerate() {
            assert_eq!(label.regression_target.is_some(), matches!(label.state, LabelState::Positive(_)));
            if let (Some(t), Some(j)) = (label.regression_target, label.matched_gt) {
                let back = decode(&grid.box_at(i), &t);
                for (g, w) in back.to_array().iter().zip(gt.boxes[j].to_array()) {
                    assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
                }
            }
        }
        for j in 0..5 {
            assert!(labels.iter().any(|l| l.matched_gt == Some(j)));
        }
    }

    #[test]
    fn rejects_bad_thresholds() {
        let grid = generate_anchors(&AnchorSpec::default(), [8, 8, 8]).unwrap();
        let b = Box3::cube([4.0; 3], 8.0).unwrap();
        let cfg = MatchConfig { pos_iou: 0.2, neg_iou: 0.3 };
        assert!(assign(&grid, &[(Landmark::Nose, b)], &cfg).is_err());
        let bad = Box3 { w: -1.0, ..b };
        assert!(assign(&grid, &[(Landmark::Nose, bad)], &MatchConfig::default()).is_err());
    }
}
