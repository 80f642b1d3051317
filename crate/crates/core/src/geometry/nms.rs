use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::boxes::{iou3d, Box3};
use crate::landmark::{Landmark, NUM_CLASSES};

/// A decoded box with its classifier output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box3,
    pub class: Landmark,
    /// Probability of `class`.
    pub score: f64,
    /// Full softmax output, background first.
    pub class_scores: [f64; NUM_CLASSES],
    /// Index of the anchor the box was decoded from.
    pub anchor_index: usize,
}

impl Detection {
    pub fn center(&self) -> [f64; 3] {
        self.bbox.center()
    }
}

/// Descending score, then ascending anchor index, then class.
pub(crate) fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.anchor_index.cmp(&b.anchor_index))
        .then(a.class.cmp(&b.class))
}

/// Greedy per-class non-maximum suppression.
///
/// A box is dropped when its IoU with an already kept box of the same class
/// exceeds `iou_threshold`. The output is sorted by descending score.
pub fn nms3d(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::new();
    for class in Landmark::ALL {
        let members: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
        if members.is_empty() {
            continue;
        }
        // Boxes can only overlap when their centres differ by less than the
        // largest extent on every axis, so kept boxes are bucketed on a grid
        // of that pitch and only the 27 neighbouring buckets are checked.
        let pitch = members
            .iter()
            .map(|d| d.bbox.w.max(d.bbox.h).max(d.bbox.d))
            .fold(0.0, f64::max);
        let bucket = |b: &Box3| -> [i64; 3] { b.center().map(|c| (c / pitch).floor() as i64) };
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut class_kept: Vec<Detection> = Vec::new();
        for det in members {
            let key = bucket(&det.bbox);
            let mut suppressed = false;
            'search: for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                        if let Some(ids) = grid.get(&k) {
                            if ids.iter().any(|&i| iou3d(&class_kept[i].bbox, &det.bbox) > iou_threshold) {
                                suppressed = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if !suppressed {
                grid.entry(key).or_default().push(class_kept.len());
                class_kept.push(*det);
            }
        }
        kept.extend(class_kept);
    }
    kept.sort_by(rank_order);
    kept
}
