use serde::{Deserialize, Serialize};

use super::features::{FeatureExtractor, FeatureMap};
use super::head::{HeadOutput, HeadParams};
use crate::error::{Error, Result};
use crate::geometry::{decode, nms3d, AnchorGrid, Detection};
use crate::landmark::{Landmark, NUM_LANDMARKS};
use crate::loss::ClassScores;
use crate::prior::{select_combination, CandidateSet, PriorModel};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub nms_iou: f64,
    pub topk: usize,
    /// Select among the top-k with the graph prior; otherwise keep the best
    /// scoring box of each class.
    pub prior_filter: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { nms_iou: 0.1, topk: 2, prior_filter: true }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::InvalidArgument(format!("nms_iou must lie in [0, 1], got {}", self.nms_iou)));
        }
        if self.topk == 0 {
            return Err(Error::InvalidArgument("topk must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final boxes, one per landmark in [`Landmark::ALL`] order, plus the
/// candidates they were chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub detections: [Detection; NUM_LANDMARKS],
    pub candidates: CandidateSet,
}

impl Inference {
    /// Box centres in voxel coordinates.
    pub fn landmarks(&self) -> [[f64; 3]; NUM_LANDMARKS] {
        self.detections.map(|d| d.center())
    }

    /// The per-class best-score selection over the same candidates.
    pub fn score_only(&self) -> [Detection; NUM_LANDMARKS] {
        std::array::from_fn(|c| self.candidates.per_class[c][0])
    }
}

fn candidate(grid: &AnchorGrid, anchor: usize, scores: &ClassScores, deltas: &crate::geometry::Deltas) -> Option<Detection> {
    let class = scores.argmax();
    if class == 0 {
        return None;
    }
    let bbox = decode(&grid.box_at(anchor), deltas);
    if !bbox.to_array().iter().all(|v| v.is_finite()) || bbox.validate().is_err() {
        return None;
    }
    Some(Detection {
        bbox,
        class: Landmark::from_class_id(class).expect("argmax of a non-background class"),
        score: scores.probs[class],
        class_scores: scores.probs,
        anchor_index: anchor,
    })
}

/// Decoded boxes of every anchor whose most likely class is a landmark.
pub fn raw_detections(output: &HeadOutput) -> Vec<Detection> {
    (0..output.grid.len())
        .filter_map(|i| candidate(&output.grid, i, &output.scores[i], &output.deltas[i]))
        .collect()
}

/// Same as [`raw_detections`] on a forward pass, without materialising the
/// dense head output.
pub fn raw_detections_from_features(features: &FeatureMap, params: &HeadParams) -> Result<Vec<Detection>> {
    params.check_compatible(features)?;
    let grid = AnchorGrid { spec: params.anchor_spec.clone(), grid_dims: features.grid_dims };
    let per = grid.anchors_per_cell();
    let mut out = Vec::new();
    for cell in 0..features.num_cells() {
        let x = features.cell(cell);
        for a in 0..per {
            let scores = ClassScores::from_logits(params.logits(x, a));
            if scores.argmax() == 0 {
                continue;
            }
            let anchor = cell * per + a;
            if let Some(d) = candidate(&grid, anchor, &scores, &params.deltas(x, a)) {
                out.push(d);
            }
        }
    }
    Ok(out)
}

/// NMS, top-k per class, then one box per landmark.
pub fn finalize(raw: Vec<Detection>, prior: &PriorModel, cfg: &InferConfig) -> Result<Inference> {
    cfg.validate()?;
    let kept = nms3d(raw, cfg.nms_iou);
    let candidates = CandidateSet::from_detections(&kept, cfg.topk);
    for l in Landmark::ALL {
        if candidates.per_class[l.index()].is_empty() {
            return Err(Error::DetectionFailure(l));
        }
    }
    let detections = if cfg.prior_filter {
        select_combination(&candidates, prior)?
    } else {
        std::array::from_fn(|c| candidates.per_class[c][0])
    };
    Ok(Inference { detections, candidates })
}

pub fn infer_features(features: &FeatureMap, params: &HeadParams, prior: &PriorModel, cfg: &InferConfig) -> Result<Inference> {
    finalize(raw_detections_from_features(features, params)?, prior, cfg)
}

pub fn infer(
    volume: &Volume,
    extractor: &dyn FeatureExtractor,
    params: &HeadParams,
    prior: &PriorModel,
    cfg: &InferConfig,
) -> Result<Inference> {
    if extractor.stride() != params.anchor_spec.stride {
        return Err(Error::DimensionMismatch(format!(
            "extractor stride {} differs from anchor stride {}",
            extractor.stride(),
            params.anchor_spec.stride
        )));
    }
    let features = extractor.extract(volume)?;
    infer_features(&features, params, prior, cfg)
}
