use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureExtractor, FeatureMap};
use super::head::HeadParams;
use crate::assign::{assign, Assignment, GroundTruth, MatchConfig};
use crate::error::{Error, Result};
use crate::geometry::{decode, generate_anchors, iou3d, AnchorGrid, AnchorSpec};
use crate::landmark::NUM_CLASSES;
use crate::loss::{box_regression_loss, iou_balanced_cls_loss, weighted_cls_loss, ClassScores, PositiveSample, DEFAULT_ETA};
use crate::seed::rng_for;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub eta: f64,
    /// When false every positive has weight 1 (plain cross-entropy).
    pub iou_balance: bool,
    pub seed: u64,
    /// Sampled negatives per positive.
    pub neg_ratio: usize,
    /// Upper bound on sampled negatives per step.
    pub neg_cap: usize,
    /// Share of the sampled negatives drawn from cells near a landmark rather
    /// than uniformly over the volume.
    pub near_neg_fraction: f64,
    /// Half-width, in cells, of the neighbourhood used for near negatives.
    pub near_neg_radius: usize,
    pub reg_weight: f64,
    pub optimizer: Optimizer,
    pub matching: MatchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            steps: 2000,
            eta: DEFAULT_ETA,
            iou_balance: true,
            seed: 0,
            neg_ratio: 3,
            neg_cap: 256,
            near_neg_fraction: 0.5,
            near_neg_radius: 6,
            reg_weight: 0.05,
            optimizer: Optimizer::Sgd,
            matching: MatchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and ≥ 0, got {}", self.lr)));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("eta must be finite, got {}", self.eta)));
        }
        if !(self.reg_weight.is_finite() && self.reg_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("reg_weight must be finite and ≥ 0, got {}", self.reg_weight)));
        }
        if !(0.0..=1.0).contains(&self.near_neg_fraction) {
            return Err(Error::InvalidArgument(format!(
                "near_neg_fraction must lie in [0, 1], got {}",
                self.near_neg_fraction
            )));
        }
        if self.neg_ratio == 0 || self.neg_cap == 0 {
            return Err(Error::InvalidArgument("neg_ratio and neg_cap must be positive".into()));
        }
        Ok(())
    }

    fn eta(&self) -> Option<f64> {
        self.iou_balance.then_some(self.eta)
    }
}

/// A training volume reduced to what the heads see: features plus the fixed
/// anchor assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: FeatureMap,
    pub grid: AnchorGrid,
    pub gt: GroundTruth,
    pub assignment: Assignment,
}

impl TrainSample {
    pub fn new(
        volume: &Volume,
        gt: GroundTruth,
        extractor: &dyn FeatureExtractor,
        spec: &AnchorSpec,
        matching: &MatchConfig,
    ) -> Result<Self> {
        if extractor.stride() != spec.stride {
            return Err(Error::DimensionMismatch(format!(
                "extractor stride {} differs from anchor stride {}",
                extractor.stride(),
                spec.stride
            )));
        }
        let features = extractor.extract(volume)?;
        Self::from_features(features, gt, spec, matching)
    }

    pub fn from_features(features: FeatureMap, gt: GroundTruth, spec: &AnchorSpec, matching: &MatchConfig) -> Result<Self> {
        let grid = AnchorGrid { spec: spec.clone(), grid_dims: features.grid_dims };
        spec.validate()?;
        let assignment = assign(&grid, &gt.labelled_boxes(), matching)?;
        Ok(TrainSample { features, grid, gt, assignment })
    }
}

/// Anchors contributing to one step: every positive and a sample of negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Indices into `assignment.positives`.
    pub positives: Vec<usize>,
    /// Anchor indices.
    pub negatives: Vec<usize>,
}

pub fn sample_batch(sample: &TrainSample, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Batch {
    let a = &sample.assignment;
    let grid = &sample.grid;
    let want = (cfg.neg_ratio * a.positives.len().max(1)).min(cfg.neg_cap).min(a.num_negatives());
    let want_near = (want as f64 * cfg.near_neg_fraction).round() as usize;
    let r = cfg.near_neg_radius as i64;
    let centres: Vec<[f64; 3]> = sample.gt.landmarks.to_vec();
    let stride = grid.spec.stride as f64;
    let per = grid.anchors_per_cell();

    let mut negatives = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while negatives.len() < want && attempts < want * 1000 {
        attempts += 1;
        let i = if negatives.len() < want_near {
            let c = centres[rng.random_range(0..centres.len())];
            let mut cell = [0usize; 3];
            let mut inside = true;
            for ax in 0..3 {
                let v = (c[ax] / stride).floor() as i64 + rng.random_range(-r..=r);
                inside &= v >= 0 && v < grid.grid_dims[ax] as i64;
                cell[ax] = v.max(0) as usize;
            }
            if !inside {
                continue;
            }
            grid.anchor_index(cell, rng.random_range(0..per))
        } else {
            rng.random_range(0..a.num_anchors)
        };
        if a.is_negative(i) && !negatives.contains(&i) {
            negatives.push(i);
        }
    }
    Batch { positives: (0..a.positives.len()).collect(), negatives }
}

/// Loss of one batch and its gradient with respect to every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
    /// IoU-balance weights actually applied to the positives.
    pub weights: Vec<f64>,
    pub grad: Vec<f64>,
}

/// `L_cls + reg_weight · L_reg`, both summed over the batch.
///
/// Positive weights are recomputed from the IoU of each decoded box with its
/// ground truth unless `frozen_weights` supplies them; either way they are
/// constants for the gradient.
pub fn objective(
    params: &HeadParams,
    sample: &TrainSample,
    batch: &Batch,
    eta: Option<f64>,
    reg_weight: f64,
    frozen_weights: Option<&[f64]>,
) -> Result<Objective> {
    params.check_compatible(&sample.features)?;
    let grid = &sample.grid;
    let per = grid.anchors_per_cell();
    let feats = |anchor: usize| {
        let (cell, _) = grid.split_index(anchor);
        sample.features.cell(cell)
    };

    let mut pos = Vec::with_capacity(batch.positives.len());
    let mut pos_deltas = Vec::with_capacity(batch.positives.len());
    for &pi in &batch.positives {
        let m = &sample.assignment.positives[pi];
        let shape = m.anchor % per;
        let x = feats(m.anchor);
        let scores = ClassScores::from_logits(params.logits(x, shape));
        let deltas = params.deltas(x, shape);
        let pred = decode(&grid.box_at(m.anchor), &deltas);
        let iou = iou3d(&pred, &sample.gt.boxes[m.gt]);
        let iou = if iou.is_finite() { iou.clamp(0.0, 1.0) } else { 0.0 };
        pos.push(PositiveSample { scores, label: m.class.class_id(), iou });
        pos_deltas.push(deltas);
    }
    let neg: Vec<ClassScores> = batch
        .negatives
        .iter()
        .map(|&a| ClassScores::from_logits(params.logits(feats(a), a % per)))
        .collect();

    let report = match frozen_weights {
        Some(w) => weighted_cls_loss(&pos, &neg, w)?,
        None => iou_balanced_cls_loss(&pos, &neg, eta)?,
    };

    let mut grad = vec![0.0; params.len()];

    let anchors = batch
        .positives
        .iter()
        .map(|&pi| sample.assignment.positives[pi].anchor)
        .chain(batch.negatives.iter().copied());
    for (anchor, g) in anchors.zip(&report.gradients) {
        let x = feats(anchor);
        let shape = anchor % per;
        for c in 0..NUM_CLASSES {
            let gc = g[c];
            if gc == 0.0 {
                continue;
            }
            let o = shape * NUM_CLASSES + c;
            grad[params.cls_bias_index(o)] += gc;
            for (f, xf) in x.iter().enumerate() {
                grad[params.cls_weight_index(f, o)] += gc * *xf as f64;
            }
        }
    }

    let mut reg_loss = 0.0;
    for (&pi, deltas) in batch.positives.iter().zip(&pos_deltas) {
        let m = &sample.assignment.positives[pi];
        let (l, g) = box_regression_loss(deltas, &m.target);
        reg_loss += l;
        let x = feats(m.anchor);
        let shape = m.anchor % per;
        for (c, gc) in g.iter().enumerate() {
            let gc = reg_weight * gc;
            if gc == 0.0 {
                continue;
            }
            let o = shape * 6 + c;
            grad[params.reg_bias_index(o)] += gc;
            for (f, xf) in x.iter().enumerate() {
                grad[params.reg_weight_index(f, o)] += gc * *xf as f64;
            }
        }
    }

    let cls_loss = report.cls_loss;
    Ok(Objective { loss: cls_loss + reg_weight * reg_loss, cls_loss, reg_loss, weights: report.weights, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<StepLoss>,
}

impl TrainReport {
    /// Mean classification loss over the first / last `window` steps.
    pub fn cls_loss_window(&self, window: usize, tail: bool) -> f64 {
        let n = window.min(self.curve.len()).max(1);
        let slice = if tail { &self.curve[self.curve.len().saturating_sub(n)..] } else { &self.curve[..n.min(self.curve.len())] };
        slice.iter().map(|s| s.cls_loss).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Plain SGD, one volume per step, from zero-initialised heads.
///
/// Volumes are visited in a fresh seeded permutation every epoch. Parameters
/// are rounded to `f32` after each update so the trained heads serialise
/// exactly.
pub fn train(samples: &[TrainSample], spec: &AnchorSpec, cfg: &TrainConfig) -> Result<(HeadParams, TrainReport)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    cfg.validate()?;
    spec.validate()?;
    let feature_dim = first.features.feature_dim;
    for s in samples {
        if s.grid.spec != *spec {
            return Err(Error::DimensionMismatch("training samples were assigned with a different anchor spec".into()));
        }
        if s.features.feature_dim != feature_dim {
            return Err(Error::DimensionMismatch("training samples disagree on feature_dim".into()));
        }
    }
    let mut params = HeadParams::zeros(spec.clone(), feature_dim);
    let mut order_rng = rng_for(cfg.seed, "train/order");
    let mut neg_rng = rng_for(cfg.seed, "train/neg");
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport::default();

    for step in 0..cfg.steps {
        if order.is_empty() {
            order = (0..samples.len()).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let sample = &samples[order.pop().expect("refilled above")];
        let batch = sample_batch(sample, cfg, &mut neg_rng);
        let obj = objective(&params, sample, &batch, cfg.eta(), cfg.reg_weight, None)?;
        if !obj.loss.is_finite() {
            return Err(Error::Diverged { step, loss: obj.loss });
        }
        report.curve.push(StepLoss { step, loss: obj.loss, cls_loss: obj.cls_loss, reg_loss: obj.reg_loss });
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.values.iter_mut().zip(&obj.grad) {
                    *p -= cfg.lr * g;
                }
            }
        }
        params.round_to_f32();
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
    }
    Ok((params, report))
}

/// Builds training samples straight from volumes.
pub fn prepare_samples(
    volumes: &[(Volume, GroundTruth)],
    extractor: &dyn FeatureExtractor,
    spec: &AnchorSpec,
    matching: &MatchConfig,
) -> Result<Vec<TrainSample>> {
    volumes
        .iter()
        .map(|(v, gt)| {
            generate_anchors(spec, v.dims)?;
            TrainSample::new(v, gt.clone(), extractor, spec, matching)
        })
        .collect()
}
