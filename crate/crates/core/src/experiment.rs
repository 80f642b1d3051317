//! In-memory synthetic experiment: generate phantoms, fit the prior, train
//! the heads and evaluate on the held-out split.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::detector::{infer_features, train, FeatureExtractor, FeatureMap, HeadParams, InferConfig, TrainConfig, TrainReport, TrainSample};
use crate::error::{Error, Result};
use crate::geometry::{AnchorSpec, Detection};
use crate::landmark::{Landmark, NUM_LANDMARKS};
use crate::metrics::{evaluate, EvalResult};
use crate::phantom::{default_test_count, generate, plan_dataset, ConstellationTemplate, DEFAULT_DIMS, DEFAULT_SPACING_MM};
use crate::prior::{fit_prior, LandmarkGraph, PriorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n: usize,
    pub dims: [usize; 3],
    /// Test volumes; defaults to the standard 32-of-152 proportion.
    pub test: Option<usize>,
    pub seed: u64,
    pub template: ConstellationTemplate,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n: 152, dims: DEFAULT_DIMS, test: None, seed: 0, template: ConstellationTemplate::default() }
    }
}

impl DataConfig {
    pub fn split(&self) -> (usize, usize) {
        let test = self.test.unwrap_or_else(|| default_test_count(self.n)).min(self.n);
        (self.n - test, test)
    }
}

/// Features and annotations of a generated dataset; the voxels are dropped
/// as soon as the features are extracted.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub spacing_mm: f64,
    pub train: Vec<TrainSample>,
    pub test: Vec<(FeatureMap, GroundTruth)>,
}

impl PreparedData {
    pub fn train_landmarks(&self) -> Vec<[[f64; 3]; NUM_LANDMARKS]> {
        self.train.iter().map(|s| s.gt.landmarks).collect()
    }
}

pub fn prepare(data: &DataConfig, extractor: &dyn FeatureExtractor, train_cfg: &TrainConfig, spec: &AnchorSpec) -> Result<PreparedData> {
    let plan = plan_dataset(data.n, data.split(), data.seed)?;
    let mut train = Vec::with_capacity(plan.train.len());
    for v in &plan.train {
        let p = generate(&data.template, data.dims, v.seed)?;
        train.push(TrainSample::new(&p.volume, p.gt, extractor, spec, &train_cfg.matching)?);
    }
    let mut test = Vec::with_capacity(plan.test.len());
    for v in &plan.test {
        let p = generate(&data.template, data.dims, v.seed)?;
        test.push((extractor.extract(&p.volume)?, p.gt));
    }
    Ok(PreparedData { spacing_mm: DEFAULT_SPACING_MM, train, test })
}

/// Whether either predicted eye lies closer to the opposite eye's ground truth.
pub fn eye_swapped(dets: &[Detection; NUM_LANDMARKS], gt: &GroundTruth) -> bool {
    let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let (le, re) = (Landmark::LeftEye, Landmark::RightEye);
    let pl = dets[le.index()].center();
    let pr = dets[re.index()].center();
    d(pl, gt.landmark(re)) < d(pl, gt.landmark(le)) || d(pr, gt.landmark(le)) < d(pr, gt.landmark(re))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub eval: EvalResult,
    /// Score-only selection over the same candidates.
    pub score_only: EvalResult,
    pub swap_rate: f64,
    pub score_only_swap_rate: f64,
    /// Volumes where some class had no candidate.
    pub failures: usize,
    pub train_report: TrainReport,
}

/// Runs inference over the test split. Volumes where detection fails count
/// as missing predictions.
pub fn evaluate_split(
    test: &[(FeatureMap, GroundTruth)],
    params: &HeadParams,
    prior: &PriorModel,
    infer_cfg: &InferConfig,
    spacing_mm: f64,
) -> Result<(EvalResult, EvalResult, f64, f64, usize)> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let mut preds = Vec::with_capacity(test.len());
    let mut plain = Vec::with_capacity(test.len());
    let mut swaps = 0usize;
    let mut plain_swaps = 0usize;
    let mut failures = 0usize;
    let start = Instant::now();
    for (features, gt) in test {
        match infer_features(features, params, prior, infer_cfg) {
            Ok(inf) => {
                let so = inf.score_only();
                swaps += eye_swapped(&inf.detections, gt) as usize;
                plain_swaps += eye_swapped(&so, gt) as usize;
                preds.push(inf.detections.to_vec());
                plain.push(so.to_vec());
            }
            Err(Error::DetectionFailure(_)) => {
                failures += 1;
                preds.push(Vec::new());
                plain.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    let elapsed = start.elapsed().as_secs_f64() * 1000.0 / test.len() as f64;
    let gts: Vec<_> = test.iter().map(|(_, gt)| gt.annotations()).collect();
    let mut eval = evaluate(&preds, &gts, spacing_mm)?;
    eval.time_ms = Some(elapsed);
    let score_only = evaluate(&plain, &gts, spacing_mm)?;
    let n = test.len() as f64;
    Ok((eval, score_only, swaps as f64 / n, plain_swaps as f64 / n, failures))
}

/// Fits the prior on the training landmarks, trains and evaluates.
pub fn run(data: &PreparedData, graph: &LandmarkGraph, train_cfg: &TrainConfig, infer_cfg: &InferConfig) -> Result<(RunOutcome, HeadParams, PriorModel)> {
    let spec = data
        .train
        .first()
        .map(|s| s.grid.spec.clone())
        .ok_or_else(|| Error::InvalidArgument("training split is empty".into()))?;
    let prior = fit_prior(&data.train_landmarks(), graph)?;
    let (params, train_report) = train(&data.train, &spec, train_cfg)?;
    let (eval, score_only, swap_rate, score_only_swap_rate, failures) =
        evaluate_split(&data.test, &params, &prior, infer_cfg, data.spacing_mm)?;
    Ok((RunOutcome { eval, score_only, swap_rate, score_only_swap_rate, failures, train_report }, params, prior))
}
