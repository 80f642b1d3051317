//! Per-cell features, linear heads, training and inference.

pub mod features;
pub mod head;
pub mod infer;
pub mod train;

pub use features::{FeatureExtractor, FeatureMap, ReferenceExtractor, REFERENCE_FEATURE_DIM};
pub use head::{forward, forward_features, HeadOutput, HeadParams};
pub use infer::{finalize, infer, infer_features, raw_detections, raw_detections_from_features, InferConfig, Inference};
pub use train::{objective, prepare_samples, sample_batch, train, Batch, Objective, Optimizer, StepLoss, TrainConfig, TrainReport, TrainSample};
