//! Anchor-based 3D landmark detection.
//!
//! Landmarks are found as the centres of landmark-specific boxes: anchors are
//! scored and regressed by linear heads over per-cell features, candidates are
//! de-duplicated by NMS, and the top two per landmark are filtered with a
//! distance-ratio graph prior.

pub mod assign;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod landmark;
pub mod loss;
pub mod metrics;
pub mod phantom;
pub mod prior;
pub mod seed;
pub mod volume;

pub use assign::{assign, match_anchors, AnchorLabel, Assignment, GroundTruth, LabelState, MatchConfig};
pub use detector::{FeatureExtractor, HeadParams, InferConfig, ReferenceExtractor, TrainConfig};
pub use error::{Error, Result};
pub use geometry::{decode, encode, generate_anchors, iou3d, nms3d, pairwise_iou, AnchorGrid, AnchorSpec, Box3, Deltas, Detection};
pub use landmark::{Landmark, NUM_CLASSES, NUM_LANDMARKS};
