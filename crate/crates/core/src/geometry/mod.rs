//! Axis-aligned 3D box algebra: anchors, delta encoding, IoU and NMS.

mod anchors;
mod boxes;
pub(crate) mod nms;

pub use anchors::{generate_anchors, pairwise_iou, AnchorGrid, AnchorSpec, IouMatrix};
pub use boxes::{decode, encode, iou3d, Box3, Deltas};
pub use nms::{nms3d, Detection};
