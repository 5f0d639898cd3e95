//! A deliberately small anchor-free object detector.
//!
//! The network is a stack of stride-2 convolutions followed by a 1×1-style
//! prediction head, producing a `G × G × (C + 4)` grid: per cell, `C` class
//! logits and 4 box-edge offsets measured from the cell center. Training
//! assigns each annotated box to the cell containing its center, applies a
//! focal classification loss over every cell and a GIoU regression loss over
//! the assigned cells, and inference decodes the grid with a score threshold
//! plus greedy per-class non-maximum suppression.

pub mod config;
pub mod decode;
pub mod loss;
pub mod model;
pub mod targets;

pub use config::DetectorConfig;
pub use decode::{decode, Detection, NMS_IOU};
pub use loss::{
    focal_loss, giou_loss, grid_giou_loss, loss_on_annotations, supervised_loss,
    supervised_loss_value, FOCAL_ALPHA, FOCAL_GAMMA, MIN_BOX_EXTENT,
};
pub use model::{forward, init_params};
pub use targets::{assign_targets, GridTargets};
