//! Anchor-free detection head, target assignment, loss, decoding and NMS.

mod assign;
mod boxes;
mod decode;
mod loss;
mod model;
mod nms;

pub use assign::{assign_level, assign_targets, HeadGeometry, Target};
pub use boxes::{iou, BoundingBox, Detection, BIRD, CLASS_NAMES, DRONE};
pub use decode::{decode, encode};
pub use loss::{compute_loss, loss_on_tape, LossBreakdown, LossWeights, TW_CLAMP};
pub use model::{Detector, ModelConfig, OBJECTNESS_PRIOR};
pub use nms::nms;
