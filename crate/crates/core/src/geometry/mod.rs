//! Boxes, masks, keypoints and the similarity measures defined on them.

mod bbox;
mod mask;
mod oks;
mod pose;
mod rle;

pub use bbox::{bbox_iou, BBox};
pub use mask::{mask_iou, mask_union, BinaryMask};
pub use oks::{oks, oks_points};
pub use pose::{
    Keypoint, Pose, SkeletonConfig, SkeletonRegistry, COCO_KEYPOINT_NAMES, COCO_SIGMAS,
    DEFAULT_EXTRA_SIGMA,
};
pub use rle::{to_uncompressed_json, Rle};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("buffer holds {got} entries, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("run lengths sum to {got}, expected {expected}")]
    RleLength { expected: u64, got: u64 },
    #[error("malformed compressed RLE: {0}")]
    RleString(&'static str),
    #[error("expected {expected} keypoints, got {got}")]
    KeypointCount { expected: usize, got: usize },
    #[error("no annotated keypoints, similarity undefined")]
    NoAnnotatedKeypoints,
    #[error("object area {0} is not positive, similarity undefined")]
    NonPositiveArea(f64),
    #[error("unknown skeleton `{0}`")]
    UnknownSkeleton(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}
