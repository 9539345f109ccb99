//! COCO-style average precision for boxes, masks and keypoints, and the
//! breakdown of box AP by how strongly each person overlaps its neighbours.

mod ap;
mod dataset;
mod report;
mod stratified;

pub use ap::{
    evaluate, iou_thresholds, recall_thresholds, ApSummary, EvalParams, Task, MAX_DETS,
    MAX_DETS_KEYPOINTS,
};
pub use dataset::{
    load_results, save_results, CocoAnnotation, CocoCategory, CocoDataset, CocoImage, ResultEntry,
    Segmentation,
};
pub use report::{render_text, StratifiedReport, StratifiedRow};
pub use stratified::{assign_bins, gt_max_iou, stratified_evaluate, Bin, BinResult, DEFAULT_BINS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("annotation {0} uses polygon segmentation, which mask evaluation does not support")]
    PolygonSegmentation(u64),
    #[error("keypoint count mismatch: skeleton has {expected}, got {got}")]
    SkeletonMismatch { expected: usize, got: usize },
    #[error("bins must be ordered, non-overlapping and cover [0, 1]: {0}")]
    Bins(String),
}
