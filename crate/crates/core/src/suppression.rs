//! Greedy non-maximum suppression over boxes and over poses.

use crate::geometry::{bbox_iou, oks_points, BBox, Pose, SkeletonConfig};

/// Greedy suppression: visit items by descending score (ties to the lower
/// index), keep an item unless its similarity to an already kept item exceeds
/// `threshold`. `similarity(kept, candidate)` returning `None` never
/// suppresses. Kept indices are returned in ascending order.
pub fn greedy_nms<F>(scores: &[f64], threshold: f64, mut similarity: F) -> Vec<usize>
where
    F: FnMut(usize, usize) -> Option<f64>,
{
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| similarity(k, i).is_some_and(|s| s > threshold));
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Box NMS using each box's own score.
pub fn bbox_nms(boxes: &[BBox], iou_threshold: f64) -> Vec<usize> {
    let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    greedy_nms(&scores, iou_threshold, |a, b| Some(bbox_iou(&boxes[a], &boxes[b])))
}

/// One entry of pose NMS. `area` is the instance's mask area, or its box area
/// when no mask is available.
#[derive(Debug, Clone, Copy)]
pub struct PoseCandidate<'a> {
    pub pose: Option<&'a Pose>,
    pub area: f64,
}

/// OKS between two predicted poses. Keypoints of `reference` at or above
/// `t_c` count as annotated; the scale is the geometric mean of both areas.
pub fn prediction_oks(
    reference: &PoseCandidate<'_>,
    other: &PoseCandidate<'_>,
    skeleton: &SkeletonConfig,
    t_c: f64,
) -> Option<f64> {
    let (a, b) = (reference.pose?, other.pose?);
    let g: Vec<_> = a.keypoints.iter().map(|k| k.position()).collect();
    let p: Vec<_> = b.keypoints.iter().map(|k| k.position()).collect();
    let annotated: Vec<bool> = a.keypoints.iter().map(|k| k.confidence >= t_c).collect();
    let area = (reference.area * other.area).sqrt();
    oks_points(&g, &annotated, area, &p, &skeleton.oks_sigmas).ok()
}

/// Pose NMS ordered by pose score (mean confidence above `t_c`). Candidates
/// without a pose are always kept.
pub fn pose_nms(
    candidates: &[PoseCandidate<'_>],
    oks_threshold: f64,
    skeleton: &SkeletonConfig,
    t_c: f64,
) -> Vec<usize> {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| c.pose.map_or(0.0, |p| p.score(t_c)))
        .collect();
    greedy_nms(&scores, oks_threshold, |k, i| {
        prediction_oks(&candidates[k], &candidates[i], skeleton, t_c)
    })
}
