//! Point and box prompts for the promptable segmenter.
//!
//! Positive prompts come from the instance's own pose: keypoints under the
//! confidence threshold are dropped, the most confident survivor is taken
//! first and every further pick is the candidate farthest (in pixels) from
//! everything picked so far.

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Pose, SkeletonConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Top-N by confidence.
    ConfidenceOnly,
    /// Top-N by distance from the box center.
    DistanceOnly,
    /// Most confident first, then greedy farthest-point.
    ConfidencePlusDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BBoxMode {
    Never,
    Always,
    /// Box prompt only when the instance's largest overlap with the other
    /// detections is below the threshold.
    ByMaxIou(f64),
}

impl std::str::FromStr for BBoxMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "never" => Ok(BBoxMode::Never),
            "always" => Ok(BBoxMode::Always),
            _ => {
                let t = s
                    .strip_prefix("by-max-iou:")
                    .or_else(|| s.strip_prefix("by_max_iou:"))
                    .ok_or_else(|| format!("unknown bbox prompt mode `{s}`"))?;
                let v: f64 = t.parse().map_err(|_| format!("bad threshold in `{s}`"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("threshold {v} outside [0, 1]"));
                }
                Ok(BBoxMode::ByMaxIou(v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptPolicy {
    pub t_c: f64,
    pub n_max: usize,
    /// Positive count when a box prompt accompanies the points; `n_max` otherwise.
    pub n_max_with_bbox: Option<usize>,
    pub n_neg: usize,
    pub selection_mode: SelectionMode,
    pub bbox_mode: BBoxMode,
    pub extend_bbox: bool,
    pub facial_cap: bool,
}

impl Default for PromptPolicy {
    fn default() -> Self {
        PromptPolicy::loop_default()
    }
}

impl PromptPolicy {
    /// Policy used inside the loop: 6 points above 0.3, no box, no negatives.
    pub fn loop_default() -> Self {
        PromptPolicy {
            t_c: 0.3,
            n_max: 6,
            n_max_with_bbox: None,
            n_neg: 0,
            selection_mode: SelectionMode::ConfidencePlusDistance,
            bbox_mode: BBoxMode::Never,
            extend_bbox: false,
            facial_cap: true,
        }
    }

    /// Refinement policy: 6 points without a box or 4 with one, threshold
    /// 0.5, box only for isolated instances, extended to cover the points.
    pub fn refinement_default() -> Self {
        PromptPolicy {
            t_c: 0.5,
            n_max: 6,
            n_max_with_bbox: Some(4),
            n_neg: 0,
            selection_mode: SelectionMode::ConfidencePlusDistance,
            bbox_mode: BBoxMode::ByMaxIou(0.5),
            extend_bbox: true,
            facial_cap: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_max == 0 || self.n_max_with_bbox == Some(0) {
            return Err("n_max must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.t_c) {
            return Err(format!("t_c {} outside [0, 1]", self.t_c));
        }
        Ok(())
    }

    /// Copy with `n_max` replaced, used for the box branch of a split policy.
    pub fn with_n_max(&self, n_max: usize) -> Self {
        PromptPolicy {
            n_max,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub positives: Vec<(f64, f64)>,
    pub negatives: Vec<(f64, f64)>,
    pub bbox: Option<BBox>,
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Indices of the keypoints chosen as positive prompts, in selection order.
///
/// `reference_box` supplies the center for [`SelectionMode::DistanceOnly`];
/// without it the center of the candidates' bounding box is used.
pub fn select_positive_indices(
    pose: &Pose,
    skeleton: &SkeletonConfig,
    policy: &PromptPolicy,
    reference_box: Option<&BBox>,
) -> Vec<usize> {
    let kps = &pose.keypoints;
    let mut candidates: Vec<usize> = (0..kps.len())
        .filter(|&i| kps[i].confidence >= policy.t_c)
        .collect();
    if candidates.is_empty() || policy.n_max == 0 {
        return Vec::new();
    }
    let conf = |i: usize| kps[i].confidence;
    let pos = |i: usize| kps[i].position();

    let mut selected = Vec::with_capacity(policy.n_max);
    let mut facial_taken = false;
    let mut take = |i: usize, selected: &mut Vec<usize>, candidates: &mut Vec<usize>| {
        selected.push(i);
        candidates.retain(|&c| c != i);
        if policy.facial_cap && skeleton.is_facial(i) && !facial_taken {
            facial_taken = true;
            candidates.retain(|&c| !skeleton.is_facial(c));
        }
    };

    match policy.selection_mode {
        SelectionMode::ConfidenceOnly => {
            candidates.sort_by(|&a, &b| conf(b).total_cmp(&conf(a)).then(a.cmp(&b)));
            while selected.len() < policy.n_max && !candidates.is_empty() {
                let i = candidates[0];
                take(i, &mut selected, &mut candidates);
            }
        }
        SelectionMode::DistanceOnly => {
            let center = match reference_box {
                Some(b) => b.center(),
                None => {
                    let xs = candidates.iter().map(|&i| kps[i].x);
                    let ys = candidates.iter().map(|&i| kps[i].y);
                    let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
                }
            };
            candidates.sort_by(|&a, &b| {
                dist2(pos(b), center)
                    .total_cmp(&dist2(pos(a), center))
                    .then(conf(b).total_cmp(&conf(a)))
                    .then(a.cmp(&b))
            });
            while selected.len() < policy.n_max && !candidates.is_empty() {
                let i = candidates[0];
                take(i, &mut selected, &mut candidates);
            }
        }
        SelectionMode::ConfidencePlusDistance => {
            let first = *candidates
                .iter()
                .max_by(|&&a, &&b| conf(a).total_cmp(&conf(b)).then(b.cmp(&a)))
                .expect("non-empty");
            take(first, &mut selected, &mut candidates);
            // Squared distance from every keypoint to the nearest selected one.
            let mut nearest: Vec<f64> = kps.iter().map(|k| dist2(k.position(), pos(first))).collect();
            while selected.len() < policy.n_max && !candidates.is_empty() {
                let next = *candidates
                    .iter()
                    .max_by(|&&a, &&b| {
                        nearest[a]
                            .total_cmp(&nearest[b])
                            .then(conf(a).total_cmp(&conf(b)))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty");
                take(next, &mut selected, &mut candidates);
                for (i, d) in nearest.iter_mut().enumerate() {
                    *d = d.min(dist2(kps[i].position(), pos(next)));
                }
            }
        }
    }
    selected
}

/// Positive prompt coordinates; empty when no keypoint clears `t_c`.
pub fn select_positive_prompts(
    pose: &Pose,
    skeleton: &SkeletonConfig,
    policy: &PromptPolicy,
    reference_box: Option<&BBox>,
) -> Vec<(f64, f64)> {
    select_positive_indices(pose, skeleton, policy, reference_box)
        .into_iter()
        .map(|i| pose.keypoints[i].position())
        .collect()
}

/// Up to `n_neg` confident keypoints of other instances, nearest to the
/// positives first. Ties go to the earlier instance, then the lower index.
pub fn select_negative_prompts(
    positives: &[(f64, f64)],
    others: &[&Pose],
    policy: &PromptPolicy,
) -> Vec<(f64, f64)> {
    if policy.n_neg == 0 || positives.is_empty() {
        return Vec::new();
    }
    let mut pool: Vec<(f64, usize, usize, (f64, f64))> = Vec::new();
    for (o, pose) in others.iter().enumerate() {
        for (k, kp) in pose.keypoints.iter().enumerate() {
            if kp.confidence < policy.t_c {
                continue;
            }
            let d = positives
                .iter()
                .map(|&p| dist2(p, kp.position()))
                .fold(f64::INFINITY, f64::min);
            pool.push((d, o, k, kp.position()));
        }
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pool.into_iter().take(policy.n_neg).map(|p| p.3).collect()
}

/// Box prompt for one instance under the policy, or `None`.
///
/// `max_overlap` is the instance's largest box IoU with the other current
/// detections.
pub fn bbox_prompt(
    bbox: &BBox,
    positives: &[(f64, f64)],
    max_overlap: f64,
    policy: &PromptPolicy,
) -> Option<BBox> {
    let give = match policy.bbox_mode {
        BBoxMode::Never => false,
        BBoxMode::Always => true,
        BBoxMode::ByMaxIou(threshold) => max_overlap < threshold,
    };
    if !give {
        return None;
    }
    Some(if policy.extend_bbox {
        // Cover the whole pixel under each point, not just the point.
        let corners: Vec<(f64, f64)> = positives
            .iter()
            .flat_map(|&(x, y)| [(x.floor(), y.floor()), (x.floor() + 1.0, y.floor() + 1.0)])
            .collect();
        bbox.extended_to(&corners)
    } else {
        *bbox
    })
}

/// Positives, negatives and optional box for one instance. When the policy
/// splits the positive count between the box and no-box branches, the box
/// decision is taken first.
pub fn build_prompts(
    pose: &Pose,
    skeleton: &SkeletonConfig,
    bbox: &BBox,
    others: &[&Pose],
    max_overlap: f64,
    policy: &PromptPolicy,
) -> PromptSet {
    let wants_box = bbox_prompt(bbox, &[], max_overlap, policy).is_some();
    let effective = match (wants_box, policy.n_max_with_bbox) {
        (true, Some(n)) => policy.with_n_max(n),
        _ => policy.clone(),
    };
    let positives = select_positive_prompts(pose, skeleton, &effective, Some(bbox));
    let negatives = select_negative_prompts(&positives, others, &effective);
    let bbox = if positives.is_empty() {
        None
    } else {
        bbox_prompt(bbox, &positives, max_overlap, &effective)
    };
    PromptSet {
        positives,
        negatives,
        bbox,
    }
}
