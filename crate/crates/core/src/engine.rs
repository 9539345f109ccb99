//! The detect → pose → segment loop.
//!
//! Each iteration blacks out every accepted instance, runs the detector on
//! what is left, estimates poses on mask-conditioned crops, prompts the
//! segmenter with the poses and accepts the survivors. The loop stops when an
//! iteration adds nothing or after `max_iterations`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet};
use crate::consistency::{mask_gate, GateDecision};
use crate::evaluation::ResultEntry;
use crate::geometry::{
    bbox_iou, BBox, BinaryMask, GeometryError, Pose, SkeletonConfig, SkeletonRegistry,
};
use crate::imaging::{crop_expand, mask_out, semi_transparent_blend, Image, ImageError};
use crate::prompting::{build_prompts, PromptPolicy, PromptSet};
use crate::suppression::{bbox_nms, pose_nms, PoseCandidate};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmpConfig {
    pub max_iterations: u32,
    pub alpha: f64,
    pub det_score_min: f64,
    pub loop_policy: PromptPolicy,
    pub refinement_policy: PromptPolicy,
    /// Run one extra segment-and-gate pass with `refinement_policy` after the loop.
    pub refine: bool,
    pub pmc_gate: bool,
    pub bbox_nms_iou: f64,
    pub pose_nms_oks: f64,
    /// Also compare new boxes against instances accepted in earlier
    /// iterations. Off by default: a heavily occluded person's box overlaps
    /// its occluder by construction and would never be recovered.
    pub bbox_nms_across_iterations: bool,
    pub rerun_pose_after_refine: bool,
    pub skeleton: String,
    pub crop_padding: f64,
    /// Width over height of the pose crop.
    pub crop_aspect: f64,
}

impl Default for BmpConfig {
    fn default() -> Self {
        BmpConfig {
            max_iterations: 2,
            alpha: 0.8,
            det_score_min: 0.3,
            loop_policy: PromptPolicy::loop_default(),
            refinement_policy: PromptPolicy::refinement_default(),
            refine: false,
            pmc_gate: true,
            bbox_nms_iou: 0.3,
            pose_nms_oks: 0.9,
            bbox_nms_across_iterations: false,
            rerun_pose_after_refine: false,
            skeleton: "coco".to_string(),
            crop_padding: 0.25,
            crop_aspect: 0.75,
        }
    }
}

impl BmpConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        for (name, v) in [
            ("det_score_min", self.det_score_min),
            ("bbox_nms_iou", self.bbox_nms_iou),
            ("pose_nms_oks", self.pose_nms_oks),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.crop_padding >= 0.0) || !(self.crop_aspect > 0.0) {
            return bad("crop_padding must be >= 0 and crop_aspect > 0".into());
        }
        self.loop_policy.validate().map_err(EngineError::Config)?;
        self.refinement_policy.validate().map_err(EngineError::Config)?;
        SkeletonRegistry::default().get(&self.skeleton)?;
        Ok(())
    }
}

/// How the pose estimator input was conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    MaskBlend,
    /// No detector mask, or `alpha` is 1: the crop is passed as is.
    Unblended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bbox,
    Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Loop,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Detected {
        iteration: u32,
        score: f64,
        bbox: [f64; 4],
        has_mask: bool,
    },
    PoseEstimated {
        iteration: u32,
        conditioning: Conditioning,
        alpha: f64,
        score: f64,
    },
    MaskRefined {
        iteration: u32,
        pass: Pass,
        prompts: PromptSet,
        pmc_before: Option<f64>,
        pmc_after: Option<f64>,
        area: u64,
    },
    MaskGateKeptOriginal {
        iteration: u32,
        pass: Pass,
        prompts: PromptSet,
        pmc_before: f64,
        pmc_after: f64,
    },
    SegmentSkipped {
        iteration: u32,
        pass: Pass,
    },
    SegmentFailed {
        iteration: u32,
        pass: Pass,
        message: String,
    },
    Suppressed {
        iteration: u32,
        stage: Stage,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub iteration_born: u32,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub pose: Option<Pose>,
    pub det_score: f64,
    pub pose_score: f64,
    pub mask_score: f64,
    pub provenance: Vec<Event>,
}

impl Instance {
    /// Ranking score: detection score times pose score when a pose exists.
    pub fn score(&self) -> f64 {
        match self.pose {
            Some(_) => self.det_score * self.pose_score,
            None => self.det_score,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u32,
    /// Detections at or above `det_score_min`.
    pub new_detections: usize,
    pub suppressed_bbox: usize,
    pub suppressed_pose: usize,
    pub accepted: usize,
    pub gated: usize,
    pub gate_kept_original: usize,
    /// Fraction of the image masked out after this iteration.
    pub masked_fraction: f64,
}

impl IterationStats {
    pub fn gate_discard_rate(&self) -> f64 {
        if self.gated == 0 {
            0.0
        } else {
            self.gate_kept_original as f64 / self.gated as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
    /// Instances removed by either suppression stage, with their history.
    pub suppressed: Vec<Instance>,
    pub iterations: Vec<IterationStats>,
}

impl LoopResult {
    fn new(width: u32, height: u32) -> Self {
        LoopResult {
            width,
            height,
            instances: Vec::new(),
            suppressed: Vec::new(),
            iterations: Vec::new(),
        }
    }

    pub fn masked_fraction(&self) -> Vec<f64> {
        self.iterations.iter().map(|s| s.masked_fraction).collect()
    }

    /// Final instances as COCO result entries, ordered by instance id.
    pub fn to_results(&self, image_id: u64) -> Vec<ResultEntry> {
        self.instances
            .iter()
            .map(|i| ResultEntry {
                image_id,
                category_id: 1,
                bbox: Some(i.bbox.xywh()),
                score: i.score(),
                segmentation: Some(i.mask.to_rle()),
                keypoints: i.pose.as_ref().map(Pose::to_triplets),
            })
            .collect()
    }
}

/// A run that stopped on a backend or data error, with everything done so far.
#[derive(Debug)]
pub struct LoopFailure {
    pub partial: LoopResult,
    pub cause: EngineError,
}

impl std::fmt::Display for LoopFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "loop aborted after {} iteration(s): {}",
            self.partial.iterations.len(),
            self.cause
        )
    }
}

impl std::error::Error for LoopFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.cause)
    }
}

pub fn run_bmp(
    image: &Image,
    backends: &mut BackendSet,
    config: &BmpConfig,
) -> Result<LoopResult, Box<LoopFailure>> {
    let mut result = LoopResult::new(image.width(), image.height());
    let fail = |partial: LoopResult, cause: EngineError| Box::new(LoopFailure { partial, cause });
    if let Err(e) = config.validate() {
        return Err(fail(result, e));
    }
    let registry = SkeletonRegistry::default();
    let skeleton = registry.get(&config.skeleton).expect("validated").clone();
    let mut union = BinaryMask::empty(image.width(), image.height());
    let mut next_id = 1u64;
    for k in 1..=config.max_iterations {
        let outcome = iterate(image, backends, config, &skeleton, &mut result, &mut union, &mut next_id, k);
        match outcome {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(fail(result, e)),
        }
    }
    if config.refine {
        let instances = std::mem::take(&mut result.instances);
        match refine_once(image, instances.clone(), backends, config) {
            Ok(refined) => result.instances = refined,
            Err(e) => {
                result.instances = instances;
                return Err(fail(result, e));
            }
        }
    }
    Ok(result)
}

/// One loop iteration; returns whether anything new was accepted.
#[allow(clippy::too_many_arguments)]
fn iterate(
    image: &Image,
    backends: &mut BackendSet,
    config: &BmpConfig,
    skeleton: &SkeletonConfig,
    result: &mut LoopResult,
    union: &mut BinaryMask,
    next_id: &mut u64,
    k: u32,
) -> Result<bool, EngineError> {
    let mut stats = IterationStats {
        iteration: k,
        ..Default::default()
    };
    // Record the iteration even if it fails part-way.
    let pixels = (image.width() as f64 * image.height() as f64).max(1.0);
    let finish = |result: &mut LoopResult, mut stats: IterationStats, union: &BinaryMask| {
        stats.masked_fraction = union.area() as f64 / pixels;
        result.iterations.push(stats);
    };

    let composite = mask_out(image, union)?;
    let detections = match backends.detect(&composite) {
        Ok(d) => d,
        Err(e) => {
            finish(result, stats, union);
            return Err(e.into());
        }
    };
    let (w, h) = (image.width(), image.height());
    let mut fresh: Vec<Instance> = Vec::new();
    for d in detections.into_iter().filter(|d| d.score >= config.det_score_min) {
        let has_mask = d.mask.is_some();
        let mask = match d.mask {
            Some(m) if m.width() == w && m.height() == h => m,
            Some(m) => {
                finish(result, stats, union);
                return Err(BackendError::Protocol(format!(
                    "detection mask is {}x{}, image is {w}x{h}",
                    m.width(),
                    m.height()
                ))
                .into());
            }
            None => BinaryMask::from_bbox(w, h, &d.bbox),
        };
        let bbox = d.bbox.with_score(d.score);
        fresh.push(Instance {
            id: *next_id,
            iteration_born: k,
            bbox,
            mask,
            pose: None,
            det_score: d.score,
            pose_score: 0.0,
            mask_score: d.score,
            provenance: vec![Event::Detected {
                iteration: k,
                score: d.score,
                bbox: bbox.xywh(),
                has_mask,
            }],
        });
        *next_id += 1;
    }
    stats.new_detections = fresh.len();

    // Box suppression.
    let n_old = result.instances.len();
    let (keep_old, keep_new) = if config.bbox_nms_across_iterations {
        let boxes: Vec<BBox> = result
            .instances
            .iter()
            .map(|i| i.bbox.with_score(i.det_score))
            .chain(fresh.iter().map(|i| i.bbox))
            .collect();
        split_kept(&bbox_nms(&boxes, config.bbox_nms_iou), n_old, fresh.len())
    } else {
        let boxes: Vec<BBox> = fresh.iter().map(|i| i.bbox).collect();
        (vec![true; n_old], split_kept(&bbox_nms(&boxes, config.bbox_nms_iou), 0, fresh.len()).1)
    };
    stats.suppressed_bbox = retire(result, &mut fresh, &keep_old, &keep_new, k, Stage::Bbox);

    // Pose on the mask-conditioned crop.
    for inst in fresh.iter_mut() {
        let mask = detector_gave_mask(inst).then(|| inst.mask.clone());
        if let Err(e) = estimate_pose(&composite, mask.as_ref(), inst, backends, config, skeleton, k) {
            finish(result, stats, union);
            return Err(e);
        }
    }

    // Pose suppression over everything accepted so far plus the new batch.
    let candidates: Vec<PoseCandidate<'_>> = result
        .instances
        .iter()
        .chain(fresh.iter())
        .map(|i| PoseCandidate {
            pose: i.pose.as_ref(),
            area: i.mask.area().max(1) as f64,
        })
        .collect();
    let kept = pose_nms(&candidates, config.pose_nms_oks, skeleton, config.loop_policy.t_c);
    let (keep_old, keep_new) = split_kept(&kept, result.instances.len(), fresh.len());
    stats.suppressed_pose = retire(result, &mut fresh, &keep_old, &keep_new, k, Stage::Pose);

    if fresh.is_empty() {
        finish(result, stats, union);
        return Ok(false);
    }

    // Prompted segmentation and gate, one instance at a time.
    for idx in 0..fresh.len() {
        let context: Vec<(BBox, Option<Pose>)> = result
            .instances
            .iter()
            .chain(fresh.iter().enumerate().filter(|(j, _)| *j != idx).map(|(_, i)| i))
            .map(|i| (i.bbox, i.pose.clone()))
            .collect();
        let inst = &mut fresh[idx];
        match segment_instance(image, inst, &context, backends, config, &config.loop_policy, skeleton, k, Pass::Loop) {
            Ok(Some(decision)) => {
                stats.gated += 1;
                if decision == GateDecision::KeptOriginal {
                    stats.gate_kept_original += 1;
                }
            }
            Ok(None) => {}
            Err(e) => {
                finish(result, stats, union);
                return Err(e);
            }
        }
    }

    stats.accepted = fresh.len();
    for inst in fresh {
        union.union_with(&inst.mask)?;
        result.instances.push(inst);
    }
    finish(result, stats, union);
    Ok(true)
}

/// Turns a sorted kept-index list over `old ++ new` into two keep flags.
fn split_kept(kept: &[usize], n_old: usize, n_new: usize) -> (Vec<bool>, Vec<bool>) {
    let mut flags = vec![false; n_old + n_new];
    for &i in kept {
        flags[i] = true;
    }
    let new = flags.split_off(n_old);
    (flags, new)
}

fn retire(
    result: &mut LoopResult,
    fresh: &mut Vec<Instance>,
    keep_old: &[bool],
    keep_new: &[bool],
    k: u32,
    stage: Stage,
) -> usize {
    let mut removed = 0;
    let mut drain = |list: Vec<Instance>, keep: &[bool], out: &mut Vec<Instance>, sink: &mut Vec<Instance>| {
        for (mut inst, &kp) in list.into_iter().zip(keep) {
            if kp {
                out.push(inst);
            } else {
                inst.provenance.push(Event::Suppressed { iteration: k, stage });
                sink.push(inst);
                removed += 1;
            }
        }
    };
    let old = std::mem::take(&mut result.instances);
    let mut kept_old = Vec::with_capacity(old.len());
    drain(old, keep_old, &mut kept_old, &mut result.suppressed);
    let new = std::mem::take(fresh);
    drain(new, keep_new, fresh, &mut result.suppressed);
    result.instances = kept_old;
    removed
}

fn detector_gave_mask(inst: &Instance) -> bool {
    matches!(inst.provenance.first(), Some(Event::Detected { has_mask: true, .. }))
}

/// Pose on the crop around the instance box. With a mask the crop is
/// blended first; without one it is passed as is.
fn estimate_pose(
    source: &Image,
    condition_on: Option<&BinaryMask>,
    inst: &mut Instance,
    backends: &mut BackendSet,
    config: &BmpConfig,
    skeleton: &SkeletonConfig,
    k: u32,
) -> Result<(), EngineError> {
    let conditioned;
    let (input, conditioning) = match condition_on.filter(|_| config.alpha < 1.0) {
        Some(mask) => {
            conditioned = semi_transparent_blend(source, mask, config.alpha)?;
            (&conditioned, Conditioning::MaskBlend)
        }
        None => (source, Conditioning::Unblended),
    };
    let (crop, transform) = crop_expand(input, &inst.bbox, config.crop_padding, config.crop_aspect)?;
    let keypoints = backends.pose(&crop, &transform, &inst.bbox, &skeleton.name)?;
    let pose = Pose::new(skeleton.name.clone(), keypoints);
    skeleton
        .check_pose(&pose)
        .map_err(|e| BackendError::Protocol(format!("pose reply: {e}")))?;
    inst.pose_score = pose.score(config.loop_policy.t_c);
    inst.provenance.push(Event::PoseEstimated {
        iteration: k,
        conditioning,
        alpha: match conditioning {
            Conditioning::MaskBlend => config.alpha,
            Conditioning::Unblended => 1.0,
        },
        score: inst.pose_score,
    });
    inst.pose = Some(pose);
    Ok(())
}

/// Keypoint positions at or above `t_c`.
fn confident_points(pose: &Pose, t_c: f64) -> Vec<(f64, f64)> {
    pose.keypoints
        .iter()
        .filter(|k| k.confidence >= t_c)
        .map(|k| k.position())
        .collect()
}

/// Prompts the segmenter for one instance and applies the gate. Returns the
/// gate decision, or `None` when the segmenter was not consulted or failed.
#[allow(clippy::too_many_arguments)]
fn segment_instance(
    image: &Image,
    inst: &mut Instance,
    context: &[(BBox, Option<Pose>)],
    backends: &mut BackendSet,
    config: &BmpConfig,
    policy: &PromptPolicy,
    skeleton: &SkeletonConfig,
    k: u32,
    pass: Pass,
) -> Result<Option<GateDecision>, EngineError> {
    let Some(pose) = inst.pose.as_ref() else {
        inst.provenance.push(Event::SegmentSkipped { iteration: k, pass });
        return Ok(None);
    };
    let others: Vec<&Pose> = context.iter().filter_map(|(_, p)| p.as_ref()).collect();
    let max_overlap = context
        .iter()
        .map(|(b, _)| bbox_iou(&inst.bbox, b))
        .fold(0.0, f64::max);
    let prompts = build_prompts(pose, skeleton, &inst.bbox, &others, max_overlap, policy);
    if prompts.positives.is_empty() {
        inst.provenance.push(Event::SegmentSkipped { iteration: k, pass });
        return Ok(None);
    }
    let (refined, score) = match backends.segment(image, &prompts) {
        Ok(r) => r,
        Err(e) if e.is_recoverable() => {
            inst.provenance.push(Event::SegmentFailed {
                iteration: k,
                pass,
                message: e.to_string(),
            });
            return Ok(None);
        }
        Err(e) => return Err(e.into()),
    };
    // The gate judges masks against every confident keypoint of this
    // instance and of its neighbours, not only the prompted subset.
    let gate_pos = confident_points(pose, policy.t_c);
    let gate_neg: Vec<(f64, f64)> = others
        .iter()
        .flat_map(|p| confident_points(p, policy.t_c))
        .collect();
    if !config.pmc_gate {
        inst.provenance.push(Event::MaskRefined {
            iteration: k,
            pass,
            prompts,
            pmc_before: None,
            pmc_after: None,
            area: refined.area(),
        });
        inst.mask = refined;
        inst.mask_score = score;
        return Ok(None);
    }
    let outcome = mask_gate(&inst.mask, &refined, &gate_pos, &gate_neg).map_err(|e| match e {
        crate::consistency::ConsistencyError::Geometry(g) => EngineError::Geometry(g),
        other => EngineError::Config(other.to_string()),
    })?;
    match outcome.decision {
        GateDecision::KeptRefined => {
            inst.provenance.push(Event::MaskRefined {
                iteration: k,
                pass,
                prompts,
                pmc_before: Some(outcome.original.pmc),
                pmc_after: Some(outcome.refined.pmc),
                area: outcome.mask.area(),
            });
            inst.mask = outcome.mask;
            inst.mask_score = score;
        }
        GateDecision::KeptOriginal => {
            inst.provenance.push(Event::MaskGateKeptOriginal {
                iteration: k,
                pass,
                prompts,
                pmc_before: outcome.original.pmc,
                pmc_after: outcome.refined.pmc,
            });
        }
    }
    Ok(Some(outcome.decision))
}

/// One segment-and-gate pass over finished instances with the refinement
/// policy; no re-detection. With `rerun_pose_after_refine`, instances whose
/// refined mask was kept get a fresh pose conditioned on it.
pub fn refine_once(
    image: &Image,
    mut instances: Vec<Instance>,
    backends: &mut BackendSet,
    config: &BmpConfig,
) -> Result<Vec<Instance>, EngineError> {
    config.validate()?;
    let registry = SkeletonRegistry::default();
    let skeleton = registry.get(&config.skeleton)?.clone();
    let k = instances.iter().map(|i| i.iteration_born).max().unwrap_or(0) + 1;
    for idx in 0..instances.len() {
        let context: Vec<(BBox, Option<Pose>)> = instances
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .map(|(_, i)| (i.bbox, i.pose.clone()))
            .collect();
        let inst = &mut instances[idx];
        let decision = segment_instance(
            image,
            inst,
            &context,
            backends,
            config,
            &config.refinement_policy,
            &skeleton,
            k,
            Pass::Refine,
        )?;
        let refined = match decision {
            Some(d) => d == GateDecision::KeptRefined,
            None => !config.pmc_gate && matches!(inst.provenance.last(), Some(Event::MaskRefined { .. })),
        };
        if config.rerun_pose_after_refine && refined {
            let mask = inst.mask.clone();
            estimate_pose(image, Some(&mask), inst, backends, config, &skeleton, k)?;
        }
    }
    Ok(instances)
}
