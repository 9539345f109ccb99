//! Rule-based stand-in for the detector, pose estimator and segmenter.
//!
//! A scene lists people as amodal masks stacked by depth together with their
//! ground-truth keypoints. Every reply is a pure function of the scene and
//! the request pixels:
//!
//! * detect: an instance is found when at least `v_det` of its unmasked
//!   pixels are visible (top of the stack). Pixels that are pure black in the
//!   request image count as masked out.
//! * pose: the ground-truth keypoints of the instance the crop shows,
//!   with confidence 0.9 where the keypoint pixel is visible and unmasked,
//!   0.2 where it is not, and 0.0 outside the crop.
//! * segment: the visible mask of the instance holding most positive
//!   prompts, clipped to the box prompt when one is given.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::protocol::{Detection, HandshakeInfo, Request, Response, KNOWN_OPS, PROTOCOL_VERSION};
use super::{BackendError, Endpoint};
use crate::geometry::{BBox, BinaryMask, GeometryError, Keypoint, Pose, SkeletonRegistry};
use crate::imaging::{CropTransform, Image};

pub const SCENE_FORMAT: &str = "bmp-synthetic-scenes";
pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_V_DET: f64 = 0.5;

pub const CONF_VISIBLE: f64 = 0.9;
pub const CONF_HIDDEN: f64 = 0.2;

const BACKGROUND: [u8; 3] = [90, 90, 90];
const PALETTE: [[u8; 3]; 8] = [
    [200, 60, 50],
    [50, 120, 210],
    [60, 170, 80],
    [220, 180, 40],
    [150, 70, 190],
    [40, 180, 180],
    [230, 120, 160],
    [140, 110, 70],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub id: u64,
    /// Stacking order; lower is nearer the camera.
    pub depth: i32,
    /// Amodal mask: every pixel the person would cover if nothing were in front.
    pub mask: BinaryMask,
    /// COCO triplets `x, y, v` with `v` 0 (unlabeled), 1 (hidden) or 2 (visible).
    pub keypoints: Vec<f64>,
}

impl SceneInstance {
    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len() / 3
    }

    pub fn keypoint(&self, k: usize) -> (f64, f64, f64) {
        (self.keypoints[3 * k], self.keypoints[3 * k + 1], self.keypoints[3 * k + 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub skeleton: String,
    pub instances: Vec<SceneInstance>,
}

impl SyntheticScene {
    pub fn validate(&self, skeletons: &SkeletonRegistry) -> Result<(), GeometryError> {
        let skel = skeletons.get(&self.skeleton)?;
        let mut depths = BTreeSet::new();
        for inst in &self.instances {
            inst.mask.same_shape(&BinaryMask::empty(self.width, self.height))?;
            if inst.keypoints.len() != 3 * skel.keypoint_count() {
                return Err(GeometryError::KeypointCount {
                    expected: skel.keypoint_count(),
                    got: inst.keypoints.len() / 3,
                });
            }
            if !depths.insert(inst.depth) {
                return Err(GeometryError::InvalidSkeleton(format!(
                    "scene {}: depth {} used twice",
                    self.image_id, inst.depth
                )));
            }
        }
        Ok(())
    }

    /// Index of the instance on top at each pixel, row-major.
    pub fn owner_map(&self) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        order.sort_by_key(|&i| self.instances[i].depth);
        let n = self.width as usize * self.height as usize;
        let mut owner = vec![None; n];
        for (p, slot) in owner.iter_mut().enumerate() {
            *slot = order.iter().copied().find(|&i| self.instances[i].mask.bits()[p]);
        }
        owner
    }

    /// Visible (modal) mask of every instance.
    pub fn visible_masks(&self) -> Vec<BinaryMask> {
        let owner = self.owner_map();
        (0..self.instances.len())
            .map(|i| {
                let bits = owner.iter().map(|o| *o == Some(i)).collect();
                BinaryMask::from_bits(self.width, self.height, bits).expect("scene-sized")
            })
            .collect()
    }

    /// Deterministic rendering. No pixel is ever pure black, so black in a
    /// request image always means "masked out".
    pub fn render(&self) -> Image {
        let owner = self.owner_map();
        let mut img = Image::filled(self.width, self.height, BACKGROUND);
        for y in 0..self.height {
            for x in 0..self.width {
                let shade = ((x / 4 + y / 4) % 4) as u8 * 6;
                let rgb = match owner[(y * self.width + x) as usize] {
                    Some(i) => {
                        let base = PALETTE[self.instances[i].id as usize % PALETTE.len()];
                        base.map(|c| c.saturating_sub(shade).max(40))
                    }
                    None => BACKGROUND.map(|c| c - shade / 2),
                };
                img.put_pixel(x, y, rgb);
            }
        }
        img
    }
}

/// On-disk collection of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLibrary {
    pub format: String,
    pub version: u32,
    pub scenes: Vec<SyntheticScene>,
}

impl SceneLibrary {
    pub fn new(scenes: Vec<SyntheticScene>) -> Self {
        SceneLibrary {
            format: SCENE_FORMAT.to_string(),
            version: SCENE_FORMAT_VERSION,
            scenes,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
        let lib: SceneLibrary = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| BackendError::Protocol(format!("{}: {e}", path.display())))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        let text = serde_json::to_string(self)
            .map_err(|e| BackendError::Protocol(format!("encoding scenes: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.format != SCENE_FORMAT || self.version != SCENE_FORMAT_VERSION {
            return Err(BackendError::Protocol(format!(
                "unsupported scene file {} v{}",
                self.format, self.version
            )));
        }
        let registry = SkeletonRegistry::default();
        let mut ids = BTreeSet::new();
        for s in &self.scenes {
            s.validate(&registry)
                .map_err(|e| BackendError::Protocol(format!("scene {}: {e}", s.image_id)))?;
            if !ids.insert(s.image_id) {
                return Err(BackendError::Protocol(format!("duplicate scene id {}", s.image_id)));
            }
        }
        Ok(())
    }
}

struct Prepared {
    scene: SyntheticScene,
    owner: Vec<Option<usize>>,
    visible: Vec<BinaryMask>,
    render: Image,
}

impl Prepared {
    fn new(scene: SyntheticScene) -> Self {
        Prepared {
            owner: scene.owner_map(),
            visible: scene.visible_masks(),
            render: scene.render(),
            scene,
        }
    }
}

/// Serves all three roles from a scene library. Cloning shares the scenes.
#[derive(Clone)]
pub struct SyntheticBackend {
    scenes: Arc<Vec<Prepared>>,
    by_id: Arc<HashMap<String, usize>>,
    v_det: f64,
    emit_masks: bool,
}

impl SyntheticBackend {
    pub fn new(library: SceneLibrary) -> Self {
        let by_id = library
            .scenes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.image_id.to_string(), i))
            .collect();
        let scenes = library.scenes.into_iter().map(Prepared::new).collect();
        SyntheticBackend {
            scenes: Arc::new(scenes),
            by_id: Arc::new(by_id),
            v_det: DEFAULT_V_DET,
            emit_masks: true,
        }
    }

    pub fn single(scene: SyntheticScene) -> Self {
        SyntheticBackend::new(SceneLibrary::new(vec![scene]))
    }

    pub fn with_v_det(mut self, v_det: f64) -> Self {
        assert!(v_det > 0.0 && v_det <= 1.0, "v_det must lie in (0, 1]");
        self.v_det = v_det;
        self
    }

    /// When off, detections carry boxes only.
    pub fn with_masks(mut self, emit: bool) -> Self {
        self.emit_masks = emit;
        self
    }

    fn scene(&self, image_id: &Option<String>, image: &Image) -> Result<&Prepared, BackendError> {
        let p = match image_id {
            Some(id) => self
                .by_id
                .get(id)
                .map(|&i| &self.scenes[i])
                .ok_or_else(|| BackendError::remote("unknown_scene", format!("no scene `{id}`")))?,
            None if self.scenes.len() == 1 => &self.scenes[0],
            None => {
                return Err(BackendError::remote(
                    "unknown_scene",
                    "request has no image_id and the library holds several scenes",
                ))
            }
        };
        if image.width() != p.scene.width || image.height() != p.scene.height {
            return Err(BackendError::remote(
                "bad_request",
                format!(
                    "image is {}x{}, scene is {}x{}",
                    image.width(),
                    image.height(),
                    p.scene.width,
                    p.scene.height
                ),
            ));
        }
        Ok(p)
    }

    fn skeletons(&self) -> Vec<String> {
        let mut names: BTreeSet<String> = SkeletonRegistry::default().names().into_iter().collect();
        names.extend(self.scenes.iter().map(|p| p.scene.skeleton.clone()));
        names.into_iter().collect()
    }
}

/// Pixels that are pure black in `image`.
pub fn masked_pixels(image: &Image) -> BinaryMask {
    let bits = image.pixels().map(|p| p == [0, 0, 0]).collect();
    BinaryMask::from_bits(image.width(), image.height(), bits).expect("image-sized")
}

/// Applies the detection rule for one scene given the masked-out region.
pub fn detect_rule(
    scene: &SyntheticScene,
    visible: &[BinaryMask],
    union: &BinaryMask,
    v_det: f64,
    emit_masks: bool,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for (inst, vis) in scene.instances.iter().zip(visible) {
        let mut own = inst.mask.clone();
        own.subtract(union).expect("scene-sized");
        let own_area = own.area();
        if own_area == 0 {
            continue;
        }
        let mut seen = vis.clone();
        seen.subtract(union).expect("scene-sized");
        let ratio = seen.area() as f64 / own_area as f64;
        if ratio >= v_det {
            out.push(Detection {
                bbox: own.tight_bbox().expect("non-empty"),
                score: ratio,
                mask: emit_masks.then_some(seen),
            });
        }
    }
    out
}

impl Endpoint for SyntheticBackend {
    fn call(&mut self, request: &Request) -> Result<Response, BackendError> {
        match request {
            Request::Handshake { .. } => Ok(Response::Handshake(HandshakeInfo {
                protocol_version: PROTOCOL_VERSION,
                skeletons: self.skeletons(),
                emits_masks: self.emit_masks,
                ops: KNOWN_OPS.iter().map(|s| s.to_string()).collect(),
            })),
            Request::Detect { image_id, image } => {
                let p = self.scene(image_id, image)?;
                let union = masked_pixels(image);
                Ok(Response::Detections(detect_rule(
                    &p.scene,
                    &p.visible,
                    &union,
                    self.v_det,
                    self.emit_masks,
                )))
            }
            Request::Pose {
                image_id,
                image,
                transform,
                bbox,
                skeleton,
            } => {
                let p = self.pose_scene(image_id.as_deref(), transform)?;
                if *skeleton != p.scene.skeleton {
                    return Err(BackendError::remote(
                        "unsupported_skeleton",
                        format!("scene uses `{}`, request asks for `{skeleton}`", p.scene.skeleton),
                    ));
                }
                Ok(Response::Keypoints(pose_rule(p, image, transform, &BBox::from_xywh(*bbox))))
            }
            Request::Segment {
                image_id,
                image,
                positives,
                negatives: _,
                bbox,
            } => {
                let p = self.scene(image_id, image)?;
                let (mask, score) = segment_rule(p, positives, bbox.map(BBox::from_xywh))?;
                Ok(Response::Mask { mask, score })
            }
        }
    }
}

impl SyntheticBackend {
    /// Pose requests carry a crop, so the scene is matched by id alone.
    fn pose_scene(&self, image_id: Option<&str>, _t: &CropTransform) -> Result<&Prepared, BackendError> {
        match image_id {
            Some(id) => self
                .by_id
                .get(id)
                .map(|&i| &self.scenes[i])
                .ok_or_else(|| BackendError::remote("unknown_scene", format!("no scene `{id}`"))),
            None if self.scenes.len() == 1 => Ok(&self.scenes[0]),
            None => Err(BackendError::remote("unknown_scene", "request has no image_id")),
        }
    }
}

/// Picks the instance the crop is about: the owner of most crop pixels inside
/// `bbox` that still show their rendered colour. Conditioning darkens every
/// pixel outside the instance mask, so those drop out of the vote.
fn pose_target(p: &Prepared, crop: &Image, t: &CropTransform, bbox: &BBox) -> Option<usize> {
    let mut votes = vec![0u64; p.scene.instances.len()];
    let (w, h) = (p.scene.width as i64, p.scene.height as i64);
    for v in 0..crop.height() {
        for u in 0..crop.width() {
            let (x, y) = (t.x0 + u as i64, t.y0 + v as i64);
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            if !bbox.contains_point(x as f64 + 0.5, y as f64 + 0.5) {
                continue;
            }
            let idx = (y * w + x) as usize;
            if let Some(o) = p.owner[idx] {
                if crop.pixel(u, v) == p.render.pixel(x as u32, y as u32) {
                    votes[o] += 1;
                }
            }
        }
    }
    let best = votes.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (*best.1 > 0).then_some(best.0)
}

fn pose_rule(p: &Prepared, crop: &Image, t: &CropTransform, bbox: &BBox) -> Vec<Keypoint> {
    let n = p
        .scene
        .instances
        .first()
        .map(|i| i.keypoint_count())
        .unwrap_or_else(|| SkeletonRegistry::default().get(&p.scene.skeleton).map_or(0, |s| s.keypoint_count()));
    let Some(target) = pose_target(p, crop, t, bbox) else {
        let (u, v) = t.to_crop(bbox.center().0, bbox.center().1);
        return vec![Keypoint::new(u, v, 0.0); n];
    };
    let inst = &p.scene.instances[target];
    (0..inst.keypoint_count())
        .map(|k| {
            let (x, y, vis) = inst.keypoint(k);
            let (u, v) = t.to_crop(x, y);
            let conf = if vis <= 0.0 || !t.contains_image_point(x, y) {
                0.0
            } else {
                let (px, py) = (x.floor(), y.floor());
                let on_top = px >= 0.0
                    && py >= 0.0
                    && px < p.scene.width as f64
                    && py < p.scene.height as f64
                    && p.owner[(py as u32 * p.scene.width + px as u32) as usize] == Some(target);
                let unmasked = on_top && crop.pixel((u.floor()) as u32, (v.floor()) as u32) != [0, 0, 0];
                if unmasked {
                    CONF_VISIBLE
                } else {
                    CONF_HIDDEN
                }
            };
            Keypoint::new(u, v, conf)
        })
        .collect()
}

fn segment_rule(
    p: &Prepared,
    positives: &[[f64; 2]],
    bbox: Option<BBox>,
) -> Result<(BinaryMask, f64), BackendError> {
    let (w, h) = (p.scene.width, p.scene.height);
    let clip = |mut m: BinaryMask| {
        if let Some(b) = &bbox {
            m.intersect_with(&BinaryMask::from_bbox(w, h, b)).expect("scene-sized");
        }
        m
    };
    if positives.is_empty() {
        let Some(b) = bbox else {
            return Err(BackendError::remote("bad_request", "segment needs a point or a box prompt"));
        };
        // Box-only prompt: everything the box covers that belongs to a person.
        let people = BinaryMask::from_bits(w, h, p.owner.iter().map(Option::is_some).collect())
            .expect("scene-sized");
        let m = clip(people);
        let score = if b.area() > 0.0 { (m.area() as f64 / b.area()).min(1.0) } else { 0.0 };
        return Ok((m, score));
    }
    let counts: Vec<usize> = p
        .visible
        .iter()
        .map(|m| positives.iter().filter(|q| m.contains_point(q[0], q[1])).count())
        .collect();
    let best = counts.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return Ok((BinaryMask::empty(w, h), 0.0));
    }
    let n = positives.len() as f64;
    let (mx, my) = (
        positives.iter().map(|q| q[0]).sum::<f64>() / n,
        positives.iter().map(|q| q[1]).sum::<f64>() / n,
    );
    let dist = |i: usize| {
        p.visible[i]
            .centroid()
            .map_or(f64::INFINITY, |(cx, cy)| (cx - mx).hypot(cy - my))
    };
    let winner = (0..counts.len())
        .filter(|&i| counts[i] == best)
        .min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
        .expect("at least one instance has the best count");
    Ok((clip(p.visible[winner].clone()), best as f64 / n))
}

/// Ground-truth pose of an instance, labeled keypoints at confidence 1.
pub fn ground_truth_pose(scene: &SyntheticScene, index: usize) -> Pose {
    let inst = &scene.instances[index];
    Pose::new(
        scene.skeleton.clone(),
        (0..inst.keypoint_count())
            .map(|k| {
                let (x, y, v) = inst.keypoint(k);
                Keypoint::new(x, y, if v > 0.0 { 1.0 } else { 0.0 })
            })
            .collect(),
    )
}
