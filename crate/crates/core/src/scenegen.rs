//! Seeded generator for synthetic crowd scenes and their COCO ground truth.
//!
//! People are drawn from one stick-figure template (head, torso, limb
//! capsules) scaled to the requested height, so keypoints always sit on the
//! person's own pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{SceneInstance, SyntheticScene};
use crate::evaluation::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, Segmentation};
use crate::geometry::{BinaryMask, COCO_KEYPOINT_NAMES};

/// Template keypoints as fractions of the person box, COCO order.
const KEYPOINTS: [(f64, f64); 17] = [
    (0.50, 0.07),
    (0.56, 0.05),
    (0.44, 0.05),
    (0.62, 0.07),
    (0.38, 0.07),
    (0.72, 0.20),
    (0.28, 0.20),
    (0.84, 0.36),
    (0.16, 0.36),
    (0.90, 0.52),
    (0.10, 0.52),
    (0.62, 0.54),
    (0.38, 0.54),
    (0.64, 0.75),
    (0.36, 0.75),
    (0.66, 0.95),
    (0.34, 0.95),
];

/// Limb capsules as keypoint index pairs, with radius as a fraction of box width.
const LIMBS: [(usize, usize, f64); 10] = [
    (5, 7, 0.07),
    (7, 9, 0.06),
    (6, 8, 0.07),
    (8, 10, 0.06),
    (5, 6, 0.08),
    (11, 13, 0.09),
    (13, 15, 0.08),
    (12, 14, 0.09),
    (14, 16, 0.08),
    (11, 12, 0.09),
];

/// Person width over height.
pub const PERSON_ASPECT: f64 = 0.42;

/// A person rasterized in its own box.
#[derive(Debug, Clone)]
pub struct Figure {
    pub width: u32,
    pub height: u32,
    /// Mask over the `width × height` box.
    pub mask: BinaryMask,
    /// Keypoints relative to the box origin.
    pub keypoints: Vec<(f64, f64)>,
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

impl Figure {
    /// Rasterizes the template at `height` pixels tall.
    pub fn new(height: u32) -> Self {
        let height = height.max(20);
        let width = ((height as f64 * PERSON_ASPECT).round() as u32).max(8);
        let (bw, bh) = (width as f64, height as f64);
        let kp: Vec<(f64, f64)> = KEYPOINTS.iter().map(|&(u, v)| (u * bw, v * bh)).collect();
        let mut mask = BinaryMask::from_fn(width, height, |x, y| {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (p.0 / bw, p.1 / bh);
            let head = ((u - 0.5) / 0.15).powi(2) + ((v - 0.07) / 0.07).powi(2) <= 1.0;
            let neck = (0.42..=0.58).contains(&u) && (0.12..=0.2).contains(&v);
            let torso = (0.28..=0.72).contains(&u) && (0.18..=0.56).contains(&v);
            head || neck
                || torso
                || LIMBS
                    .iter()
                    .any(|&(a, b, r)| seg_dist(p, kp[a], kp[b]) <= r * bw)
        });
        for &(x, y) in &kp {
            mask.set(x.floor() as u32, y.floor() as u32, true);
        }
        Figure {
            width,
            height,
            mask,
            keypoints: kp,
        }
    }
}

/// A figure placed at an integer offset.
#[derive(Debug, Clone)]
pub struct Placement {
    pub figure: Figure,
    pub x: i64,
    pub y: i64,
}

impl Placement {
    fn get(&self, gx: i64, gy: i64) -> bool {
        let (lx, ly) = (gx - self.x, gy - self.y);
        lx >= 0
            && ly >= 0
            && lx < self.figure.width as i64
            && ly < self.figure.height as i64
            && self.figure.mask.get(lx as u32, ly as u32)
    }

    /// Pixels shared with `other`.
    pub fn overlap(&self, other: &Placement) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.figure.width as i64).min(other.x + other.figure.width as i64);
        let y1 = (self.y + self.figure.height as i64).min(other.y + other.figure.height as i64);
        let mut n = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                if self.get(x, y) && other.get(x, y) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.x + self.figure.width as i64 <= width as i64
            && self.y + self.figure.height as i64 <= height as i64
    }

    fn to_mask(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.get(x as i64, y as i64))
    }
}

/// Moves `front` relative to `back` so that `front` covers `target` of
/// `back`'s area as closely as possible. Offsets are scanned over
/// `dx ∈ [-w, w]` for each `dy` in `dys`; ties go to the smallest `|dx| + |dy|`.
pub fn place_for_occlusion(back: &Placement, front: &Figure, target: f64, dys: &[i64]) -> (Placement, f64) {
    let area = back.figure.mask.area() as f64;
    let span = front.figure_span();
    let mut best: Option<(f64, i64, Placement, f64)> = None;
    for &dy in dys {
        for dx in -span..=span {
            let cand = Placement {
                figure: front.clone(),
                x: back.x + (back.figure.width as i64 - front.width as i64) / 2 + dx,
                y: back.y + (back.figure.height as i64 - front.height as i64) / 2 + dy,
            };
            let frac = back.overlap(&cand) as f64 / area;
            let err = (frac - target).abs();
            let cost = dx.abs() + dy.abs();
            let better = match &best {
                None => true,
                Some((e, c, _, _)) => err < *e - 1e-12 || ((err - *e).abs() <= 1e-12 && cost < *c),
            };
            if better {
                best = Some((err, cost, cand, frac));
            }
        }
    }
    let (_, _, p, frac) = best.expect("at least one offset");
    (p, frac)
}

impl Figure {
    fn figure_span(&self) -> i64 {
        self.width as i64 + 2
    }
}

/// Builds a scene from placements listed front to back.
pub fn compose(image_id: u64, width: u32, height: u32, front_to_back: &[Placement]) -> SyntheticScene {
    let instances = front_to_back
        .iter()
        .enumerate()
        .map(|(i, p)| SceneInstance {
            id: i as u64,
            depth: i as i32,
            mask: p.to_mask(width, height),
            keypoints: Vec::new(),
        })
        .collect();
    let mut scene = SyntheticScene {
        image_id,
        file_name: format!("{image_id:06}.png"),
        width,
        height,
        skeleton: "coco".to_string(),
        instances,
    };
    let owner = scene.owner_map();
    for (i, p) in front_to_back.iter().enumerate() {
        let mut kps = Vec::with_capacity(51);
        for &(lx, ly) in &p.figure.keypoints {
            let (x, y) = (lx + p.x as f64, ly + p.y as f64);
            let (px, py) = (x.floor(), y.floor());
            let inside = px >= 0.0 && py >= 0.0 && px < width as f64 && py < height as f64;
            if !inside {
                kps.extend([0.0, 0.0, 0.0]);
                continue;
            }
            let top = owner[(py as u32 * width + px as u32) as usize] == Some(i);
            kps.extend([x, y, if top { 2.0 } else { 1.0 }]);
        }
        scene.instances[i].keypoints = kps;
    }
    scene
}

/// Two equal people, the front one covering `occlusion` of the one behind.
/// Returns the scene and the achieved occlusion.
pub fn occlusion_pair(image_id: u64, occlusion: f64) -> (SyntheticScene, f64) {
    let (width, height) = (320, 240);
    let fig = Figure::new(160);
    let back = Placement {
        x: (width as i64 - fig.width as i64) / 2,
        y: 40,
        figure: fig.clone(),
    };
    let dys: Vec<i64> = (-12..=12).collect();
    let (front, achieved) = place_for_occlusion(&back, &fig, occlusion, &dys);
    (compose(image_id, width, height, &[front, back]), achieved)
}

/// Fraction of each instance's amodal area that is visible.
pub fn visible_fractions(scene: &SyntheticScene) -> Vec<f64> {
    scene
        .visible_masks()
        .iter()
        .zip(&scene.instances)
        .map(|(v, i)| v.area() as f64 / i.mask.area().max(1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub count: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub min_person_height: u32,
    pub max_person_height: u32,
    /// Least visible fraction any person may keep.
    pub min_visible: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            count: 100,
            seed: 7,
            width: 320,
            height: 240,
            min_person_height: 110,
            max_person_height: 180,
            min_visible: 0.12,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_person_height < 20 || self.min_person_height > self.max_person_height {
            return Err(format!(
                "person heights {}..{} must satisfy 20 <= min <= max",
                self.min_person_height, self.max_person_height
            ));
        }
        if self.min_person_height > self.height {
            return Err(format!("people of height {} do not fit a {}-pixel image", self.min_person_height, self.height));
        }
        if Figure::new(self.min_person_height).width * 2 > self.width {
            return Err(format!("image width {} cannot hold two people side by side", self.width));
        }
        if !(0.0..1.0).contains(&self.min_visible) {
            return Err(format!("min_visible {} outside [0, 1)", self.min_visible));
        }
        Ok(())
    }
}

fn random_placement(rng: &mut ChaCha8Rng, fig: Figure, width: u32, height: u32) -> Placement {
    let x = rng.random_range(0..=(width - fig.width) as i64);
    let y = rng.random_range(0..=(height - fig.height) as i64);
    Placement { figure: fig, x, y }
}

/// One scene of the corpus. Layouts alternate between a side-by-side pair
/// with a random occlusion level, a nested pair (a slightly smaller person
/// standing in front of another) and a pair plus a bystander.
fn corpus_scene(rng: &mut ChaCha8Rng, image_id: u64, p: &CorpusParams) -> Option<SyntheticScene> {
    let max_h = p.max_person_height.min(p.height);
    let h = rng.random_range(p.min_person_height..=max_h);
    let back_fig = Figure::new(h);
    if back_fig.width * 2 > p.width {
        return None;
    }
    let mut back = random_placement(rng, back_fig, p.width, p.height);
    let layout = rng.random_range(0..10);
    let mut people: Vec<Placement> = Vec::new();
    if !(4..8).contains(&layout) {
        let scale = rng.random_range(0.9..1.1);
        let fh = ((h as f64 * scale).round() as u32).min(p.height);
        let target = rng.random_range(0.15..0.85);
        let dy = rng.random_range(-(h as i64) / 10..=(h as i64) / 10);
        // Keep room for the front person on either side.
        back.x = back.x.clamp(back.figure.width as i64 / 2, (p.width - back.figure.width) as i64 - back.figure.width as i64 / 2);
        let (front, _) = place_for_occlusion(&back, &Figure::new(fh), target, &[dy]);
        people.push(front);
        people.push(back);
    } else {
        let scale = rng.random_range(0.78..0.95);
        let fh = (h as f64 * scale).round() as u32;
        let fig = Figure::new(fh);
        let jx = rng.random_range(-(back.figure.width as i64) / 8..=(back.figure.width as i64) / 8);
        let jy = rng.random_range(0..=(back.figure.height - fig.height) as i64);
        let front = Placement {
            x: back.x + (back.figure.width as i64 - fig.width as i64) / 2 + jx,
            y: back.y + jy,
            figure: fig,
        };
        people.push(front);
        people.push(back);
    }
    if layout >= 8 {
        let bh = rng.random_range(p.min_person_height..=max_h);
        let by = random_placement(rng, Figure::new(bh), p.width, p.height);
        let depth = rng.random_range(0..=people.len());
        people.insert(depth, by);
    }
    if !people.iter().all(|q| q.fits(p.width, p.height)) {
        return None;
    }
    let scene = compose(image_id, p.width, p.height, &people);
    if visible_fractions(&scene).iter().any(|&v| v < p.min_visible) {
        return None;
    }
    Some(scene)
}

/// `count` scenes from `seed`; identical parameters give identical scenes.
/// Panics if `params` fail [`CorpusParams::validate`].
pub fn generate_corpus(params: &CorpusParams) -> Vec<SyntheticScene> {
    if let Err(e) = params.validate() {
        panic!("invalid corpus parameters: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut scenes = Vec::with_capacity(params.count);
    let mut id = 1u64;
    while scenes.len() < params.count {
        if let Some(s) = corpus_scene(&mut rng, id, params) {
            scenes.push(s);
            id += 1;
        }
    }
    scenes
}

/// COCO ground truth for a set of scenes. Boxes, areas and segmentations
/// describe the visible pixels; keypoint visibility comes from the scene.
pub fn ground_truth(scenes: &[SyntheticScene]) -> CocoDataset {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut ann_id = 1u64;
    for s in scenes {
        images.push(CocoImage {
            id: s.image_id,
            file_name: s.file_name.clone(),
            width: s.width,
            height: s.height,
        });
        for (inst, vis) in s.instances.iter().zip(s.visible_masks()) {
            let Some(bbox) = vis.tight_bbox() else { continue };
            let num_keypoints = inst.keypoints.chunks(3).filter(|t| t[2] > 0.0).count();
            annotations.push(CocoAnnotation {
                id: ann_id,
                image_id: s.image_id,
                category_id: 1,
                bbox: bbox.xywh(),
                area: vis.area() as f64,
                iscrowd: 0,
                segmentation: Some(Segmentation::Rle(vis.to_rle())),
                keypoints: Some(inst.keypoints.clone()),
                num_keypoints: Some(num_keypoints),
            });
            ann_id += 1;
        }
    }
    CocoDataset {
        images,
        annotations,
        categories: vec![CocoCategory {
            id: 1,
            name: "person".to_string(),
            keypoints: COCO_KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            skeleton: Vec::new(),
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoints_lie_on_the_figure() {
        for h in [60, 111, 160, 180] {
            let f = Figure::new(h);
            for &(x, y) in &f.keypoints {
                assert!(f.mask.contains_point(x, y), "h={h} ({x},{y})");
            }
        }
    }

    #[test]
    fn canonical_pair_hits_target() {
        let (scene, got) = occlusion_pair(1, 0.7);
        assert!((got - 0.7).abs() <= 0.01, "achieved {got}");
        let vis = visible_fractions(&scene);
        assert_eq!(vis[0], 1.0);
        assert!((vis[1] - 0.3).abs() <= 0.01);
    }

    #[test]
    fn corpus_is_seeded() {
        let p = CorpusParams {
            count: 4,
            ..Default::default()
        };
        assert_eq!(generate_corpus(&p), generate_corpus(&p));
        let other = CorpusParams { seed: 8, ..p.clone() };
        assert_ne!(generate_corpus(&p), generate_corpus(&other));
    }

    #[test]
    fn ground_truth_matches_scene() {
        let (scene, _) = occlusion_pair(3, 0.5);
        let gt = ground_truth(std::slice::from_ref(&scene));
        assert_eq!(gt.annotations.len(), 2);
        let hidden = gt.annotations[1]
            .keypoints
            .as_ref()
            .unwrap()
            .chunks(3)
            .filter(|t| t[2] == 1.0)
            .count();
        assert!(hidden > 0);
    }
}
