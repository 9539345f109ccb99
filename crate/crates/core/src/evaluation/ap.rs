//! Average precision with the matching and interpolation rules of the COCO
//! evaluation API: greedy matching by descending score at ten IoU thresholds,
//! crowd regions absorbing any number of detections, and precision sampled at
//! 101 recall points.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{CocoAnnotation, CocoDataset, ResultEntry, Segmentation};
use super::EvalError;
use crate::geometry::{BinaryMask, SkeletonConfig};

pub const MAX_DETS: usize = 100;
/// Per-image detection cap the COCO keypoint evaluation uses.
pub const MAX_DETS_KEYPOINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Bbox,
    Segm,
    Keypoints,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(Task::Bbox),
            "segm" => Ok(Task::Segm),
            "keypoints" => Ok(Task::Keypoints),
            _ => Err(format!("unknown task `{s}` (bbox, segm, keypoints)")),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Bbox => "bbox",
            Task::Segm => "segm",
            Task::Keypoints => "keypoints",
        })
    }
}

/// `0.50, 0.55, …, 0.95`, computed the way `numpy.linspace` does.
pub fn iou_thresholds() -> Vec<f64> {
    let step = (0.95 - 0.5) / 9.0;
    let mut t: Vec<f64> = (0..10).map(|i| i as f64 * step + 0.5).collect();
    t[9] = 0.95;
    t
}

/// `0.00, 0.01, …, 1.00`, computed the way `numpy.linspace` does.
pub fn recall_thresholds() -> Vec<f64> {
    let step = 1.0 / 100.0;
    let mut r: Vec<f64> = (0..101).map(|i| i as f64 * step).collect();
    r[100] = 1.0;
    r
}

#[derive(Debug, Clone)]
pub struct EvalParams {
    pub task: Task,
    pub max_dets: usize,
    /// Required for the keypoint task.
    pub skeleton: Option<SkeletonConfig>,
}

impl EvalParams {
    pub fn new(task: Task) -> Self {
        EvalParams {
            task,
            max_dets: if task == Task::Keypoints { MAX_DETS_KEYPOINTS } else { MAX_DETS },
            skeleton: (task == Task::Keypoints).then(SkeletonConfig::coco),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub task: Task,
    /// Mean precision over thresholds, recall points and categories; -1 when
    /// no category has ground truth.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Mean final recall over thresholds and categories, -1 as for `ap`.
    pub ar: f64,
    /// Non-ignored ground-truth instances.
    pub num_gt: usize,
    pub num_dets: usize,
    /// Interpolated precision `[threshold][recall point]`, averaged over
    /// categories that have ground truth.
    pub precision: Vec<Vec<f64>>,
    /// Final recall per threshold, averaged the same way.
    pub recall: Vec<f64>,
}

const EPS: f64 = f64::EPSILON;

fn bbox_iou_crowd(d: &[f64; 4], g: &[f64; 4], crowd: bool) -> f64 {
    let iw = (d[0] + d[2]).min(g[0] + g[2]) - d[0].max(g[0]);
    let ih = (d[1] + d[3]).min(g[1] + g[3]) - d[1].max(g[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = if crowd {
        d[2] * d[3]
    } else {
        d[2] * d[3] + g[2] * g[3] - inter
    };
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn mask_iou_crowd(d: &BinaryMask, g: &BinaryMask, crowd: bool) -> Result<f64, EvalError> {
    let inter = d
        .intersection_area(g)
        .map_err(|e| EvalError::Invalid(format!("mask sizes differ: {e}")))? as f64;
    let union = if crowd {
        d.area() as f64
    } else {
        (d.area() + g.area()) as f64 - inter
    };
    Ok(if union <= 0.0 { 0.0 } else { inter / union })
}

/// OKS of a detection against a ground truth, with the COCO fallback for
/// ground truth without labeled keypoints (distance to a box three times the
/// size of the ground-truth box).
fn keypoint_oks(det: &[f64], gt: &CocoAnnotation, sigmas: &[f64]) -> f64 {
    let g = gt.keypoints.as_deref().unwrap_or(&[]);
    let k = sigmas.len();
    let labeled = (0..k).filter(|&i| g.get(3 * i + 2).is_some_and(|&v| v > 0.0)).count();
    let [bx, by, bw, bh] = gt.bbox;
    let (x0, x1, y0, y1) = (bx - bw, bx + bw * 2.0, by - bh, by + bh * 2.0);
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..k {
        let (xd, yd) = (det[3 * i], det[3 * i + 1]);
        let (dx, dy) = if labeled > 0 {
            if g[3 * i + 2] <= 0.0 {
                continue;
            }
            (xd - g[3 * i], yd - g[3 * i + 1])
        } else {
            ((x0 - xd).max(0.0) + (xd - x1).max(0.0), (y0 - yd).max(0.0) + (yd - y1).max(0.0))
        };
        let var = (sigmas[i] * 2.0).powi(2);
        let e = (dx * dx + dy * dy) / var / (gt.area + EPS) / 2.0;
        sum += (-e).exp();
        n += 1;
    }
    sum / n as f64
}

/// Per (image, category) matching state.
struct ImageEval {
    /// Scores of the kept detections, descending.
    scores: Vec<f64>,
    /// `[threshold][detection]`: matched to a ground truth.
    matched: Vec<Vec<bool>>,
    /// `[threshold][detection]`: matched to an ignored ground truth.
    ignored: Vec<Vec<bool>>,
    num_gt: usize,
}

/// Everything the matcher needs about one ground truth.
struct GtRef<'a> {
    ann: &'a CocoAnnotation,
    ignore: bool,
}

fn similarity_matrix(
    dets: &[&ResultEntry],
    gts: &[GtRef<'_>],
    params: &EvalParams,
    masks: &BTreeMap<u64, BinaryMask>,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let mut out = vec![vec![0.0; gts.len()]; dets.len()];
    match params.task {
        Task::Bbox => {
            for (i, d) in dets.iter().enumerate() {
                let db = d.bbox.ok_or_else(|| EvalError::Invalid("bbox result without `bbox`".into()))?;
                for (j, g) in gts.iter().enumerate() {
                    out[i][j] = bbox_iou_crowd(&db, &g.ann.bbox, g.ann.is_crowd());
                }
            }
        }
        Task::Segm => {
            for (i, d) in dets.iter().enumerate() {
                let rle = d
                    .segmentation
                    .as_ref()
                    .ok_or_else(|| EvalError::Invalid("segm result without `segmentation`".into()))?;
                let dm = BinaryMask::from_rle(rle).map_err(|e| EvalError::Invalid(e.to_string()))?;
                for (j, g) in gts.iter().enumerate() {
                    out[i][j] = mask_iou_crowd(&dm, &masks[&g.ann.id], g.ann.is_crowd())?;
                }
            }
        }
        Task::Keypoints => {
            let skel = params
                .skeleton
                .as_ref()
                .ok_or_else(|| EvalError::Invalid("keypoint evaluation needs a skeleton".into()))?;
            let k = skel.keypoint_count();
            for d in dets {
                let got = d.keypoints.as_ref().map_or(0, |v| v.len() / 3);
                if d.keypoints.as_ref().is_none_or(|v| v.len() != 3 * k) {
                    return Err(EvalError::SkeletonMismatch { expected: k, got });
                }
            }
            for g in gts {
                if let Some(v) = &g.ann.keypoints {
                    if v.len() != 3 * k {
                        return Err(EvalError::SkeletonMismatch {
                            expected: k,
                            got: v.len() / 3,
                        });
                    }
                }
            }
            for (i, d) in dets.iter().enumerate() {
                let dk = d.keypoints.as_ref().expect("checked");
                for (j, g) in gts.iter().enumerate() {
                    out[i][j] = keypoint_oks(dk, g.ann, &skel.oks_sigmas);
                }
            }
        }
    }
    Ok(out)
}

fn evaluate_image(
    gts: Vec<GtRef<'_>>,
    mut dets: Vec<&ResultEntry>,
    params: &EvalParams,
    masks: &BTreeMap<u64, BinaryMask>,
    thresholds: &[f64],
) -> Result<ImageEval, EvalError> {
    // Non-ignored ground truth first, detections by descending score.
    let mut gts = gts;
    gts.sort_by_key(|g| g.ignore);
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(params.max_dets);
    let num_gt = gts.iter().filter(|g| !g.ignore).count();
    let nt = thresholds.len();
    let mut matched = vec![vec![false; dets.len()]; nt];
    let mut ignored = vec![vec![false; dets.len()]; nt];
    if !gts.is_empty() && !dets.is_empty() {
        let sims = similarity_matrix(&dets, &gts, params, masks)?;
        for (t, &thr) in thresholds.iter().enumerate() {
            let mut gt_taken = vec![false; gts.len()];
            for d in 0..dets.len() {
                let mut best = thr.min(1.0 - 1e-10);
                let mut m: Option<usize> = None;
                for (g, gt) in gts.iter().enumerate() {
                    if gt_taken[g] && !gt.ann.is_crowd() {
                        continue;
                    }
                    // Once matched to a real ground truth, stop at the ignored tail.
                    if m.is_some_and(|m| !gts[m].ignore) && gt.ignore {
                        break;
                    }
                    if sims[d][g] < best {
                        continue;
                    }
                    best = sims[d][g];
                    m = Some(g);
                }
                if let Some(m) = m {
                    ignored[t][d] = gts[m].ignore;
                    matched[t][d] = true;
                    gt_taken[m] = true;
                }
            }
        }
    }
    Ok(ImageEval {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        num_gt,
    })
}

/// Interpolated precision at each recall point and the final recall for one
/// threshold, from detections already sorted by descending score.
fn precision_curve(tp_flags: &[(bool, bool)], num_gt: usize, rec_thrs: &[f64]) -> (Vec<f64>, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut rc = Vec::new();
    let mut pr = Vec::new();
    for &(is_tp, is_fp) in tp_flags {
        if is_tp {
            tp += 1.0;
        }
        if is_fp {
            fp += 1.0;
        }
        rc.push(tp / num_gt as f64);
        pr.push(tp / (fp + tp + EPS));
    }
    let recall = rc.last().copied().unwrap_or(0.0);
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let q = rec_thrs
        .iter()
        .map(|&r| {
            // First index with rc >= r.
            let idx = rc.partition_point(|&x| x < r);
            pr.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    (q, recall)
}

/// Evaluates `results` against `gt`. `extra_ignore` marks additional ground
/// truth as ignore regions, on top of crowd annotations (and, for keypoints,
/// annotations without labeled keypoints).
pub fn evaluate(
    gt: &CocoDataset,
    results: &[ResultEntry],
    params: &EvalParams,
    extra_ignore: &dyn Fn(&CocoAnnotation) -> bool,
) -> Result<ApSummary, EvalError> {
    let known: std::collections::HashSet<u64> = gt.images.iter().map(|i| i.id).collect();
    if let Some(r) = results.iter().find(|r| !known.contains(&r.image_id)) {
        return Err(EvalError::Invalid(format!("result refers to unknown image {}", r.image_id)));
    }
    let mut masks = BTreeMap::new();
    if params.task == Task::Segm {
        for a in &gt.annotations {
            match &a.segmentation {
                Some(Segmentation::Rle(r)) => {
                    masks.insert(a.id, BinaryMask::from_rle(r).map_err(|e| EvalError::Invalid(e.to_string()))?);
                }
                Some(Segmentation::Polygons(_)) => return Err(EvalError::PolygonSegmentation(a.id)),
                None => {
                    let img = gt.image(a.image_id).expect("validated");
                    let b = crate::geometry::BBox::from_xywh(a.bbox);
                    masks.insert(a.id, BinaryMask::from_bbox(img.width, img.height, &b));
                }
            }
        }
    }
    let thresholds = iou_thresholds();
    let rec_thrs = recall_thresholds();
    let mut categories: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
    categories.extend(gt.annotations.iter().map(|a| a.category_id));
    categories.sort_unstable();
    categories.dedup();

    let nt = thresholds.len();
    let mut cat_precision: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut cat_recall: Vec<Vec<f64>> = Vec::new();
    let mut total_gt = 0;
    let mut total_dets = 0;
    let mut image_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    image_ids.sort_unstable();
    let mut gt_by_key: BTreeMap<(u64, u64), Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &gt.annotations {
        gt_by_key.entry((a.category_id, a.image_id)).or_default().push(a);
    }
    let mut dt_by_key: BTreeMap<(u64, u64), Vec<&ResultEntry>> = BTreeMap::new();
    for r in results {
        dt_by_key.entry((r.category_id, r.image_id)).or_default().push(r);
    }
    for &cat in &categories {
        let mut per_image = Vec::new();
        for &img in &image_ids {
            let gts: Vec<GtRef<'_>> = gt_by_key
                .get(&(cat, img))
                .map_or(&[][..], |v| v.as_slice())
                .iter()
                .map(|&a| GtRef {
                    ann: a,
                    ignore: a.is_crowd()
                        || (params.task == Task::Keypoints && a.labeled_keypoints() == 0)
                        || extra_ignore(a),
                })
                .collect();
            let dets: Vec<&ResultEntry> = dt_by_key.get(&(cat, img)).cloned().unwrap_or_default();
            if gts.is_empty() && dets.is_empty() {
                continue;
            }
            per_image.push(evaluate_image(gts, dets, params, &masks, &thresholds)?);
        }
        let num_gt: usize = per_image.iter().map(|e| e.num_gt).sum();
        total_gt += num_gt;
        // Stable sort of all detections by descending score, image order kept on ties.
        let mut order: Vec<(usize, usize)> = per_image
            .iter()
            .enumerate()
            .flat_map(|(i, e)| (0..e.scores.len()).map(move |d| (i, d)))
            .collect();
        total_dets += order.len();
        if num_gt == 0 {
            continue;
        }
        order.sort_by(|a, b| per_image[b.0].scores[b.1].total_cmp(&per_image[a.0].scores[a.1]));
        let mut precision = Vec::with_capacity(nt);
        let mut recall = Vec::with_capacity(nt);
        for t in 0..nt {
            let flags: Vec<(bool, bool)> = order
                .iter()
                .filter(|&&(i, d)| !per_image[i].ignored[t][d])
                .map(|&(i, d)| {
                    let m = per_image[i].matched[t][d];
                    (m, !m)
                })
                .collect();
            let (q, r) = precision_curve(&flags, num_gt, &rec_thrs);
            precision.push(q);
            recall.push(r);
        }
        cat_precision.push(precision);
        cat_recall.push(recall);
    }

    let nc = cat_precision.len();
    let mean = |vals: &mut dyn Iterator<Item = f64>| {
        let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            -1.0
        } else {
            s / n as f64
        }
    };
    let precision: Vec<Vec<f64>> = (0..nt)
        .map(|t| {
            (0..rec_thrs.len())
                .map(|r| mean(&mut cat_precision.iter().map(|c| c[t][r])))
                .collect()
        })
        .collect();
    let recall: Vec<f64> = (0..nt).map(|t| mean(&mut cat_recall.iter().map(|c| c[t]))).collect();
    let at = |thr: f64| {
        let t = thresholds.iter().position(|&x| (x - thr).abs() < 1e-12).expect("standard threshold");
        mean(&mut cat_precision.iter().flat_map(|c| c[t].iter().copied()))
    };
    Ok(ApSummary {
        task: params.task,
        ap: mean(&mut cat_precision.iter().flat_map(|c| c.iter().flatten().copied())),
        ap50: at(0.5),
        ap75: at(0.75),
        ar: if nc == 0 { -1.0 } else { mean(&mut cat_recall.iter().flatten().copied()) },
        num_gt: total_gt,
        num_dets: total_dets,
        precision,
        recall,
    })
}
