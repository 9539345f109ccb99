//! Independent reference implementations used as oracles by the property
//! and acceptance tests. They favour obviousness over speed and share no
//! code with the library beyond its plain data types.
#![allow(dead_code)]

use bmp_core::geometry::{BBox, BinaryMask, Pose};

/// Prompt selection by exhaustive search: at every step score each remaining
/// candidate with a full key and take the lexicographic maximum.
pub fn select_oracle(pose: &Pose, facial: &[usize], t_c: f64, n_max: usize, facial_cap: bool) -> Vec<usize> {
    let kp = &pose.keypoints;
    let mut remaining: Vec<usize> = (0..kp.len()).filter(|&i| kp[i].confidence >= t_c).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n_max {
        if facial_cap && chosen.iter().any(|c| facial.contains(c)) {
            remaining.retain(|r| !facial.contains(r));
        }
        if remaining.is_empty() {
            break;
        }
        // Key: (distance to chosen set, confidence, -index). Distance is +inf
        // for the first pick so only confidence and index decide it.
        let key = |i: usize| -> (f64, f64, i64) {
            let d = chosen
                .iter()
                .map(|&c| ((kp[i].x - kp[c].x).powi(2) + (kp[i].y - kp[c].y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            (d, kp[i].confidence, -(i as i64))
        };
        let mut best = remaining[0];
        for &r in &remaining[1..] {
            if key(r).partial_cmp(&key(best)) == Some(std::cmp::Ordering::Greater) {
                best = r;
            }
        }
        chosen.push(best);
        remaining.retain(|&r| r != best);
    }
    chosen
}

/// Greedy suppression from a precomputed similarity matrix: rank by
/// (score desc, index asc); an item survives iff no higher-ranked survivor
/// is more similar than the threshold.
pub fn nms_oracle(scores: &[f64], sim: &[Vec<Option<f64>>], threshold: f64) -> Vec<usize> {
    let n = scores.len();
    let ranks_above = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let mut alive = vec![false; n];
    // Processing in rank order means every higher-ranked item is settled.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n - 1 - i {
            if ranks_above(order[j + 1], order[j]) {
                order.swap(j, j + 1);
            }
        }
    }
    for &i in &order {
        alive[i] = !(0..n).any(|k| alive[k] && ranks_above(k, i) && sim[k][i].is_some_and(|s| s > threshold));
    }
    (0..n).filter(|&i| alive[i]).collect()
}

/// OKS written the way the COCO evaluator does: variances `(2σ)²` and
/// per-keypoint exponent `d² / var / area / 2`.
pub fn oks_reference(gt: &[(f64, f64)], labeled: &[bool], area: f64, pred: &[(f64, f64)], sigmas: &[f64]) -> Option<f64> {
    let vars: Vec<f64> = sigmas.iter().map(|s| (s + s) * (s + s)).collect();
    let e: Vec<f64> = (0..gt.len())
        .filter(|&i| labeled[i])
        .map(|i| {
            let dx = pred[i].0 - gt[i].0;
            let dy = pred[i].1 - gt[i].1;
            (dx * dx + dy * dy) / vars[i] / area / 2.0
        })
        .collect();
    if e.is_empty() || area <= 0.0 {
        return None;
    }
    Some(e.iter().map(|v| (-v).exp()).sum::<f64>() / e.len() as f64)
}

/// Pixel-counting consistency: a point lies in the pixel that contains it.
pub fn pmc_reference(mask: &BinaryMask, pos: &[(f64, f64)], neg: &[(f64, f64)]) -> f64 {
    let inside = |&(x, y): &(f64, f64)| {
        let (px, py) = (x.floor(), y.floor());
        px >= 0.0
            && py >= 0.0
            && px < mask.width() as f64
            && py < mask.height() as f64
            && mask.bits()[py as usize * mask.width() as usize + px as usize]
    };
    let p = pos.iter().filter(|q| inside(q)).count() as f64 / pos.len() as f64;
    let n = if neg.is_empty() {
        1.0
    } else {
        neg.iter().filter(|q| !inside(q)).count() as f64 / neg.len() as f64
    };
    p + n
}

/// IoU of integer-aligned boxes by rasterizing both.
pub fn box_iou_by_pixels(a: &BBox, b: &BBox) -> f64 {
    let cells = |r: &BBox| -> std::collections::HashSet<(i64, i64)> {
        let mut s = std::collections::HashSet::new();
        for y in r.y as i64..(r.y + r.h) as i64 {
            for x in r.x as i64..(r.x + r.w) as i64 {
                s.insert((x, y));
            }
        }
        s
    };
    let (ca, cb) = (cells(a), cells(b));
    let inter = ca.intersection(&cb).count() as f64;
    let union = ca.union(&cb).count() as f64;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Column-major run lengths starting with a (possibly empty) run of zeros.
pub fn rle_counts_reference(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.bits()[y * w + x];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}
