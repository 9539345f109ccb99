//! Box AP split by how much each ground-truth person overlaps its most
//! overlapping neighbour in the same image.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ap::{evaluate, ApSummary, EvalParams};
use super::dataset::{CocoDataset, ResultEntry};
use super::EvalError;
use crate::geometry::{bbox_iou, BBox};

/// Half-open interval `[lo, hi)`; a bin ending at 1 also holds 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
}

impl Bin {
    pub fn contains(&self, v: f64) -> bool {
        (self.lo <= v && v < self.hi) || (self.hi == 1.0 && v == 1.0)
    }

    pub fn label(&self) -> String {
        format!("{:.1}-{:.1}", self.lo, self.hi)
    }
}

pub const DEFAULT_BINS: [Bin; 5] = [
    Bin { lo: 0.0, hi: 0.2 },
    Bin { lo: 0.2, hi: 0.4 },
    Bin { lo: 0.4, hi: 0.6 },
    Bin { lo: 0.6, hi: 0.8 },
    Bin { lo: 0.8, hi: 1.0 },
];

fn validate(bins: &[Bin]) -> Result<(), EvalError> {
    let err = |m: String| Err(EvalError::Bins(m));
    let (Some(first), Some(last)) = (bins.first(), bins.last()) else {
        return err("no bins".into());
    };
    if first.lo != 0.0 || last.hi != 1.0 {
        return err(format!("bins span [{}, {}]", first.lo, last.hi));
    }
    for b in bins {
        if !(b.lo < b.hi) {
            return err(format!("empty bin {}", b.label()));
        }
    }
    for w in bins.windows(2) {
        if w[0].hi > w[1].lo {
            return err(format!("{} overlaps {}", w[0].label(), w[1].label()));
        }
        if w[0].hi < w[1].lo {
            return err(format!("gap between {} and {}", w[0].label(), w[1].label()));
        }
    }
    Ok(())
}

/// Highest box IoU of each non-crowd annotation with any other non-crowd
/// annotation of the same image, keyed by annotation id. A person alone in
/// its image gets 0.
pub fn gt_max_iou(gt: &CocoDataset) -> BTreeMap<u64, f64> {
    let mut by_image: BTreeMap<u64, Vec<(u64, BBox)>> = BTreeMap::new();
    for a in gt.annotations.iter().filter(|a| !a.is_crowd()) {
        by_image.entry(a.image_id).or_default().push((a.id, BBox::from_xywh(a.bbox)));
    }
    let mut out = BTreeMap::new();
    for anns in by_image.values() {
        for (i, (id, b)) in anns.iter().enumerate() {
            let m = anns
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (_, o))| bbox_iou(b, o))
                .fold(0.0, f64::max);
            out.insert(*id, m);
        }
    }
    out
}

/// Bin index of every non-crowd annotation.
pub fn assign_bins(gt: &CocoDataset, bins: &[Bin]) -> Result<BTreeMap<u64, usize>, EvalError> {
    validate(bins)?;
    Ok(gt_max_iou(gt)
        .into_iter()
        .map(|(id, v)| {
            let b = bins.iter().position(|b| b.contains(v)).expect("bins cover [0, 1]");
            (id, b)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub bin: Bin,
    pub num_gt: usize,
    pub summary: ApSummary,
}

/// Overall AP plus AP per bin. Within a bin, ground truth from other bins is
/// treated like a crowd region: detections matching it count neither way.
pub fn stratified_evaluate(
    gt: &CocoDataset,
    results: &[ResultEntry],
    params: &EvalParams,
    bins: &[Bin],
) -> Result<(ApSummary, Vec<BinResult>), EvalError> {
    let assignment = assign_bins(gt, bins)?;
    let overall = evaluate(gt, results, params, &|_| false)?;
    let mut out = Vec::with_capacity(bins.len());
    for (b, bin) in bins.iter().enumerate() {
        let in_bin = |id: u64| assignment.get(&id) == Some(&b);
        let summary = evaluate(gt, results, params, &|a| !in_bin(a.id))?;
        out.push(BinResult {
            bin: *bin,
            num_gt: assignment.values().filter(|&&v| v == b).count(),
            summary,
        });
    }
    Ok((overall, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{CocoAnnotation, CocoImage};

    fn ds(images: &[&[[f64; 4]]]) -> CocoDataset {
        let mut d = CocoDataset::default();
        let mut id = 1;
        for (i, boxes) in images.iter().enumerate() {
            d.images.push(CocoImage {
                id: i as u64 + 1,
                file_name: String::new(),
                width: 200,
                height: 200,
            });
            for b in boxes.iter() {
                d.annotations.push(CocoAnnotation {
                    id,
                    image_id: i as u64 + 1,
                    category_id: 1,
                    bbox: *b,
                    area: b[2] * b[3],
                    iscrowd: 0,
                    segmentation: None,
                    keypoints: None,
                    num_keypoints: None,
                });
                id += 1;
            }
        }
        d
    }

    #[test]
    fn single_people_land_in_first_bin() {
        let d = ds(&[&[[0.0, 0.0, 10.0, 10.0]], &[[5.0, 5.0, 10.0, 10.0]]]);
        let a = assign_bins(&d, &DEFAULT_BINS).unwrap();
        assert!(a.values().all(|&b| b == 0));
    }

    #[test]
    fn identical_boxes_land_in_last_bin() {
        let d = ds(&[&[[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]]]);
        let a = assign_bins(&d, &DEFAULT_BINS).unwrap();
        assert_eq!(a.values().copied().collect::<Vec<_>>(), vec![4, 4]);
    }

    #[test]
    fn overlapping_bins_rejected() {
        let d = ds(&[]);
        let bins = [Bin { lo: 0.0, hi: 0.6 }, Bin { lo: 0.5, hi: 1.0 }];
        assert!(matches!(assign_bins(&d, &bins), Err(EvalError::Bins(_))));
        let gap = [Bin { lo: 0.0, hi: 0.4 }, Bin { lo: 0.5, hi: 1.0 }];
        assert!(assign_bins(&d, &gap).is_err());
    }
}
