mod common;

use bmp_core::consistency::{mask_gate, pose_mask_consistency, GateDecision};
use bmp_core::geometry::{bbox_iou, mask_iou, mask_union, oks_points, BBox, BinaryMask, Keypoint, Pose, Rle, SkeletonConfig};
use bmp_core::imaging::{mask_out, semi_transparent_blend, Image};
use bmp_core::prompting::{select_positive_indices, PromptPolicy, SelectionMode};
use bmp_core::suppression::{bbox_nms, pose_nms, prediction_oks, PoseCandidate};
use common::*;
use proptest::prelude::*;

fn mask_strategy(w: u32, h: u32) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), (w * h) as usize)
        .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
}

fn sized_mask() -> impl Strategy<Value = BinaryMask> {
    (1u32..24, 1u32..24).prop_flat_map(|(w, h)| mask_strategy(w, h))
}

fn image_and_masks(n: usize) -> impl Strategy<Value = (Image, Vec<BinaryMask>)> {
    (1u32..16, 1u32..16).prop_flat_map(move |(w, h)| {
        (
            proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |d| Image::new(w, h, d).unwrap()),
            proptest::collection::vec(mask_strategy(w, h), n),
        )
    })
}

fn int_box() -> impl Strategy<Value = BBox> {
    (0i32..30, 0i32..30, 1i32..20, 1i32..20).prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
}

/// Pose on a coarse grid with a few confidence levels, so ties happen.
fn grid_pose() -> impl Strategy<Value = Pose> {
    proptest::collection::vec((0u8..12, 0u8..12, 0u8..10), 17).prop_map(|v| {
        Pose::new(
            "coco",
            v.into_iter()
                .map(|(x, y, c)| Keypoint::new(x as f64 * 4.0, y as f64 * 4.0, c as f64 / 10.0 + 0.05))
                .collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rle_round_trip(m in sized_mask()) {
        let rle = m.to_rle();
        prop_assert_eq!(&rle.counts, &rle_counts_reference(&m));
        prop_assert_eq!(rle.area(), m.area());
        prop_assert_eq!(BinaryMask::from_rle(&rle).unwrap(), m.clone());
        let s = rle.to_compressed();
        let back = Rle::from_compressed(rle.height, rle.width, &s).unwrap();
        prop_assert_eq!(back, rle);
    }

    #[test]
    fn union_laws((_, ms) in image_and_masks(3)) {
        let (w, h) = (ms[0].width(), ms[0].height());
        let u = |v: &[BinaryMask]| mask_union(v, w, h).unwrap();
        let ab = u(&[ms[0].clone(), ms[1].clone()]);
        prop_assert_eq!(&ab, &u(&[ms[1].clone(), ms[0].clone()]));
        prop_assert_eq!(u(&[ab.clone(), ms[2].clone()]), u(&[ms[0].clone(), u(&[ms[1].clone(), ms[2].clone()])]));
        prop_assert_eq!(&u(&[ms[0].clone(), ms[0].clone()]), &ms[0]);
        prop_assert!(ab.area() <= ms[0].area() + ms[1].area());
    }

    #[test]
    fn mask_iou_symmetric_and_bounded((_, ms) in image_and_masks(2)) {
        let a = mask_iou(&ms[0], &ms[1]).unwrap();
        prop_assert_eq!(a, mask_iou(&ms[1], &ms[0]).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        if !ms[0].is_empty() {
            prop_assert_eq!(mask_iou(&ms[0], &ms[0]).unwrap(), 1.0);
        }
        if a == 1.0 {
            prop_assert_eq!(&ms[0], &ms[1]);
        }
    }

    #[test]
    fn bbox_iou_matches_pixel_count(a in int_box(), b in int_box()) {
        let v = bbox_iou(&a, &b);
        prop_assert_eq!(v, bbox_iou(&b, &a));
        prop_assert!((v - box_iou_by_pixels(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(bbox_iou(&a, &a), 1.0);
    }

    #[test]
    fn mask_out_idempotent_and_splits((img, ms) in image_and_masks(2)) {
        let once = mask_out(&img, &ms[0]).unwrap();
        prop_assert_eq!(&mask_out(&once, &ms[0]).unwrap(), &once);
        let u = mask_union(&ms, img.width(), img.height()).unwrap();
        let two = mask_out(&once, &ms[1]).unwrap();
        prop_assert_eq!(&mask_out(&img, &u).unwrap(), &two);
        // Black pixels never disappear.
        for (a, b) in once.pixels().zip(two.pixels()) {
            prop_assert!(a != [0, 0, 0] || b == [0, 0, 0]);
        }
    }

    #[test]
    fn blend_keeps_in_mask_pixels((img, ms) in image_and_masks(1), alpha in 0.0f64..=1.0) {
        let out = semi_transparent_blend(&img, &ms[0], alpha).unwrap();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if ms[0].get(x, y) {
                    prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
                } else {
                    for (o, i) in out.pixel(x, y).iter().zip(img.pixel(x, y)) {
                        prop_assert!(*o <= i);
                    }
                }
            }
        }
    }

    #[test]
    fn prompt_selection_matches_oracle(pose in grid_pose(), t_c in 0.0f64..1.0, n_max in 1usize..10, cap in any::<bool>()) {
        let sk = SkeletonConfig::coco();
        let policy = PromptPolicy { t_c, n_max, facial_cap: cap, ..PromptPolicy::loop_default() };
        let got = select_positive_indices(&pose, &sk, &policy, None);
        prop_assert_eq!(&got, &select_oracle(&pose, &sk.facial_indices, t_c, n_max, cap));
        let bigger = select_positive_indices(&pose, &sk, &policy.with_n_max(n_max + 1), None);
        prop_assert_eq!(&bigger[..got.len()], &got[..]);
        if cap {
            prop_assert!(got.iter().filter(|&&i| sk.is_facial(i)).count() <= 1);
        }
    }

    #[test]
    fn other_selection_modes_are_prefix_monotone(pose in grid_pose(), n_max in 1usize..10, conf_only in any::<bool>()) {
        let sk = SkeletonConfig::coco();
        let mode = if conf_only { SelectionMode::ConfidenceOnly } else { SelectionMode::DistanceOnly };
        let policy = PromptPolicy { n_max, selection_mode: mode, ..PromptPolicy::loop_default() };
        let a = select_positive_indices(&pose, &sk, &policy, None);
        let b = select_positive_indices(&pose, &sk, &policy.with_n_max(n_max + 1), None);
        prop_assert_eq!(&b[..a.len()], &a[..]);
    }

    #[test]
    fn bbox_nms_matches_oracle(boxes in proptest::collection::vec((int_box(), 0u8..5), 0..15), thr in 0.0f64..1.0) {
        let boxes: Vec<BBox> = boxes.into_iter().map(|(b, s)| b.with_score(s as f64 / 4.0)).collect();
        let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
        let sim: Vec<Vec<Option<f64>>> = boxes.iter().map(|a| boxes.iter().map(|b| Some(box_iou_by_pixels(a, b))).collect()).collect();
        prop_assert_eq!(bbox_nms(&boxes, thr), nms_oracle(&scores, &sim, thr));
        prop_assert_eq!(bbox_nms(&boxes, 1.0).len(), boxes.len());
    }

    #[test]
    fn bbox_nms_permutation_invariant(boxes in proptest::collection::vec(int_box(), 1..15), seed in any::<u64>()) {
        // Distinct scores: with equal scores the index tie-break is order dependent by design.
        let boxes: Vec<BBox> = boxes.into_iter().enumerate().map(|(i, b)| b.with_score(1.0 - i as f64 / 32.0)).collect();
        let mut perm: Vec<usize> = (0..boxes.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<BBox> = perm.iter().map(|&p| boxes[p]).collect();
        let mut a: Vec<usize> = bbox_nms(&shuffled, 0.3).into_iter().map(|i| perm[i]).collect();
        a.sort_unstable();
        prop_assert_eq!(a, bbox_nms(&boxes, 0.3));
    }

    #[test]
    fn pose_nms_matches_oracle(poses in proptest::collection::vec((grid_pose(), 50u32..400), 0..10), thr in 0.0f64..1.0) {
        let sk = SkeletonConfig::coco();
        let t_c = 0.3;
        let cands: Vec<PoseCandidate<'_>> = poses.iter().map(|(p, a)| PoseCandidate { pose: Some(p), area: *a as f64 }).collect();
        let scores: Vec<f64> = poses.iter().map(|(p, _)| {
            let c: Vec<f64> = p.keypoints.iter().map(|k| k.confidence).filter(|&c| c >= t_c).collect();
            if c.is_empty() { 0.0 } else { c.iter().sum::<f64>() / c.len() as f64 }
        }).collect();
        let sim: Vec<Vec<Option<f64>>> = poses.iter().map(|(a, aa)| poses.iter().map(|(b, ba)| {
            let g: Vec<_> = a.keypoints.iter().map(|k| (k.x, k.y)).collect();
            let p: Vec<_> = b.keypoints.iter().map(|k| (k.x, k.y)).collect();
            let lab: Vec<bool> = a.keypoints.iter().map(|k| k.confidence >= t_c).collect();
            oks_reference(&g, &lab, (*aa as f64 * *ba as f64).sqrt(), &p, &sk.oks_sigmas)
        }).collect()).collect();
        for (i, row) in sim.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let lib = prediction_oks(&cands[i], &cands[j], &sk, t_c);
                prop_assert_eq!(v.is_some(), lib.is_some());
                if let (Some(x), Some(y)) = (v, lib) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
        prop_assert_eq!(pose_nms(&cands, thr, &sk, t_c), nms_oracle(&scores, &sim, thr));
    }

    #[test]
    fn oks_identity_scale_and_reference(pose in grid_pose(), shift in proptest::collection::vec((-6.0f64..6.0, -6.0f64..6.0), 17), area in 10.0f64..5000.0, c in 0.1f64..10.0) {
        let sk = SkeletonConfig::coco();
        let g: Vec<(f64, f64)> = pose.keypoints.iter().map(|k| (k.x, k.y)).collect();
        let p: Vec<(f64, f64)> = g.iter().zip(&shift).map(|(a, d)| (a.0 + d.0, a.1 + d.1)).collect();
        let lab: Vec<bool> = pose.keypoints.iter().map(|k| k.confidence >= 0.3).collect();
        prop_assume!(lab.iter().any(|&l| l));
        prop_assert_eq!(oks_points(&g, &lab, area, &g, &sk.oks_sigmas).unwrap(), 1.0);
        let v = oks_points(&g, &lab, area, &p, &sk.oks_sigmas).unwrap();
        prop_assert!((v - oks_reference(&g, &lab, area, &p, &sk.oks_sigmas).unwrap()).abs() < 1e-9);
        let sc = |v: &[(f64, f64)]| v.iter().map(|q| (q.0 * c, q.1 * c)).collect::<Vec<_>>();
        let scaled = oks_points(&sc(&g), &lab, area * c * c, &sc(&p), &sk.oks_sigmas).unwrap();
        prop_assert!((v - scaled).abs() < 1e-9);
        // Moving one keypoint farther along its offset never raises OKS.
        let mut far = p.clone();
        far[0] = (g[0].0 + 2.0 * shift[0].0, g[0].1 + 2.0 * shift[0].1);
        prop_assert!(oks_points(&g, &lab, area, &far, &sk.oks_sigmas).unwrap() <= v + 1e-15);
    }

    #[test]
    fn gate_contract((_, ms) in image_and_masks(2), pts in proptest::collection::vec((0.0f64..16.0, 0.0f64..16.0, any::<bool>()), 1..12)) {
        let pos: Vec<(f64, f64)> = pts.iter().filter(|p| p.2).map(|p| (p.0, p.1)).collect();
        let neg: Vec<(f64, f64)> = pts.iter().filter(|p| !p.2).map(|p| (p.0, p.1)).collect();
        prop_assume!(!pos.is_empty());
        let out = mask_gate(&ms[0], &ms[1], &pos, &neg).unwrap();
        let (before, after) = (pmc_reference(&ms[0], &pos, &neg), pmc_reference(&ms[1], &pos, &neg));
        prop_assert_eq!(out.original.pmc, before);
        prop_assert_eq!(out.refined.pmc, after);
        prop_assert!(pmc_reference(&out.mask, &pos, &neg) >= before);
        prop_assert_eq!(out.decision == GateDecision::KeptRefined, after >= before);
    }

    #[test]
    fn pmc_only_sees_prompt_pixels((_, ms) in image_and_masks(1), pts in proptest::collection::vec((0.0f64..16.0, 0.0f64..16.0, any::<bool>()), 1..8), x in 0u32..16, y in 0u32..16) {
        let m = &ms[0];
        prop_assume!(x < m.width() && y < m.height());
        let pos: Vec<(f64, f64)> = pts.iter().filter(|p| p.2).map(|p| (p.0, p.1)).collect();
        let neg: Vec<(f64, f64)> = pts.iter().filter(|p| !p.2).map(|p| (p.0, p.1)).collect();
        prop_assume!(!pos.is_empty());
        let base = pose_mask_consistency(m, &pos, &neg).unwrap().pmc;
        let mut set = m.clone();
        set.set(x, y, true);
        let on_point = |v: &[(f64, f64)]| v.iter().any(|p| p.0.floor() as u32 == x && p.1.floor() as u32 == y);
        let after = pose_mask_consistency(&set, &pos, &neg).unwrap().pmc;
        if !on_point(&pos) && !on_point(&neg) {
            prop_assert_eq!(after, base);
        }
        if on_point(&pos) && !on_point(&neg) {
            prop_assert!(after >= base);
        }
        if on_point(&neg) && !on_point(&pos) {
            prop_assert!(after <= base);
        }
    }
}
