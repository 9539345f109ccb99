use bmp_core::evaluation::{
    assign_bins, evaluate, gt_max_iou, render_text, stratified_evaluate, Bin, CocoAnnotation,
    CocoDataset, CocoImage, EvalError, EvalParams, ResultEntry, StratifiedReport, StratifiedRow,
    Task, DEFAULT_BINS,
};
use bmp_core::geometry::{bbox_iou, BBox};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    ap: f64,
    ap50: f64,
    ap75: f64,
    ar: f64,
}

#[derive(Deserialize)]
struct Reference {
    gt: CocoDataset,
    results: Vec<ResultEntry>,
    expected: std::collections::BTreeMap<String, Expected>,
}

#[test]
fn matches_pycocotools_reference() {
    let text = include_str!("fixtures/coco_reference.json");
    let r: Reference = serde_json::from_str(text).unwrap();
    r.gt.validate().unwrap();
    for (name, task) in [("bbox", Task::Bbox), ("segm", Task::Segm), ("keypoints", Task::Keypoints)] {
        let s = evaluate(&r.gt, &r.results, &EvalParams::new(task), &|_| false).unwrap();
        let e = &r.expected[name];
        for (got, want, what) in [(s.ap, e.ap, "AP"), (s.ap50, e.ap50, "AP50"), (s.ap75, e.ap75, "AP75"), (s.ar, e.ar, "AR")] {
            assert!((got - want).abs() < 1e-12, "{name} {what}: {got} vs {want}");
        }
    }
}

fn image(id: u64) -> CocoImage {
    CocoImage { id, file_name: format!("{id}.png"), width: 200, height: 200 }
}

fn ann(id: u64, image_id: u64, bbox: [f64; 4]) -> CocoAnnotation {
    CocoAnnotation {
        id,
        image_id,
        category_id: 1,
        bbox,
        area: bbox[2] * bbox[3],
        iscrowd: 0,
        segmentation: None,
        keypoints: None,
        num_keypoints: None,
    }
}

fn det(image_id: u64, bbox: [f64; 4], score: f64) -> ResultEntry {
    ResultEntry { image_id, category_id: 1, bbox: Some(bbox), score, segmentation: None, keypoints: None }
}

/// Five people in two images.
fn five() -> CocoDataset {
    CocoDataset {
        images: vec![image(1), image(2)],
        annotations: vec![
            ann(1, 1, [0.0, 0.0, 20.0, 40.0]),
            ann(2, 1, [50.0, 0.0, 20.0, 40.0]),
            ann(3, 1, [100.0, 0.0, 20.0, 40.0]),
            ann(4, 2, [0.0, 100.0, 30.0, 60.0]),
            ann(5, 2, [80.0, 100.0, 30.0, 60.0]),
        ],
        categories: vec![],
    }
}

#[test]
fn perfect_and_empty() {
    let gt = five();
    let perfect: Vec<ResultEntry> = gt.annotations.iter().map(|a| det(a.image_id, a.bbox, 0.9)).collect();
    let s = evaluate(&gt, &perfect, &EvalParams::new(Task::Bbox), &|_| false).unwrap();
    assert!((s.ap - 1.0).abs() < 1e-12);
    assert!((s.ar - 1.0).abs() < 1e-12);
    let s = evaluate(&gt, &[], &EvalParams::new(Task::Bbox), &|_| false).unwrap();
    assert_eq!(s.ap, 0.0);
    assert_eq!(s.ar, 0.0);
}

/// Brute-force oracle: at each threshold, walk detections by score and give
/// each the best free ground truth of its image; then take, for every recall
/// point, the best precision reached at that recall or beyond.
fn oracle_ap(gt: &CocoDataset, dets: &[ResultEntry]) -> f64 {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let n_gt = gt.annotations.len() as f64;
    let mut total = 0.0;
    for t in 0..10 {
        let thr = 0.5 + 0.05 * t as f64;
        let mut used = vec![false; gt.annotations.len()];
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0.0, 0.0);
        for &d in &order {
            let db = BBox::from_xywh(dets[d].bbox.unwrap());
            let best = gt
                .annotations
                .iter()
                .enumerate()
                .filter(|(g, a)| !used[*g] && a.image_id == dets[d].image_id)
                .map(|(g, a)| (g, bbox_iou(&db, &BBox::from_xywh(a.bbox))))
                .filter(|(_, iou)| *iou >= thr - 1e-9)
                .fold(None::<(usize, f64)>, |acc, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                });
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    tp += 1.0
                }
                None => fp += 1.0,
            }
            points.push((tp / n_gt, tp / (tp + fp)));
        }
        for r in 0..=100 {
            let r = r as f64 / 100.0;
            let p = points
                .iter()
                .filter(|(rc, _)| *rc >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            total += p;
        }
    }
    total / (10.0 * 101.0)
}

#[test]
fn hand_computed_pr_case() {
    // Detections by score: hit, hit, duplicate of the first, hit, hit; the
    // fifth person is missed. Precision after each: 1, 1, 2/3, 3/4, 4/5 at
    // recall .2 .4 .4 .6 .8, so interpolated precision is 1 up to recall .4,
    // .8 up to .8 and 0 beyond: (41 + 40 * 0.8) / 101 = 73/101.
    let gt = five();
    let dets = vec![
        det(1, [0.0, 0.0, 20.0, 40.0], 0.95),
        det(1, [50.0, 0.0, 20.0, 40.0], 0.9),
        det(1, [1.0, 0.0, 20.0, 40.0], 0.85),
        det(1, [100.0, 0.0, 20.0, 40.0], 0.8),
        det(2, [0.0, 100.0, 30.0, 60.0], 0.7),
    ];
    let s = evaluate(&gt, &dets, &EvalParams::new(Task::Bbox), &|_| false).unwrap();
    assert!((s.ap - 73.0 / 101.0).abs() < 1e-6, "{}", s.ap);
    assert!((oracle_ap(&gt, &dets) - 73.0 / 101.0).abs() < 1e-6);
    assert!((s.ar - 0.8).abs() < 1e-12);
}

#[test]
fn brute_force_oracle_on_jittered_detections() {
    let gt = five();
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..50 {
        let mut dets = Vec::new();
        for a in &gt.annotations {
            for _ in 0..(next() * 3.0) as usize {
                let b = a.bbox;
                dets.push(det(
                    a.image_id,
                    [b[0] + (next() - 0.5) * 8.0, b[1] + (next() - 0.5) * 8.0, b[2], b[3]],
                    (next() * 1000.0).round() / 1000.0 + dets.len() as f64 * 1e-6,
                ));
            }
        }
        let s = evaluate(&gt, &dets, &EvalParams::new(Task::Bbox), &|_| false).unwrap();
        let o = oracle_ap(&gt, &dets);
        assert!((s.ap - o).abs() < 1e-6, "{} vs {}", s.ap, o);
    }
}

#[test]
fn keypoints_equal_to_ground_truth_score_one() {
    let mut gt = five();
    for a in gt.annotations.iter_mut() {
        let kps: Vec<f64> = (0..17)
            .flat_map(|i| [a.bbox[0] + (i % 4) as f64 * 5.0, a.bbox[1] + i as f64 * 2.0, 2.0])
            .collect();
        a.num_keypoints = Some(17);
        a.keypoints = Some(kps);
    }
    let res: Vec<ResultEntry> = gt
        .annotations
        .iter()
        .map(|a| ResultEntry { keypoints: a.keypoints.clone(), ..det(a.image_id, a.bbox, 0.8) })
        .collect();
    let s = evaluate(&gt, &res, &EvalParams::new(Task::Keypoints), &|_| false).unwrap();
    assert!((s.ap - 1.0).abs() < 1e-12);

    let mut wrong = res.clone();
    wrong[0].keypoints.as_mut().unwrap().truncate(3 * 13);
    assert!(matches!(
        evaluate(&gt, &wrong, &EvalParams::new(Task::Keypoints), &|_| false),
        Err(EvalError::SkeletonMismatch { expected: 17, got: 13 })
    ));
}

#[test]
fn results_for_unknown_images_are_rejected() {
    let gt = five();
    assert!(evaluate(&gt, &[det(9, [0.0, 0.0, 1.0, 1.0], 1.0)], &EvalParams::new(Task::Bbox), &|_| false).is_err());
}

/// Six people in one image with hand-picked overlaps:
///   A [0,0,10,10] and B [0,0,10,10]: identical, IoU 1
///   C [50,0,10,10] and D [52,0,10,10]: IoU 80/120 = 0.667
///   E [100,0,10,10] and F [109,0,10,10]: IoU 10/190 = 0.053
fn six() -> CocoDataset {
    CocoDataset {
        images: vec![image(1)],
        annotations: vec![
            ann(1, 1, [0.0, 0.0, 10.0, 10.0]),
            ann(2, 1, [0.0, 0.0, 10.0, 10.0]),
            ann(3, 1, [50.0, 0.0, 10.0, 10.0]),
            ann(4, 1, [52.0, 0.0, 10.0, 10.0]),
            ann(5, 1, [100.0, 0.0, 10.0, 10.0]),
            ann(6, 1, [109.0, 0.0, 10.0, 10.0]),
        ],
        categories: vec![],
    }
}

#[test]
fn six_instance_bins_match_hand_computation() {
    let gt = six();
    let m = gt_max_iou(&gt);
    assert_eq!(m[&1], 1.0);
    assert!((m[&3] - 80.0 / 120.0).abs() < 1e-12);
    assert!((m[&5] - 10.0 / 190.0).abs() < 1e-12);
    let bins = assign_bins(&gt, &DEFAULT_BINS).unwrap();
    let got: Vec<usize> = (1..=6).map(|id| bins[&id]).collect();
    assert_eq!(got, vec![4, 4, 3, 3, 0, 0]);
}

#[test]
fn stratified_ap_ignores_other_bins() {
    let gt = six();
    // Only C and D are detected.
    let dets = vec![det(1, [50.0, 0.0, 10.0, 10.0], 0.9), det(1, [52.0, 0.0, 10.0, 10.0], 0.8)];
    let (overall, bins) = stratified_evaluate(&gt, &dets, &EvalParams::new(Task::Bbox), &DEFAULT_BINS).unwrap();
    assert!((overall.ar - 2.0 / 6.0).abs() < 1e-12);
    assert_eq!(bins.iter().map(|b| b.num_gt).sum::<usize>(), 6);
    assert!((bins[3].summary.ap - 1.0).abs() < 1e-12);
    assert_eq!(bins[0].summary.ap, 0.0);
    assert_eq!(bins[1].summary.ap, -1.0);

    // A detection on a person of another bin is neither right nor wrong.
    let mut extra = dets.clone();
    extra.push(det(1, [100.0, 0.0, 10.0, 10.0], 0.95));
    let (_, with_extra) = stratified_evaluate(&gt, &extra, &EvalParams::new(Task::Bbox), &DEFAULT_BINS).unwrap();
    assert_eq!(with_extra[3].summary.ap, bins[3].summary.ap);

    let bad = [Bin { lo: 0.0, hi: 0.5 }, Bin { lo: 0.4, hi: 1.0 }];
    assert!(stratified_evaluate(&gt, &dets, &EvalParams::new(Task::Bbox), &bad).is_err());
}

#[test]
fn report_has_one_column_per_bin() {
    let gt = six();
    let dets = vec![det(1, [50.0, 0.0, 10.0, 10.0], 0.9)];
    let (overall, bins) = stratified_evaluate(&gt, &dets, &EvalParams::new(Task::Bbox), &DEFAULT_BINS).unwrap();
    let report = StratifiedReport {
        task: Task::Bbox,
        bins: DEFAULT_BINS.to_vec(),
        bin_counts: bins.iter().map(|b| b.num_gt).collect(),
        rows: vec![StratifiedRow::new("run", &overall, &bins)],
    };
    let text = render_text(&report);
    let header = text.lines().nth(1).unwrap();
    for b in DEFAULT_BINS {
        assert!(header.contains(&b.label()));
    }
    assert_eq!(text, render_text(&report));
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<StratifiedReport>(&json).unwrap(), report);
}
