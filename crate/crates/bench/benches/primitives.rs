use bmp_bench::{boxes, busy_mask, gradient_image, pose};
use bmp_core::geometry::{mask_iou, oks, Rle, SkeletonConfig};
use bmp_core::imaging::{crop_expand, mask_out, semi_transparent_blend};
use bmp_core::prompting::{select_positive_indices, PromptPolicy};
use bmp_core::suppression::{bbox_nms, pose_nms, PoseCandidate};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn masks(c: &mut Criterion) {
    let a = busy_mask(640, 480);
    let b = busy_mask(640, 480).complement();
    let rle = a.to_rle();
    let text = rle.to_compressed();
    c.bench_function("rle_encode_640x480", |bn| bn.iter(|| black_box(&a).to_rle()));
    c.bench_function("rle_compress_string", |bn| bn.iter(|| black_box(&rle).to_compressed()));
    c.bench_function("rle_decompress_string", |bn| {
        bn.iter(|| Rle::from_compressed(480, 640, black_box(&text)).unwrap())
    });
    c.bench_function("mask_iou_640x480", |bn| bn.iter(|| mask_iou(black_box(&a), black_box(&b)).unwrap()));
}

fn compositing(c: &mut Criterion) {
    let img = gradient_image(640, 480);
    let m = busy_mask(640, 480);
    c.bench_function("mask_out_640x480", |bn| bn.iter(|| mask_out(black_box(&img), &m).unwrap()));
    c.bench_function("blend_640x480", |bn| bn.iter(|| semi_transparent_blend(black_box(&img), &m, 0.8).unwrap()));
    let bbox = bmp_core::geometry::BBox::new(200.0, 100.0, 120.0, 260.0);
    c.bench_function("crop_expand", |bn| bn.iter(|| crop_expand(black_box(&img), &bbox, 0.25, 0.75).unwrap()));
}

fn selection(c: &mut Criterion) {
    let sk = SkeletonConfig::coco();
    let p = pose(10.0, 10.0);
    let policy = PromptPolicy::loop_default();
    c.bench_function("select_prompts", |bn| bn.iter(|| select_positive_indices(black_box(&p), &sk, &policy, None)));
    let q = pose(13.0, 11.0);
    let vis = vec![true; 17];
    c.bench_function("oks", |bn| bn.iter(|| oks(black_box(&p), &vis, 5000.0, &q, &sk).unwrap()));
}

fn suppression(c: &mut Criterion) {
    let bs = boxes(60);
    c.bench_function("bbox_nms_60", |bn| bn.iter(|| bbox_nms(black_box(&bs), 0.3)));
    let sk = SkeletonConfig::coco();
    let poses: Vec<_> = (0..30).map(|i| pose((i % 6) as f64 * 20.0, (i / 6) as f64 * 3.0)).collect();
    let cands: Vec<PoseCandidate<'_>> = poses.iter().map(|p| PoseCandidate { pose: Some(p), area: 4000.0 }).collect();
    c.bench_function("pose_nms_30", |bn| bn.iter(|| pose_nms(black_box(&cands), 0.9, &sk, 0.3)));
}

criterion_group!(benches, masks, compositing, selection, suppression);
criterion_main!(benches);
