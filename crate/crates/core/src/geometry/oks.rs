use super::{GeometryError, Pose, SkeletonConfig};

/// Object keypoint similarity over the annotated keypoints of `gt`.
///
/// Each annotated keypoint contributes `exp(-d² / (2 · area · κ²))` with
/// `κ = 2σ`, the falloff used by the COCO keypoint evaluation.
pub fn oks_points(
    gt: &[(f64, f64)],
    annotated: &[bool],
    area: f64,
    pred: &[(f64, f64)],
    sigmas: &[f64],
) -> Result<f64, GeometryError> {
    let n = sigmas.len();
    for len in [gt.len(), annotated.len(), pred.len()] {
        if len != n {
            return Err(GeometryError::KeypointCount {
                expected: n,
                got: len,
            });
        }
    }
    if !(area > 0.0) {
        return Err(GeometryError::NonPositiveArea(area));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in (0..n).filter(|&i| annotated[i]) {
        let dx = pred[i].0 - gt[i].0;
        let dy = pred[i].1 - gt[i].1;
        let kappa = 2.0 * sigmas[i];
        sum += (-(dx * dx + dy * dy) / (2.0 * area * kappa * kappa)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(GeometryError::NoAnnotatedKeypoints);
    }
    Ok(sum / count as f64)
}

/// OKS of `pred` against `gt`, using `gt_visible` as the annotation flags.
pub fn oks(
    gt: &Pose,
    gt_visible: &[bool],
    gt_area: f64,
    pred: &Pose,
    skeleton: &SkeletonConfig,
) -> Result<f64, GeometryError> {
    skeleton.check_pose(gt)?;
    skeleton.check_pose(pred)?;
    let g: Vec<_> = gt.keypoints.iter().map(|k| k.position()).collect();
    let p: Vec<_> = pred.keypoints.iter().map(|k| k.position()).collect();
    oks_points(&g, gt_visible, gt_area, &p, &skeleton.oks_sigmas)
}
