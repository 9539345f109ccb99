//! Fixtures shared by the benchmarks in `benches/`.

use bmp_core::geometry::{BBox, BinaryMask, Keypoint, Pose};
use bmp_core::imaging::Image;

/// A blobby mask with many runs, sized like a typical crowd photo crop.
pub fn busy_mask(width: u32, height: u32) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64 / 9.0, y as f64 / 13.0);
        (fx.sin() + fy.cos() + (fx * fy / 40.0).sin()) > 0.4
    })
}

pub fn gradient_image(width: u32, height: u32) -> Image {
    let data = (0..height)
        .flat_map(|y| (0..width).flat_map(move |x| [(x % 256) as u8, (y % 256) as u8, ((x ^ y) % 256) as u8]))
        .collect();
    Image::new(width, height, data).expect("sized buffer")
}

/// A 17-keypoint pose offset by `(dx, dy)` with varied confidences.
pub fn pose(dx: f64, dy: f64) -> Pose {
    Pose::new(
        "coco",
        (0..17)
            .map(|i| {
                let c = 0.2 + ((i * 7) % 10) as f64 / 12.0;
                Keypoint::new(dx + (i % 4) as f64 * 11.0, dy + i as f64 * 9.0, c)
            })
            .collect(),
    )
}

/// `n` boxes on a jittered grid with overlapping neighbours.
pub fn boxes(n: usize) -> Vec<BBox> {
    (0..n)
        .map(|i| {
            let (x, y) = ((i % 10) as f64 * 18.0, (i / 10) as f64 * 30.0);
            BBox::new(x + (i % 3) as f64, y, 30.0, 60.0).with_score(1.0 - i as f64 / (2 * n) as f64)
        })
        .collect()
}
