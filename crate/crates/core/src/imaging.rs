//! RGB images and the two compositing rules used to condition the models:
//! hard mask-out before re-detection and semi-transparent background
//! darkening before pose estimation.

use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BinaryMask};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image is {image:?} but mask is {mask:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("box {0:?} does not intersect the image")]
    BoxOutsideImage([f64; 4]),
    #[error("invalid crop parameters: {0}")]
    CropParameters(String),
    #[error("codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("base64 error: {0}")]
    Base64(#[from] base64::DecodeError),
}

/// 8-bit RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    fn check_mask(&self, mask: &BinaryMask) -> Result<(), ImageError> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(ImageError::DimensionMismatch {
                image: (self.width, self.height),
                mask: (mask.width(), mask.height()),
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w, h, rgb.into_raw())
    }

    /// Writes PNG or JPEG depending on the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        self.to_buffer().save(path)?;
        Ok(())
    }

    fn to_buffer(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_buffer().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_encoded_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let rgb = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w, h, rgb.into_raw())
    }

    /// Base64 of the PNG encoding, the inline form used on the wire.
    pub fn to_base64_png(&self) -> Result<String, ImageError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.to_png_bytes()?))
    }

    pub fn from_base64(s: &str) -> Result<Self, ImageError> {
        let bytes = base64::engine::general_purpose::STANDARD.decode(s)?;
        Image::from_encoded_bytes(&bytes)
    }
}

/// Sets every pixel under `union_mask` to black.
pub fn mask_out(image: &Image, union_mask: &BinaryMask) -> Result<Image, ImageError> {
    image.check_mask(union_mask)?;
    let mut out = image.clone();
    for (px, _) in out
        .data
        .chunks_exact_mut(3)
        .zip(union_mask.bits())
        .filter(|(_, &m)| m)
    {
        px.fill(0);
    }
    Ok(out)
}

/// `α·I + (1 − α)·(I ⊙ M)`: pixels inside the mask are kept, the rest are
/// scaled by `alpha` and rounded half-up.
pub fn semi_transparent_blend(
    image: &Image,
    instance_mask: &BinaryMask,
    alpha: f64,
) -> Result<Image, ImageError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ImageError::AlphaOutOfRange(alpha));
    }
    image.check_mask(instance_mask)?;
    let lut: Vec<u8> = (0..=255u32)
        .map(|v| (alpha * v as f64 + 0.5).floor().min(255.0) as u8)
        .collect();
    let mut out = image.clone();
    for (px, _) in out
        .data
        .chunks_exact_mut(3)
        .zip(instance_mask.bits())
        .filter(|(_, &m)| !m)
    {
        for c in px {
            *c = lut[*c as usize];
        }
    }
    Ok(out)
}

/// Placement of a crop inside the full image: crop pixel `(u, v)` is image
/// pixel `(u + x0, v + y0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropTransform {
    pub x0: i64,
    pub y0: i64,
    pub width: u32,
    pub height: u32,
}

impl CropTransform {
    pub fn identity(width: u32, height: u32) -> Self {
        CropTransform {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }

    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        (u + self.x0 as f64, v + self.y0 as f64)
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.x0 as f64, y - self.y0 as f64)
    }

    /// Whether image point `(x, y)` falls on a crop pixel.
    pub fn contains_image_point(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.to_crop(x, y);
        let (u, v) = (u.floor(), v.floor());
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn bbox_to_crop(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_crop(b.x, b.y);
        BBox { x, y, ..*b }
    }
}

/// Crop centered on `bbox`, enlarged by `padding_ratio` and snapped to the
/// `target_aspect` (width / height) by growing the short side. Regions past
/// the image border are zero-filled.
pub fn crop_expand(
    image: &Image,
    bbox: &BBox,
    padding_ratio: f64,
    target_aspect: f64,
) -> Result<(Image, CropTransform), ImageError> {
    if !(padding_ratio >= 0.0) || !(target_aspect > 0.0) {
        return Err(ImageError::CropParameters(format!(
            "padding {padding_ratio}, aspect {target_aspect}"
        )));
    }
    let visible = bbox.intersection_area(&BBox::new(
        0.0,
        0.0,
        image.width as f64,
        image.height as f64,
    ));
    let touches = bbox.x < image.width as f64
        && bbox.y < image.height as f64
        && bbox.right() > 0.0
        && bbox.bottom() > 0.0;
    if visible <= 0.0 && !touches {
        return Err(ImageError::BoxOutsideImage(bbox.xywh()));
    }
    let (cx, cy) = bbox.center();
    let mut w = bbox.w.max(1.0) * (1.0 + padding_ratio);
    let mut h = bbox.h.max(1.0) * (1.0 + padding_ratio);
    if w / h < target_aspect {
        w = h * target_aspect;
    } else {
        h = w / target_aspect;
    }
    let width = (w.round() as u32).max(1);
    let height = (h.round() as u32).max(1);
    let x0 = (cx - width as f64 / 2.0 + 0.5).floor() as i64;
    let y0 = (cy - height as f64 / 2.0 + 0.5).floor() as i64;
    let transform = CropTransform {
        x0,
        y0,
        width,
        height,
    };
    let mut data = vec![0u8; width as usize * height as usize * 3];
    for v in 0..height as i64 {
        let y = y0 + v;
        if y < 0 || y >= image.height as i64 {
            continue;
        }
        let u_start = (-x0).clamp(0, width as i64);
        let u_end = (image.width as i64 - x0).clamp(0, width as i64);
        if u_start >= u_end {
            continue;
        }
        let src = (y as usize * image.width as usize + (x0 + u_start) as usize) * 3;
        let dst = (v as usize * width as usize + u_start as usize) * 3;
        let len = (u_end - u_start) as usize * 3;
        data[dst..dst + len].copy_from_slice(&image.data[src..src + len]);
    }
    Ok((
        Image {
            width,
            height,
            data,
        },
        transform,
    ))
}
