use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{BBox, GeometryError, Rle};

/// Dense binary mask, row-major. Serialized as COCO RLE.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Mask from a row-major bit buffer.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(GeometryError::BufferLength {
                expected,
                got: bits.len(),
            });
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// Rasterizes a box. Pixel `(x, y)` spans `[x, x + 1) × [y, y + 1)` and is
    /// set when that square overlaps the box interior.
    pub fn from_bbox(width: u32, height: u32, bbox: &BBox) -> Self {
        BinaryMask::from_fn(width, height, |x, y| {
            let (x, y) = (x as f64, y as f64);
            x < bbox.right() && x + 1.0 > bbox.x && y < bbox.bottom() && y + 1.0 > bbox.y
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        if x < self.width && y < self.height {
            self.bits[(y * self.width + x) as usize] = value;
        }
    }

    /// Whether the pixel containing `(x, y)` is set; points off the grid are outside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (px, py) = (x.floor(), y.floor());
        if px < 0.0 || py < 0.0 {
            return false;
        }
        self.get(px as u32, py as u32)
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, GeometryError> {
        self.same_shape(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count() as u64)
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), GeometryError> {
        self.same_shape(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersect_with(&mut self, other: &BinaryMask) -> Result<(), GeometryError> {
        self.same_shape(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
        Ok(())
    }

    /// Removes every pixel set in `other`.
    pub fn subtract(&mut self, other: &BinaryMask) -> Result<(), GeometryError> {
        self.same_shape(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
        Ok(())
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Tight box around the set pixels, `None` when empty.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            let row = &self.bits[(y * self.width) as usize..((y + 1) * self.width) as usize];
            for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                let x = x as u32;
                any = true;
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        any.then(|| {
            BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 - x0 + 1) as f64,
                (y1 - y0 + 1) as f64,
            )
        })
    }

    /// Mean position of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            sx += (i as u32 % self.width) as f64;
            sy += (i as u32 / self.width) as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn to_rle(&self) -> Rle {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = self.bits[y * w + x];
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            height: self.height,
            width: self.width,
            counts,
        }
    }

    pub fn from_rle(rle: &Rle) -> Result<Self, GeometryError> {
        rle.check()?;
        let (w, h) = (rle.width as usize, rle.height as usize);
        let mut bits = vec![false; w * h];
        let mut idx = 0usize;
        let mut value = false;
        for &run in &rle.counts {
            if value {
                for k in idx..idx + run as usize {
                    let (x, y) = (k / h, k % h);
                    bits[y * w + x] = true;
                }
            }
            idx += run as usize;
            value = !value;
        }
        Ok(BinaryMask {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rle().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rle = Rle::deserialize(deserializer)?;
        BinaryMask::from_rle(&rle).map_err(serde::de::Error::custom)
    }
}

/// `|a ∩ b| / |a ∪ b|`, 0 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Union of equally sized masks; an empty list gives an all-zero mask of the
/// requested size.
pub fn mask_union(masks: &[BinaryMask], width: u32, height: u32) -> Result<BinaryMask, GeometryError> {
    let mut out = BinaryMask::empty(width, height);
    for m in masks {
        out.union_with(m)?;
    }
    Ok(out)
}
