//! COCO run-length encoding.
//!
//! Runs are taken over the column-major pixel order and the first run always
//! counts zeros, so an all-ones mask starts with a `0` run. The compressed
//! string form is the LEB128-like scheme of the COCO mask API, with counts
//! after the second stored as deltas against the run two positions back.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Uncompressed COCO run-length encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    /// Validates that the runs cover exactly `height * width` pixels.
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, GeometryError> {
        let rle = Rle {
            height,
            width,
            counts,
        };
        rle.check()?;
        Ok(rle)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.height as u64 * self.width as u64;
        if total != expected {
            return Err(GeometryError::RleLength {
                expected,
                got: total,
            });
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// Compressed COCO string form of the counts.
    pub fn to_compressed(&self) -> String {
        let mut out = String::new();
        for (i, &cnt) in self.counts.iter().enumerate() {
            let mut x = cnt as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut c = (x & 0x1f) as u8;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                out.push((c + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    /// Parses the compressed COCO string form.
    pub fn from_compressed(height: u32, width: u32, s: &str) -> Result<Self, GeometryError> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let mut x: i64 = 0;
            let mut shift = 0u32;
            loop {
                let b = *bytes.get(i).ok_or(GeometryError::RleString("truncated run"))?;
                if !(48..48 + 64).contains(&b) {
                    return Err(GeometryError::RleString("character outside the RLE alphabet"));
                }
                if shift > 55 {
                    return Err(GeometryError::RleString("run length overflow"));
                }
                let c = (b - 48) as i64;
                i += 1;
                x |= (c & 0x1f) << shift;
                shift += 5;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << shift;
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let run = u32::try_from(x).map_err(|_| GeometryError::RleString("negative run"))?;
            counts.push(run);
        }
        Rle::new(height, width, counts)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CountsRepr {
    Compressed(String),
    Runs(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
struct RleRepr {
    size: [u32; 2],
    counts: CountsRepr,
}

/// Serialized as the COCO `{"size": [h, w], "counts": "..."}` object with
/// compressed counts; both the string and the integer-list forms are accepted
/// on input.
impl Serialize for Rle {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RleRepr {
            size: [self.height, self.width],
            counts: CountsRepr::Compressed(self.to_compressed()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RleRepr::deserialize(deserializer)?;
        let [h, w] = repr.size;
        match repr.counts {
            CountsRepr::Compressed(s) => Rle::from_compressed(h, w, &s),
            CountsRepr::Runs(runs) => Rle::new(h, w, runs),
        }
        .map_err(de::Error::custom)
    }
}

/// Uncompressed JSON form `{"size": [h, w], "counts": [..]}`.
pub fn to_uncompressed_json(rle: &Rle) -> serde_json::Value {
    serde_json::json!({ "size": [rle.height, rle.width], "counts": rle.counts })
}
