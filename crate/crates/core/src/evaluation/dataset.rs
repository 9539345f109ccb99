use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::Rle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Rle(Rle),
    Polygons(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    #[serde(default = "person")]
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_keypoints: Option<usize>,
}

fn person() -> u64 {
    1
}

impl CocoAnnotation {
    pub fn is_crowd(&self) -> bool {
        self.iscrowd != 0
    }

    /// Labeled keypoints: the stored count, or the count of `v > 0` flags.
    pub fn labeled_keypoints(&self) -> usize {
        self.num_keypoints.unwrap_or_else(|| {
            self.keypoints
                .as_ref()
                .map_or(0, |k| k.chunks(3).filter(|t| t.len() == 3 && t[2] > 0.0).count())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skeleton: Vec<[u32; 2]>,
}

/// Ground-truth annotation file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default)]
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

/// Deserializes with the JSON path and line of the first schema violation.
fn parse<T: for<'de> Deserialize<'de>>(reader: impl Read, path: &str) -> Result<T, EvalError> {
    let mut de = serde_json::Deserializer::from_reader(reader);
    serde_path_to_error::deserialize(&mut de).map_err(|e| EvalError::Schema {
        path: path.to_string(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

fn open(path: &Path) -> Result<BufReader<File>, EvalError> {
    File::open(path).map(BufReader::new).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl CocoDataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let ds: CocoDataset = parse(open(path)?, &path.display().to_string())?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let ds: CocoDataset = parse(text.as_bytes(), "<memory>")?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("plain data");
        std::fs::write(path, text).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut images = HashSet::new();
        for img in &self.images {
            if !images.insert(img.id) {
                return Err(EvalError::Invalid(format!("duplicate image id {}", img.id)));
            }
        }
        let mut ids = HashSet::new();
        for a in &self.annotations {
            if !ids.insert(a.id) {
                return Err(EvalError::Invalid(format!("duplicate annotation id {}", a.id)));
            }
            if !images.contains(&a.image_id) {
                return Err(EvalError::Invalid(format!(
                    "annotation {} refers to unknown image {}",
                    a.id, a.image_id
                )));
            }
            if let Some(k) = &a.keypoints {
                if k.len() % 3 != 0 {
                    return Err(EvalError::Invalid(format!(
                        "annotation {}: keypoints length {} is not a multiple of 3",
                        a.id,
                        k.len()
                    )));
                }
            }
            if a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
                return Err(EvalError::Invalid(format!("annotation {}: negative box size", a.id)));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }
}

/// One detection in the COCO results format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub image_id: u64,
    #[serde(default = "person")]
    pub category_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Rle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<f64>>,
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultEntry>, EvalError> {
    let path = path.as_ref();
    parse(open(path)?, &path.display().to_string())
}

pub fn save_results(path: impl AsRef<Path>, results: &[ResultEntry]) -> Result<(), EvalError> {
    let path = path.as_ref();
    let text = serde_json::to_string(results).expect("plain data");
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
