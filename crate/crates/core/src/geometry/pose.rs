use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Ordered keypoints of one person under a named skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub skeleton: String,
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(skeleton: impl Into<String>, keypoints: Vec<Keypoint>) -> Self {
        Pose {
            skeleton: skeleton.into(),
            keypoints,
        }
    }

    /// COCO `[x, y, score, ...]` triplets.
    pub fn to_triplets(&self) -> Vec<f64> {
        self.keypoints
            .iter()
            .flat_map(|k| [k.x, k.y, k.confidence])
            .collect()
    }

    pub fn from_triplets(skeleton: impl Into<String>, flat: &[f64]) -> Result<Self, GeometryError> {
        if flat.len() % 3 != 0 {
            return Err(GeometryError::KeypointCount {
                expected: flat.len().div_ceil(3) * 3,
                got: flat.len(),
            });
        }
        Ok(Pose::new(
            skeleton,
            flat.chunks_exact(3)
                .map(|c| Keypoint::new(c[0], c[1], c[2]))
                .collect(),
        ))
    }

    /// Mean confidence of the keypoints at or above `threshold`, 0 when none qualify.
    pub fn score(&self, threshold: f64) -> f64 {
        let confident: Vec<f64> = self
            .keypoints
            .iter()
            .map(|k| k.confidence)
            .filter(|&c| c >= threshold)
            .collect();
        if confident.is_empty() {
            0.0
        } else {
            confident.iter().sum::<f64>() / confident.len() as f64
        }
    }
}

pub const COCO_KEYPOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Per-keypoint OKS sigmas of the COCO person skeleton.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// Sigma used for keypoints without a COCO constant.
pub const DEFAULT_EXTRA_SIGMA: f64 = 0.079;

/// Keypoint layout, facial subset and OKS constants of one skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub name: String,
    pub keypoint_names: Vec<String>,
    pub facial_indices: Vec<usize>,
    pub oks_sigmas: Vec<f64>,
}

impl SkeletonConfig {
    pub fn new(
        name: impl Into<String>,
        keypoint_names: Vec<String>,
        facial_indices: Vec<usize>,
        oks_sigmas: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        let cfg = SkeletonConfig {
            name: name.into(),
            keypoint_names,
            facial_indices,
            oks_sigmas,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.keypoint_names.len();
        if self.oks_sigmas.len() != n {
            return Err(GeometryError::InvalidSkeleton(format!(
                "{}: {} sigmas for {} keypoints",
                self.name,
                self.oks_sigmas.len(),
                n
            )));
        }
        if let Some(s) = self.oks_sigmas.iter().find(|s| !(**s > 0.0)) {
            return Err(GeometryError::InvalidSkeleton(format!(
                "{}: sigma {s} is not positive",
                self.name
            )));
        }
        if let Some(i) = self.facial_indices.iter().find(|&&i| i >= n) {
            return Err(GeometryError::InvalidSkeleton(format!(
                "{}: facial index {i} out of range",
                self.name
            )));
        }
        Ok(())
    }

    /// The 17-keypoint COCO person skeleton; nose and eyes form the facial set.
    pub fn coco() -> Self {
        SkeletonConfig {
            name: "coco".into(),
            keypoint_names: COCO_KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            facial_indices: vec![0, 1, 2],
            oks_sigmas: COCO_SIGMAS.to_vec(),
        }
    }

    /// COCO keypoints followed by five auxiliary keypoints from the AIC/MPII
    /// union. The auxiliary names are placeholders; load a custom skeleton to
    /// label them.
    pub fn merged22() -> Self {
        let mut cfg = SkeletonConfig::coco();
        cfg.name = "merged22".into();
        for i in 0..5 {
            cfg.keypoint_names.push(format!("aux_{i}"));
            cfg.oks_sigmas.push(DEFAULT_EXTRA_SIGMA);
        }
        cfg
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn is_facial(&self, index: usize) -> bool {
        self.facial_indices.contains(&index)
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<(), GeometryError> {
        if pose.keypoints.len() != self.keypoint_count() {
            return Err(GeometryError::KeypointCount {
                expected: self.keypoint_count(),
                got: pose.keypoints.len(),
            });
        }
        Ok(())
    }
}

/// Named skeletons known to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRegistry {
    skeletons: Vec<SkeletonConfig>,
}

impl Default for SkeletonRegistry {
    fn default() -> Self {
        SkeletonRegistry {
            skeletons: vec![SkeletonConfig::coco(), SkeletonConfig::merged22()],
        }
    }
}

impl SkeletonRegistry {
    /// Adds or replaces a skeleton by name.
    pub fn insert(&mut self, cfg: SkeletonConfig) -> Result<(), GeometryError> {
        cfg.validate()?;
        match self.skeletons.iter_mut().find(|s| s.name == cfg.name) {
            Some(slot) => *slot = cfg,
            None => self.skeletons.push(cfg),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&SkeletonConfig, GeometryError> {
        self.skeletons
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| GeometryError::UnknownSkeleton(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.skeletons.iter().map(|s| s.name.clone()).collect()
    }
}
