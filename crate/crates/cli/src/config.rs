//! Run configuration: a TOML file whose every key has a command-line flag,
//! flags winning over the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use bmp_core::backends::{process::DEFAULT_TIMEOUT, ProcessEndpoint, SceneLibrary, SyntheticBackend};
use bmp_core::backends::{BackendSet, Endpoint};
use bmp_core::engine::BmpConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Image directory, or a text file listing one image path per line.
    pub images: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// COCO file whose `images` map file names to ids.
    pub gt: Option<PathBuf>,
    pub backends: BackendConfig,
    pub engine: BmpConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub detector: Option<String>,
    pub pose: Option<String>,
    pub segmenter: Option<String>,
    pub timeout_secs: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn timeout(&self) -> Result<Duration> {
        match self.backends.timeout_secs {
            None => Ok(DEFAULT_TIMEOUT),
            Some(s) if s > 0.0 && s.is_finite() => Ok(Duration::from_secs_f64(s)),
            Some(s) => bail!("timeout_secs {s} must be positive"),
        }
    }
}

/// Where one role's model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    /// In-process synthetic backend over a scene file; `masks` off gives a
    /// box-only detector.
    Synthetic { scenes: PathBuf, masks: bool },
    /// Child process started from a command line.
    Process(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.is_empty() {
            bail!("empty backend specification");
        }
        Ok(if let Some(p) = spec.strip_prefix("synthetic:") {
            BackendSpec::Synthetic { scenes: PathBuf::from(p), masks: true }
        } else if let Some(p) = spec.strip_prefix("synthetic-bbox:") {
            BackendSpec::Synthetic { scenes: PathBuf::from(p), masks: false }
        } else {
            BackendSpec::Process(spec.to_string())
        })
    }
}

/// Everything needed to open a fresh [`BackendSet`] per worker.
pub struct Backends {
    roles: Vec<(BackendSpec, Option<SyntheticBackend>)>,
    timeout: Duration,
    skeleton: String,
}

impl Backends {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let b = &cfg.backends;
        let mut roles = Vec::new();
        let mut loaded: Vec<(PathBuf, SyntheticBackend)> = Vec::new();
        for (role, spec) in [("detector", &b.detector), ("pose", &b.pose), ("segmenter", &b.segmenter)] {
            let Some(spec) = spec else {
                bail!("no {role} backend configured (use --{role} or [backends] {role} = ...)");
            };
            let spec = BackendSpec::parse(spec).with_context(|| format!("{role} backend"))?;
            let synthetic = match &spec {
                BackendSpec::Synthetic { scenes, masks } => {
                    let backend = match loaded.iter().find(|(p, _)| p == scenes) {
                        Some((_, b)) => b.clone(),
                        None => {
                            let lib = SceneLibrary::load(scenes)
                                .with_context(|| format!("loading scenes for the {role} backend"))?;
                            let b = SyntheticBackend::new(lib);
                            loaded.push((scenes.clone(), b.clone()));
                            b
                        }
                    };
                    Some(backend.with_masks(*masks))
                }
                BackendSpec::Process(_) => None,
            };
            roles.push((spec, synthetic));
        }
        Ok(Backends {
            roles,
            timeout: cfg.timeout()?,
            skeleton: cfg.engine.skeleton.clone(),
        })
    }

    /// Scene libraries behind synthetic roles, for resolving image ids.
    pub fn scene_files(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        for (spec, _) in &self.roles {
            if let BackendSpec::Synthetic { scenes, .. } = spec {
                if !v.contains(&scenes.as_path()) {
                    v.push(scenes);
                }
            }
        }
        v
    }

    pub fn open(&self) -> Result<BackendSet> {
        let mut eps: Vec<Box<dyn Endpoint>> = Vec::new();
        for (spec, synthetic) in &self.roles {
            eps.push(match (spec, synthetic) {
                (_, Some(b)) => Box::new(b.clone()),
                (BackendSpec::Process(cmd), None) => Box::new(
                    ProcessEndpoint::spawn(cmd, self.timeout).with_context(|| format!("starting `{cmd}`"))?,
                ),
                (BackendSpec::Synthetic { .. }, None) => unreachable!("synthetic backends are loaded up front"),
            });
        }
        let seg = eps.pop().expect("segmenter");
        let pose = eps.pop().expect("pose");
        let det = eps.pop().expect("detector");
        Ok(BackendSet::connect(det, pose, seg, &self.skeleton)?)
    }
}
