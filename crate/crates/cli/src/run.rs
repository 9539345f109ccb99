use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use bmp_core::backends::SceneLibrary;
use bmp_core::engine::{run_bmp, LoopResult};
use bmp_core::evaluation::{CocoDataset, ResultEntry};
use bmp_core::imaging::Image;
use bmp_core::prompting::BBoxMode;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::{Backends, RunConfig};
use crate::io::write_json;

#[derive(Clone, Copy, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image directory or a file listing image paths.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output directory for results.json and provenance.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, each with its own backends.
    #[arg(long)]
    jobs: Option<usize>,
    /// COCO file mapping image file names to ids.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Loop iterations (1 = single pass).
    #[arg(long)]
    iterations: Option<u32>,
    /// Blend weight outside the instance mask for the pose input.
    #[arg(long)]
    alpha: Option<f64>,
    /// Keypoint confidence threshold for prompting and gating.
    #[arg(long)]
    tc: Option<f64>,
    /// Most positive point prompts per instance.
    #[arg(long)]
    nmax: Option<usize>,
    /// Box prompt: never, always or by-max-iou:θ.
    #[arg(long)]
    bbox_prompt: Option<BBoxMode>,
    #[arg(long, value_enum)]
    pmc_gate: Option<Switch>,
    /// Extra refinement pass after the loop.
    #[arg(long, value_enum)]
    refine: Option<Switch>,
    #[arg(long)]
    skeleton: Option<String>,
    /// `synthetic:SCENES`, `synthetic-bbox:SCENES` or a command line.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    pose: Option<String>,
    #[arg(long)]
    segmenter: Option<String>,
    /// Seconds to wait for each backend reply.
    #[arg(long)]
    timeout: Option<f64>,
}

impl RunArgs {
    /// File settings with every given flag applied on top.
    fn effective(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(self.images.clone().map(Some) => images);
        set!(self.out.clone().map(Some) => out);
        set!(self.jobs.map(Some) => jobs);
        set!(self.gt.clone().map(Some) => gt);
        set!(self.iterations => engine.max_iterations);
        set!(self.alpha => engine.alpha);
        set!(self.tc => engine.loop_policy.t_c);
        set!(self.nmax => engine.loop_policy.n_max);
        set!(self.bbox_prompt => engine.loop_policy.bbox_mode);
        set!(self.pmc_gate.map(|s| matches!(s, Switch::On)) => engine.pmc_gate);
        set!(self.refine.map(|s| matches!(s, Switch::On)) => engine.refine);
        set!(self.skeleton => engine.skeleton);
        set!(self.detector.clone().map(Some) => backends.detector);
        set!(self.pose.clone().map(Some) => backends.pose);
        set!(self.segmenter.clone().map(Some) => backends.segmenter);
        set!(self.timeout.map(Some) => backends.timeout_secs);
        cfg.engine.validate()?;
        Ok(cfg)
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image paths from a directory (sorted) or a list file (in order; relative
/// entries resolve against the list's directory; `#` starts a comment).
pub fn list_images(source: &Path) -> Result<Vec<PathBuf>> {
    if source.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(source)
            .with_context(|| format!("listing {}", source.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        v.sort();
        return Ok(v);
    }
    let text = std::fs::read_to_string(source).with_context(|| format!("reading image list {}", source.display()))?;
    let base = source.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// File name to image id, from scene files and an optional COCO file.
fn id_table(backends: &Backends, gt: Option<&Path>) -> Result<HashMap<String, u64>> {
    let mut table = HashMap::new();
    for path in backends.scene_files() {
        for s in SceneLibrary::load(path)?.scenes {
            table.insert(s.file_name, s.image_id);
        }
    }
    if let Some(gt) = gt {
        for img in CocoDataset::load(gt)?.images {
            table.insert(img.file_name, img.id);
        }
    }
    Ok(table)
}

fn image_id(path: &Path, table: &HashMap<String, u64>) -> Result<u64> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if let Some(&id) = table.get(name) {
        return Ok(id);
    }
    match path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
        Some(id) => Ok(id),
        None => bail!("cannot tell the image id of {}; name it by its id or pass --gt", path.display()),
    }
}

#[derive(Serialize)]
struct ImageRecord {
    image_id: u64,
    file_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(flatten)]
    result: LoopResult,
}

#[derive(Serialize)]
struct Provenance<'a> {
    config: &'a RunConfig,
    images: Vec<ImageRecord>,
}

pub fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.effective()?;
    let Some(source) = cfg.images.clone() else {
        bail!("no images given (use --images or `images = ...` in the config)");
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let backends = Backends::prepare(&cfg)?;
    let table = id_table(&backends, cfg.gt.as_deref())?;
    let mut work: Vec<(u64, PathBuf)> = list_images(&source)?
        .into_iter()
        .map(|p| Ok((image_id(&p, &table)?, p)))
        .collect::<Result<_>>()?;
    work.sort();
    if let Some(w) = work.windows(2).find(|w| w[0].0 == w[1].0) {
        bail!("{} and {} share image id {}", w[0].1.display(), w[1].1.display(), w[0].0);
    }
    if work.is_empty() {
        bail!("no images found in {}", source.display());
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let jobs = cfg.jobs.unwrap_or(1).clamp(1, work.len());
    let records: Mutex<Vec<ImageRecord>> = Mutex::new(Vec::with_capacity(work.len()));
    std::thread::scope(|scope| -> Result<()> {
        let workers: Vec<_> = (0..jobs)
            .map(|w| {
                let (work, backends, cfg, records) = (&work, &backends, &cfg, &records);
                scope.spawn(move || -> Result<()> {
                    let mut set = backends.open()?;
                    for (id, path) in work.iter().skip(w).step_by(jobs) {
                        let rec = process_image(&mut set, *id, path, cfg)?;
                        // A failed exchange can leave a process backend out of step.
                        if rec.error.is_some() {
                            set = backends.open()?;
                        }
                        records.lock().unwrap().push(rec);
                    }
                    Ok(())
                })
            })
            .collect();
        for w in workers {
            w.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let mut records = records.into_inner().unwrap();
    records.sort_by_key(|r| r.image_id);
    let results: Vec<ResultEntry> = records.iter().flat_map(|r| r.result.to_results(r.image_id)).collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    write_json(&out.join("results.json"), &results)?;
    write_json(&out.join("provenance.json"), &Provenance { config: &cfg, images: records })?;
    eprintln!("wrote {} instances for {} images to {}", results.len(), work.len(), out.display());
    if failed > 0 {
        eprintln!("{failed} image(s) failed; their partial results are included");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn process_image(
    set: &mut bmp_core::backends::BackendSet,
    id: u64,
    path: &Path,
    cfg: &RunConfig,
) -> Result<ImageRecord> {
    let image = Image::load(path).with_context(|| format!("loading {}", path.display()))?;
    set.set_image_id(Some(id.to_string()));
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (result, error) = match run_bmp(&image, set, &cfg.engine) {
        Ok(r) => (r, None),
        Err(f) => {
            eprintln!("image {id} ({file_name}): {f}");
            let msg = f.to_string();
            (f.partial, Some(msg))
        }
    };
    eprintln!(
        "image {id} ({file_name}): {} instances after {} iteration(s)",
        result.instances.len(),
        result.iterations.len()
    );
    Ok(ImageRecord { image_id: id, file_name, error, result })
}
