use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use bmp_core::backends::conformance::{check_process, Probe, Role};
use bmp_core::geometry::SkeletonRegistry;
use bmp_core::imaging::Image;
use clap::Args;

#[derive(Args)]
pub struct CheckArgs {
    /// detector, pose or segmenter; repeat for several. Defaults to all three.
    #[arg(long)]
    role: Vec<Role>,
    /// Image sent with the probe requests.
    #[arg(long)]
    image: PathBuf,
    /// Image id sent with the probe requests.
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long, default_value = "coco")]
    skeleton: String,
    /// Seconds to wait for each reply.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Backend command line.
    command: String,
}

pub fn check(args: CheckArgs) -> Result<ExitCode> {
    let image = Image::load(&args.image).with_context(|| format!("loading {}", args.image.display()))?;
    let keypoints = SkeletonRegistry::default().get(&args.skeleton)?.keypoint_count();
    let probe = Probe { image, image_id: args.image_id, skeleton: args.skeleton, keypoints };
    let roles = if args.role.is_empty() { Role::ALL.to_vec() } else { args.role };
    let checks = check_process(&args.command, &roles, &probe, Duration::from_secs_f64(args.timeout));
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(()) => println!("PASS  {}", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}: {why}", c.name);
            }
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
