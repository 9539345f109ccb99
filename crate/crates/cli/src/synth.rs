use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bmp_core::backends::SceneLibrary;
use bmp_core::scenegen::{generate_corpus, ground_truth, occlusion_pair, visible_fractions, CorpusParams};
use clap::Args;

use crate::io::write_atomic;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory; receives scenes.json, gt.json and images/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = CorpusParams::default().count)]
    count: usize,
    #[arg(long, default_value_t = CorpusParams::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = CorpusParams::default().width)]
    width: u32,
    #[arg(long, default_value_t = CorpusParams::default().height)]
    height: u32,
    #[arg(long, default_value_t = CorpusParams::default().min_person_height)]
    min_person_height: u32,
    #[arg(long, default_value_t = CorpusParams::default().max_person_height)]
    max_person_height: u32,
    /// Least visible fraction any person may keep.
    #[arg(long, default_value_t = CorpusParams::default().min_visible)]
    min_visible: f64,
    /// Instead of a corpus, write one two-person scene whose back person is
    /// hidden by this fraction.
    #[arg(long, conflicts_with_all = ["count", "seed", "width", "height", "min_person_height", "max_person_height", "min_visible"])]
    occlusion: Option<f64>,
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let scenes = match args.occlusion {
        Some(f) => {
            if !(0.0..1.0).contains(&f) {
                bail!("occlusion {f} outside [0, 1)");
            }
            let (scene, achieved) = occlusion_pair(1, f);
            eprintln!("occlusion requested {f:.3}, achieved {achieved:.4}");
            vec![scene]
        }
        None => {
            let params = CorpusParams {
                count: args.count,
                seed: args.seed,
                width: args.width,
                height: args.height,
                min_person_height: args.min_person_height,
                max_person_height: args.max_person_height,
                min_visible: args.min_visible,
            };
            params.validate().map_err(anyhow::Error::msg)?;
            generate_corpus(&params)
        }
    };
    let images = args.out.join("images");
    std::fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    for s in &scenes {
        let png = s.render().to_png_bytes()?;
        write_atomic(&images.join(&s.file_name), &png)?;
    }
    let gt = ground_truth(&scenes);
    let people: usize = scenes.iter().map(|s| s.instances.len()).sum();
    let hidden = scenes
        .iter()
        .flat_map(visible_fractions)
        .filter(|&v| v < 0.5)
        .count();
    SceneLibrary::new(scenes).save(args.out.join("scenes.json"))?;
    gt.save(args.out.join("gt.json"))?;
    eprintln!(
        "wrote {} scenes with {people} people ({hidden} less than half visible) to {}",
        gt.images.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
