use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use bmp_core::backends::server::serve as serve_stream;
use bmp_core::backends::{SceneLibrary, SyntheticBackend};
use clap::{Args, ValueEnum};

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Synthetic,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// Scene file answered from.
    scenes: PathBuf,
    /// Detections carry boxes only.
    #[arg(long)]
    no_masks: bool,
    /// Visible fraction a person needs to be detected.
    #[arg(long)]
    v_det: Option<f64>,
}

pub fn serve(args: ServeArgs) -> Result<ExitCode> {
    let Kind::Synthetic = args.kind;
    let mut backend = SyntheticBackend::new(SceneLibrary::load(&args.scenes)?).with_masks(!args.no_masks);
    if let Some(v) = args.v_det {
        if !(v > 0.0 && v <= 1.0) {
            bail!("v_det {v} outside (0, 1]");
        }
        backend = backend.with_v_det(v);
    }
    let stdin = std::io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let mut output = BufWriter::new(std::io::stdout().lock());
    serve_stream(&mut backend, &mut input, &mut output)?;
    Ok(ExitCode::SUCCESS)
}
