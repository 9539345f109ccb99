//! `bmp`: run the loop over images, score results, make synthetic scenes and
//! serve the synthetic backend over the wire protocol.

mod check;
mod config;
mod eval;
mod io;
mod run;
mod serve;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bmp", version, about = "Iterative detect, pose and segment loop for crowded scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the loop on a set of images.
    Run(run::RunArgs),
    /// Score result files against COCO ground truth.
    Eval(eval::EvalArgs),
    /// Generate synthetic scenes, images and matching ground truth.
    Synth(synth::SynthArgs),
    /// Answer protocol requests on stdin/stdout.
    Serve(serve::ServeArgs),
    /// Check that a backend command honours the protocol.
    CheckBackend(check::CheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run::run(a),
        Command::Eval(a) => eval::eval(a),
        Command::Synth(a) => synth::synth(a),
        Command::Serve(a) => serve::serve(a),
        Command::CheckBackend(a) => check::check(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
