use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bmp_core::evaluation::{
    evaluate, load_results, render_text, stratified_evaluate, Bin, CocoDataset, EvalParams, StratifiedReport,
    StratifiedRow, Task, DEFAULT_BINS,
};
use clap::Args;
use serde::Serialize;

use crate::io::{write_atomic, write_json};

#[derive(Args)]
pub struct EvalArgs {
    /// COCO ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// COCO result files, one row each.
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Row labels, in the order of --results; defaults to the file stems.
    #[arg(long)]
    label: Vec<String>,
    /// bbox, segm or keypoints; repeat for several.
    #[arg(long, default_values_t = [Task::Bbox, Task::Keypoints])]
    task: Vec<Task>,
    /// Break AP and recall down by each person's largest overlap with others.
    #[arg(long)]
    stratify_max_iou: bool,
    /// Bin edges for --stratify-max-iou, e.g. 0,0.2,0.4,0.6,0.8,1.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<f64>>,
    /// Directory for eval.txt and eval.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Row {
    label: String,
    ap: f64,
    ap50: f64,
    ap75: f64,
    ar: f64,
    num_gt: usize,
    num_dets: usize,
}

#[derive(Serialize)]
struct TaskReport {
    task: Task,
    rows: Vec<Row>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratified: Option<StratifiedReport>,
}

fn bins_from_edges(edges: &[f64]) -> Result<Vec<Bin>> {
    if edges.len() < 2 {
        bail!("need at least two bin edges");
    }
    Ok(edges.windows(2).map(|w| Bin { lo: w[0], hi: w[1] }).collect())
}

fn pct(v: f64) -> String {
    if v < 0.0 {
        "-".into()
    } else {
        format!("{:.1}", 100.0 * v)
    }
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let gt = CocoDataset::load(&args.gt)?;
    if !args.label.is_empty() && args.label.len() != args.results.len() {
        bail!("{} labels for {} result files", args.label.len(), args.results.len());
    }
    let labels: Vec<String> = if args.label.is_empty() {
        args.results
            .iter()
            .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect()
    } else {
        args.label.clone()
    };
    let runs = args
        .results
        .iter()
        .map(|p| load_results(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let bins = match &args.bins {
        Some(edges) => bins_from_edges(edges)?,
        None => DEFAULT_BINS.to_vec(),
    };
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(8);

    let mut text = String::new();
    let mut reports = Vec::new();
    for &task in &args.task {
        let params = EvalParams::new(task);
        let mut rows = Vec::new();
        let mut strat_rows = Vec::new();
        let mut bin_counts = Vec::new();
        for (label, results) in labels.iter().zip(&runs) {
            let (overall, per_bin) = if args.stratify_max_iou {
                let (o, b) = stratified_evaluate(&gt, results, &params, &bins)?;
                (o, Some(b))
            } else {
                (evaluate(&gt, results, &params, &|_| false)?, None)
            };
            if let Some(b) = per_bin {
                bin_counts = b.iter().map(|r| r.num_gt).collect();
                strat_rows.push(StratifiedRow::new(label.clone(), &overall, &b));
            }
            rows.push(Row {
                label: label.clone(),
                ap: overall.ap,
                ap50: overall.ap50,
                ap75: overall.ap75,
                ar: overall.ar,
                num_gt: overall.num_gt,
                num_dets: overall.num_dets,
            });
        }
        writeln!(text, "{:<width$} {:>6} {:>6} {:>6} {:>6}", task.to_string(), "AP", "AP50", "AP75", "AR")?;
        for r in &rows {
            writeln!(text, "{:<width$} {:>6} {:>6} {:>6} {:>6}", r.label, pct(r.ap), pct(r.ap50), pct(r.ap75), pct(r.ar))?;
        }
        text.push('\n');
        let stratified = args.stratify_max_iou.then(|| StratifiedReport {
            task,
            bins: bins.clone(),
            bin_counts,
            rows: strat_rows,
        });
        if let Some(s) = &stratified {
            text.push_str(&render_text(s));
            text.push('\n');
        }
        reports.push(TaskReport { task, rows, stratified });
    }
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_atomic(&out.join("eval.txt"), text.as_bytes())?;
        write_json(&out.join("eval.json"), &reports)?;
    }
    Ok(ExitCode::SUCCESS)
}
