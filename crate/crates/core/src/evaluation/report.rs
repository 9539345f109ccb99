//! Fixed-layout text and JSON reports of stratified AP.

use serde::{Deserialize, Serialize};

use super::ap::Task;
use super::stratified::{Bin, BinResult};
use super::ApSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedRow {
    pub label: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub bin_ap: Vec<f64>,
    /// Recall averaged over IoU thresholds, per bin.
    pub bin_recall: Vec<f64>,
}

impl StratifiedRow {
    pub fn new(label: impl Into<String>, overall: &ApSummary, bins: &[BinResult]) -> Self {
        StratifiedRow {
            label: label.into(),
            ap: overall.ap,
            ap50: overall.ap50,
            ap75: overall.ap75,
            bin_ap: bins.iter().map(|b| b.summary.ap).collect(),
            bin_recall: bins.iter().map(|b| b.summary.ar).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub task: Task,
    pub bins: Vec<Bin>,
    pub bin_counts: Vec<usize>,
    pub rows: Vec<StratifiedRow>,
}

fn pct(v: f64) -> String {
    if v < 0.0 {
        "-".to_string()
    } else {
        format!("{:.1}", 100.0 * v)
    }
}

/// Value with its change against the first row, e.g. `21.5 (+5.8)`.
fn cell(v: f64, base: Option<f64>) -> String {
    match base {
        Some(b) if v >= 0.0 && b >= 0.0 => format!("{} ({:+.1})", pct(v), 100.0 * (v - b)),
        _ => pct(v),
    }
}

/// One line per row: overall AP followed by AP in each bin, then the same
/// layout for recall. Rows after the first show their change against it.
pub fn render_text(report: &StratifiedReport) -> String {
    let mut header = vec!["".to_string(), "AP".to_string()];
    header.extend(report.bins.iter().map(|b| b.label()));
    let mut table: Vec<Vec<String>> = vec![header.clone()];
    let mut counts = vec!["#GT".to_string(), report.bin_counts.iter().sum::<usize>().to_string()];
    counts.extend(report.bin_counts.iter().map(|c| c.to_string()));
    table.push(counts);
    let base = report.rows.first();
    for (i, row) in report.rows.iter().enumerate() {
        let b = |f: &dyn Fn(&StratifiedRow) -> f64| (i > 0).then(|| f(base.expect("non-empty")));
        let mut line = vec![row.label.clone(), cell(row.ap, b(&|r| r.ap))];
        for (k, &v) in row.bin_ap.iter().enumerate() {
            line.push(cell(v, b(&|r| r.bin_ap[k])));
        }
        table.push(line);
    }
    let split = table.len();
    let mut recall_header = header;
    recall_header[1] = String::new();
    table.push(recall_header);
    for (i, row) in report.rows.iter().enumerate() {
        let mut line = vec![row.label.clone(), String::new()];
        for (k, &v) in row.bin_recall.iter().enumerate() {
            line.push(cell(v, (i > 0).then(|| base.expect("non-empty").bin_recall[k])));
        }
        table.push(line);
    }
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let fmt_line = |r: &Vec<String>| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = format!("{} AP @ max_IoU\n", report.task);
    for r in &table[..split] {
        out.push_str(&fmt_line(r));
        out.push('\n');
    }
    out.push_str(&format!("\n{} recall @ max_IoU\n", report.task));
    for r in &table[split..] {
        out.push_str(&fmt_line(r));
        out.push('\n');
    }
    out
}
