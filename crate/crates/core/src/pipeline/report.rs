//! Report rendering: structured text, CSV, and PR-curve CSV files.
//!
//! All output is rendered with fixed formatting and ordered collections so
//! identical evaluations produce byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::metrics::{EvalReport, PrPoint};

use super::PipelineError;

/// Threshold label: at least two decimals, more when the value needs them
/// (up to six), so distinct thresholds keep distinct labels and PR-curve
/// file names.
pub fn fmt_threshold(t: f64) -> String {
    let s = format!("{:.6}", t);
    let dot = s.find('.').expect("fixed-point format");
    let min_len = dot + 3;
    let trimmed_len = s.trim_end_matches('0').len();
    s[..trimmed_len.max(min_len)].to_string()
}

/// Key-value header followed by the per-threshold table.
pub fn render_report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "map_coco = {:.9}", report.map_coco).unwrap();
    writeln!(out, "map_single = {:.9}", report.map_single).unwrap();
    for (key, value) in &report.config_echo {
        writeln!(out, "{} = {}", key, value).unwrap();
    }
    for warning in &report.warnings {
        writeln!(out, "warning = {}", warning).unwrap();
    }
    writeln!(out).unwrap();

    let class_ids: Vec<u32> = report
        .per_threshold
        .first()
        .map(|te| te.per_class_ap.keys().copied().collect())
        .unwrap_or_default();
    let mut header = format!("{:<10} {:<12}", "threshold", "mean_ap");
    for id in &class_ids {
        header.push_str(&format!(" {:<14}", format!("ap[class {}]", id)));
    }
    writeln!(out, "{}", header.trim_end()).unwrap();
    for te in &report.per_threshold {
        let mut row = format!("{:<10} {:<12.9}", fmt_threshold(te.threshold), te.mean_ap);
        for id in &class_ids {
            row.push_str(&format!(" {:<14.9}", te.per_class_ap[id]));
        }
        writeln!(out, "{}", row.trim_end()).unwrap();
    }
    out
}

/// One CSV row per threshold per class.
pub fn render_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("threshold,class_id,ap,mean_ap,map_coco\n");
    for te in &report.per_threshold {
        for (class_id, ap) in &te.per_class_ap {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_threshold(te.threshold),
                class_id,
                ap,
                te.mean_ap,
                report.map_coco
            )
            .unwrap();
        }
    }
    out
}

pub fn render_pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("score_cut,recall,precision\n");
    for p in points {
        writeln!(out, "{},{},{}", p.score_cut, p.recall, p.precision).unwrap();
    }
    out
}

/// Writes report.txt, report.csv, and one PR CSV per (threshold, class)
/// into `out_dir`. Returns the paths written.
pub fn write_eval_outputs(
    report: &EvalReport,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut written = Vec::new();

    let txt = out_dir.join("report.txt");
    std::fs::write(&txt, render_report_text(report)).map_err(|e| PipelineError::io(&txt, e))?;
    written.push(txt);

    let csv = out_dir.join("report.csv");
    std::fs::write(&csv, render_report_csv(report)).map_err(|e| PipelineError::io(&csv, e))?;
    written.push(csv);

    let pr_dir = out_dir.join("pr_curves");
    std::fs::create_dir_all(&pr_dir).map_err(|e| PipelineError::io(&pr_dir, e))?;
    for curve in &report.pr_curves {
        let path = pr_dir.join(format!(
            "pr_iou{}_class{}.csv",
            fmt_threshold(curve.threshold),
            curve.class_id
        ));
        std::fs::write(&path, render_pr_csv(&curve.points))
            .map_err(|e| PipelineError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Formats a delta with an explicit sign for nonzero values.
pub fn format_delta(delta: f64) -> String {
    if delta == 0.0 {
        "0.000".to_string()
    } else {
        format!("{:+.3}", delta)
    }
}

/// Aligned two-column comparison table (model, mAP[0.5:0.95]) plus the delta
/// between the last two rows.
pub fn render_comparison_table(rows: &[(String, f64)], delta: f64) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$} | mAP[0.5:0.95]",
        "Model",
        width = label_width
    )
    .unwrap();
    writeln!(out, "{:-<width$}-+--------------", "", width = label_width).unwrap();
    for (label, map) in rows {
        writeln!(out, "{:<width$} | {:.3}", label, map, width = label_width).unwrap();
    }
    if rows.len() == 2 {
        writeln!(
            out,
            "delta ({} - {}): {}",
            rows[1].0,
            rows[0].0,
            format_delta(delta)
        )
        .unwrap();
    }
    out
}

pub fn render_comparison_csv(rows: &[(String, f64)], delta: f64) -> String {
    let mut out = String::from("label,map_coco\n");
    for (label, map) in rows {
        writeln!(out, "{},{}", label, map).unwrap();
    }
    writeln!(out, "delta,{}", delta).unwrap();
    out
}
