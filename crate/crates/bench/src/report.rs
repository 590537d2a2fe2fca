use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;

use crate::config::{MethodId, Mode};
use crate::run::{Metric, RunRecord};
use crate::stats::{aggregate_stats, SummaryRow};

pub const RESULTS_CSV: &str = "results.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const TRAJECTORIES_JSON: &str = "trajectories.json";

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per method × case × mode × repeat × source × metric. Failed runs
/// get a single row with an empty value and the error as status. Wall times
/// live in a separate file so this one is reproducible byte for byte.
pub fn write_results_csv(records: &[RunRecord], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["method", "case", "class", "mode", "repeat", "source", "metric", "value", "status"])?;
    for r in records {
        let head = [r.method.name().to_string(), r.case.clone(), r.class.to_string(), r.mode.to_string(), r.repeat.to_string()];
        match &r.outcome {
            Ok(scores) => {
                for (j, _) in scores.sdr.iter().enumerate() {
                    for metric in Metric::ALL {
                        let mut row = head.to_vec();
                        row.extend([j.to_string(), metric.name().into(), fmt_value(scores.metric(metric)[j]), "ok".into()]);
                        w.write_record(&row)?;
                    }
                }
            }
            Err(e) => {
                let mut row = head.to_vec();
                row.extend([String::new(), String::new(), String::new(), format!("failed: {e}")]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv(records: &[RunRecord], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["method", "case", "class", "mode", "repeat", "seconds"])?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.case.clone(),
            r.class.to_string(),
            r.mode.to_string(),
            r.repeat.to_string(),
            format!("{:.4}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["method", "mode", "class", "metric", "n", "failures", "min", "q1", "median", "q3", "max", "mean_seconds"])?;
    for row in rows {
        let mut rec = vec![
            row.method.name().to_string(),
            row.mode.to_string(),
            row.class.to_string(),
            row.metric.name().to_string(),
            row.n.to_string(),
            row.failures.to_string(),
        ];
        match row.stats {
            Some(s) => rec.extend([s.min, s.q1, s.median, s.q3, s.max].map(fmt_value)),
            None => rec.extend(std::iter::repeat(String::new()).take(5)),
        }
        rec.push(format!("{:.4}", row.mean_seconds));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table; the first column is left-aligned, the rest
/// right-aligned.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::from("|");
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, " {cell:<w$} |");
            } else {
                let _ = write!(s, " {cell:>w$} |");
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push('|');
    for (i, w) in widths.iter().enumerate() {
        out.push_str(if i == 0 { ":" } else { "-" });
        out.push_str(&"-".repeat(*w));
        out.push_str(if i == 0 { "-|" } else { ":|" });
    }
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Box-plot style tables: one per (mode, class), methods as rows, and
/// `median [Q1, Q3]` per metric.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::from("# Separation benchmark summary\n\nScores in dB as `median [Q1, Q3]`; time is the mean seconds per run.\n");
    let mut groups: Vec<(Mode, String)> = rows.iter().map(|r| (r.mode, r.class.to_string())).collect();
    groups.sort();
    groups.dedup();
    for (mode, class) in groups {
        let _ = write!(out, "\n## {mode} / {class}\n\n");
        let mut table = Vec::new();
        for method in MethodId::ALL {
            let cells: Vec<&SummaryRow> = rows
                .iter()
                .filter(|r| r.mode == mode && r.class.to_string() == class && r.method == method)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let mut row = vec![method.name().to_string()];
            for metric in Metric::ALL {
                let cell = cells.iter().find(|r| r.metric == metric);
                row.push(match cell.and_then(|c| c.stats) {
                    Some(s) => format!("{:.2} [{:.2}, {:.2}]", s.median, s.q1, s.q3),
                    None => "n/a".into(),
                });
            }
            let first = cells[0];
            row.push(format!("{:.3}", first.mean_seconds));
            row.push(first.failures.to_string());
            table.push(row);
        }
        out.push_str(&aligned_table(&["method", "SDR", "SIR", "SAR", "time (s)", "failures"], &table));
    }
    out
}

/// Writes results, timings, summaries and trajectories to `dir`.
pub fn write_reports(records: &[RunRecord], dir: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_results_csv(records, &dir.join(RESULTS_CSV))?;
    write_timings_csv(records, &dir.join(TIMINGS_CSV))?;
    let rows = aggregate_stats(records);
    write_summary_csv(&rows, &dir.join(SUMMARY_CSV))?;
    std::fs::write(dir.join(SUMMARY_MD), summary_markdown(&rows))?;
    let trajectories: Vec<_> = records
        .iter()
        .map(|r| serde_json::json!({
            "method": r.method,
            "case": r.case,
            "mode": r.mode,
            "repeat": r.repeat,
            "trajectory": r.trajectory,
        }))
        .collect();
    std::fs::write(dir.join(TRAJECTORIES_JSON), serde_json::to_string(&trajectories)?)?;
    Ok(rows)
}
