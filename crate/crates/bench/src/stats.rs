use std::collections::BTreeMap;

use nmfsep::datagen::OverlapClass;
use serde::Serialize;

use crate::config::{MethodId, Mode};
use crate::run::{Metric, RunRecord};

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Aggregate of one (method, mode, class, metric) cell. Values pool every
/// source of every case and repeat.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: MethodId,
    pub mode: Mode,
    pub class: OverlapClass,
    pub metric: Metric,
    /// Number of pooled source scores.
    pub n: usize,
    /// Runs that produced no scores.
    pub failures: usize,
    pub stats: Option<FiveNumber>,
    /// Mean wall time per run, failures included.
    pub mean_seconds: f64,
}

/// Per-cell order statistics. The output is sorted by key and does not
/// depend on the order of `records`.
pub fn aggregate_stats(records: &[RunRecord]) -> Vec<SummaryRow> {
    #[derive(Default)]
    struct Cell {
        values: Vec<f64>,
        failures: usize,
        seconds: Vec<f64>,
    }
    let mut cells: BTreeMap<(MethodId, Mode, OverlapClass, Metric), Cell> = BTreeMap::new();
    for r in records {
        for metric in Metric::ALL {
            let cell = cells.entry((r.method, r.mode, r.class, metric)).or_default();
            cell.seconds.push(r.seconds);
            match &r.outcome {
                Ok(scores) => cell.values.extend_from_slice(scores.metric(metric)),
                Err(_) => cell.failures += 1,
            }
        }
    }
    cells
        .into_iter()
        .map(|((method, mode, class, metric), mut cell)| {
            cell.seconds.sort_by(f64::total_cmp);
            let mean_seconds = cell.seconds.iter().sum::<f64>() / cell.seconds.len() as f64;
            SummaryRow {
                method,
                mode,
                class,
                metric,
                n: cell.values.len(),
                failures: cell.failures,
                stats: FiveNumber::of(&cell.values),
                mean_seconds,
            }
        })
        .collect()
}

/// Median of `metric` pooled over every class, or `None` without scores.
pub fn pooled_median(records: &[RunRecord], method: MethodId, mode: Mode, metric: Metric) -> Option<f64> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && r.mode == mode)
        .filter_map(|r| r.outcome.as_ref().ok())
        .flat_map(|s| s.metric(metric).iter().copied())
        .collect();
    FiveNumber::of(&values).map(|s| s.median)
}

/// Median of `metric` for one class.
pub fn class_median(records: &[RunRecord], method: MethodId, mode: Mode, class: OverlapClass, metric: Metric) -> Option<f64> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && r.mode == mode && r.class == class)
        .filter_map(|r| r.outcome.as_ref().ok())
        .flat_map(|s| s.metric(metric).iter().copied())
        .collect();
    FiveNumber::of(&values).map(|s| s.median)
}
