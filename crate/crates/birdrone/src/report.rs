//! JSON and plain-text renderings of dataset censuses, evaluation reports and
//! the ablation table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use birdrone_core::backbone::Ablation;
use birdrone_core::data::DatasetStats;
use birdrone_core::detect::CLASS_NAMES;
use birdrone_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Two-column table with right-aligned values.
fn two_column(title: &str, rows: &[(String, String)]) -> String {
    let kw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(9);
    let vw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(5);
    let rule = "-".repeat(kw + vw + 3);
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{:<kw$}   {:>vw$}", "Parameter", "Value");
    let _ = writeln!(out, "{rule}");
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<kw$}   {v:>vw$}");
    }
    let _ = writeln!(out, "{rule}");
    out
}

/// Dataset census laid out as total images, per-class objects, smallest box
/// per class and the four size bins.
pub fn census_table(title: &str, stats: &DatasetStats) -> String {
    let class_name = |c: usize| {
        let n = CLASS_NAMES.get(c).copied().unwrap_or("class");
        let mut s = n[..1].to_uppercase();
        s.push_str(&n[1..]);
        if c >= CLASS_NAMES.len() {
            s.push_str(&format!(" {c}"));
        }
        s
    };
    let mut rows = vec![("Total Images".to_string(), stats.images.to_string())];
    for (c, n) in stats.per_class.iter().enumerate() {
        rows.push((format!("{} Objects", class_name(c)), n.to_string()));
    }
    for (c, s) in stats.smallest.iter().enumerate() {
        let v = s.map_or_else(|| "-".to_string(), |(w, h)| format!("{w}x{h} pixels"));
        rows.push((format!("Smallest {}", class_name(c)), v));
    }
    let bins = [
        "Extremely Small Targets (<20x20)",
        "Small Targets (20x20 to 32x32)",
        "Medium Targets (32x32 to 96x96)",
        "Large Targets (>96x96)",
    ];
    for (label, n) in bins.iter().zip(stats.per_bin) {
        rows.push((label.to_string(), n.to_string()));
    }
    two_column(title, &rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn metrics_table(r: &MetricsReport) -> String {
    let mut rows = vec![
        ("Images".to_string(), r.images.to_string()),
        ("Ground truths".to_string(), r.ground_truths.to_string()),
        ("Detections".to_string(), r.detections.to_string()),
        (format!("P @ conf {}", r.conf_threshold), format!("{:.4}", r.precision)),
        (format!("R @ conf {}", r.conf_threshold), format!("{:.4}", r.recall)),
        (format!("P @ best F1 (conf {:.3})", r.best_f1_confidence), format!("{:.4}", r.precision_best_f1)),
        (format!("R @ best F1 (conf {:.3})", r.best_f1_confidence), format!("{:.4}", r.recall_best_f1)),
        ("mAP@0.5".to_string(), format!("{:.4}", r.map50)),
        ("mAP@0.5:0.95".to_string(), format!("{:.4}", r.map50_95)),
        ("Detection accuracy (%)".to_string(), format!("{:.2}", r.detection_accuracy)),
        ("FN (%)".to_string(), format!("{:.2}", r.fn_pct)),
        ("FP (%)".to_string(), format!("{:.2}", r.fp_pct)),
    ];
    for c in &r.per_class {
        rows.push((format!("AP@0.5 {}", c.name), opt(c.ap50)));
        rows.push((format!("AP@0.5:0.95 {}", c.name), opt(c.ap50_95)));
    }
    for b in &r.per_size_bin {
        rows.push((format!("AP@0.5 {} ({} gt)", b.bin.name(), b.ground_truths), opt(b.ap50)));
    }
    rows.push(("AIT/frame (s)".to_string(), opt(r.ait_seconds)));
    two_column("Evaluation", &rows)
}

/// One trained-and-evaluated model of the ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub aelan: bool,
    pub mpda: bool,
    pub rmpda: bool,
    pub parameters: usize,
    pub wall_seconds: f64,
    pub final_loss: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn new(model: &str, ablation: Ablation) -> Self {
        Self {
            model: model.to_uppercase(),
            aelan: ablation.aelan,
            mpda: ablation.mpda,
            rmpda: ablation.rmpda,
            parameters: 0,
            wall_seconds: 0.0,
            final_loss: None,
            metrics: None,
            error: None,
        }
    }
}

/// Last-row-minus-first-row differences, M6 - M1 when both finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationDeltas {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub detection_accuracy: f64,
    pub fn_pct: f64,
    pub fp_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub epochs: usize,
    pub seed: u64,
    pub split: String,
    pub rows: Vec<AblationRow>,
    pub m6_minus_m1: Option<AblationDeltas>,
}

impl AblationReport {
    pub fn new(epochs: usize, seed: u64, split: &str, rows: Vec<AblationRow>) -> Self {
        let find = |m: &str| rows.iter().find(|r| r.model.eq_ignore_ascii_case(m)).and_then(|r| r.metrics.as_ref());
        let m6_minus_m1 = match (find("m6"), find("m1")) {
            (Some(a), Some(b)) => Some(AblationDeltas {
                precision: a.precision - b.precision,
                recall: a.recall - b.recall,
                map50: a.map50 - b.map50,
                map50_95: a.map50_95 - b.map50_95,
                detection_accuracy: a.detection_accuracy - b.detection_accuracy,
                fn_pct: a.fn_pct - b.fn_pct,
                fp_pct: a.fp_pct - b.fp_pct,
            }),
            _ => None,
        };
        Self { epochs, seed, split: split.to_string(), rows, m6_minus_m1 }
    }
}

pub const ABLATION_COLUMNS: [&str; 7] = ["P", "R", "mAP@0.5", "mAP@0.5:0.95", "Acc (%)", "FN (%)", "FP (%)"];

pub fn ablation_table(r: &AblationReport) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut out = String::new();
    let _ = write!(out, "{:<6}{:>6}{:>6}{:>6}", "Model", "AELAN", "MPDA", "RMPDA");
    for c in ABLATION_COLUMNS {
        let _ = write!(out, "{c:>14}");
    }
    let _ = writeln!(out, "{:>12}", "Wall (s)");
    for row in &r.rows {
        let _ = write!(out, "{:<6}{:>6}{:>6}{:>6}", row.model, mark(row.aelan), mark(row.mpda), mark(row.rmpda));
        match &row.metrics {
            Some(m) => {
                for v in [m.precision, m.recall, m.map50, m.map50_95] {
                    let _ = write!(out, "{v:>14.4}");
                }
                for v in [m.detection_accuracy, m.fn_pct, m.fp_pct] {
                    let _ = write!(out, "{v:>14.2}");
                }
            }
            None => {
                let _ = write!(out, "{:>14}", "failed");
                for _ in 1..ABLATION_COLUMNS.len() {
                    let _ = write!(out, "{:>14}", "-");
                }
            }
        }
        let _ = writeln!(out, "{:>12.1}", row.wall_seconds);
        if let Some(e) = &row.error {
            let _ = writeln!(out, "  {}: {e}", row.model);
        }
    }
    if let Some(d) = &r.m6_minus_m1 {
        let _ = write!(out, "{:<24}", "M6 - M1");
        for v in [d.precision, d.recall, d.map50, d.map50_95] {
            let _ = write!(out, "{v:>+14.4}");
        }
        for v in [d.detection_accuracy, d.fn_pct, d.fp_pct] {
            let _ = write!(out, "{v:>+14.2}");
        }
        let _ = writeln!(out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_rows_follow_dataset_table() {
        let stats = DatasetStats {
            images: 3,
            objects: 4,
            per_class: vec![1, 3],
            per_bin: [1, 1, 1, 1],
            smallest: vec![Some((7, 5)), None],
        };
        let t = census_table("Census", &stats);
        let labels: Vec<&str> = t.lines().skip(4).filter(|l| !l.starts_with('-')).map(|l| l.split("   ").next().unwrap().trim()).collect();
        assert_eq!(
            labels,
            [
                "Total Images",
                "Drone Objects",
                "Bird Objects",
                "Smallest Drone",
                "Smallest Bird",
                "Extremely Small Targets (<20x20)",
                "Small Targets (20x20 to 32x32)",
                "Medium Targets (32x32 to 96x96)",
                "Large Targets (>96x96)"
            ]
        );
        assert!(t.contains("7x5 pixels"));
    }
}
