//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. The training criteria drive the real binary end to end.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use birdrone::report::{AblationReport, ABLATION_COLUMNS};
use birdrone::{dataset, labels, weights};
use birdrone_core::attention::{DualAttentionConfig, RECEPTIVE_FIELDS};
use birdrone_core::data::{generate_scene, SceneSpec};
use birdrone_core::metrics::{evaluate, map_range, match_dataset, MetricsReport};
use birdrone_core::verify::{self, BLOCK_TOLERANCE, DEEP_TOLERANCE, MODEL_TOLERANCE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[path = "../../core/tests/support/mod.rs"]
mod support;

use support::CLASSES;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Runs `f`, turning a panic into a failure.
fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn birdrone(args: &[&str], paths: &[(&str, &Path)]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_birdrone"));
    cmd.args(args).env_remove("BDRN_THREADS");
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        let tail: Vec<&str> = err.lines().rev().take(3).collect();
        return Err(format!("`birdrone {}` exited {:?}: {}", args[0], out.status.code(), tail.join(" | ")));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn zero_offset_equivalence() -> Outcome {
    let start = Instant::now();
    let pairs = support::zero_offset_gap(7);
    let lifted = (1..=3).map(|d| support::aelan_gelan_gap(d, d as u64 + 2)).fold(0.0f64, f64::max);
    let took = start.elapsed();
    ensure!(pairs < 1e-9, "conv pairs differ by {pairs:e}");
    ensure!(lifted < 1e-9, "AELAN vs GELAN differ by {lifted:e}");
    ensure!(took < Duration::from_secs(30), "took {}", secs(took));
    Ok(format!("50 pairs max {pairs:.1e}, AELAN block max {lifted:.1e}, {}", secs(took)))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let entries = verify::run("all", 0, false).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let mut parts = Vec::new();
    for e in &entries {
        let tol = match e.module {
            "model" => MODEL_TOLERANCE,
            "mpda" | "rmpda" | "aelan" => DEEP_TOLERANCE,
            _ => BLOCK_TOLERANCE,
        };
        ensure!(e.check.coords_checked > 0, "{} checked nothing", e.module);
        ensure!(e.check.max_rel_error < tol, "{} error {:e} over {tol:e}", e.module, e.check.max_rel_error);
        parts.push(format!("{} {:.0e}", e.module, e.check.max_rel_error));
    }
    ensure!(took < Duration::from_secs(120), "took {}", secs(took));
    Ok(format!("{}, {}", parts.join(", "), secs(took)))
}

fn receptive_fields() -> Outcome {
    let mut runs = Vec::new();
    for seed in 0..3 {
        runs.push(("mpda", support::branch_supports(DualAttentionConfig::mpda(8).map_err(|e| e.to_string())?, seed)));
    }
    runs.push(("rmpda", support::branch_supports(DualAttentionConfig::rmpda(12).map_err(|e| e.to_string())?, 9)));
    for (name, s) in &runs {
        ensure!(*s == RECEPTIVE_FIELDS.map(|r| (r, r)), "{name} supports {s:?}");
    }
    Ok(format!("supports {:?} on every branch", RECEPTIVE_FIELDS))
}

/// Every accuracy triple seen during the run, for the sum check.
#[derive(Default)]
struct Triples(Vec<(String, [f64; 3])>);

impl Triples {
    fn push(&mut self, what: impl Into<String>, r: &MetricsReport) {
        self.0.push((what.into(), [r.detection_accuracy, r.fn_pct, r.fp_pct]));
    }
}

fn metrics_oracle(triples: &mut Triples) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (preds, gts) = support::random_instance(&mut rng);
        let (m50, m5095) = map_range(&preds, &gts, CLASSES);
        let (o50, o5095) = (support::oracle_map(&preds, &gts, 0.5), support::oracle_map50_95(&preds, &gts));
        ensure!((m50 - o50).abs() < 1e-12, "case {case}: mAP@0.5 {m50} vs {o50}");
        ensure!((m5095 - o5095).abs() < 1e-12, "case {case}: mAP@0.5:0.95 {m5095} vs {o5095}");
        let conf = 0.5;
        let counts = match_dataset(&preds, &gts, 0.5, conf).counts();
        let (tp, fn_count, fp) = support::oracle_counts(&preds, &gts, 0.5, conf);
        ensure!(counts == (tp, fn_count, fp), "case {case}: counts {counts:?} vs {:?}", (tp, fn_count, fp));
        let r = evaluate(&preds, &gts, conf, 160, CLASSES);
        let total = (tp + fn_count + fp) as f64;
        let expect = if total == 0.0 { [100.0, 0.0, 0.0] } else { [100.0 * tp as f64 / total, 100.0 * fn_count as f64 / total, 100.0 * fp as f64 / total] };
        let got = [r.detection_accuracy, r.fn_pct, r.fp_pct];
        ensure!(got.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12), "case {case}: accuracy {got:?} vs {expect:?}");
        triples.push(format!("oracle case {case}"), &r);
    }
    let (det, gt) = support::iou_point_six_pair();
    ensure!(support::oracle_iou(&det.bbox, &gt) == 0.6, "hand case IoU is not 0.6");
    let (m50, m5095) = map_range(&[vec![det]], &[vec![gt]], CLASSES);
    ensure!(m50 == 1.0 && m5095 == 0.3, "hand case gives {m50} / {m5095}");
    Ok("1000 instances agree, hand case mAP@0.5:0.95 = 0.3".into())
}

fn accuracy_sums(triples: &Triples) -> Outcome {
    ensure!(!triples.0.is_empty(), "no evaluations recorded");
    let mut worst = 0.0f64;
    for (what, t) in &triples.0 {
        let gap = (t.iter().sum::<f64>() - 100.0).abs();
        ensure!(gap <= 1e-9, "{what}: {t:?} sums off by {gap:e}");
        worst = worst.max(gap);
    }
    Ok(format!("{} evaluations, max deviation {worst:.1e}", triples.0.len()))
}

const OVERFIT_SAMPLES: &str = "64";
const OVERFIT_SEED: &str = "42";

fn overfit_data(dir: &Path) -> Result<String, String> {
    birdrone(
        &["generate", "--count", OVERFIT_SAMPLES, "--seed", OVERFIT_SEED, "--image-size", "160", "--min-scale", "8", "--max-scale", "64", "--split", "1,0,0", "--threads", "1"],
        &[("--out", dir)],
    )
}

/// Trains M6 on the whole overfit set and scores the training split.
fn overfit_train(data: &Path, run: &Path) -> Result<(MetricsReport, Vec<f64>, Duration), String> {
    let start = Instant::now();
    birdrone(&["train", "--model", "m6", "--epochs", "300", "--batch", "16", "--lr", "0.01", "--seed", OVERFIT_SEED], &[("--data", data), ("--out", run)])?;
    let took = start.elapsed();
    birdrone(&["eval", "--split", "train", "--timing", "false", "--threads", "1"], &[("--data", data), ("--weights", &run.join("weights.bdrn")), ("--out", &run.join("eval.json"))])?;
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let losses = fs::read_to_string(run.join("train.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).ok().and_then(|v| v["loss"]["total"].as_f64()).ok_or(format!("bad log line {l}")))
        .collect::<Result<Vec<f64>, String>>()?;
    Ok((report, losses, took))
}

struct OverfitRun {
    data: PathBuf,
    run: PathBuf,
}

fn overfit(work: &Path, triples: &mut Triples) -> (Outcome, Option<OverfitRun>) {
    let data = work.join("overfit-a").join("data");
    let run = work.join("overfit-a").join("run");
    let outcome = guarded(|| {
        overfit_data(&data)?;
        let (report, losses, took) = overfit_train(&data, &run)?;
        triples.push("overfit", &report);
        ensure!(losses.len() == 300, "{} epochs logged", losses.len());
        let ratio = losses[0] / losses[299];
        let detail = format!("mAP@0.5 {:.4}, loss {:.3} -> {:.4} ({ratio:.1}x), train {}", report.map50, losses[0], losses[299], secs(took));
        ensure!(report.map50 >= 0.90, "{detail}: mAP@0.5 below 0.90");
        ensure!(ratio >= 10.0, "{detail}: loss fell less than 10x");
        ensure!(took <= Duration::from_secs(30 * 60), "{detail}: over the 30 min budget");
        Ok(detail)
    });
    let done = run.join("weights.bdrn").exists().then_some(OverfitRun { data, run });
    (outcome, done)
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    Ok(fs::read(a).map_err(|e| format!("{}: {e}", a.display()))? == fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?)
}

/// SHA-256 over the dataset files below `dir`; the echoed config records the
/// output path and is skipped.
fn tree_hash(dir: &Path) -> Result<String, String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "config.resolved") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).map_err(|e| e.to_string())?.to_string_lossy().as_bytes());
        h.update(fs::read(&f).map_err(|e| e.to_string())?);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn determinism(work: &Path, first: Option<&OverfitRun>) -> Outcome {
    let first = first.ok_or("the first overfit run did not finish")?;
    let data = work.join("overfit-b").join("data");
    let run = work.join("overfit-b").join("run");
    overfit_data(&data)?;
    overfit_train(&data, &run)?;
    ensure!(tree_hash(&first.data)? == tree_hash(&data)?, "datasets differ");
    for f in ["weights.bdrn", "train.jsonl", "eval.json"] {
        ensure!(same_bytes(&first.run.join(f), &run.join(f))?, "{f} differs between runs");
    }
    Ok("dataset, weights, training log and report identical across two runs".into())
}

fn round_trips(work: &Path, first: Option<&OverfitRun>) -> Outcome {
    let first = first.ok_or("the first overfit run did not finish")?;
    // weights: decode then re-encode the trained file
    let file = first.run.join("weights.bdrn");
    let bytes = fs::read(&file).map_err(|e| e.to_string())?;
    let params = weights::decode(&bytes)?;
    ensure!(weights::encode(&params) == bytes, "re-encoded weights differ");
    let copy = work.join("copy.bdrn");
    weights::save(&copy, &params).map_err(|e| e.to_string())?;
    let back = weights::load(&copy).map_err(|e| e.to_string())?;
    for ((na, a), (nb, b)) in params.iter().zip(back.iter()) {
        ensure!(na == nb && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na} changed");
    }

    // labels on disk against the scenes regenerated in memory
    let spec = SceneSpec { min_scale: 8.0, max_scale: 64.0, seed: 42, ..SceneSpec::default() };
    let mut worst = 0.0f64;
    let mut boxes = 0;
    for i in 0..64u64 {
        let scene = generate_scene(&spec, 42 + i).map_err(|e| e.to_string())?;
        let read = labels::read(&dataset::label_path(&first.data, &format!("{i:06}")), CLASSES).map_err(|e| e.to_string())?;
        ensure!(read.len() == scene.labels.len(), "sample {i}: {} boxes on disk, {} generated", read.len(), scene.labels.len());
        for (a, b) in read.iter().zip(&scene.labels) {
            ensure!(a.class_id == b.class_id, "sample {i}: class changed");
            for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
                worst = worst.max((x - y).abs());
            }
            boxes += 1;
        }
    }
    ensure!(worst <= 1e-6, "label field moved by {worst:e}");

    // hash stability, and sensitivity to the seed
    let again = work.join("hash-again");
    overfit_data(&again)?;
    let other = work.join("hash-other");
    birdrone(&["generate", "--count", OVERFIT_SAMPLES, "--seed", "43", "--image-size", "160", "--min-scale", "8", "--max-scale", "64", "--split", "1,0,0"], &[("--out", &other)])?;
    let h = tree_hash(&first.data)?;
    ensure!(h == tree_hash(&again)?, "same seed, different hash");
    ensure!(h != tree_hash(&other)?, "different seed, same hash");
    Ok(format!("{} tensors bit-exact, {boxes} boxes within {worst:.1e}, dataset sha256 {}", params.len(), &h[..16]))
}

const ABLATION_EPOCHS: &str = "100";

fn ablation(work: &Path, triples: &mut Triples) -> Outcome {
    let data = work.join("ablation").join("data");
    let out = work.join("ablation").join("runs");
    birdrone(&["generate", "--count", "128", "--seed", "7", "--image-size", "160", "--min-scale", "8", "--max-scale", "64", "--threads", "1"], &[("--out", &data)])?;
    let start = Instant::now();
    birdrone(&["ablate", "--epochs", ABLATION_EPOCHS, "--seed", "42", "--threads", "1"], &[("--data", &data), ("--out", &out)])?;
    let took = start.elapsed();
    let report: AblationReport = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let names: Vec<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
    ensure!(names == ["M1", "M2", "M3", "M4", "M5", "M6"], "rows {names:?}");
    for row in &report.rows {
        ensure!(row.error.is_none(), "{} failed: {:?}", row.model, row.error);
        let m = row.metrics.as_ref().ok_or(format!("{} has no metrics", row.model))?;
        ensure!(row.wall_seconds > 0.0, "{} has no wall-clock", row.model);
        triples.push(format!("ablation {}", row.model), m);
    }
    let table = fs::read_to_string(out.join("ablation.txt")).map_err(|e| e.to_string())?;
    let header = table.lines().next().unwrap_or_default();
    let positions: Vec<Option<usize>> = ABLATION_COLUMNS.iter().map(|c| header.find(c)).collect();
    ensure!(positions.windows(2).all(|w| matches!(w, [Some(a), Some(b)] if a < b)), "table header out of order: {header}");
    let d = report.m6_minus_m1.as_ref().ok_or("no M6 - M1 deltas")?;
    ensure!(took <= Duration::from_secs(3 * 3600), "took {}", secs(took));
    eprintln!("{table}");
    Ok(format!(
        "6 rows in {}; M6-M1 P {:+.3} R {:+.3} mAP@0.5 {:+.3} mAP@0.5:0.95 {:+.3} Acc {:+.2} FN {:+.2} FP {:+.2}",
        secs(took),
        d.precision,
        d.recall,
        d.map50,
        d.map50_95,
        d.detection_accuracy,
        d.fn_pct,
        d.fp_pct
    ))
}

type Line = (usize, &'static str, Outcome);

fn step(n: usize, name: &'static str, outcome: Outcome, results: &mut Vec<Line>) {
    eprintln!("criterion {n} ({name}) finished: {}", if outcome.is_ok() { "PASS" } else { "FAIL" });
    results.push((n, name, outcome));
}

fn main() {
    let work = tempfile::tempdir().expect("scratch directory");
    let work = work.path();
    let mut results = Vec::new();
    let mut triples = Triples::default();

    step(1, "zero-offset deformable conv equals conv", guarded(zero_offset_equivalence), &mut results);
    step(2, "gradient suite", guarded(gradient_suite), &mut results);
    step(3, "branch receptive fields", guarded(receptive_fields), &mut results);
    let o = guarded(|| metrics_oracle(&mut triples));
    step(4, "metrics match brute-force oracle", o, &mut results);
    eprintln!("criterion 6: two 300-epoch overfit runs follow");
    let (o, first) = overfit(work, &mut triples);
    step(6, "desk-scale overfit", o, &mut results);
    let o = guarded(|| determinism(work, first.as_ref()));
    step(8, "determinism", o, &mut results);
    let o = guarded(|| round_trips(work, first.as_ref()));
    step(9, "format round trips", o, &mut results);
    eprintln!("criterion 7: ablation over M1-M6 at {ABLATION_EPOCHS} epochs");
    let o = guarded(|| ablation(work, &mut triples));
    step(7, "ablation harness", o, &mut results);
    let o = guarded(|| accuracy_sums(&triples));
    step(5, "accuracy + FN% + FP% = 100", o, &mut results);

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    println!();
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
