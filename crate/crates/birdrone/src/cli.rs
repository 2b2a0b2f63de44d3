//! `birdrone` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use birdrone_core::backbone::Ablation;
use birdrone_core::data::{dataset_stats, generate_scene, split_dataset, Sample, SceneSpec, DEFAULT_RATIOS};
use birdrone_core::detect::{Detection, Detector, ModelConfig};
use birdrone_core::metrics::{evaluate, MetricsReport};
use birdrone_core::train::{predict_samples, train, TrainConfig, EVAL_DECODE_CONF};
use birdrone_core::verify;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{self, Splits};
use crate::error::{Error, Result};
use crate::report::{self, AblationReport, AblationRow};
use crate::{par, ppm, render, timing, weights};

const NUM_CLASSES: usize = 2;
pub const WEIGHTS_FILE: &str = "weights.bdrn";
pub const TRAIN_LOG_FILE: &str = "train.jsonl";

#[derive(Debug, Parser)]
#[command(name = "birdrone", version, about = "Bird/drone detector: data generation, training, evaluation and rendering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    Generate(GenerateArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate weights (or a predictions file) on a split.
    Eval(EvalArgs),
    /// Detect objects in one image and write it with boxes drawn.
    #[command(alias = "render")]
    Infer(InferArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate all six model variants on one dataset.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Fraction of objects drawn from the extremely small range.
    #[arg(long)]
    pub small_bias: Option<f64>,
    #[arg(long)]
    pub min_scale: Option<f64>,
    #[arg(long)]
    pub max_scale: Option<f64>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Train/val/test ratios, e.g. `0.7,0.2,0.1`.
    #[arg(long)]
    pub split: Option<String>,
    /// Replace the dataset in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long, env = "BDRN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// m1 (baseline) .. m6 (all modules).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate every N epochs (0: only after the last).
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Report JSON path; the text table goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON map of image id to detections, used instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the model's detections as a predictions file.
    #[arg(long)]
    pub save_predictions: Option<PathBuf>,
    /// Measure per-frame inference time.
    #[arg(long)]
    pub timing: Option<bool>,
    #[arg(long, env = "BDRN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// dconv, spatial, channel, mpda, rmpda, aelan, loss, model or all.
    #[arg(long)]
    pub module: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale every convolution input gradient by 1.5 to exercise the failure path.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Split every model is evaluated on.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "BDRN_THREADS")]
    pub threads: Option<usize>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn on(flag: bool) -> Option<String> {
    flag.then(|| "true".to_string())
}

fn d<T: ToString>(v: T) -> Option<String> {
    Some(v.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Infer(a) => infer(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Usage(format!("split ratio '{p}': {e}"))))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|_| Error::Usage(format!("split needs three ratios, got '{text}'")))
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let defaults = SceneSpec::default();
    let ratios = DEFAULT_RATIOS.map(|r| r.to_string()).join(",");
    let cfg = RunConfig::resolve(
        &[
            ("out", None),
            ("count", d(100)),
            ("seed", d(0)),
            ("image_size", d(defaults.image_size)),
            ("small_bias", d(defaults.small_bias)),
            ("min_scale", d(defaults.min_scale)),
            ("max_scale", d(defaults.max_scale)),
            ("min_objects", d(defaults.min_objects)),
            ("max_objects", d(defaults.max_objects)),
            ("split", d(ratios)),
            ("force", d(false)),
        ],
        a.config.as_deref(),
        &[
            ("out", path(&a.out)),
            ("count", s(&a.count)),
            ("seed", s(&a.seed)),
            ("image_size", s(&a.image_size)),
            ("small_bias", s(&a.small_bias)),
            ("min_scale", s(&a.min_scale)),
            ("max_scale", s(&a.max_scale)),
            ("min_objects", s(&a.min_objects)),
            ("max_objects", s(&a.max_objects)),
            ("split", a.split.clone()),
            ("force", on(a.force)),
        ],
    )?;
    let out: PathBuf = cfg.require("out")?;
    let count: usize = cfg.require("count")?;
    let spec = SceneSpec {
        image_size: cfg.require("image_size")?,
        min_objects: cfg.require("min_objects")?,
        max_objects: cfg.require("max_objects")?,
        min_scale: cfg.require("min_scale")?,
        max_scale: cfg.require("max_scale")?,
        small_bias: cfg.require("small_bias")?,
        seed: cfg.require("seed")?,
        ..defaults
    };
    spec.validate()?;
    let ratios = parse_ratios(cfg.raw("split").unwrap_or_default())?;
    dataset::prepare_dir(&out, cfg.flag("force")?)?;

    let threads = par::thread_count(a.threads);
    let samples: Vec<Sample> = par::map_indexed(count, threads, |i| {
        generate_scene(&spec, spec.seed.wrapping_add(i as u64)).map(|mut s| {
            s.id = format!("{i:06}");
            s
        })
    })
    .into_iter()
    .collect::<std::result::Result<_, _>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let (train, val, test) = split_dataset(ids, ratios, spec.seed)?;
    let splits = Splits { train, val, test };
    dataset::write_dataset(&out, &samples, &splits)?;
    cfg.write_into(&out)?;

    let stats = dataset_stats(samples.iter().map(|s| s.labels.as_slice()), spec.image_size, NUM_CLASSES);
    let table = report::census_table("Dataset census", &stats);
    let census = out.join("census.txt");
    fs::write(&census, &table).map_err(|e| Error::io(&census, e))?;
    print!("{table}");
    println!("Splits: train {}, val {}, test {}", splits.train.len(), splits.val.len(), splits.test.len());
    Ok(())
}

/// Square side of the loaded images, checked against an explicit setting.
fn data_image_size(samples: &[Sample], dir: &Path, requested: Option<usize>) -> Result<usize> {
    let size = dataset::image_size(samples, dir)?;
    match requested {
        Some(r) if r != size => Err(Error::Usage(format!("--image-size {r} does not match the {size} px images in {}", dir.display()))),
        _ => Ok(size),
    }
}

fn train_defaults() -> TrainConfig {
    TrainConfig::default()
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let t = train_defaults();
    let cfg = RunConfig::resolve(
        &[
            ("data", None),
            ("out", None),
            ("model", d("m6")),
            ("epochs", d(t.epochs)),
            ("lr", d(t.learning_rate)),
            ("batch", d(t.batch_size)),
            ("image_size", None),
            ("seed", d(t.seed)),
            ("eval_every", d(t.eval_every)),
            ("momentum", d(t.momentum)),
            ("weight_decay", d(t.weight_decay)),
            ("grad_clip", d(t.grad_clip)),
        ],
        a.config.as_deref(),
        &[
            ("data", path(&a.data)),
            ("out", path(&a.out)),
            ("model", a.model.clone()),
            ("epochs", s(&a.epochs)),
            ("lr", s(&a.lr)),
            ("batch", s(&a.batch)),
            ("image_size", s(&a.image_size)),
            ("seed", s(&a.seed)),
            ("eval_every", s(&a.eval_every)),
        ],
    )?;
    let data: PathBuf = cfg.require("data")?;
    let out: PathBuf = cfg.require("out")?;
    let model_name: String = cfg.require("model")?;
    let ablation = Ablation::from_name(&model_name)?;
    let train_set = dataset::read_split(&data, "train", NUM_CLASSES)?;
    let val_set = dataset::read_split(&data, "val", NUM_CLASSES)?;
    let image_size = data_image_size(&train_set, &data, cfg.get("image_size")?)?;
    let mut resolved = cfg.clone();
    resolved.set("image_size", image_size);
    let config = TrainConfig {
        image_size,
        batch_size: cfg.require("batch")?,
        epochs: cfg.require("epochs")?,
        learning_rate: cfg.require("lr")?,
        momentum: cfg.require("momentum")?,
        weight_decay: cfg.require("weight_decay")?,
        grad_clip: cfg.require("grad_clip")?,
        seed: cfg.require("seed")?,
        ablation,
        eval_every: cfg.require("eval_every")?,
        ..t
    };
    config.validate()?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    resolved.write_into(&out)?;

    let channels = train_set[0].image.shape().c;
    let mut model = new_model(ablation, image_size, channels, config.seed)?;
    let val = (!val_set.is_empty()).then_some(val_set.as_slice());
    let log_path = out.join(TRAIN_LOG_FILE);
    let logs = run_training(&mut model, &train_set, val, &config, &log_path, true)?;
    weights::save(&out.join(WEIGHTS_FILE), &model.params)?;
    if let Some(m) = logs.last().and_then(|l| l.metrics.as_ref()) {
        report::write_json(&out.join("val_metrics.json"), m)?;
        print!("{}", report::metrics_table(m));
    }
    Ok(())
}

pub fn new_model(ablation: Ablation, image_size: usize, channels: usize, seed: u64) -> Result<Detector<f32>> {
    let mut mc = ModelConfig::new(ablation, image_size);
    mc.backbone.in_channels = channels;
    Ok(Detector::new(mc, seed)?)
}

/// Trains while appending one JSON line per epoch to `log_path`.
fn run_training(
    model: &mut Detector<f32>,
    train_set: &[Sample],
    val: Option<&[Sample]>,
    config: &TrainConfig,
    log_path: &Path,
    echo: bool,
) -> Result<Vec<birdrone_core::train::EpochLog>> {
    let mut file = fs::File::create(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut io_err = None;
    let start = Instant::now();
    let logs = train(model, train_set, val, config, |e| {
        let line = serde_json::to_string(e).expect("epoch log serializes");
        if let Err(err) = writeln!(file, "{line}") {
            io_err.get_or_insert(err);
        }
        if echo {
            eprintln!(
                "epoch {:>4}/{} lr {:.5} loss {:.5} (box {:.4} obj {:.4} cls {:.4}) {:.1}s",
                e.epoch + 1,
                config.epochs,
                e.lr,
                e.loss.total,
                e.loss.box_loss,
                e.loss.objectness_loss,
                e.loss.class_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(log_path, e));
    }
    Ok(logs)
}

/// Detections for every sample, fanned out over `threads` workers.
pub fn predict_parallel(model: &Detector<f32>, samples: &[Sample], nms_iou: f64, threads: usize) -> Result<Vec<Vec<Detection>>> {
    let threads = threads.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let parts = par::map_indexed(threads, threads, |t| {
        let lo = (t * chunk).min(samples.len());
        let hi = ((t + 1) * chunk).min(samples.len());
        predict_samples(model, &samples[lo..hi], EVAL_DECODE_CONF, nms_iou, 16)
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Directory a file path lives in, `.` for a bare file name.
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn read_predictions(path: &Path, samples: &[Sample]) -> Result<Vec<Vec<Detection>>> {
    let mut map: BTreeMap<String, Vec<Detection>> = report::read_json(path)?;
    samples.iter().map(|s| Ok(map.remove(&s.id).unwrap_or_default())).collect()
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let t = train_defaults();
    let cfg = RunConfig::resolve(
        &[
            ("data", None),
            ("weights", None),
            ("split", d("test")),
            ("conf", d(t.conf_threshold)),
            ("nms_iou", d(t.nms_iou)),
            ("out", None),
            ("predictions", None),
            ("save_predictions", None),
            ("timing", d(true)),
        ],
        a.config.as_deref(),
        &[
            ("data", path(&a.data)),
            ("weights", path(&a.weights)),
            ("split", a.split.clone()),
            ("conf", s(&a.conf)),
            ("nms_iou", s(&a.nms_iou)),
            ("out", path(&a.out)),
            ("predictions", path(&a.predictions)),
            ("save_predictions", path(&a.save_predictions)),
            ("timing", s(&a.timing)),
        ],
    )?;
    let data: PathBuf = cfg.require("data")?;
    let out: PathBuf = cfg.require("out")?;
    let split: String = cfg.require("split")?;
    let conf: f64 = cfg.require("conf")?;
    let nms_iou: f64 = cfg.require("nms_iou")?;
    let samples = dataset::read_split(&data, &split, NUM_CLASSES)?;
    let image_size = dataset::image_size(&samples, &data)?;
    let gts: Vec<_> = samples.iter().map(|s| s.labels.clone()).collect();

    let (preds, ait) = match cfg.get::<PathBuf>("predictions")? {
        Some(p) => (read_predictions(&p, &samples)?, None),
        None => {
            let wpath: PathBuf = cfg.require("weights")?;
            let model = weights::load_detector(&wpath, image_size)?;
            if model.config.backbone.in_channels != samples[0].image.shape().c {
                return Err(Error::format(
                    &wpath,
                    format!(
                        "weight/architecture mismatch: model takes {} channels, images have {}",
                        model.config.backbone.in_channels,
                        samples[0].image.shape().c
                    ),
                ));
            }
            let preds = predict_parallel(&model, &samples, nms_iou, par::thread_count(a.threads))?;
            let ait = if cfg.require::<bool>("timing")? {
                let n = samples.len().min(timing::MIN_TIMED_FRAMES);
                Some(timing::timed_inference(&model, &samples[..n], conf, nms_iou)?)
            } else {
                None
            };
            (preds, ait)
        }
    };
    cfg.write_into(&parent_dir(&out))?;
    if let Some(p) = cfg.get::<PathBuf>("save_predictions")? {
        let map: BTreeMap<&str, &Vec<Detection>> = samples.iter().map(|s| s.id.as_str()).zip(&preds).collect();
        fs::create_dir_all(parent_dir(&p)).map_err(|e| Error::io(&p, e))?;
        report::write_json(&p, &map)?;
    }
    let mut rep: MetricsReport = evaluate(&preds, &gts, conf, image_size, NUM_CLASSES);
    rep.ait_seconds = ait;
    report::write_json(&out, &rep)?;
    let table = report::metrics_table(&rep);
    let txt = out.with_extension("txt");
    fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    print!("{table}");
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    let t = train_defaults();
    let cfg = RunConfig::resolve(
        &[("weights", None), ("image", None), ("conf", d(t.conf_threshold)), ("nms_iou", d(t.nms_iou)), ("out", None)],
        a.config.as_deref(),
        &[
            ("weights", path(&a.weights)),
            ("image", path(&a.image)),
            ("conf", s(&a.conf)),
            ("nms_iou", s(&a.nms_iou)),
            ("out", path(&a.out)),
        ],
    )?;
    let wpath: PathBuf = cfg.require("weights")?;
    let ipath: PathBuf = cfg.require("image")?;
    let out: PathBuf = cfg.require("out")?;
    let image = ppm::read(&ipath)?;
    let sh = image.shape();
    if sh.h != sh.w {
        return Err(Error::format(&ipath, format!("image must be square, got {}x{}", sh.w, sh.h)));
    }
    let model = weights::load_detector(&wpath, sh.h)?;
    if model.config.backbone.in_channels != sh.c {
        return Err(Error::format(
            &wpath,
            format!("weight/architecture mismatch: model takes {} channels, image has {}", model.config.backbone.in_channels, sh.c),
        ));
    }
    let dets = model.predict(&image, cfg.require("conf")?, cfg.require("nms_iou")?)?.remove(0);
    for det in &dets {
        println!("{}", serde_json::to_string(det).expect("detection serializes"));
    }
    cfg.write_into(&parent_dir(&out))?;
    ppm::write(&out, &render::render(&image, &dets))
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = RunConfig::resolve(
        &[("module", d("all")), ("seed", d(0)), ("corrupt", d(false))],
        a.config.as_deref(),
        &[("module", a.module.clone()), ("seed", s(&a.seed)), ("corrupt", on(a.corrupt))],
    )?;
    for line in cfg.render().lines() {
        println!("# {line}");
    }
    let module: String = cfg.require("module")?;
    let entries = verify::run(&module, cfg.require("seed")?, cfg.flag("corrupt")?)?;
    println!("{:<10}{:>16}{:>12}{:>10}  result", "module", "max rel error", "tolerance", "coords");
    let mut failed = Vec::new();
    for e in &entries {
        println!(
            "{:<10}{:>16.3e}{:>12.0e}{:>10}  {}",
            e.module,
            e.check.max_rel_error,
            e.tolerance,
            e.check.coords_checked,
            if e.passed { "PASS" } else { "FAIL" }
        );
        if !e.passed {
            failed.push(e.module);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let t = train_defaults();
    let cfg = RunConfig::resolve(
        &[
            ("data", None),
            ("out", None),
            ("epochs", d(100)),
            ("seed", d(t.seed)),
            ("lr", d(t.learning_rate)),
            ("batch", d(t.batch_size)),
            ("split", d("val")),
        ],
        a.config.as_deref(),
        &[
            ("data", path(&a.data)),
            ("out", path(&a.out)),
            ("epochs", s(&a.epochs)),
            ("seed", s(&a.seed)),
            ("lr", s(&a.lr)),
            ("batch", s(&a.batch)),
            ("split", a.split.clone()),
        ],
    )?;
    let data: PathBuf = cfg.require("data")?;
    let out: PathBuf = cfg.require("out")?;
    let split: String = cfg.require("split")?;
    let epochs: usize = cfg.require("epochs")?;
    let seed: u64 = cfg.require("seed")?;
    let train_set = dataset::read_split(&data, "train", NUM_CLASSES)?;
    let eval_set = dataset::read_split(&data, &split, NUM_CLASSES)?;
    if eval_set.is_empty() {
        return Err(Error::Usage(format!("split '{split}' of {} is empty", data.display())));
    }
    let image_size = data_image_size(&train_set, &data, None)?;
    let channels = train_set[0].image.shape().c;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.write_into(&out)?;
    let threads = par::thread_count(a.threads);
    let gts: Vec<_> = eval_set.iter().map(|s| s.labels.clone()).collect();

    let mut rows = Vec::new();
    for name in Ablation::NAMES {
        let ablation = Ablation::from_name(name)?;
        let mut row = AblationRow::new(name, ablation);
        let start = Instant::now();
        let config = TrainConfig {
            image_size,
            epochs,
            seed,
            learning_rate: cfg.require("lr")?,
            batch_size: cfg.require("batch")?,
            ablation,
            ..t.clone()
        };
        let dir = out.join(name);
        let result = (|| -> Result<(usize, f64, MetricsReport)> {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut model = new_model(ablation, image_size, channels, seed)?;
            let logs = run_training(&mut model, &train_set, None, &config, &dir.join(TRAIN_LOG_FILE), false)?;
            weights::save(&dir.join(WEIGHTS_FILE), &model.params)?;
            let preds = predict_parallel(&model, &eval_set, config.nms_iou, threads)?;
            let rep = evaluate(&preds, &gts, config.conf_threshold, image_size, NUM_CLASSES);
            let last = logs.last().map_or(f64::NAN, |l| l.loss.total);
            Ok((model.params.total(), last, rep))
        })();
        row.wall_seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((params, loss, rep)) => {
                row.parameters = params;
                row.final_loss = Some(loss);
                row.metrics = Some(rep);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        eprintln!("{} done in {:.1}s{}", row.model, row.wall_seconds, row.error.as_ref().map_or(String::new(), |e| format!(": {e}")));
        rows.push(row);
    }
    let rep = AblationReport::new(epochs, seed, &split, rows);
    report::write_json(&out.join("ablation.json"), &rep)?;
    let table = report::ablation_table(&rep);
    let txt = out.join("ablation.txt");
    fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    print!("{table}");
    let failed: Vec<&str> = rep.rows.iter().filter(|r| r.error.is_some()).map(|r| r.model.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::format(out.join("ablation.json"), format!("ablation rows failed: {}", failed.join(", "))))
    }
}
