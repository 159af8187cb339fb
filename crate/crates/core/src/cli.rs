//! The `qmd` command line.
//!
//! Exit status is 0 on success, 1 for invalid input (bad flags, malformed
//! files, inconsistent data) and 2 for runtime failures. Every file written
//! carries a provenance header with the command line, seed and version.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::annotations::{load_coco_json, Dataset};
use crate::encoding::{encode_location, encode_query};
use crate::error::{Error, Result};
use crate::evaluation::{DetectionImage, EvalCase, EvalReport, IouRegime, ReportInputs};
use crate::grid::{XSlice, YSlice};
use crate::provenance::{read_json, read_jsonl, write_json, write_jsonl, Provenance};
use crate::querysynth::{synth_kld, synth_lld, synth_sld, QueryMix, QueryType, TaskSchedule};
use crate::records::{DetectionRecord, EncodingRecord, QueryRecord, SynthRecord};
use crate::rng;
use crate::shapes::{generate_splits, load_dir, ShapeKind, ShapesConfig, SplitSizes};
use crate::toydet::benchmark::{directional_checks, run_benchmark, BenchmarkOptions, BenchmarkReport};
use crate::toydet::validation::detect_all;
use crate::toydet::{
    checkpoint, evaluate_model, generate_anchors, train, DetectorConfig, DetectorMode, EvalSuite,
    PredictOptions, QueryStrategy, SplitData, ToyDetector, TrainOptions,
};

pub const DEFAULT_SHAPES_SEED: u64 = 42;
pub const DEFAULT_SYNTH_SEED: u64 = 0;
pub const DEFAULT_SIZES: SplitSizes = SplitSizes {
    train: 2000,
    val: 200,
    test: 500,
};
/// Split sizes `benchmark --quick` generates when no data is given.
pub const QUICK_SIZES: SplitSizes = SplitSizes {
    train: 400,
    val: 40,
    test: 100,
};

#[derive(Debug, Parser)]
#[command(name = "qmd", version, about = "Query-modulated detection toolkit")]
struct Cli {
    /// Seed for every random decision of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a train/val/test shapes dataset directory.
    GenShapes(GenShapesArgs),
    /// Synthesize SLD/KLD/LLD queries from a dataset.
    Synth(SynthArgs),
    /// Encode queries as k-hot bit vectors.
    Encode(EncodeArgs),
    /// Train a query-modulated detector or the baseline.
    Train(TrainArgs),
    /// Run a checkpoint on images, with or without queries.
    Predict(PredictArgs),
    /// Score detections against synthesized queries and groundtruth.
    Eval(EvalArgs),
    /// Train and compare baseline and query-modulated models across seeds.
    Benchmark(BenchmarkArgs),
    /// Render an eval or benchmark report as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenShapesArgs {
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    val: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    /// Comma-separated shape classes (default: all six).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<ShapeKind>>,
    #[arg(long, default_value_t = 1)]
    min_objects: usize,
    #[arg(long, default_value_t = 4)]
    max_objects: usize,
    #[arg(long, default_value_t = 0.15)]
    min_size: f64,
    #[arg(long, default_value_t = 0.45)]
    max_size: f64,
    #[arg(long, default_value_t = 0.3)]
    max_iou: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TypeArg {
    Sld,
    Kld,
    Lld,
}

impl From<TypeArg> for QueryType {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::Sld => QueryType::Sld,
            TypeArg::Kld => QueryType::Kld,
            TypeArg::Lld => QueryType::Lld,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset JSON (internal format, or COCO with --coco) or a shapes split directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    coco: bool,
    #[arg(long = "type", value_enum)]
    query_type: TypeArg,
    /// Number of records; cycles over the non-empty images (default: one per image).
    #[arg(long)]
    n: Option<usize>,
    /// KLD label inclusion probability.
    #[arg(long, default_value_t = 0.5)]
    kld_p: f64,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Query JSONL (synth records or {labels, location}).
    #[arg(long, conflicts_with_all = ["labels", "location_only"])]
    queries: Option<PathBuf>,
    /// Vocabulary size; taken from --dataset when absent.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Encode a single query given by flags.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<usize>>,
    #[arg(long, default_value = "all")]
    y: YSlice,
    #[arg(long, default_value = "all")]
    x: XSlice,
    /// Print only the 8 location bits of (--y, --x).
    #[arg(long)]
    location_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ModeArg {
    Qmd,
    Baseline,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Shapes directory with train/ and val/ splits.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "qmd")]
    mode: ModeArg,
    /// Probability of a standard-detection example.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    /// Query family weights as sld,kld,lld.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.0, 0.0])]
    mix: Vec<f64>,
    #[arg(long, default_value_t = 8000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    eval_interval: usize,
    #[arg(long)]
    no_spatial_encoding: bool,
    #[arg(long)]
    class_agnostic: bool,
    #[arg(long, value_enum, default_value = "ap50")]
    regime: RegimeArg,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Shapes split directory holding the images.
    #[arg(long)]
    data: PathBuf,
    /// Synth JSONL; without it every image gets standard detection.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    score_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
    #[arg(long, default_value_t = 100)]
    max_dets: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Ap50,
    Ap5095,
}

impl From<RegimeArg> for IouRegime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Ap50 => IouRegime::Ap50,
            RegimeArg::Ap5095 => IouRegime::Ap5095,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Detections JSONL; may be repeated (e.g. query and detection outputs).
    #[arg(long, required = true, num_args = 1..)]
    detections: Vec<PathBuf>,
    /// Synth JSONL the query detections answer.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Dataset (vocabulary and groundtruth for detection mAP).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "ap50")]
    regime: RegimeArg,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Shapes directory with train/val/test; generated under --out when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    quick: bool,
    /// Also sweep the detection ratio over 0, 0.25, 0.5, 0.75, 1.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum, default_value = "ap50")]
    regime: RegimeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Eval report JSON or benchmark.json.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Row label for single eval reports.
    #[arg(long, default_value = "QMD")]
    name: String,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    let command_line = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match dispatch(&cli, &command_line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn need_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out is required for this command".into()))
}

fn dispatch(cli: &Cli, command_line: &str) -> Result<()> {
    let prov = |seed: Option<u64>| Provenance::new(format!("qmd {command_line}"), seed);
    match &cli.command {
        Command::GenShapes(a) => gen_shapes(a, cli, prov(Some(cli.seed.unwrap_or(DEFAULT_SHAPES_SEED)))),
        Command::Synth(a) => synth(a, cli, prov(Some(cli.seed.unwrap_or(DEFAULT_SYNTH_SEED)))),
        Command::Encode(a) => encode(a, cli, prov(None)),
        Command::Train(a) => train_cmd(a, cli, prov),
        Command::Predict(a) => predict(a, cli, prov(None)),
        Command::Eval(a) => eval(a, cli, prov(None)),
        Command::Benchmark(a) => benchmark(a, cli, prov),
        Command::Report(a) => report(a, cli),
    }
}

// A closed stdout (e.g. piping into `head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    Ok(())
}

fn print_jsonl<T: serde::Serialize>(records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    print_stdout(&text)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => print_stdout(text),
    }
}

/// Missing inputs are the caller's mistake, not a runtime failure.
fn need_input(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Validation(format!("{}: no such file or directory", path.display())))
    }
}

fn gen_shapes(a: &GenShapesArgs, cli: &Cli, prov: Provenance) -> Result<()> {
    let out = need_out(cli)?;
    let classes = a.classes.clone().unwrap_or_else(|| ShapeKind::ALL_VALUES.to_vec());
    let config = ShapesConfig {
        image_size: a.image_size,
        num_images: 0,
        classes,
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        min_size: a.min_size,
        max_size: a.max_size,
        max_pairwise_iou: a.max_iou,
        noise_std: a.noise,
        seed: prov.seed.unwrap_or(DEFAULT_SHAPES_SEED),
        split: None,
    };
    config.validate()?;
    let sizes = SplitSizes {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    generate_splits(&config, sizes, out, Some(&prov))?;
    info!("wrote {} / {} / {} images under {}", a.train, a.val, a.test, out.display());
    Ok(())
}

/// Loads a dataset from an internal-format file, a COCO file or a shapes
/// split directory.
fn load_dataset(path: &Path, coco: bool) -> Result<Dataset> {
    need_input(path)?;
    if coco {
        load_coco_json(path)
    } else if path.is_dir() {
        Dataset::load_internal(path.join(crate::shapes::ANNOTATIONS_FILE))
    } else {
        Dataset::load_internal(path)
    }
}

fn synth(a: &SynthArgs, cli: &Cli, prov: Provenance) -> Result<()> {
    if !(a.kld_p > 0.0 && a.kld_p <= 1.0) {
        return Err(Error::Validation(format!("--kld-p must lie in (0, 1], got {}", a.kld_p)));
    }
    let dataset = load_dataset(&a.dataset, a.coco)?;
    let seed = prov.seed.unwrap_or(DEFAULT_SYNTH_SEED);
    let kind: QueryType = a.query_type.into();
    let usable: Vec<_> = dataset.images.iter().filter(|i| !i.boxes.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::Validation("dataset has no image with groundtruth".into()));
    }
    let n = a.n.unwrap_or(usable.len());
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let img = usable[i % usable.len()];
        let round = i / usable.len();
        let mut r = rng::stream(seed, &format!("synth:{}:{}:{round}", kind.name(), img.image_id));
        let ex = match kind {
            QueryType::Sld => synth_sld(img, &mut r),
            QueryType::Kld => synth_kld(img, &mut r, a.kld_p),
            QueryType::Lld => synth_lld(img, &mut r),
        }?;
        records.push(SynthRecord::new(&img.image_id, format!("q{i:06}"), kind, ex));
    }
    match cli.out.as_deref() {
        Some(p) => write_jsonl(p, Some(&prov), &records),
        None => print_jsonl(&records),
    }
}

fn encode(a: &EncodeArgs, cli: &Cli, prov: Provenance) -> Result<()> {
    if a.location_only {
        let bits = encode_location(a.y, a.x);
        return write_text(cli.out.as_deref(), &format!("{}\n", serde_json::to_string(&bits)?));
    }
    let num_classes = match (a.num_classes, &a.dataset) {
        (Some(c), _) => c,
        (None, Some(d)) => load_dataset(d, false)?.num_classes(),
        (None, None) => {
            return Err(Error::Validation("encode needs --num-classes or --dataset".into()))
        }
    };
    let queries: Vec<QueryRecord> = match (&a.queries, &a.labels) {
        (Some(p), _) => read_jsonl(need_input(p)?)?,
        (None, Some(labels)) => vec![QueryRecord {
            query_id: None,
            labels: labels.clone(),
            location: Some(crate::querysynth::Location { y: a.y, x: a.x }),
        }],
        (None, None) => {
            return Err(Error::Validation(
                "encode needs --queries, --labels or --location-only".into(),
            ))
        }
    };
    let records = queries
        .iter()
        .map(|q| {
            Ok(EncodingRecord {
                query_id: q.query_id.clone(),
                bits: encode_query(&q.query(), num_classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    match cli.out.as_deref() {
        Some(p) => write_jsonl(p, Some(&prov), &records),
        None => print_jsonl(&records),
    }
}

fn train_cmd(a: &TrainArgs, cli: &Cli, prov: impl Fn(Option<u64>) -> Provenance) -> Result<()> {
    let out = need_out(cli)?;
    need_input(&a.data)?;
    let (train_ds, train_imgs) = load_dir(a.data.join("train"))?;
    let (val_ds, val_imgs) = load_dir(a.data.join("val"))?;
    let mut config = DetectorConfig::new(train_ds.num_classes());
    config.steps = a.steps;
    config.batch_size = a.batch_size;
    config.learning_rate = a.lr;
    config.eval_interval = a.eval_interval;
    config.spatial_encoding = !a.no_spatial_encoding;
    config.class_agnostic = a.class_agnostic;
    config.seed = cli.seed.unwrap_or(config.seed);
    config.validate()?;
    let prov = prov(Some(config.seed));
    let &[sld, kld, lld] = a.mix.as_slice() else {
        return Err(Error::Validation(format!("--mix takes three weights, got {}", a.mix.len())));
    };
    let mix = QueryMix { sld, kld, lld };
    let opts = TrainOptions {
        mode: match a.mode {
            ModeArg::Qmd => DetectorMode::QueryModulated,
            ModeArg::Baseline => DetectorMode::Baseline,
        },
        schedule: TaskSchedule::new(a.ratio, mix)?,
        regime: a.regime.into(),
    };
    let run = train(
        SplitData::new(&train_ds, &train_imgs)?,
        Some(SplitData::new(&val_ds, &val_imgs)?),
        &config,
        &opts,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let extra = serde_json::json!({
        "provenance": prov,
        "schedule": run.schedule,
        "best_step": run.best_step,
    });
    checkpoint::save(out.join("checkpoint.bin"), &run.best, extra.clone())?;
    checkpoint::save(out.join("last.bin"), &run.last, extra)?;
    #[derive(serde::Serialize)]
    struct LossLine {
        step: usize,
        loss: f64,
    }
    let history: Vec<LossLine> = run
        .loss_history
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossLine { step, loss })
        .collect();
    write_jsonl(out.join("history.jsonl"), Some(&prov), &history)?;
    write_json(
        out.join("run.json"),
        &serde_json::json!({
            "provenance": prov,
            "config": run.config,
            "mode": run.mode,
            "schedule": run.schedule,
            "validation": run.validation,
            "best_step": run.best_step,
            "task_counts": run.task_counts,
            "rng_word_pos": run.rng_word_pos.to_string(),
        }),
    )?;
    Ok(())
}

/// How a checkpoint answers queries, from its mode and recorded schedule.
fn strategy_for(model: &ToyDetector<f32>, extra: &serde_json::Value) -> QueryStrategy {
    let schedule: Option<TaskSchedule> = extra
        .get("schedule")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    match (model.mode, schedule) {
        (DetectorMode::Baseline, _) => QueryStrategy::PostProcessed,
        (DetectorMode::QueryModulated, Some(s)) => QueryStrategy::for_schedule(&s),
        (DetectorMode::QueryModulated, None) => QueryStrategy::Conditioned,
    }
}

fn predict(a: &PredictArgs, cli: &Cli, prov: Provenance) -> Result<()> {
    let out = need_out(cli)?;
    let (model, extra) = checkpoint::load::<f32>(need_input(&a.checkpoint)?)?;
    let (dataset, images) = load_dir(need_input(&a.data)?)?;
    let strategy = strategy_for(&model, &extra);
    let opts = PredictOptions {
        score_threshold: a.score_threshold,
        nms_iou: a.nms_iou,
        max_dets: a.max_dets,
        merge_classes: false,
    };
    let anchors = generate_anchors(&model.config);
    let mut records = Vec::new();
    match &a.queries {
        None => {
            let dets = detect_all(&model, &images)?;
            for (img, d) in dataset.images.iter().zip(dets) {
                records.push(DetectionRecord {
                    image_id: img.image_id.clone(),
                    query_id: None,
                    detections: d,
                });
            }
        }
        Some(path) => {
            let queries: Vec<SynthRecord> = read_jsonl(need_input(path)?)?;
            let index: std::collections::HashMap<&str, usize> = dataset
                .images
                .iter()
                .enumerate()
                .map(|(i, r)| (r.image_id.as_str(), i))
                .collect();
            let baseline_dets = match strategy {
                QueryStrategy::PostProcessed => Some(detect_all(&model, &images)?),
                QueryStrategy::Conditioned => None,
            };
            for q in &queries {
                let &i = index.get(q.image_id.as_str()).ok_or_else(|| {
                    Error::Validation(format!("query {} names unknown image {}", q.query_id, q.image_id))
                })?;
                let query = q.query();
                let detections = match &baseline_dets {
                    Some(all) => crate::evaluation::post_process_baseline(&all[i], &query),
                    None => {
                        let enc = encode_query(&query, model.config.num_classes)?;
                        let conditioned = PredictOptions {
                            merge_classes: true,
                            ..opts
                        };
                        model
                            .predict_batch(&[&images[i]], Some(&[enc]), &anchors, &conditioned)?
                            .pop()
                            .unwrap_or_default()
                    }
                };
                records.push(DetectionRecord {
                    image_id: q.image_id.clone(),
                    query_id: Some(q.query_id.clone()),
                    detections,
                });
            }
        }
    }
    write_jsonl(out, Some(&prov), &records)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EvalOutput {
    provenance: Provenance,
    #[serde(flatten)]
    report: EvalReport,
}

fn eval(a: &EvalArgs, cli: &Cli, prov: Provenance) -> Result<()> {
    let dataset = load_dataset(&a.dataset, false)?;
    let mut detections: Vec<DetectionRecord> = Vec::new();
    for p in &a.detections {
        detections.extend(read_jsonl::<DetectionRecord>(need_input(p)?)?);
    }
    let queries: Vec<SynthRecord> = match &a.queries {
        Some(p) => read_jsonl(need_input(p)?)?,
        None => Vec::new(),
    };
    let by_query: std::collections::HashMap<&str, &DetectionRecord> = detections
        .iter()
        .filter_map(|d| d.query_id.as_deref().map(|q| (q, d)))
        .collect();
    let mut inputs = ReportInputs::default();
    for q in &queries {
        let Some(d) = by_query.get(q.query_id.as_str()) else {
            return Err(Error::Validation(format!("no detections for query {}", q.query_id)));
        };
        let case = EvalCase {
            image_id: q.image_id.clone(),
            query: q.query(),
            groundtruth: q.targets.clone(),
            detections: d.detections.clone(),
        };
        match q.query_type {
            QueryType::Sld => inputs.sld.push(case),
            QueryType::Kld => inputs.kld.push(case),
            QueryType::Lld => inputs.lld.push(case),
        }
    }
    let gt: std::collections::HashMap<&str, &crate::annotations::ImageRecord> = dataset
        .images
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();
    for d in detections.iter().filter(|d| d.query_id.is_none()) {
        let rec = gt.get(d.image_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("detections name unknown image {}", d.image_id))
        })?;
        inputs.det.push(DetectionImage {
            image_id: d.image_id.clone(),
            detections: d.detections.clone(),
            groundtruth: rec.boxes.clone(),
        });
    }
    let report = EvalReport::build(&inputs, &dataset.vocab, a.regime.into());
    let out = EvalOutput {
        provenance: prov,
        report,
    };
    match cli.out.as_deref() {
        Some(p) => write_json(p, &out),
        None => print_stdout(&format!("{}\n", serde_json::to_string_pretty(&out)?)),
    }
}

fn benchmark(a: &BenchmarkArgs, cli: &Cli, prov: impl Fn(Option<u64>) -> Provenance) -> Result<()> {
    let out = need_out(cli)?;
    let mut opts = if a.quick {
        BenchmarkOptions::quick()
    } else {
        BenchmarkOptions::default()
    };
    opts.sweep = a.sweep;
    opts.regime = a.regime.into();
    if let Some(seeds) = &a.seeds {
        opts.seeds = seeds.clone();
    }
    if let Some(steps) = a.steps {
        opts.steps = steps;
        opts.eval_interval = opts.eval_interval.min(steps);
    }
    opts.validate()?;
    let prov = prov(cli.seed);
    let data = match &a.data {
        Some(d) => d.clone(),
        None => {
            let dir = out.join("shapes");
            let config = ShapesConfig {
                seed: cli.seed.unwrap_or(DEFAULT_SHAPES_SEED),
                ..ShapesConfig::default()
            };
            let sizes = if a.quick { QUICK_SIZES } else { DEFAULT_SIZES };
            generate_splits(&config, sizes, &dir, Some(&prov))?;
            dir
        }
    };
    let report = run_benchmark(&data, Some(out), &opts, Some(prov))?;
    let mut text = report.to_text();
    for c in directional_checks(&report) {
        text.push_str(&format!("[{}] {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    print_stdout(&text)
}

fn report(a: &ReportArgs, cli: &Cli) -> Result<()> {
    let value: serde_json::Value = read_json(need_input(&a.input)?)?;
    let text = if value.get("results").is_some() && value.get("median").is_some() {
        let r: BenchmarkReport = serde_json::from_value(value)?;
        match a.format {
            FormatArg::Text => r.to_text(),
            FormatArg::Csv => r.to_csv(),
        }
    } else {
        let r: EvalOutput = serde_json::from_value(value)?;
        match a.format {
            FormatArg::Text => r.report.to_text(&a.name),
            FormatArg::Csv => r.report.to_csv(&a.name),
        }
    };
    write_text(cli.out.as_deref(), &text)
}

/// Scores a checkpoint on a shapes split the way the benchmark does.
pub fn evaluate_checkpoint(checkpoint_path: &Path, split_dir: &Path, regime: IouRegime) -> Result<EvalReport> {
    let (model, extra) = checkpoint::load::<f32>(checkpoint_path)?;
    let (dataset, images) = load_dir(split_dir)?;
    let suite = EvalSuite::new(&dataset);
    let strategy = strategy_for(&model, &extra);
    evaluate_model(&model, &dataset, &images, &suite, strategy, regime)
}
