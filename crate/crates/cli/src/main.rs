//! `evmod`: moving-object detection on event-camera streams.

mod bench;
mod detect;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use evmod_core::eval::{evaluate, write_metrics_row, DetectionsFile, GroundTruth, COVERAGE_THRESHOLD, METRICS_CSV_HEADER};
use evmod_core::event::{write_events, write_frame_timestamps, SensorGeometry};
use evmod_core::pipeline::{AlphaSetting, Method};
use evmod_core::synth::{generate, preset, SceneSpec};

use files::InputError;

/// Bad flag combinations or environment that clap itself cannot catch.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "evmod", version, about = "Detect moving objects in event-camera streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Run detection over every window of an event stream.
    Detect(DetectArgs),
    /// Score saved detections against ground truth.
    Eval(EvalArgs),
    /// Draw saved detections and labels as PPM images.
    Render(RenderArgs),
    /// Run every method over every preset and write one comparison CSV.
    #[command(long_about = bench::STATEMENT)]
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Preset name: clean-2, clean-4, noisy or size-disparity.
    #[arg(required_unless_present = "spec", conflicts_with = "spec")]
    preset: Option<String>,
    /// Scene specification as JSON, in place of a preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override the scene's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Event CSV (`t,x,y,p`).
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Frame timestamps, one per line.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Ground-truth JSON; when given, metrics are written too.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Rerun from a saved manifest. Explicit flags override its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub knn: Option<usize>,
    /// Time scale: `auto` or a positive number of units per microsecond.
    #[arg(long)]
    pub alpha: Option<AlphaSetting>,
    #[arg(long)]
    pub f_min: Option<usize>,
    #[arg(long)]
    pub f_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// k-means runs per cluster count.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub min_component: Option<usize>,
    #[arg(long)]
    pub trim_quantile: Option<f64>,
    /// Edge cutoff for denoising, as a multiple of the uniform-noise k-NN radius.
    #[arg(long)]
    pub edge_cutoff: Option<f64>,
    #[arg(long)]
    pub no_denoise: bool,
    #[arg(long)]
    pub dbscan_eps: Option<f64>,
    #[arg(long)]
    pub dbscan_min_pts: Option<usize>,
    #[arg(long)]
    pub meanshift_bandwidth: Option<f64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// IoU threshold for metrics.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sequence name used in the metrics CSV.
    #[arg(long)]
    pub sequence: Option<String>,
    /// Write one PPM per window.
    #[arg(long)]
    pub render: bool,
    /// Write each window's k-NN graph.
    #[arg(long)]
    pub dump_graph: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = COVERAGE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    sequence: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Labels CSV written by `detect`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scene seeds 1..=N are run per preset.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long, default_value_t = COVERAGE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<evmod_core::Error>() {
            return if matches!(e, evmod_core::Error::Io(_)) { 3 } else { 2 };
        }
    }
    3
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Detect(args) => detect::run(args, threads()?),
        Command::Eval(args) => eval(args),
        Command::Render(args) => detect::render(args),
        Command::Bench(args) => bench::run(args, threads()?),
    }
}

/// Worker cap from `EVMOD_THREADS`.
fn threads() -> Result<Option<usize>> {
    match std::env::var("EVMOD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(UsageError(format!("EVMOD_THREADS must be a positive integer, got `{v}`")).into()),
        },
        Err(_) => Ok(None),
    }
}

pub fn geometry(width: Option<u32>, height: Option<u32>, fallback: SensorGeometry) -> Result<SensorGeometry> {
    Ok(SensorGeometry::new(
        width.unwrap_or(fallback.width),
        height.unwrap_or(fallback.height),
    )?)
}

/// Name for a metrics row: the given one, else the input's directory name.
pub fn sequence_name(given: Option<String>, input: &Path) -> String {
    given.unwrap_or_else(|| {
        input
            .canonicalize()
            .ok()
            .and_then(|p| p.parent()?.file_name().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "sequence".to_string())
    })
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: SceneSpec = match (&args.preset, &args.spec) {
        (_, Some(path)) => files::read_json(path)?,
        (Some(name), None) => preset(name)?,
        (None, None) => return Err(UsageError("give a preset or --spec".into()).into()),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    // generate validates the spec, so nothing is written for a bad one
    let scene = generate(&spec)?;
    let dir = files::ensure_dir(&args.out)?;

    let mut out = files::create(&dir.join("events.csv"))?;
    write_events(&scene.events, &mut out)?;
    std::io::Write::flush(&mut out)?;
    let mut out = files::create(&dir.join("frames.txt"))?;
    write_frame_timestamps(&scene.frames, &mut out)?;
    std::io::Write::flush(&mut out)?;
    files::write_json(&dir.join("truth.json"), &scene.truth)?;
    files::write_json(&dir.join("scene.json"), &spec)?;
    log::info!(
        "{} events ({} noise) over {} windows",
        scene.events.len(),
        scene.noise_events(),
        scene.frames.len()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let detections: DetectionsFile = files::read_json(&args.detections)?;
    let truth: GroundTruth = files::read_json(&args.truth)?;
    let report = evaluate(&detections, &truth, args.threshold)?;
    let dir = files::ensure_dir(&args.out)?;
    let sequence = sequence_name(args.sequence, &args.truth);
    let method = detections.method.as_deref().unwrap_or("unknown");
    write_metrics(&dir, &sequence, method, args.threshold, &report)?;
    println!(
        "P={:.4} R={:.4} F={:.4}",
        report.precision, report.recall, report.f_measure
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct MatchesFile<'a> {
    format_version: u32,
    threshold: f64,
    #[serde(flatten)]
    report: &'a evmod_core::eval::MetricsReport,
}

/// `metrics.csv` plus per-window matches in `matches.json`.
pub fn write_metrics(
    dir: &Path,
    sequence: &str,
    method: &str,
    threshold: f64,
    report: &evmod_core::eval::MetricsReport,
) -> Result<()> {
    let mut out = files::create(&dir.join("metrics.csv"))?;
    std::io::Write::write_all(&mut out, format!("{METRICS_CSV_HEADER}\n").as_bytes())?;
    write_metrics_row(&mut out, sequence, method, report)?;
    std::io::Write::flush(&mut out)?;
    files::write_json(
        &dir.join("matches.json"),
        &MatchesFile {
            format_version: evmod_core::eval::FORMAT_VERSION,
            threshold,
            report,
        },
    )
}
