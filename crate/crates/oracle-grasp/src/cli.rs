//! Command-line interface: predict, record, replay, batch-eval, and
//! synth subcommands over the library pipeline.
//!
//! Exit codes: 0 on success, 1 on runtime failures (pipeline errors,
//! replay divergence, failed batch items), 2 on usage errors (bad
//! arguments, invalid configuration, transcript/input mismatches).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::config::{load_app_config, AppConfig, ConfigError};
use crate::depth_refine::{clearance_radius_px, DepthError, DepthMap};
use crate::eval::{evaluate_batch, AnnotationSet, EvalError, EvalReport};
use crate::geometry::Point;
use crate::io::{
    load_annotation, load_depth_with_digest, load_manifest, load_rgb_with_digest, read_transcript,
    save_annotation, save_depth, save_rgb, write_transcript, DatasetManifest, IoError,
    ManifestEntry,
};
use crate::oracle::{
    HttpOracle, Oracle, OracleTranscript, ReplayOracle, ScriptedOracle, TranscriptHeader,
    TRANSCRIPT_VERSION,
};
use crate::pipeline::{predict_grasp, GraspResult, PipelineConfig, PipelineFailure};
use crate::synth::{generate, SceneKind, SceneSpec, SynthError};

/// Every [`PipelineConfig`] field and the command-line surface that
/// overrides it. A test keeps this table in sync with the struct; the
/// table keeps `--help` in sync with the configuration file.
pub const PIPELINE_FLAG_MAP: &[(&str, &str)] = &[
    ("k", "--k"),
    ("m", "--m"),
    ("gamma", "--gamma"),
    ("rho", "--rho"),
    ("alpha_min_deg", "--alpha-min-deg"),
    ("anisotropy_min", "--anisotropy-min"),
    ("crop_margin_frac", "--crop-margin-frac"),
    ("crop_iters", "--crop-iters"),
    ("max_parse_retries", "--max-parse-retries"),
    ("continuous_early_stop", "--continuous-early-stop"),
    ("use_scp", "--ablate scp"),
    ("use_orientation_refinement", "--ablate or"),
    ("use_explanation", "--ablate be"),
    ("use_depth_refinement", "--ablate gr"),
    ("grid_schedule", "--grid-schedule"),
];

#[derive(Debug)]
enum CliError {
    /// Wrong invocation or mismatched inputs; exit code 2.
    Usage(String),
    /// The run itself failed; exit code 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })+
    };
}

runtime_from!(IoError, PipelineFailure, DepthError, EvalError, SynthError, std::io::Error);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        // A config file that is missing, unparsable, or out of range is a
        // problem with what the user asked for, not with the run itself.
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "oracle-grasp",
    version,
    about = "Grid-guided grasp prediction with pluggable oracles"
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Predict a grasp for one image.
    Predict(PredictArgs),
    /// Predict and record the full oracle transcript for later replay.
    Record(RecordArgs),
    /// Re-run a recorded transcript and verify it reproduces exactly.
    Replay(ReplayArgs),
    /// Predict over a dataset manifest and score against annotations.
    BatchEval(BatchEvalArgs),
    /// Generate synthetic RGB-D test scenes with ground truth.
    Synth(SynthArgs),
}

/// Pipeline features `--ablate` can disable.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Ablation {
    /// Skip the scene-context query; grasp prompts carry no description.
    Scp,
    /// Never run the rotated-image orientation refinement stage.
    Or,
    /// Drop the brief-explanation request from grasp prompts.
    Be,
    /// Skip depth-based grasp refinement even when a depth map is given.
    Gr,
}

fn parse_grid_size(text: &str) -> Result<(u32, u32), String> {
    let (u, v) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got {text:?}"))?;
    let parse = |s: &str| s.trim().parse::<u32>().map_err(|e| format!("bad grid size {text:?}: {e}"));
    Ok((parse(u)?, parse(v)?))
}

fn parse_point(text: &str) -> Result<Point, String> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got {text:?}"))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad point {text:?}: {e}"));
    Ok(Point::new(parse(x)?, parse(y)?))
}

fn parse_segment(text: &str) -> Result<(Point, Point), String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("expected X1,Y1:X2,Y2, got {text:?}"))?;
    Ok((parse_point(a)?, parse_point(b)?))
}

#[derive(Args, Debug, Clone, Default)]
struct PipelineArgs {
    /// Total grasp-region query budget.
    #[arg(long, help_heading = "Pipeline overrides")]
    k: Option<u32>,
    /// Queries per stage (initial, crop, and rotated).
    #[arg(long, help_heading = "Pipeline overrides")]
    m: Option<u32>,
    /// Overlap (IoU) threshold for intersection candidates.
    #[arg(long, help_heading = "Pipeline overrides")]
    gamma: Option<f64>,
    /// Early-stop agreement radius as a fraction of the image diagonal.
    #[arg(long, help_heading = "Pipeline overrides")]
    rho: Option<f64>,
    /// Minimum tilt in degrees before orientation refinement fires.
    #[arg(long, help_heading = "Pipeline overrides")]
    alpha_min_deg: Option<f64>,
    /// Minimum center-cloud elongation for orientation refinement.
    #[arg(long, help_heading = "Pipeline overrides")]
    anisotropy_min: Option<f64>,
    /// Margin around the crop window, as a fraction of its diagonal.
    #[arg(long, help_heading = "Pipeline overrides")]
    crop_margin_frac: Option<f64>,
    /// Query slots spent inside the crop window.
    #[arg(long, help_heading = "Pipeline overrides")]
    crop_iters: Option<u32>,
    /// Extra attempts when a reply cannot be parsed.
    #[arg(long, help_heading = "Pipeline overrides")]
    max_parse_retries: Option<u32>,
    /// Check agreement after every query instead of once after the first m.
    #[arg(long, value_name = "BOOL", help_heading = "Pipeline overrides")]
    continuous_early_stop: Option<bool>,
    /// Comma-separated grid sizes like 3x3,4x4,5x5, one per query slot.
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_grid_size,
        help_heading = "Pipeline overrides"
    )]
    grid_schedule: Option<Vec<(u32, u32)>>,
    /// Disable a pipeline feature (repeatable).
    #[arg(long = "ablate", value_enum, help_heading = "Pipeline overrides")]
    ablate: Vec<Ablation>,
}

impl PipelineArgs {
    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.m {
            config.m = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.rho {
            config.rho = v;
        }
        if let Some(v) = self.alpha_min_deg {
            config.alpha_min_deg = v;
        }
        if let Some(v) = self.anisotropy_min {
            config.anisotropy_min = v;
        }
        if let Some(v) = self.crop_margin_frac {
            config.crop_margin_frac = v;
        }
        if let Some(v) = self.crop_iters {
            config.crop_iters = v;
        }
        if let Some(v) = self.max_parse_retries {
            config.max_parse_retries = v;
        }
        if let Some(v) = self.continuous_early_stop {
            config.continuous_early_stop = v;
        }
        if let Some(v) = &self.grid_schedule {
            config.grid_schedule = v.clone();
        }
        for ablation in &self.ablate {
            match ablation {
                Ablation::Scp => config.use_scp = false,
                Ablation::Or => config.use_orientation_refinement = false,
                Ablation::Be => config.use_explanation = false,
                Ablation::Gr => config.use_depth_refinement = false,
            }
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OracleChoice {
    /// Deterministic geometric test double (see --target and friends).
    Scripted,
    /// Live HTTP chat-completion backend from the config file.
    Http,
}

#[derive(Args, Debug, Clone)]
struct OracleArgs {
    /// Oracle backend.
    #[arg(long, value_enum, default_value_t = OracleChoice::Scripted, help_heading = "Oracle")]
    oracle: OracleChoice,
    /// Scripted: root-frame target point X,Y (default: image center).
    #[arg(long, value_parser = parse_point, help_heading = "Oracle")]
    target: Option<Point>,
    /// Scripted: scatter radius in pixels around the target.
    #[arg(long, conflicts_with_all = ["line", "random_cells"], help_heading = "Oracle")]
    noise_radius: Option<f64>,
    /// Scripted: walk the segment X1,Y1:X2,Y2 instead of one target.
    #[arg(
        long,
        value_parser = parse_segment,
        conflicts_with_all = ["target", "random_cells"],
        help_heading = "Oracle"
    )]
    line: Option<(Point, Point)>,
    /// Scripted: answer with uniformly random cells (never converges).
    #[arg(long, conflicts_with = "target", help_heading = "Oracle")]
    random_cells: bool,
    /// Seed for scripted randomness.
    #[arg(long, default_value_t = 0, help_heading = "Oracle")]
    seed: u64,
    /// Scripted: canned scene-context reply.
    #[arg(long, help_heading = "Oracle")]
    scripted_context: Option<String>,
}

impl OracleArgs {
    /// Build the scripted backend these arguments describe; `default_target`
    /// is used when no explicit target was given.
    fn build_scripted(&self, default_target: Point, seed: u64) -> ScriptedOracle {
        let oracle = if self.random_cells {
            ScriptedOracle::random_cells(seed)
        } else if let Some((a, b)) = self.line {
            ScriptedOracle::line(a, b)
        } else {
            let target = self.target.unwrap_or(default_target);
            match self.noise_radius {
                Some(radius) => ScriptedOracle::noisy(target, radius, seed),
                None => ScriptedOracle::fixed(target),
            }
        };
        match &self.scripted_context {
            Some(text) => oracle.with_context(text.clone()),
            None => oracle,
        }
    }

    fn build(&self, config: &AppConfig, default_target: Point) -> Result<Box<dyn Oracle>, CliError> {
        match self.oracle {
            OracleChoice::Scripted => Ok(Box::new(self.build_scripted(default_target, self.seed))),
            OracleChoice::Http => HttpOracle::new(&config.oracle.http)
                .map(|o| Box::new(o) as Box<dyn Oracle>)
                .map_err(|e| CliError::Usage(e.to_string())),
        }
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Input RGB image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Aligned 16-bit depth map in millimeters (PNG).
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Write the result document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a copy of the input with the predicted grasp drawn in.
    #[arg(long)]
    annotated: Option<PathBuf>,
    /// Record the oracle transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args, Debug)]
struct RecordArgs {
    /// Input RGB image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Aligned 16-bit depth map in millimeters (PNG).
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Transcript output path (JSON lines).
    #[arg(long)]
    transcript: PathBuf,
    /// Result document path (default: transcript path with .result.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// The image the transcript was recorded against.
    #[arg(long)]
    image: PathBuf,
    /// The depth map the transcript was recorded against, if any.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Transcript to replay.
    #[arg(long)]
    transcript: PathBuf,
    /// Recorded result document to byte-compare against.
    #[arg(long)]
    expect: Option<PathBuf>,
    /// Write the replayed result document here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct BatchEvalArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Parallel workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the JSON report here (the text table always prints to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SceneKindArg {
    /// Round body with a ring handle; exercises depth refinement.
    HandleHole,
    /// Elongated bar at an angle; exercises orientation.
    Bar,
    /// Featureless disc.
    Blob,
}

impl From<SceneKindArg> for SceneKind {
    fn from(kind: SceneKindArg) -> Self {
        match kind {
            SceneKindArg::HandleHole => SceneKind::HandleHole,
            SceneKindArg::Bar => SceneKind::Bar,
            SceneKindArg::Blob => SceneKind::Blob,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene type.
    #[arg(long, value_enum)]
    kind: SceneKindArg,
    /// First seed; scenes use seed, seed+1, ... seed+count-1.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes to generate.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 320)]
    width: u32,
    #[arg(long, default_value_t = 240)]
    height: u32,
    /// Bar scenes: long-axis angle in degrees (seeded when omitted).
    #[arg(long)]
    angle_deg: Option<f64>,
    /// Output directory (must exist).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write a dataset manifest with this file name into the output
    /// directory, referencing the generated scenes.
    #[arg(long)]
    manifest: Option<String>,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let config = match effective_config(cli.config.as_deref()) {
        Ok(config) => config,
        Err(e) => return report(e),
    };
    let outcome = match cli.command {
        Command::Predict(args) => cmd_predict(&config, args),
        Command::Record(args) => cmd_record(&config, args),
        Command::Replay(args) => cmd_replay(&config, args),
        Command::BatchEval(args) => cmd_batch_eval(&config, args),
        Command::Synth(args) => cmd_synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {}", e.message());
    e.exit_code()
}

fn effective_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => Ok(load_app_config(p)?),
        None => Ok(AppConfig::default()),
    }
}

/// Fold CLI pipeline overrides into the config and re-validate.
fn overridden(config: &AppConfig, args: &PipelineArgs) -> Result<AppConfig, CliError> {
    let mut config = config.clone();
    args.apply(&mut config.pipeline);
    config.validate()?;
    Ok(config)
}

struct LoadedInputs {
    image: RgbImage,
    image_digest: String,
    depth: Option<DepthMap>,
    depth_digest: Option<String>,
}

fn load_inputs(image: &Path, depth: Option<&Path>) -> Result<LoadedInputs, CliError> {
    let (image, image_digest) = load_rgb_with_digest(image)?;
    let (depth, depth_digest) = match depth {
        Some(path) => {
            let (map, digest) = load_depth_with_digest(path)?;
            (Some(map), Some(digest))
        }
        None => (None, None),
    };
    Ok(LoadedInputs { image, image_digest, depth, depth_digest })
}

fn transcript_header(
    config: &AppConfig,
    oracle: &dyn Oracle,
    inputs: &LoadedInputs,
) -> TranscriptHeader {
    TranscriptHeader {
        version: TRANSCRIPT_VERSION,
        config_digest: config.digest(),
        oracle: oracle.backend_name().to_string(),
        image_digest: inputs.image_digest.clone(),
        depth_digest: inputs.depth_digest.clone(),
    }
}

/// The transcript path string stored inside result documents: the file
/// name only, so documents compare equal across working directories.
fn transcript_ref_name(path: &Path) -> Option<String> {
    path.file_name().map(|n| n.to_string_lossy().into_owned())
}

fn run_prediction(
    config: &AppConfig,
    inputs: &LoadedInputs,
    oracle: &dyn Oracle,
    transcript_path: Option<&Path>,
) -> Result<GraspResult, CliError> {
    let depth_params = config.depth_params()?;
    let result = predict_grasp(
        &inputs.image,
        inputs.depth.as_ref(),
        oracle,
        &config.pipeline,
        &config.overlay,
        Some(&depth_params),
    );
    match result {
        Ok(result) => {
            if let Some(path) = transcript_path {
                let header = transcript_header(config, oracle, inputs);
                write_transcript(path, &header, &result.transcript.entries)?;
            }
            Ok(result)
        }
        Err(failure) => {
            // Keep the partial transcript: failed sessions are the ones
            // worth auditing.
            if let Some(path) = transcript_path {
                let header = transcript_header(config, oracle, inputs);
                write_transcript(path, &header, &failure.transcript.entries)?;
            }
            Err(failure.into())
        }
    }
}

fn emit_result(
    result: &GraspResult,
    transcript_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let name = transcript_path.and_then(transcript_ref_name);
    let json = result.document_json(name.as_deref());
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn image_center(image: &RgbImage) -> Point {
    Point::new(image.width() as f64 / 2.0, image.height() as f64 / 2.0)
}

fn cmd_predict(config: &AppConfig, args: PredictArgs) -> Result<(), CliError> {
    let config = overridden(config, &args.pipeline)?;
    let inputs = load_inputs(&args.image, args.depth.as_deref())?;
    let oracle = args.oracle.build(&config, image_center(&inputs.image))?;
    let result = run_prediction(&config, &inputs, oracle.as_ref(), args.transcript.as_deref())?;
    emit_result(&result, args.transcript.as_deref(), args.out.as_deref())?;
    if let Some(path) = &args.annotated {
        let annotated = draw_result(&inputs.image, &result, &config);
        save_rgb(path, &annotated)?;
    }
    eprintln!(
        "grasp ({}, {}) theta {:.1} deg | queries {} | early stop {} | orientation refined {} | depth refined {}",
        result.pose.p.x,
        result.pose.p.y,
        result.pose.theta_deg,
        result.grp_queries_used,
        result.early_stopped,
        result.orientation_refined,
        result.depth_refined,
    );
    Ok(())
}

fn cmd_record(config: &AppConfig, args: RecordArgs) -> Result<(), CliError> {
    let config = overridden(config, &args.pipeline)?;
    let inputs = load_inputs(&args.image, args.depth.as_deref())?;
    let oracle = args.oracle.build(&config, image_center(&inputs.image))?;
    let result = run_prediction(&config, &inputs, oracle.as_ref(), Some(&args.transcript))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.transcript.with_extension("result.json"));
    emit_result(&result, Some(&args.transcript), Some(&out))?;
    eprintln!(
        "recorded {} oracle exchanges to {} (result: {})",
        result.transcript.len(),
        args.transcript.display(),
        out.display(),
    );
    Ok(())
}

fn cmd_replay(config: &AppConfig, args: ReplayArgs) -> Result<(), CliError> {
    let config = overridden(config, &args.pipeline)?;
    let inputs = load_inputs(&args.image, args.depth.as_deref())?;
    let (header, entries) = read_transcript(&args.transcript)?;

    if header.version != TRANSCRIPT_VERSION {
        return Err(CliError::Usage(format!(
            "unsupported transcript version {} (expected {})",
            header.version, TRANSCRIPT_VERSION
        )));
    }
    if header.config_digest != config.digest() {
        return Err(CliError::Usage(format!(
            "config digest mismatch: transcript was recorded under {} but the current configuration is {}",
            header.config_digest,
            config.digest()
        )));
    }
    if header.image_digest != inputs.image_digest {
        return Err(CliError::Usage(format!(
            "image digest mismatch: transcript was recorded against {} but {} hashes to {}",
            header.image_digest,
            args.image.display(),
            inputs.image_digest
        )));
    }
    if header.depth_digest != inputs.depth_digest {
        return Err(CliError::Usage(match (&header.depth_digest, &inputs.depth_digest) {
            (Some(recorded), None) => {
                format!("transcript was recorded with a depth map ({recorded}); pass --depth")
            }
            (None, Some(_)) => "transcript was recorded without a depth map; drop --depth".into(),
            (Some(recorded), Some(given)) => {
                format!("depth digest mismatch: recorded {recorded}, given {given}")
            }
            (None, None) => unreachable!("equal digests are not a mismatch"),
        }));
    }

    let recorded = OracleTranscript { entries };
    let oracle = ReplayOracle::from_transcript(recorded.clone());
    let result = run_prediction(&config, &inputs, &oracle, None)?;

    if result.transcript.digest() != recorded.digest() {
        return Err(CliError::Runtime(format!(
            "transcript divergence: replay produced {} exchanges with digest {}, recorded {} with digest {}",
            result.transcript.len(),
            result.transcript.digest(),
            recorded.len(),
            recorded.digest()
        )));
    }

    let name = transcript_ref_name(&args.transcript);
    let json = result.document_json(name.as_deref());
    if let Some(expect) = &args.expect {
        let expected = std::fs::read_to_string(expect)?;
        if expected != json {
            return Err(CliError::Runtime(format!(
                "result document diverges from {}",
                expect.display()
            )));
        }
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &json)?;
    }
    println!(
        "replay OK: {} oracle exchanges reproduced (transcript digest {})",
        recorded.len(),
        recorded.digest()
    );
    Ok(())
}

/// JSON report written by batch-eval: the evaluation plus any per-image
/// failures.
#[derive(Debug, Serialize)]
struct BatchReport {
    report: EvalReport,
    failures: BTreeMap<String, String>,
}

struct BatchItem {
    id: String,
    annotation: AnnotationSet,
    outcome: Result<GraspResult, String>,
}

fn batch_eval_item(
    config: &AppConfig,
    args: &BatchEvalArgs,
    entry: &ManifestEntry,
    index: usize,
) -> Result<BatchItem, String> {
    let annotation_path = entry
        .annotation
        .as_ref()
        .ok_or_else(|| "no annotation in manifest; cannot score".to_string())?;
    let annotation = load_annotation(annotation_path).map_err(|e| e.to_string())?;
    let inputs =
        load_inputs(&entry.image, entry.depth.as_deref()).map_err(|e| e.message().to_string())?;
    // Scripted runs aim at each image's annotated grasp by default; the
    // per-item seed keeps noisy runs independent but deterministic.
    let default_target = annotation.grasps[0].position;
    let seed = args.oracle.seed.wrapping_add(index as u64);
    let oracle: Box<dyn Oracle> = match args.oracle.oracle {
        OracleChoice::Scripted => Box::new(args.oracle.build_scripted(default_target, seed)),
        OracleChoice::Http => args
            .oracle
            .build(config, default_target)
            .map_err(|e| e.message().to_string())?,
    };
    let outcome = run_prediction(config, &inputs, oracle.as_ref(), None)
        .map_err(|e| e.message().to_string());
    Ok(BatchItem { id: entry.id.clone(), annotation, outcome })
}

fn cmd_batch_eval(config: &AppConfig, args: BatchEvalArgs) -> Result<(), CliError> {
    let config = overridden(config, &args.pipeline)?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Usage("manifest has no entries".into()));
    }
    let jobs = args.jobs.clamp(1, manifest.entries.len());

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<BatchItem, String>>>> =
        Mutex::new((0..manifest.entries.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= manifest.entries.len() {
                    break;
                }
                let item = batch_eval_item(&config, &args, &manifest.entries[index], index);
                slots.lock().expect("batch slot lock")[index] = Some(item);
            });
        }
    });

    let mut predictions = Vec::new();
    let mut annotations = Vec::new();
    let mut failures = BTreeMap::new();
    for (entry, slot) in manifest.entries.iter().zip(slots.into_inner().expect("batch slots")) {
        match slot.expect("every batch slot is filled") {
            Ok(item) => match item.outcome {
                Ok(result) => {
                    predictions.push((item.id, result.pose));
                    annotations.push(item.annotation);
                }
                Err(msg) => {
                    failures.insert(item.id, msg);
                }
            },
            Err(msg) => {
                failures.insert(entry.id.clone(), msg);
            }
        }
    }

    for (id, msg) in &failures {
        eprintln!("failed: {id}: {msg}");
    }
    let report = evaluate_batch(&predictions, &annotations)?;
    print!("{}", report.text_table());
    if let Some(out) = &args.out {
        let batch = BatchReport { report, failures: failures.clone() };
        let mut json = serde_json::to_string_pretty(&batch)
            .expect("batch reports serialize");
        json.push('\n');
        std::fs::write(out, json)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} images failed",
            failures.len(),
            manifest.entries.len()
        )))
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut entries = Vec::new();
    for seed in args.seed..args.seed + args.count {
        let spec = SceneSpec {
            kind: args.kind.into(),
            seed,
            width: args.width,
            height: args.height,
            angle_deg: args.angle_deg,
        };
        let fixture = generate(&spec)?;
        let id = spec.id();
        let image = format!("{id}.png");
        let depth = format!("{id}.depth.png");
        let annotation = format!("{id}.annotation.json");
        save_rgb(&args.out_dir.join(&image), &fixture.rgb)?;
        save_depth(&args.out_dir.join(&depth), &fixture.depth)?;
        save_annotation(&args.out_dir.join(&annotation), &fixture.annotation)?;
        println!("{id}: {image} {depth} {annotation}");
        entries.push(ManifestEntry {
            id,
            image: PathBuf::from(image),
            depth: Some(PathBuf::from(depth)),
            annotation: Some(PathBuf::from(annotation)),
        });
    }
    if let Some(name) = &args.manifest {
        let manifest = DatasetManifest { entries };
        let path = args.out_dir.join(name);
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
        json.push('\n');
        std::fs::write(&path, json)?;
        println!("manifest: {}", path.display());
    }
    Ok(())
}

// ---- result drawing -------------------------------------------------------

fn put_safe(image: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < image.width() && (y as u32) < image.height() {
        image.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_filled_disc(image: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>) {
    let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
    let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                put_safe(image, x, y, color);
            }
        }
    }
}

fn draw_circle(image: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>) {
    let steps = (r.max(4.0) * std::f64::consts::TAU).ceil() as u32;
    for i in 0..steps {
        let phi = i as f64 / steps as f64 * std::f64::consts::TAU;
        put_safe(
            image,
            (cx + r * phi.cos()).round() as i64,
            (cy + r * phi.sin()).round() as i64,
            color,
        );
    }
}

fn draw_segment_px(image: &mut RgbImage, a: Point, b: Point, color: Rgb<u8>) {
    let steps = (a.distance(&b).ceil() as u32).max(1) * 2;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.x + t * (b.x - a.x)).round() as i64;
        let y = (a.y + t * (b.y - a.y)).round() as i64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                put_safe(image, x + dx, y + dy, color);
            }
        }
    }
}

/// The input image with the prediction drawn in: candidate centers in
/// gray, the grasp axis in yellow, the grasp point in red, and — when a
/// depth was refined — the gripper clearance circle in cyan.
fn draw_result(image: &RgbImage, result: &GraspResult, config: &AppConfig) -> RgbImage {
    let mut out = image.clone();
    for c in &result.candidate_set.candidates {
        draw_filled_disc(&mut out, c.center.x, c.center.y, 2.0, Rgb([180, 180, 180]));
    }
    let p = result.pose.p;
    let half = (image.width() as f64).hypot(image.height() as f64) * 0.12;
    let (s, c) = result.pose.theta_deg.to_radians().sin_cos();
    draw_segment_px(
        &mut out,
        Point::new(p.x - half * c, p.y - half * s),
        Point::new(p.x + half * c, p.y + half * s),
        Rgb([255, 214, 0]),
    );
    draw_filled_disc(&mut out, p.x, p.y, 4.0, Rgb([230, 30, 30]));
    if let Some(depth_mm) = result.refined_depth_mm {
        if let Ok(radius) = clearance_radius_px(
            config.depth.focal_length_px,
            config.depth.gripper_radius_m,
            depth_mm as f64 / 1000.0,
        ) {
            draw_circle(&mut out, p.x, p.y, radius, Rgb([40, 200, 220]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn pipeline_flag_map_covers_every_config_field() {
        let value = serde_json::to_value(PipelineConfig::default()).unwrap();
        let fields: std::collections::BTreeSet<String> =
            value.as_object().unwrap().keys().cloned().collect();
        let mapped: std::collections::BTreeSet<String> =
            PIPELINE_FLAG_MAP.iter().map(|(field, _)| field.to_string()).collect();
        assert_eq!(fields, mapped);
    }

    #[test]
    fn every_mapped_flag_appears_in_predict_help() {
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("predict")
            .unwrap()
            .render_long_help()
            .to_string();
        for (_, flag) in PIPELINE_FLAG_MAP {
            let token = flag.split(' ').next().unwrap();
            assert!(help.contains(token), "help is missing {token}");
        }
    }

    #[test]
    fn value_parsers_accept_and_reject() {
        assert_eq!(parse_grid_size("3x4"), Ok((3, 4)));
        assert_eq!(parse_grid_size("9X9"), Ok((9, 9)));
        assert!(parse_grid_size("3-4").is_err());
        assert!(parse_grid_size("x4").is_err());

        assert_eq!(parse_point("1.5,2"), Ok(Point::new(1.5, 2.0)));
        assert!(parse_point("1.5").is_err());

        assert_eq!(
            parse_segment("0,0:10,20"),
            Ok((Point::new(0.0, 0.0), Point::new(10.0, 20.0)))
        );
        assert!(parse_segment("0,0-10,20").is_err());
    }

    #[test]
    fn overrides_apply_in_place() {
        let args = Cli::try_parse_from([
            "oracle-grasp",
            "predict",
            "--image",
            "x.png",
            "--k",
            "8",
            "--rho",
            "0.2",
            "--grid-schedule",
            "3x3,4x4,5x5,6x6,7x7,8x8,9x9,3x4",
            "--ablate",
            "scp",
            "--ablate",
            "gr",
        ])
        .unwrap();
        let Command::Predict(predict) = args.command else {
            panic!("expected predict");
        };
        let mut config = PipelineConfig::default();
        predict.pipeline.apply(&mut config);
        assert_eq!(config.k, 8);
        assert_eq!(config.rho, 0.2);
        assert_eq!(config.grid_schedule.len(), 8);
        assert!(!config.use_scp);
        assert!(!config.use_depth_refinement);
        assert!(config.use_orientation_refinement);
        assert!(config.use_explanation);
        config.validate().unwrap();
    }

    #[test]
    fn conflicting_oracle_flags_rejected() {
        assert!(Cli::try_parse_from([
            "oracle-grasp",
            "predict",
            "--image",
            "x.png",
            "--line",
            "0,0:1,1",
            "--target",
            "5,5",
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "oracle-grasp",
            "predict",
            "--image",
            "x.png",
            "--random-cells",
            "--noise-radius",
            "4",
        ])
        .is_err());
    }

    #[test]
    fn scripted_oracle_selection() {
        let center = Point::new(10.0, 10.0);
        let base = OracleArgs {
            oracle: OracleChoice::Scripted,
            target: None,
            noise_radius: None,
            line: None,
            random_cells: false,
            seed: 0,
            scripted_context: None,
        };
        // Default: fixed at the provided center.
        let _ = base.build_scripted(center, 0);
        // The builder honors each mode without panicking; behavior is
        // covered by the oracle module's own tests.
        let _ = OracleArgs { random_cells: true, ..base.clone() }.build_scripted(center, 1);
        let _ = OracleArgs {
            line: Some((Point::new(0.0, 0.0), Point::new(1.0, 1.0))),
            ..base.clone()
        }
        .build_scripted(center, 2);
        let _ = OracleArgs { noise_radius: Some(3.0), ..base }.build_scripted(center, 3);
    }

    #[test]
    fn transcript_ref_uses_file_name_only() {
        assert_eq!(
            transcript_ref_name(Path::new("/a/b/run.jsonl")),
            Some("run.jsonl".to_string())
        );
        assert_eq!(transcript_ref_name(Path::new("run.jsonl")), Some("run.jsonl".to_string()));
    }
}
