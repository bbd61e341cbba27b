mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hazeforge::codec::encode_png;
use hazeforge::depth_io::{DepthFormat, DepthInterpretation, NormalizationPolicy};
use hazeforge::eval::{evaluate_files, ApMethod, EvalError, EvalOptions};
use hazeforge::haze::HazeParams;
use hazeforge::pipeline::{
    discover_samples, run_batch, synthesize_with_params, MixPolicy, PipelineError, SynthesisConfig, SynthesisMode,
};
use hazeforge::sampler::{derive_image_seed, sample_params, Interval, SamplerConfig};
use hazeforge::stream::{Server, StreamConfig, StreamState};
use serde_json::json;

use config::FileConfig;

const DEFAULT_ENDPOINT: &str = "127.0.0.1:7878";

#[derive(Parser)]
#[command(name = "hazeforge", version, about = "Depth-aware haze synthesis and detection evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haze one image and write it as PNG.
    Synth(SynthArgs),
    /// Build a clean/hazy training set from image and depth directories.
    Batch(BatchArgs),
    /// Serve hazed samples over TCP, one request per (sample, epoch).
    Serve(ServeArgs),
    /// Score detections against ground truth (AP per class, mAP, precision, recall).
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// JSON file with defaults for any flag below (keys use underscores); flags and env win.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed for every random draw (unsigned 64-bit) [default: 0]
    #[arg(long, env = "HAZEFORGE_SEED", value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthesisArgs {
    /// Lower bound of the sampled scattering coefficient beta, per unit normalized depth [default: 1.0]
    #[arg(long, value_name = "BETA")]
    beta_min: Option<f64>,

    /// Upper bound of the sampled scattering coefficient beta, per unit normalized depth [default: 3.0]
    #[arg(long, value_name = "BETA")]
    beta_max: Option<f64>,

    /// Lower bound of the sampled airlight, 8-bit intensity [default: 150]
    #[arg(long, value_name = "LEVEL")]
    airlight_min: Option<f64>,

    /// Upper bound of the sampled airlight, 8-bit intensity [default: 255]
    #[arg(long, value_name = "LEVEL")]
    airlight_max: Option<f64>,

    /// Depth file format: pfm, png16 or rawf32 [default: from file extension]
    #[arg(long, value_name = "FORMAT")]
    depth_format: Option<DepthFormat>,

    /// Whether depth files hold depth or disparity (inverse depth) [default: depth]
    #[arg(long, value_name = "KIND")]
    depth_interpretation: Option<DepthInterpretation>,

    /// Depth percentile (nearest rank, in (50, 100]) mapped to --target-max; larger depths clip [default: 99.9]
    #[arg(long, value_name = "PERCENT")]
    clip_percentile: Option<f64>,

    /// Normalized depth assigned to the clip percentile, unitless [default: 1.0]
    #[arg(long, value_name = "DEPTH")]
    target_max: Option<f64>,

    /// Smallest disparity used when inverting disparity, in file units [default: 1e-6]
    #[arg(long, value_name = "EPS")]
    disparity_epsilon: Option<f64>,

    /// Ignore depth and haze with one random transmission in [0.3, 0.8] per image [default: off]
    #[arg(long)]
    baseline_random_t: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Clean RGB image (PNG or JPEG)
    #[arg(long, value_name = "PATH")]
    image: PathBuf,

    /// Depth map for the image (.pfm, .f32 or 16-bit .png)
    #[arg(long, value_name = "PATH")]
    depth: PathBuf,

    /// Output PNG path
    #[arg(long, value_name = "PATH")]
    out: PathBuf,

    /// Fixed scattering coefficient beta (> 0), per unit normalized depth [default: sampled]
    #[arg(long, value_name = "BETA")]
    beta: Option<f64>,

    /// Fixed airlight in [0, 255], 8-bit intensity [default: sampled]
    #[arg(long, value_name = "LEVEL")]
    airlight: Option<f64>,

    #[command(flatten)]
    common: Common,

    #[command(flatten)]
    synthesis: SynthesisArgs,
}

#[derive(Args)]
struct DatasetArgs {
    /// Directory of clean images, searched recursively
    #[arg(long, value_name = "DIR")]
    images: PathBuf,

    /// Directory of depth maps mirroring the image tree
    #[arg(long, value_name = "DIR")]
    depth_dir: PathBuf,

    /// Worker threads [default: number of logical CPUs]
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    dataset: DatasetArgs,

    /// Directory of YOLO label files mirroring the image tree [default: none]
    #[arg(long, value_name = "DIR")]
    labels: Option<PathBuf>,

    /// Output directory (clean/, hazy/, manifest.json)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Copies to emit: hazy-only, combined (clean + hazy) or ratio=R (all clean, hazy for fraction R) [default: combined]
    #[arg(long, value_name = "POLICY")]
    mix: Option<MixPolicy>,

    #[command(flatten)]
    common: Common,

    #[command(flatten)]
    synthesis: SynthesisArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    dataset: DatasetArgs,

    /// TCP address to listen on, host:port [default: 127.0.0.1:7878]
    #[arg(long, env = "HAZEFORGE_ENDPOINT", value_name = "ADDR")]
    endpoint: Option<String>,

    /// Probability in [0, 1] that an unforced request is hazed [default: 0.5]
    #[arg(long, value_name = "P")]
    mix_probability: Option<f64>,

    /// Draw new haze parameters each epoch: on or off [default: on]
    #[arg(long, value_name = "on|off", value_parser = parse_switch)]
    resample_per_epoch: Option<bool>,

    #[command(flatten)]
    common: Common,

    #[command(flatten)]
    synthesis: SynthesisArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections: `<sample_id> <class> <xmin> <ymin> <xmax> <ymax> <confidence>` per line, pixels
    #[arg(long, value_name = "PATH")]
    detections: PathBuf,

    /// Ground truth: `<sample_id> <class> <xmin> <ymin> <xmax> <ymax>` per line, pixels
    #[arg(long, value_name = "PATH")]
    truths: PathBuf,

    /// Minimum IoU, in (0, 1], for a detection to match a truth [default: 0.5]
    #[arg(long, value_name = "IOU")]
    iou_threshold: Option<f64>,

    /// Confidence in [0, 1] at which precision and recall are reported [default: 0.25]
    #[arg(long, value_name = "CONF")]
    confidence_threshold: Option<f64>,

    /// AP convention: all-point or 11-point [default: all-point]
    #[arg(long, value_name = "METHOD")]
    ap_method: Option<ApMethod>,

    /// Write the JSON report here and print the table to stdout [default: JSON to stdout, table to stderr]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// JSON file with defaults for any flag above (keys use underscores); flags win.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

/// Exit status 2: bad flags or configuration. Exit status 1: work failed.
enum Failure {
    Usage(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Run(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Sampler(_) | PipelineError::NoImages(_) => {
                Self::Usage(e.to_string())
            }
            _ => Self::Run(e.to_string()),
        }
    }
}

fn synthesis_config(args: &SynthesisArgs, file: &FileConfig, seed: u64) -> Result<SynthesisConfig, Failure> {
    let d = SynthesisConfig::default();
    let cfg = SynthesisConfig {
        sampler: SamplerConfig {
            beta_range: Interval::new(
                args.beta_min.or(file.beta_min).unwrap_or(d.sampler.beta_range.lo),
                args.beta_max.or(file.beta_max).unwrap_or(d.sampler.beta_range.hi),
            ),
            airlight_range: Interval::new(
                args.airlight_min.or(file.airlight_min).unwrap_or(d.sampler.airlight_range.lo),
                args.airlight_max.or(file.airlight_max).unwrap_or(d.sampler.airlight_range.hi),
            ),
            global_seed: seed,
        },
        normalization: NormalizationPolicy {
            clip_percentile: args
                .clip_percentile
                .or(file.clip_percentile)
                .unwrap_or(d.normalization.clip_percentile),
            target_max: args.target_max.or(file.target_max).unwrap_or(d.normalization.target_max),
            disparity_epsilon: args
                .disparity_epsilon
                .or(file.disparity_epsilon)
                .unwrap_or(d.normalization.disparity_epsilon),
        },
        depth_interpretation: args
            .depth_interpretation
            .or(file.depth_interpretation)
            .unwrap_or_default(),
        depth_format: args.depth_format.or(file.depth_format),
        baseline: args.baseline_random_t || file.baseline_random_t.unwrap_or(false),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn workers(flag: Option<usize>, file: &FileConfig) -> Result<usize, Failure> {
    let n = flag
        .or(file.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Failure::Usage("--workers must be >= 1".into()));
    }
    Ok(n)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref()).map_err(Failure::Usage)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let cfg = synthesis_config(&args.synthesis, &file, seed)?;
    if let Some(b) = args.beta {
        if !(b.is_finite() && b > 0.0) {
            return Err(Failure::Usage(format!("invalid --beta {b}: the scattering coefficient must satisfy β > 0")));
        }
    }
    if let Some(a) = args.airlight {
        if !(0.0..=255.0).contains(&a) {
            return Err(Failure::Usage(format!("invalid --airlight {a}: must lie in [0, 255]")));
        }
    }

    let sample_id = args
        .image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Failure::Usage(format!("--image {} has no file name", args.image.display())))?;
    let image_seed = derive_image_seed(seed, &sample_id);
    let drawn = sample_params(&cfg.sampler, image_seed);
    let params = HazeParams::new(args.beta.unwrap_or(drawn.beta), args.airlight.unwrap_or(drawn.airlight))
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let out = synthesize_with_params(&args.image, &args.depth, &cfg, params, cfg.method(), image_seed)
        .map_err(|e| Failure::Run(format!("{sample_id}: {e}")))?;
    let png = encode_png(&out.image).map_err(|e| Failure::Run(e.to_string()))?;
    write_file(&args.out, &png)?;
    let report = json!({
        "sample_id": sample_id,
        "image_seed": image_seed,
        "mode": SynthesisMode::from(out.method),
        "applied_params": out.params,
        "baseline_transmission": out.baseline_transmission,
        "output_image": args.out,
    });
    println!("{report}");
    Ok(())
}

fn batch(args: BatchArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref()).map_err(Failure::Usage)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let cfg = synthesis_config(&args.synthesis, &file, seed)?;
    let mix = args.mix.or(file.mix).unwrap_or_default();
    let workers = workers(args.dataset.workers, &file)?;

    let found = discover_samples(&args.dataset.images, &args.dataset.depth_dir, args.labels.as_deref(), seed)?;
    for id in &found.skipped {
        log::warn!("{id}: no depth map, skipped");
    }
    let outcome = run_batch(&found.records, &found.skipped, &cfg, mix, &args.out, workers)?;
    let written = outcome.manifest.records.iter().filter(|r| r.error.is_none()).count();
    eprintln!(
        "{written} image(s) written, {} sample(s) failed, {} skipped -> {}",
        outcome.failed_samples,
        found.skipped.len(),
        args.out.display()
    );
    for r in outcome.manifest.failures() {
        eprintln!("failed: {}: {}", r.sample_id, r.error.as_deref().unwrap_or("unknown error"));
    }
    if outcome.success() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} sample(s) failed; see manifest.json", outcome.failed_samples)))
    }
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref()).map_err(Failure::Usage)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let config = StreamConfig {
        synthesis: synthesis_config(&args.synthesis, &file, seed)?,
        mix_probability: args.mix_probability.or(file.mix_probability).unwrap_or(0.5),
        resample_per_epoch: args.resample_per_epoch.or(file.resample_per_epoch).unwrap_or(true),
        workers: workers(args.dataset.workers, &file)?,
    };
    let endpoint = args
        .endpoint
        .or(file.endpoint)
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());

    let found = discover_samples(&args.dataset.images, &args.dataset.depth_dir, None, seed)?;
    let n = found.records.len();
    let state = StreamState::new(found.records, config).map_err(|e| Failure::Usage(e.to_string()))?;
    let server = Server::bind(endpoint.as_str(), state).map_err(|e| Failure::Run(format!("bind {endpoint}: {e}")))?;
    let addr = server.local_addr().map_err(|e| Failure::Run(e.to_string()))?;
    eprintln!("serving {n} sample(s) on {addr}");
    server.run().map_err(|e| Failure::Run(e.to_string()))
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref()).map_err(Failure::Usage)?;
    let d = EvalOptions::default();
    let options = EvalOptions {
        iou_threshold: args.iou_threshold.or(file.iou_threshold).unwrap_or(d.iou_threshold),
        confidence_threshold: args
            .confidence_threshold
            .or(file.confidence_threshold)
            .unwrap_or(d.confidence_threshold),
        ap_method: args.ap_method.or(file.ap_method).unwrap_or(d.ap_method),
    };
    let report = evaluate_files(&args.detections, &args.truths, &options).map_err(|e| match e {
        EvalError::Option(_) => Failure::Usage(e.to_string()),
        _ => Failure::Run(e.to_string()),
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
    match &args.out {
        Some(path) => {
            write_file(path, format!("{json}\n").as_bytes())?;
            print!("{}", report.to_table());
        }
        None => {
            println!("{json}");
            eprint!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Batch(a) => batch(a),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hazeforge: {f}");
            ExitCode::from(f.code())
        }
    }
}
