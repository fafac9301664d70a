use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dahyf::binio::DenseArray;
use dahyf::camera::{project_points, weak_to_full, WeakCamera};
use dahyf::codec::{
    decode_hard_argmax, decode_soft_argmax, encode_labels, encode_one_hot, BinGrid, CodecConfig,
    CoordLogits,
};
use dahyf::confidence::{cosine_similarity, normalize_pred, normalize_proj};
use dahyf::config::PipelineConfig;
use dahyf::fusion::{pe_normalize, positional_encode};
use dahyf::geometry::{global_direction_map, local_direction_map, Joints2D, PatchSpec};
use dahyf::gradcheck::{gradcheck, GradLoss};
use dahyf::hand_model::{load_model, save_model, HandModelParams, HandPose, HandShape, Joints3D};
use dahyf::pipeline::{evaluate, run_pipeline};
use dahyf::records::{
    read_document, read_jsonl, write_document, write_json, write_jsonl, EvalRecord,
};
use dahyf::synth::{synth_sequence, MotionPreset, NoiseLevels, SynthConfig};
use dahyf::tempfilter::{gate_sequence, smooth_sequence, FilterConfig, FrameResult, Smoothing};

/// Numeric core of the DaHyF hand motion-capture pipeline.
#[derive(Parser)]
#[command(name = "dahyf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the global (or local) direction map of a patch.
    Dirmap(DirmapArgs),
    /// Encode joints to classification targets or decode logits to joints.
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Positionally encode patch joints.
    Pe(PeArgs),
    /// Pose the hand model.
    Fk(FkArgs),
    /// Project 3D joints into the frame through a weak camera and patch.
    Project(ProjectArgs),
    /// Cosine confidence of detected versus reprojected joints.
    Confidence(ConfidenceArgs),
    /// Gate and smooth a frame sequence.
    Filter(FilterArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic sequence.
    Synth(SynthArgs),
    /// Compare analytic and finite-difference loss gradients.
    Gradcheck(GradcheckArgs),
    /// Run the full sequence pipeline.
    Run(RunArgs),
    /// Write the built-in toy hand model.
    Toymodel {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DirmapArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Patch-local index map instead of the global ray directions.
    #[arg(long)]
    local: bool,
}

#[derive(Subcommand)]
enum CodecCommand {
    Encode {
        #[arg(long)]
        joints: PathBuf,
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// One-hot labels instead of Gaussian smoothing.
        #[arg(long)]
        one_hot: bool,
        /// Write log-probabilities, ready for `codec decode`.
        #[arg(long)]
        log: bool,
    },
    Decode {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Hard argmax instead of soft-argmax.
        #[arg(long)]
        hard: bool,
    },
}

#[derive(Args)]
struct PeArgs {
    #[arg(long)]
    joints: PathBuf,
    #[arg(long, default_value_t = 224.0)]
    sp: f64,
    #[arg(long)]
    focal: f64,
    #[arg(short = 'L', long = "octaves", default_value_t = 4)]
    octaves: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FkArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// 16 axis-angle rotations; zero pose when absent.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// 10 shape coefficients; mean shape when absent.
    #[arg(long)]
    shape: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write skinned vertices.
    #[arg(long)]
    vertices: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    joints: PathBuf,
    #[arg(long)]
    weak: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfidenceArgs {
    #[arg(long, required_unless_present = "batch")]
    pred: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    proj: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    spec: Option<PathBuf>,
    /// JSONL frames carrying `joints2d`, `joints2d_proj` and `spec`.
    #[arg(long, conflicts_with_all = ["pred", "proj", "spec"])]
    batch: Option<PathBuf>,
    /// Batch output; stdout when absent.
    #[arg(long, requires = "batch")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothKind {
    Off,
    Exponential,
    OneEuro,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = SmoothKind::Off)]
    smooth: SmoothKind,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 30)]
    max_hold: u64,
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value = "wave")]
    motion: String,
    #[arg(long, default_value_t = 0.0)]
    joint_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pose_noise: f64,
    /// Fraction of outlier frames.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    observed: PathBuf,
    /// Injected outlier frame indices.
    #[arg(long)]
    outliers_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    negatives: usize,
    #[arg(long, requires = "negatives")]
    negatives_out: Option<PathBuf>,
    /// Also write logits of the observed joints.
    #[arg(long)]
    logits_out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    loss: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured model path.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    logits: Option<PathBuf>,
}

fn model_from(path: Option<&Path>) -> Result<HandModelParams> {
    match path {
        Some(p) => load_model(p).with_context(|| "could not load hand model".to_string()),
        None => Ok(HandModelParams::toy()),
    }
}

fn codec_config(path: Option<&Path>) -> Result<CodecConfig> {
    let cfg = match path {
        Some(p) => read_document(p)?,
        None => CodecConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dirmap(args: DirmapArgs) -> Result<()> {
    let spec: PatchSpec = read_document(&args.spec)?;
    spec.validate()?;
    let map = if args.local {
        local_direction_map(spec.feat_size, args.channels)?
    } else {
        global_direction_map(&spec, args.channels)?
    };
    map.to_array().save(&args.out)?;
    Ok(())
}

fn codec(cmd: CodecCommand) -> Result<()> {
    match cmd {
        CodecCommand::Encode {
            joints,
            cfg,
            out,
            one_hot,
            log,
        } => {
            let cfg = codec_config(cfg.as_deref())?;
            let joints: Joints2D = read_document(&joints)?;
            let targets = if one_hot {
                encode_one_hot(&joints, &cfg)?
            } else {
                encode_labels(&joints, &cfg)?
            };
            let grid = if log {
                targets.to_logits().0
            } else {
                targets.0
            };
            grid.to_array().save(&out)?;
        }
        CodecCommand::Decode {
            logits,
            cfg,
            out,
            hard,
        } => {
            let cfg = codec_config(cfg.as_deref())?;
            let grid = BinGrid::from_array(DenseArray::load(&logits)?)?;
            if grid.n_bins() != cfg.n_bins() {
                bail!(
                    "{}: {} bins, codec config expects {}",
                    logits.display(),
                    grid.n_bins(),
                    cfg.n_bins()
                );
            }
            let logits = CoordLogits(grid);
            let joints = if hard {
                decode_hard_argmax(&logits, &cfg)?
            } else {
                decode_soft_argmax(&logits, &cfg)?
            };
            write_document(&out, &joints)?;
        }
    }
    Ok(())
}

fn pe(args: PeArgs) -> Result<()> {
    let joints: Joints2D = read_document(&args.joints)?;
    let mu = pe_normalize(&joints, args.sp, args.focal)?;
    write_document(&args.out, &positional_encode(&mu, args.octaves)?)?;
    Ok(())
}

fn fk(args: FkArgs) -> Result<()> {
    let model = model_from(args.model.as_deref())?;
    let pose: HandPose = match &args.pose {
        Some(p) => read_document(p)?,
        None => HandPose::default(),
    };
    let shape: HandShape = match &args.shape {
        Some(p) => read_document(p)?,
        None => HandShape::default(),
    };
    if !(pose.is_finite() && shape.is_finite()) {
        bail!("pose and shape must be finite");
    }
    write_document(&args.out, &model.forward_kinematics(&shape, &pose))?;
    if let Some(path) = &args.vertices {
        write_document(path, &model.skin_vertices(&shape, &pose)?)?;
    }
    Ok(())
}

fn project(args: ProjectArgs) -> Result<()> {
    let joints: Joints3D = read_document(&args.joints)?;
    let weak: WeakCamera = read_document(&args.weak)?;
    let spec: PatchSpec = read_document(&args.spec)?;
    spec.validate()?;
    let cam = weak_to_full(&weak, &spec)?;
    write_document(&args.out, &project_points(&joints, &cam)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ConfidenceLine {
    format_version: u32,
    frame_index: u64,
    confidence: f64,
}

fn confidence_of(pred: &Joints2D, proj: &Joints2D, spec: &PatchSpec) -> Result<f64> {
    Ok(cosine_similarity(
        normalize_pred(pred, spec).as_slice(),
        normalize_proj(proj, spec).as_slice(),
    )?)
}

fn confidence(args: ConfidenceArgs) -> Result<()> {
    if let Some(batch) = &args.batch {
        let frames: Vec<FrameResult> = read_jsonl(batch)?;
        let lines = frames
            .iter()
            .map(|f| {
                let proj = f
                    .joints2d_proj
                    .with_context(|| format!("frame {}: missing joints2d_proj", f.frame_index))?;
                Ok(ConfidenceLine {
                    format_version: 1,
                    frame_index: f.frame_index,
                    confidence: confidence_of(&f.joints2d, &proj, &f.spec)
                        .with_context(|| format!("frame {}", f.frame_index))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match &args.out {
            Some(path) => write_jsonl(path, &lines)?,
            None => {
                for l in &lines {
                    println!("{}", serde_json::to_string(l)?);
                }
            }
        }
        return Ok(());
    }
    let (Some(pred), Some(proj), Some(spec)) = (&args.pred, &args.proj, &args.spec) else {
        bail!("--pred, --proj and --spec are required without --batch");
    };
    let pred: Joints2D = read_document(pred)?;
    let proj: Joints2D = read_document(proj)?;
    let spec: PatchSpec = read_document(spec)?;
    println!("{}", confidence_of(&pred, &proj, &spec)?);
    Ok(())
}

fn filter(args: FilterArgs) -> Result<()> {
    let smoothing = match args.smooth {
        SmoothKind::Off => Smoothing::Off,
        SmoothKind::Exponential => Smoothing::Exponential { alpha: args.alpha },
        SmoothKind::OneEuro => Smoothing::one_euro_default(),
    };
    let cfg = FilterConfig {
        threshold: args.threshold,
        smoothing,
        max_hold_frames: args.max_hold,
        rate_hz: args.rate,
    };
    let frames: Vec<FrameResult> = read_jsonl(&args.input)?;
    let out = smooth_sequence(&gate_sequence(&frames, &cfg)?, &cfg)?;
    write_jsonl(&args.out, &out)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let pred: Vec<EvalRecord> = read_jsonl(&args.pred)?;
    let gt: Vec<EvalRecord> = read_jsonl(&args.gt)?;
    write_json(&args.report, &evaluate(&pred, &gt)?)?;
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let model = model_from(args.model.as_deref())?;
    let seed = PipelineConfig {
        seed: args.seed,
        ..Default::default()
    }
    .with_env_seed()?
    .seed;
    let cfg = SynthConfig {
        n_frames: args.frames,
        motion: args.motion.parse::<MotionPreset>()?,
        noise: NoiseLevels {
            joints2d_px: args.joint_noise,
            pose_rad: args.pose_noise,
            outlier_fraction: args.outliers,
        },
        seed,
        negatives_per_frame: args.negatives,
        with_logits: args.logits_out.is_some(),
        ..Default::default()
    };
    let seq = synth_sequence(&model, &cfg)?;
    write_jsonl(&args.gt, &seq.ground_truth)?;
    write_jsonl(&args.observed, &seq.observed)?;
    if let Some(path) = &args.outliers_out {
        write_document(path, &seq.outliers)?;
    }
    if let Some(path) = &args.negatives_out {
        write_jsonl(path, &seq.negatives)?;
    }
    if let (Some(path), Some(logits)) = (&args.logits_out, &seq.logits) {
        logits.save(path)?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    }
    .with_env_seed()?;
    if args.model.is_some() {
        cfg.model_path = args.model.clone();
    }
    let model = model_from(cfg.model_path.as_deref())?;
    let frames: Vec<FrameResult> = read_jsonl(&args.input)?;
    let logits = args.logits.as_ref().map(DenseArray::load).transpose()?;
    let gt: Option<Vec<EvalRecord>> = args.gt.as_ref().map(read_jsonl).transpose()?;
    let out = run_pipeline(&cfg, &model, &frames, logits.as_ref(), gt.as_deref())?;
    write_jsonl(&args.out, &out.frames)?;
    write_json(&args.report, &out.report)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Dirmap(a) => dirmap(a),
        Command::Codec(c) => codec(c),
        Command::Pe(a) => pe(a),
        Command::Fk(a) => fk(a),
        Command::Project(a) => project(a),
        Command::Confidence(a) => confidence(a),
        Command::Filter(a) => filter(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => {
            let report = gradcheck(a.loss.parse::<GradLoss>()?, a.seed, a.instances)?;
            println!("{:e}", report.max_relative_deviation);
            Ok(())
        }
        Command::Run(a) => run(a),
        Command::Toymodel { out } => Ok(save_model(&HandModelParams::toy(), out)?),
    }
}
