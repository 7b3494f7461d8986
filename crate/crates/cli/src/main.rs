use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use tsdf_compress::autoencoder::{train, MlpAutoencoder, TrainConfig};
use tsdf_compress::container::{
    compress, decompress, evaluate_recon, CompressOptions, CompressedMap,
    DEFAULT_MAP_EMPTY_THRESHOLD,
};
use tsdf_compress::hybrid::{ParallelCodec, SequentialCodec};
use tsdf_compress::ingest::{
    associate, fuse_frame, harvest_subvolumes, parse_trajectory, FusionParams, HarvestParams,
    Intrinsics, TumSequence, TUM_DEPTH_SCALE,
};
use tsdf_compress::pca::PcaCodec;
use tsdf_compress::selector::{
    build_plane_model, calibrate_threshold, match_blocks, score_selection, selective_decompress,
    DescriptorModel,
};
use tsdf_compress::shapes::{
    generate_dataset_with_stats, load_blocks, save_blocks, DatasetSpec, DEFAULT_EMPTINESS_THRESHOLD,
};
use tsdf_compress::tracker::{ate, estimate_trajectory, TrackerConfig};
use tsdf_compress::volume::DEFAULT_TRUNCATION;
use tsdf_compress::{Codec, Error, TsdfVolume};

/// Block-wise compression, tracking and selective decoding of TSDF maps.
///
/// `--config FILE` prepends the `key = value` lines of FILE as `--key value`
/// flags to the subcommand; flags given on the command line win.
#[derive(Parser, Debug)]
#[command(name = "tsdfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic block dataset.
    Generate(GenerateArgs),
    /// Sample 16³ training windows out of a volume.
    Harvest(HarvestArgs),
    /// Fuse a TUM-layout depth sequence into a volume using its ground-truth poses.
    Fuse(FuseArgs),
    /// Fit a PCA codec.
    FitPca(FitPcaArgs),
    /// Train an autoencoder codec.
    TrainAe(TrainAeArgs),
    /// Combine PCA and an autoencoder into a parallel or sequential codec.
    FitHybrid(FitHybridArgs),
    /// Track a depth sequence against a volume and write the trajectory.
    Track(TrackArgs),
    /// Absolute trajectory error of an estimate against ground truth.
    EvaluateAte(EvaluateAteArgs),
    /// Build a floor descriptor model from a codec.
    BuildModel(BuildModelArgs),
    /// Flag blocks matching a descriptor model and decode only those.
    Select(SelectArgs),
    /// Gaussian-blur a volume.
    Blur(BlurArgs),
    /// Encode a volume into a compressed map.
    Compress(CompressArgs),
    /// Decode a compressed map into a volume.
    Decompress(DecompressArgs),
    /// Per-block reconstruction error of a volume against an original.
    EvaluateRecon(EvaluateReconArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    empty_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_EMPTINESS_THRESHOLD)]
    emptiness_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct HarvestArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long, default_value_t = 0.02)]
    empty_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_EMPTINESS_THRESHOLD)]
    emptiness_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct CameraArgs {
    #[arg(long, default_value_t = 525.0)]
    fx: f64,
    #[arg(long, default_value_t = 525.0)]
    fy: f64,
    #[arg(long, default_value_t = 319.5)]
    cx: f64,
    #[arg(long, default_value_t = 239.5)]
    cy: f64,
    /// Raw depth units per meter.
    #[arg(long, default_value_t = TUM_DEPTH_SCALE)]
    depth_scale: f64,
    /// Use at most this many frames.
    #[arg(long)]
    limit: Option<usize>,
    /// Largest timestamp gap, in seconds, when associating with ground truth.
    #[arg(long, default_value_t = 0.02)]
    max_dt: f64,
}

impl CameraArgs {
    fn intrinsics(&self) -> tsdf_compress::Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FuseArgs {
    /// Directory with depth.txt, groundtruth.txt and the depth images.
    #[arg(long)]
    sequence: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    /// `nx,ny,nz` voxels.
    #[arg(long, value_parser = parse_triple::<usize>)]
    dims: [usize; 3],
    #[arg(long, default_value_t = 0.02)]
    voxel_size: f32,
    /// `x,y,z` of the first voxel corner in meters.
    #[arg(long, value_parser = parse_triple::<f32>, allow_hyphen_values = true)]
    origin: [f32; 3],
    #[arg(long, default_value_t = DEFAULT_TRUNCATION.0, allow_negative_numbers = true)]
    d_min: f32,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION.1)]
    d_max: f32,
    #[arg(long, default_value_t = 100.0)]
    max_weight: f32,
    #[arg(long, default_value_t = 0.3)]
    min_depth: f32,
    #[arg(long, default_value_t = 6.0)]
    max_depth: f32,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    };
    let one = |v: &str| v.parse::<T>().map_err(|_| format!("bad value {v:?}"));
    Ok([one(a)?, one(b)?, one(c)?])
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FitPcaArgs {
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            momentum: self.momentum,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainAeArgs {
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    code_len: usize,
    #[command(flatten)]
    train: TrainArgs,
    /// Write the learning curve as `epoch train_mse validation_mse` rows.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq)]
enum HybridMode {
    Parallel,
    Sequential,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FitHybridArgs {
    #[arg(long, value_enum)]
    mode: HybridMode,
    /// Blocks used to search the mixing weight (and, for sequential, to train the second stage).
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    pca: PathBuf,
    /// Autoencoder codec; required for the parallel mode.
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Second-stage code length; required for the sequential mode.
    #[arg(long)]
    code_len: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrackArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    sequence: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    #[arg(long, default_value_t = 30)]
    max_iterations: usize,
    #[arg(long, default_value_t = 0.02)]
    huber_delta: f64,
    #[arg(long, default_value_t = 2)]
    point_stride: usize,
    #[arg(long, default_value_t = 100)]
    min_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvaluateAteArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    groundtruth: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    max_dt: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BuildModelArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    voxel_size: f64,
    #[arg(long, default_value = "floor")]
    label: String,
    /// Fixed squared code-distance threshold.
    #[arg(long, conflicts_with = "calibrate_map")]
    threshold: Option<f64>,
    /// Calibrate the threshold on this compressed map ...
    #[arg(long, requires = "labels")]
    calibrate_map: Option<PathBuf>,
    /// ... with one 0/1 label per block, in block order.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SelectArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Needed when the map does not embed its codec.
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Ground-truth 0/1 labels per block for precision and recall.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Per-block `bx by bz distance flag` rows.
    #[arg(long)]
    flags: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BlurArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, default_value_t = 9)]
    kernel_size: usize,
    #[arg(long, default_value_t = 4.0 / 3.0)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CompressArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    codec: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAP_EMPTY_THRESHOLD)]
    empty_threshold: f64,
    /// Embed the codec in the map.
    #[arg(long)]
    inline_codec: bool,
    /// Truncation the codec was trained for.
    #[arg(long, default_value_t = DEFAULT_TRUNCATION.0, allow_negative_numbers = true)]
    codec_d_min: f32,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION.1)]
    codec_d_max: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct DecompressArgs {
    #[arg(long)]
    map: PathBuf,
    /// Needed when the map does not embed its codec.
    #[arg(long)]
    codec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvaluateReconArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reconstructed: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAP_EMPTY_THRESHOLD)]
    empty_threshold: f64,
}

/// Ordered key-value results, printed as `key=value` lines on stdout and as a
/// table on stderr.
#[derive(Default)]
struct Report {
    rows: Vec<(String, String)>,
}

impl Report {
    fn add(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.rows.push((key.to_string(), value.to_string()));
        self
    }

    fn emit(&self) {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.rows {
            eprintln!("  {k:<width$}  {v}");
        }
        for (k, v) in &self.rows {
            println!("{k}={v}");
        }
    }
}

const EXIT_OTHER: u8 = 1;
const EXIT_FORMAT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_TRACKING: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Format(_)) | Some(Error::Parse { .. }) => EXIT_FORMAT,
        Some(Error::TrackingFailure { .. }) => EXIT_TRACKING,
        Some(Error::Io(_)) | None => EXIT_OTHER,
        Some(_) => EXIT_CONFIG,
    }
}

/// Splits `--config FILE` out of `args` and inserts the file's settings as
/// flags directly after the subcommand name.
fn expand_config(mut args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            if i + 1 >= args.len() {
                bail!(Error::Config("--config needs a file".into()));
            }
            config = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(path) = args[i].strip_prefix("--config=") {
            config = Some(path.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let flags = parse_config(&text)?;
    let at = args.len().min(2);
    args.splice(at..at, flags);
    Ok(args)
}

/// `key = value` lines; `#` starts a comment. `true`/`false` toggle switches.
fn parse_config(text: &str) -> anyhow::Result<Vec<String>> {
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(Error::Parse {
                line: n + 1,
                message: "expected `key = value`".into()
            });
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => flags.push(format!("--{key}={value}")),
        }
    }
    Ok(flags)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Harvest(a) => harvest(a),
        Command::Fuse(a) => fuse(a),
        Command::FitPca(a) => fit_pca(a),
        Command::TrainAe(a) => train_ae(a),
        Command::FitHybrid(a) => fit_hybrid(a),
        Command::Track(a) => track(a),
        Command::EvaluateAte(a) => evaluate_ate(a),
        Command::BuildModel(a) => build_model(a),
        Command::Select(a) => select(a),
        Command::Blur(a) => blur(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Decompress(a) => decompress_cmd(a),
        Command::EvaluateRecon(a) => evaluate_recon_cmd(a),
    }
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let spec = DatasetSpec {
        empty_fraction: a.empty_fraction,
        emptiness_threshold: a.emptiness_threshold,
        ..DatasetSpec::new(a.count, a.seed)
    };
    let (blocks, stats) = generate_dataset_with_stats(&spec)?;
    save_blocks(&a.out, &blocks)?;
    Report::default()
        .add("blocks", blocks.len())
        .add("empty_blocks", stats.kept_empty)
        .add("draws", stats.draws)
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn harvest(a: HarvestArgs) -> anyhow::Result<()> {
    let vol = TsdfVolume::load(&a.volume)?;
    let params = HarvestParams {
        stride: a.stride,
        emptiness_threshold: a.emptiness_threshold,
        empty_fraction: a.empty_fraction,
    };
    let blocks = harvest_subvolumes(&vol, &params)?;
    save_blocks(&a.out, &blocks)?;
    Report::default()
        .add("blocks", blocks.len())
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn fuse(a: FuseArgs) -> anyhow::Result<()> {
    let seq = TumSequence::open(&a.sequence)?;
    let frames = seq.load_frames(a.camera.intrinsics()?, a.camera.depth_scale, a.camera.limit)?;
    let mut vol = TsdfVolume::new(a.dims, a.voxel_size, a.origin, a.d_min, a.d_max)?;
    let params = FusionParams {
        max_weight: a.max_weight,
        min_depth: a.min_depth,
        max_depth: a.max_depth,
    };
    let mut fused = 0;
    for f in &frames {
        match associate(&seq.ground_truth, f.timestamp, a.camera.max_dt) {
            Ok(p) => {
                fuse_frame(&mut vol, f, &p.pose, &params);
                fused += 1;
            }
            Err(e) => log::warn!("skipping frame at t={}: {e}", f.timestamp),
        }
    }
    vol.save(&a.out)?;
    Report::default()
        .add("frames", frames.len())
        .add("fused", fused)
        .add(
            "observed_voxels",
            vol.weights().iter().filter(|&&w| w > 0.0).count(),
        )
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn fit_pca(a: FitPcaArgs) -> anyhow::Result<()> {
    let blocks = load_blocks(&a.blocks)?;
    let pca = PcaCodec::fit(&blocks, a.k)?;
    let mse = mean_reconstruction_mse(&Codec::Pca(pca.clone()), &blocks)?;
    let codec = Codec::Pca(pca);
    codec.save(&a.out)?;
    Report::default()
        .add("blocks", blocks.len())
        .add("k", a.k)
        .add("code_len", a.k + 1)
        .add("train_mse", format!("{mse:e}"))
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn mean_reconstruction_mse(codec: &Codec, blocks: &[tsdf_compress::Block]) -> anyhow::Result<f64> {
    let c = codec.as_block_codec();
    let mut total = 0.0;
    for b in blocks {
        total += c.reconstruct(b)?.mse(b);
    }
    Ok(total / blocks.len().max(1) as f64)
}

fn train_ae(a: TrainAeArgs) -> anyhow::Result<()> {
    let blocks = load_blocks(&a.blocks)?;
    let cfg = a.train.config();
    let init = MlpAutoencoder::for_blocks(a.code_len, cfg.seed)?;
    let (net, report) = train(&init, &blocks, &cfg)?;
    if let Some(path) = &a.curve {
        let mut text = String::from("# epoch train_mse validation_mse\n");
        for e in &report.curve {
            text.push_str(&format!(
                "{} {:e} {:e}\n",
                e.epoch, e.train_mse, e.validation_mse
            ));
        }
        fs::write(path, text)?;
    }
    Codec::Autoencoder(net).save(&a.out)?;
    Report::default()
        .add("blocks", blocks.len())
        .add("code_len", a.code_len)
        .add("epochs", report.curve.len() - 1)
        .add("best_epoch", report.best_epoch)
        .add(
            "initial_validation_mse",
            format!("{:e}", report.initial_validation_mse()),
        )
        .add(
            "best_validation_mse",
            format!("{:e}", report.best_validation_mse),
        )
        .add("test_mse", format!("{:e}", report.test_mse))
        .add("stopped_early", report.stopped_early)
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn load_pca(path: &Path) -> anyhow::Result<PcaCodec> {
    match Codec::load(path)? {
        Codec::Pca(p) => Ok(p),
        other => bail!(Error::Config(format!(
            "{} holds a {} codec, expected pca",
            path.display(),
            other.kind().name()
        ))),
    }
}

fn fit_hybrid(a: FitHybridArgs) -> anyhow::Result<()> {
    let blocks = load_blocks(&a.blocks)?;
    let pca = load_pca(&a.pca)?;
    let mut report = Report::default();
    let (codec, search) = match a.mode {
        HybridMode::Parallel => {
            let Some(ae_path) = &a.ae else {
                bail!(Error::Config("parallel mode needs --ae".into()));
            };
            let ae = match Codec::load(ae_path)? {
                Codec::Autoencoder(n) => n,
                other => bail!(Error::Config(format!(
                    "{} holds a {} codec, expected autoencoder",
                    ae_path.display(),
                    other.kind().name()
                ))),
            };
            let mut codec = ParallelCodec::new(pca, ae, 1.0)?;
            let search = codec.optimize_weight(&blocks)?;
            codec.set_weight(search.weight as f32)?;
            (Codec::Parallel(codec), search)
        }
        HybridMode::Sequential => {
            let Some(d2) = a.code_len else {
                bail!(Error::Config("sequential mode needs --code-len".into()));
            };
            let fit = SequentialCodec::fit(&blocks, pca, d2, &a.train.config())?;
            report
                .add(
                    "residual_mean_squared",
                    format!("{:e}", fit.residual_stats.mean_squared),
                )
                .add(
                    "residual_low_frequency_fraction",
                    fit.residual_stats.low_frequency_fraction,
                )
                .add(
                    "second_stage_best_validation_mse",
                    format!("{:e}", fit.training.best_validation_mse),
                );
            (Codec::Sequential(fit.codec), fit.weight_search)
        }
    };
    codec.save(&a.out)?;
    report
        .add("mode", codec.kind().name())
        .add("weight", search.weight)
        .add("closed_form_weight", search.closed_form_weight)
        .add("mse", format!("{:e}", search.mse))
        .add("mse_at_zero", format!("{:e}", search.mse_at_zero))
        .add("mse_at_one", format!("{:e}", search.mse_at_one))
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn track(a: TrackArgs) -> anyhow::Result<()> {
    let vol = TsdfVolume::load(&a.volume)?;
    let seq = TumSequence::open(&a.sequence)?;
    let frames = seq.load_frames(a.camera.intrinsics()?, a.camera.depth_scale, a.camera.limit)?;
    let Some(first) = frames.first() else {
        bail!(Error::Config("sequence has no frames".into()));
    };
    let init = associate(&seq.ground_truth, first.timestamp, a.camera.max_dt)?.pose;
    let cfg = TrackerConfig {
        max_iterations: a.max_iterations,
        huber_delta: a.huber_delta,
        point_stride: a.point_stride,
        min_points: a.min_points,
        ..TrackerConfig::default()
    };
    let run = estimate_trajectory(&vol, &frames, &init, &cfg)?;
    run.trajectory.save_tum(&a.out)?;
    let failures = run.failures();
    let mut report = Report::default();
    report
        .add("frames", frames.len())
        .add("failures", failures)
        .add("out", a.out.display());
    if let Ok(r) = ate(&run.trajectory, &seq.ground_truth, a.camera.max_dt) {
        report
            .add("ate_mean", format!("{:e}", r.mean))
            .add("ate_rmse", format!("{:e}", r.rmse));
    }
    report.emit();
    if failures > 0 {
        bail!(Error::TrackingFailure {
            usable: 0,
            required: cfg.min_points
        });
    }
    Ok(())
}

fn evaluate_ate(a: EvaluateAteArgs) -> anyhow::Result<()> {
    let est = parse_trajectory(&a.estimate)?;
    let gt = parse_trajectory(&a.groundtruth)?;
    let r = ate(&est, &gt, a.max_dt)?;
    Report::default()
        .add("poses", r.per_pose.len())
        .add("mean", format!("{:e}", r.mean))
        .add("median", format!("{:e}", r.median))
        .add("rmse", format!("{:e}", r.rmse))
        .add("max", format!("{:e}", r.max))
        .emit();
    Ok(())
}

fn read_labels(path: &Path) -> anyhow::Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        match line.trim() {
            "" => {}
            "0" => out.push(false),
            "1" => out.push(true),
            other => bail!(Error::Parse {
                line: n + 1,
                message: format!("expected 0 or 1, got {other:?}")
            }),
        }
    }
    Ok(out)
}

fn build_model(a: BuildModelArgs) -> anyhow::Result<()> {
    let codec = Codec::load(&a.codec)?;
    let mut model = build_plane_model(codec.as_block_codec(), a.voxel_size, &a.label)?;
    let mut report = Report::default();
    match (a.threshold, &a.calibrate_map, &a.labels) {
        (Some(t), _, _) => model.threshold = t,
        (None, Some(map_path), Some(labels_path)) => {
            let map = CompressedMap::load(map_path)?;
            let labels = read_labels(labels_path)?;
            if labels.len() != map.blocks.len() {
                bail!(Error::Config(format!(
                    "{} labels for {} blocks",
                    labels.len(),
                    map.blocks.len()
                )));
            }
            let matches = match_blocks(&map, &model)?;
            let (inside, outside): (Vec<_>, Vec<_>) =
                matches.iter().zip(&labels).partition(|(_, l)| **l);
            let d = |v: Vec<(&tsdf_compress::selector::BlockMatch, &bool)>| {
                v.into_iter().map(|(m, _)| m.distance).collect::<Vec<_>>()
            };
            model.threshold = calibrate_threshold(&d(inside), &d(outside))?;
            report.add("calibration_blocks", labels.len());
        }
        _ => bail!(Error::Config(
            "give --threshold or --calibrate-map with --labels".into()
        )),
    }
    model.save(&a.out)?;
    report
        .add("label", &model.label)
        .add("codes", model.codes.len())
        .add("threshold", format!("{:e}", model.threshold))
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn resolve(map: &CompressedMap, codec: &Option<PathBuf>) -> anyhow::Result<Codec> {
    let external = codec.as_ref().map(Codec::load).transpose()?;
    Ok(map.resolve_codec(external.as_ref())?)
}

fn select(a: SelectArgs) -> anyhow::Result<()> {
    let map = CompressedMap::load(&a.map)?;
    let model = DescriptorModel::load(&a.model)?;
    let codec = resolve(&map, &a.codec)?;
    let matches = match_blocks(&map, &model)?;
    let flags: Vec<bool> = matches.iter().map(|m| m.flagged).collect();
    let mut text = String::from("# bx by bz distance flag\n");
    for (idx, m) in map.block_indices().iter().zip(&matches) {
        text.push_str(&format!(
            "{} {} {} {:e} {}\n",
            idx.bx, idx.by, idx.bz, m.distance, m.flagged as u8
        ));
    }
    fs::write(&a.flags, text)?;
    selective_decompress(&map, &codec, &flags)?.save(&a.out)?;
    let mut report = Report::default();
    report
        .add("blocks", flags.len())
        .add("flagged", flags.iter().filter(|&&f| f).count())
        .add("threshold", format!("{:e}", model.threshold));
    if let Some(path) = &a.labels {
        let s = score_selection(&flags, &read_labels(path)?)?;
        report.add("precision", s.precision).add("recall", s.recall);
    }
    report.add("out", a.out.display()).emit();
    Ok(())
}

fn blur(a: BlurArgs) -> anyhow::Result<()> {
    let vol = TsdfVolume::load(&a.volume)?;
    vol.gaussian_blur(a.kernel_size, a.sigma)?.save(&a.out)?;
    Report::default()
        .add("kernel_size", a.kernel_size)
        .add("sigma", a.sigma)
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn compress_cmd(a: CompressArgs) -> anyhow::Result<()> {
    let vol = TsdfVolume::load(&a.volume)?;
    let codec = Codec::load(&a.codec)?;
    let opts = CompressOptions {
        empty_threshold: a.empty_threshold,
        inline_codec: a.inline_codec,
        codec_truncation: (a.codec_d_min, a.codec_d_max),
    };
    let map = compress(&vol, &codec, &opts)?;
    map.save(&a.out)?;
    let s = map.size_report();
    Report::default()
        .add("codec", codec.kind().name())
        .add("code_len", map.code_len)
        .add("blocks", s.total_blocks)
        .add("coded_blocks", s.coded_blocks)
        .add("empty_blocks", s.empty_blocks)
        .add("payload_bytes", s.payload_bytes)
        .add("raw_payload_bytes", s.raw_payload_bytes)
        .add("payload_ratio", s.payload_ratio)
        .add("overhead_bytes", s.overhead_bytes)
        .add("file_bytes", s.file_bytes)
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn decompress_cmd(a: DecompressArgs) -> anyhow::Result<()> {
    let map = CompressedMap::load(&a.map)?;
    let codec = resolve(&map, &a.codec)?;
    decompress(&map, &codec)?.save(&a.out)?;
    Report::default()
        .add("blocks", map.blocks.len())
        .add("out", a.out.display())
        .emit();
    Ok(())
}

fn evaluate_recon_cmd(a: EvaluateReconArgs) -> anyhow::Result<()> {
    let original = TsdfVolume::load(&a.original)?;
    let recon = TsdfVolume::load(&a.reconstructed)?;
    let r = evaluate_recon(&original, &recon, a.empty_threshold)?;
    let mut report = Report::default();
    report
        .add("blocks", r.blocks)
        .add("mean_mse", format!("{:e}", r.mean_mse))
        .add("std_mse", format!("{:e}", r.std_mse))
        .add("max_mse", format!("{:e}", r.max_mse));
    for (edge, count) in &r.histogram {
        report.add(&format!("hist_le_{edge:e}"), count);
    }
    report.emit();
    Ok(())
}
