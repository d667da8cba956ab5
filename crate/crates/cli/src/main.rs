//! `ksynth`: phantoms, simulated datasets, training, synthesis and MTF
//! evaluation from the command line.

mod config;
mod error;
mod preview;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ksynth::dataset::{DatasetManifest, DatasetSpec, NoiseInjection, SceneKind};
use ksynth::denoiser::{load_checkpoint, save_checkpoint, DenoiserParams, Projector, DEFAULT_WIDTHS};
use ksynth::eval::{estimate_mtf, image_metrics, mtf_fidelity, CurveSource, ImageMetrics, MtfCurve, Window};
use ksynth::ksim::{load_ksim, save_ksim};
use ksynth::noise::NoiseModel;
use ksynth::phantom::{random_phantom, shepp_logan, water_phantom, wire_phantom};
use ksynth::unroll::{evaluate, train, EpochStats, TrainMode, TrainState, UnrollConfig};
use ksynth::{direct_ratio_synthesis, ratio_filter, ForwardOperator, FrequencyGrid, Image, KernelMtfProfile};
use serde_json::json;

use config::{sidecar_path, FileConfig, RunConfig, DEFAULT_EPS};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ksynth", version, about = "DFOV-aware CT reconstruction-kernel synthesis")]
struct Cli {
    /// Seed for every random stream of the run
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config; command-line flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a phantom to a KSIM file
    GenPhantom(GenPhantomArgs),
    /// Simulate smooth/sharp training pairs plus a manifest
    SimulateDataset(SimulateArgs),
    /// Train the projection network on a dataset manifest
    Train(TrainArgs),
    /// Convert a smooth-kernel image to the target kernel
    Synthesize(SynthesizeArgs),
    /// Estimate the MTF from a wire-phantom image
    EstimateMtf(EstimateMtfArgs),
    /// Score a synthesis method on every pair of a manifest
    Eval(EvalArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be a positive finite number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Clone)]
struct ProfileArgs {
    /// Smooth (input) kernel MTF, JSON or CSV
    #[arg(long)]
    input_profile: Option<PathBuf>,
    /// Sharp (target) kernel MTF, JSON or CSV
    #[arg(long)]
    target_profile: Option<PathBuf>,
    /// Regularization of the MTF ratio filters
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Clone)]
struct UnrollArgs {
    /// Number of unrolls K
    #[arg(long)]
    unrolls: Option<usize>,
    /// Initial data-consistency weight
    #[arg(long)]
    lambda0: Option<f64>,
    /// Per-unroll decay of the weight
    #[arg(long)]
    decay: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    SheppLogan,
    Wire,
    Water,
    Random,
}

#[derive(Args)]
struct GenPhantomArgs {
    kind: PhantomKind,
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Display field of view in cm
    #[arg(long, value_parser = positive, default_value_t = 20.0)]
    dfov: f64,
    #[arg(long, default_value = "phantom.ksim")]
    out: PathBuf,
    /// Wire amplitude
    #[arg(long, default_value_t = 1000.0)]
    amplitude: f64,
    /// Water-phantom noise std
    #[arg(long)]
    sigma: Option<f64>,
    /// Also write a 16-bit PNG preview
    #[arg(long)]
    preview: bool,
    #[command(flatten)]
    profiles: ProfileArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectionArg {
    Additive,
    WaterPatch,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    RandomEllipses,
    SheppLogan,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Comma-separated DFOVs in cm, assigned round-robin
    #[arg(long, value_delimiter = ',', value_parser = positive, default_value = "5,10,15,20")]
    dfov: Vec<f64>,
    /// Noise std produced by the input kernel
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "additive")]
    injection: InjectionArg,
    #[arg(long, value_enum, default_value = "random-ellipses")]
    scene: SceneArg,
    #[arg(long, default_value = "dataset")]
    out_dir: PathBuf,
    #[command(flatten)]
    profiles: ProfileArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ModelBased,
    DirectLearning,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ModelBased => TrainMode::ModelBased,
            ModeArg::DirectLearning => TrainMode::DirectLearning,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "model-based")]
    mode: ModeArg,
    /// Output checkpoint
    #[arg(long, default_value = "model.ksnn")]
    out: PathBuf,
    /// Training log CSV (default: next to the checkpoint)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint and its epoch count
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    w_ssim: Option<f64>,
    /// Write an intermediate checkpoint every this many epochs
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    unroll: UnrollArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Direct,
    Tikhonov,
    Modl,
    DirectLearning,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "modl")]
    method: Method,
    /// Trained network, required by modl and direct-learning
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "synth.ksim")]
    out: PathBuf,
    /// Sharp-kernel reference; prints image metrics when given
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    preview: bool,
    #[command(flatten)]
    profiles: ProfileArgs,
    #[command(flatten)]
    unroll: UnrollArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    None,
    Hann,
}

#[derive(Args)]
struct EstimateMtfArgs {
    #[arg(long)]
    input: PathBuf,
    /// ROI half-width in pixels
    #[arg(long, default_value_t = 16)]
    half_width: usize,
    #[arg(long, value_enum, default_value = "none")]
    window: WindowArg,
    #[arg(long, default_value = "mtf.csv")]
    out: PathBuf,
    /// Profile to compare against; prints the RMSE
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Upper end of the comparison band as a fraction of Nyquist
    #[arg(long, default_value_t = 0.8)]
    band: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "modl")]
    method: Method,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-pair metrics CSV
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    unroll: UnrollArgs,
}

struct Context {
    file: FileConfig,
    seed: u64,
    threads: Option<usize>,
}

impl Context {
    fn profiles(&self, args: &ProfileArgs) -> CliResult<(KernelMtfProfile, KernelMtfProfile)> {
        let load = |flag: &Option<PathBuf>, file: &Option<KernelMtfProfile>, default: fn() -> KernelMtfProfile| {
            match (flag, file) {
                (Some(p), _) => KernelMtfProfile::load(p).map_err(CliError::from),
                (None, Some(f)) => Ok(f.clone()),
                (None, None) => Ok(default()),
            }
        };
        Ok((
            load(&args.input_profile, &self.file.input_profile, KernelMtfProfile::default_input)?,
            load(&args.target_profile, &self.file.target_profile, KernelMtfProfile::default_target)?,
        ))
    }

    fn eps(&self, flag: Option<f64>) -> CliResult<f64> {
        let eps = flag.or(self.file.eps).unwrap_or(DEFAULT_EPS);
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(CliError::Usage(format!("eps must be >= 0, got {eps}")));
        }
        Ok(eps)
    }

    fn unroll(&self, args: &UnrollArgs) -> CliResult<UnrollConfig> {
        let mut cfg = self.file.unroll.clone().unwrap_or_default();
        if let Some(k) = args.unrolls {
            cfg.unrolls = k;
        }
        if let Some(l) = args.lambda0 {
            cfg.lambda0 = l;
        }
        if let Some(d) = args.decay {
            cfg.decay = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn record(&self, command: &str, settings: FileConfig, args: serde_json::Value) -> RunConfig {
        RunConfig {
            command: command.into(),
            settings: FileConfig {
                seed: Some(self.seed),
                threads: self.threads,
                ..settings
            },
            args,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads,
        file,
    };
    match cli.command {
        Command::GenPhantom(a) => gen_phantom(&ctx, a),
        Command::SimulateDataset(a) => simulate_dataset(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Synthesize(a) => synthesize_cmd(&ctx, a),
        Command::EstimateMtf(a) => estimate_mtf_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
    }
}

fn write_image(out: &Path, image: &Image, preview: bool) -> CliResult<()> {
    save_ksim(out, image)?;
    if preview {
        preview::write_png(&out.with_extension("png"), image)?;
    }
    Ok(())
}

fn gen_phantom(ctx: &Context, a: GenPhantomArgs) -> CliResult<()> {
    let mut settings = FileConfig::default();
    let image = match a.kind {
        PhantomKind::SheppLogan => shepp_logan(a.n, a.dfov)?,
        PhantomKind::Wire => wire_phantom(a.n, a.dfov, a.amplitude)?,
        PhantomKind::Random => random_phantom(a.n, a.dfov, ctx.seed)?,
        PhantomKind::Water => {
            let (input, _) = ctx.profiles(&a.profiles)?;
            let mut model = ctx.file.noise.clone().unwrap_or(NoiseModel::new(10.0, input, 1.0)?);
            if let Some(s) = a.sigma {
                model.sigma = s;
            }
            model.validate()?;
            let image = water_phantom(a.n, a.dfov, &model, ctx.seed)?;
            settings.noise = Some(model);
            image
        }
    };
    write_image(&a.out, &image, a.preview)?;
    let kind = match a.kind {
        PhantomKind::SheppLogan => "shepp-logan",
        PhantomKind::Wire => "wire",
        PhantomKind::Water => "water",
        PhantomKind::Random => "random",
    };
    ctx.record(
        "gen-phantom",
        settings,
        json!({"kind": kind, "n": a.n, "dfov": a.dfov, "amplitude": a.amplitude, "out": a.out}),
    )
    .write_sidecar(&sidecar_path(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn simulate_dataset(ctx: &Context, a: SimulateArgs) -> CliResult<()> {
    let (input, target) = ctx.profiles(&a.profiles)?;
    let mut noise = ctx
        .file
        .noise
        .clone()
        .unwrap_or(NoiseModel::new(0.002, input.clone(), 1.0)?);
    if let Some(s) = a.sigma {
        noise.sigma = s;
    }
    noise.validate()?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let spec = DatasetSpec {
        count: a.count,
        size: a.n,
        dfovs_cm: a.dfov.clone(),
        input_profile: input.clone(),
        target_profile: target.clone(),
        noise: noise.clone(),
        injection: match a.injection {
            InjectionArg::Additive => NoiseInjection::Additive,
            InjectionArg::WaterPatch => NoiseInjection::WaterPatch,
        },
        scene: match a.scene {
            SceneArg::RandomEllipses => SceneKind::RandomEllipses,
            SceneArg::SheppLogan => SceneKind::SheppLogan,
        },
        seed: ctx.seed,
    };
    let manifest = spec.write(&a.out_dir)?;
    let settings = FileConfig {
        input_profile: Some(input),
        target_profile: Some(target),
        noise: Some(noise),
        ..FileConfig::default()
    };
    ctx.record(
        "simulate-dataset",
        settings,
        json!({"count": a.count, "n": a.n, "dfov": a.dfov, "injection": spec.injection,
               "scene": spec.scene, "out_dir": a.out_dir}),
    )
    .write_sidecar(&a.out_dir.join("run_config.json"))?;
    println!("wrote {} pairs to {}", manifest.pairs.len(), a.out_dir.display());
    Ok(())
}

fn load_manifest(path: &Path) -> CliResult<(DatasetManifest, Vec<ksynth::dataset::TrainingPair>)> {
    let manifest = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let pairs = manifest.load_pairs(base)?;
    Ok((manifest, pairs))
}

fn factory(
    input: KernelMtfProfile,
    target: KernelMtfProfile,
    eps: f64,
) -> impl Fn(FrequencyGrid) -> ksynth::Result<ForwardOperator> + Sync {
    move |grid| ForwardOperator::for_kernels(&input, &target, grid, eps)
}

fn train_cmd(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let (manifest, pairs) = load_manifest(&a.manifest)?;
    let eps = ctx.eps(a.eps)?;
    let ucfg = ctx.unroll(&a.unroll)?;
    let mut tcfg = ctx.file.train.clone().unwrap_or_default();
    tcfg.mode = a.mode.into();
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.lr {
        tcfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = a.w_ssim {
        tcfg.w_ssim = v;
    }
    if let Some(v) = a.checkpoint_every {
        tcfg.checkpoint_every = v;
    }
    tcfg.validate()?;

    let state = match &a.resume {
        Some(p) => {
            let (params, header) = load_checkpoint(p)?;
            TrainState::resume(params, header.epoch)
        }
        None => TrainState::new(DenoiserParams::init(&DEFAULT_WIDTHS, ctx.seed)?),
    };
    let make_op = factory(manifest.input_profile.clone(), manifest.target_profile.clone(), eps);
    let initial = evaluate(&pairs, &make_op, &state.params, &tcfg, &ucfg)?;
    eprintln!("epoch {}: loss {:.6e}", state.epoch, initial.mean_loss);

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let append = a.resume.is_some() && log_path.exists();
    let log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&log_path)?;
    let mut log = BufWriter::new(log_file);
    let mut header = !append;
    let every = tcfg.checkpoint_every;
    let out = a.out.clone();
    let outcome = train(&pairs, &make_op, &tcfg, &ucfg, state, ctx.seed, |stats, state| {
        EpochStats::write_csv(&mut log, std::slice::from_ref(stats), header)?;
        header = false;
        std::io::Write::flush(&mut log)?;
        eprintln!("epoch {}: loss {:.6e}", stats.epoch, stats.mean_loss);
        if every > 0 && state.epoch % every == 0 {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            save_checkpoint(out.with_file_name(format!("{stem}_epoch{:04}.ksnn", state.epoch)), &state.params, state.epoch)?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &outcome.state.params, outcome.state.epoch)?;
    let final_stats = evaluate(&pairs, &make_op, &outcome.state.params, &tcfg, &ucfg)?;
    let settings = FileConfig {
        input_profile: Some(manifest.input_profile),
        target_profile: Some(manifest.target_profile),
        eps: Some(eps),
        unroll: Some(ucfg),
        train: Some(tcfg),
        ..FileConfig::default()
    };
    ctx.record(
        "train",
        settings,
        json!({"manifest": a.manifest, "out": a.out, "log": log_path, "resume": a.resume}),
    )
    .write_sidecar(&sidecar_path(&a.out))?;
    println!(
        "{}",
        json!({"initial_loss": initial.mean_loss, "final_loss": final_stats.mean_loss,
               "epochs": outcome.state.epoch, "checkpoint": a.out})
    );
    Ok(())
}

fn load_params(method: Method, checkpoint: &Option<PathBuf>) -> CliResult<Option<DenoiserParams>> {
    match (method, checkpoint) {
        (Method::Modl | Method::DirectLearning, None) => {
            Err(CliError::Usage("--checkpoint is required for modl and direct-learning".into()))
        }
        (Method::Modl | Method::DirectLearning, Some(p)) => Ok(Some(load_checkpoint(p)?.0)),
        _ => Ok(None),
    }
}

fn apply_method(
    method: Method,
    y: &Image,
    (input, target): (&KernelMtfProfile, &KernelMtfProfile),
    eps: f64,
    ucfg: &UnrollConfig,
    params: Option<&DenoiserParams>,
) -> CliResult<Image> {
    let grid = y.grid();
    Ok(match method {
        Method::Direct => direct_ratio_synthesis(y, &ratio_filter(input, target, grid, eps)?)?,
        Method::Tikhonov => ForwardOperator::for_kernels(input, target, grid, eps)?.tikhonov_init(y, ucfg.lambda0)?,
        Method::Modl => {
            let op = ForwardOperator::for_kernels(input, target, grid, eps)?;
            ksynth::unroll::synthesize(y, &op, params.expect("checked by load_params"), ucfg)?
        }
        Method::DirectLearning => params.expect("checked by load_params").project(y)?,
    })
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Direct => "direct",
        Method::Tikhonov => "tikhonov",
        Method::Modl => "modl",
        Method::DirectLearning => "direct-learning",
    }
}

fn synthesize_cmd(ctx: &Context, a: SynthesizeArgs) -> CliResult<()> {
    let (input, target) = ctx.profiles(&a.profiles)?;
    let eps = ctx.eps(a.profiles.eps)?;
    let ucfg = ctx.unroll(&a.unroll)?;
    let params = load_params(a.method, &a.checkpoint)?;
    let y = load_ksim(&a.input)?;
    let out = apply_method(a.method, &y, (&input, &target), eps, &ucfg, params.as_ref())?;
    write_image(&a.out, &out, a.preview)?;
    if let Some(r) = &a.reference {
        let metrics = image_metrics(&out, &load_ksim(r)?)?;
        println!("{}", serde_json::to_string(&metrics)?);
    }
    let settings = FileConfig {
        input_profile: Some(input),
        target_profile: Some(target),
        eps: Some(eps),
        unroll: Some(ucfg),
        ..FileConfig::default()
    };
    ctx.record(
        "synthesize",
        settings,
        json!({"input": a.input, "method": method_name(a.method), "checkpoint": a.checkpoint, "out": a.out}),
    )
    .write_sidecar(&sidecar_path(&a.out))?;
    Ok(())
}

fn estimate_mtf_cmd(ctx: &Context, a: EstimateMtfArgs) -> CliResult<()> {
    let wire = load_ksim(&a.input)?;
    let window = match a.window {
        WindowArg::None => Window::None,
        WindowArg::Hann => Window::Hann,
    };
    let curve = estimate_mtf(&wire, a.half_width, window)?;
    curve.write_csv(BufWriter::new(File::create(&a.out)?))?;
    let mut settings = FileConfig::default();
    if let Some(p) = &a.compare {
        let profile = KernelMtfProfile::load(p)?;
        let reference = MtfCurve::from_profile(&profile, &curve.frequencies(), wire.dfov_cm(), CurveSource::Target)?;
        let hi = (a.band * wire.grid().nyquist()).min(curve.max_frequency());
        let rmse = mtf_fidelity(&curve, &reference, (0.0, hi))?;
        println!("{}", json!({"rmse": rmse, "band_lp_per_cm": [0.0, hi]}));
        settings.target_profile = Some(profile);
    }
    ctx.record(
        "estimate-mtf",
        settings,
        json!({"input": a.input, "half_width": a.half_width, "window": window, "out": a.out, "band": a.band}),
    )
    .write_sidecar(&sidecar_path(&a.out))?;
    Ok(())
}

fn eval_cmd(ctx: &Context, a: EvalArgs) -> CliResult<()> {
    let (manifest, pairs) = load_manifest(&a.manifest)?;
    let eps = ctx.eps(a.eps)?;
    let ucfg = ctx.unroll(&a.unroll)?;
    let params = load_params(a.method, &a.checkpoint)?;
    let profiles = (&manifest.input_profile, &manifest.target_profile);
    let mut rows: Vec<(f64, ImageMetrics)> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let out = apply_method(a.method, &pair.input, profiles, eps, &ucfg, params.as_ref())?;
        rows.push((pair.dfov_cm(), image_metrics(&out, &pair.target)?));
    }
    let mut csv = String::from("index,dfov_cm,mse,psnr,ssim\n");
    for (i, (dfov, m)) in rows.iter().enumerate() {
        csv.push_str(&format!("{i},{dfov},{},{},{}\n", m.mse, m.psnr, m.ssim));
    }
    std::fs::write(&a.out, csv)?;
    let n = rows.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| rows.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
    println!(
        "{}",
        json!({"pairs": rows.len(), "mse": mean(|m| m.mse), "psnr": mean(|m| m.psnr), "ssim": mean(|m| m.ssim)})
    );
    let settings = FileConfig {
        input_profile: Some(manifest.input_profile.clone()),
        target_profile: Some(manifest.target_profile.clone()),
        eps: Some(eps),
        unroll: Some(ucfg),
        ..FileConfig::default()
    };
    ctx.record(
        "eval",
        settings,
        json!({"manifest": a.manifest, "method": method_name(a.method), "checkpoint": a.checkpoint, "out": a.out}),
    )
    .write_sidecar(&sidecar_path(&a.out))?;
    Ok(())
}
