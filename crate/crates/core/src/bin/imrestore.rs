use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use imrestore::blur::{embed, forward_map, make_psf, make_psf_for_side, PsfKernel, PsfParams};
use imrestore::grid::{add_gaussian_noise, misfit, psnr, NoiseSpec};
use imrestore::io::{read_image, read_psf, write_image, write_log, write_psf};
use imrestore::phantom::Phantom;
use imrestore::pipelines::{
    denoise_explicit, denoise_hybrid, deblur, restore_split, sharpen_tukey, HybridOptions,
    PipelineReport, SplitOptions, IRLS_ITERS, PRE_MAX_ITERS, PRE_TOL, SHARPEN_STEPS,
};
use imrestore::regularization::RegularizerKind;
use imrestore::solvers::{CgSettings, IterationRecord, StepPolicy, StopRule};
use imrestore::{RestoreError, Result};

/// Variational image denoising and deblurring.
///
/// Images are square 8-bit binary PGM (P5) files. Blur kernels are given
/// either in compact form `type:p1:p2` or as a path to a plain-text matrix:
///
///   motion:LEN:THETA     linear motion of LEN pixels at THETA degrees
///   gaussian:SIGMA[:H]   Gaussian, H×H window (default 3)
///   log:SIGMA[:H]        Laplacian of Gaussian, H×H window (default 5)
///   disk:RADIUS          circular averaging
///   unsharp:ALPHA        3×3 unsharp mask, ALPHA in [0, 1]
///   laplacian:ALPHA      3×3 Laplacian, ALPHA in [0, 1]
///   delta                identity
#[derive(Parser, Debug)]
#[command(name = "imrestore", version, verbatim_doc_comment)]
struct Cli {
    /// Worker threads for FFTs (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print progress information to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a blur kernel as a plain-text matrix.
    #[command(allow_negative_numbers = true)]
    Psf(PsfArgs),
    /// Blur an image, optionally adding Gaussian noise.
    #[command(allow_negative_numbers = true)]
    Blur(BlurArgs),
    /// Add Gaussian white noise of a given percentage level.
    #[command(allow_negative_numbers = true)]
    Noise(NoiseArgs),
    /// Remove noise (explicit descent, hybrid explicit-implicit, or Tukey sharpening).
    #[command(allow_negative_numbers = true)]
    Denoise(DenoiseArgs),
    /// Deblur by gradient descent on the regularized least-squares objective.
    #[command(allow_negative_numbers = true)]
    Deblur(DeblurArgs),
    /// Restore noisy blurred data: pre-denoise, deblur, sharpen.
    #[command(allow_negative_numbers = true)]
    Restore(RestoreArgs),
    /// Compare an image against a reference.
    Metrics(MetricsArgs),
    /// Render a synthetic test image.
    Phantom(PhantomArgs),
}

#[derive(Args, Debug)]
struct PsfArgs {
    /// Kernel type: motion, gaussian, log, disk, unsharp, laplacian or delta.
    #[arg(long = "type", value_name = "TYPE", conflicts_with = "spec")]
    kind: Option<String>,
    /// Compact kernel description, e.g. `motion:15:30`.
    #[arg(long, value_name = "SPEC")]
    spec: Option<String>,
    /// Motion length in pixels.
    #[arg(long)]
    len: Option<f64>,
    /// Motion angle in degrees, counterclockwise.
    #[arg(long)]
    theta: Option<f64>,
    /// Gaussian / LoG standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Gaussian / LoG window side.
    #[arg(long)]
    hsize: Option<usize>,
    /// Disk radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Unsharp / Laplacian shape parameter.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NoiseFlags {
    /// Noise level in percent of the image's root-mean-square value.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Seed of the noise generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BlurArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Kernel, compact form or file.
    #[arg(long)]
    psf: String,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DenoiseMethod {
    /// Explicit descent on the diffusion energy until the tolerance.
    Explicit,
    /// Explicit pre-denoising, estimated weight, then implicit IRLS steps.
    Hybrid,
    /// Explicit pre-denoising followed by Tukey sharpening steps.
    Sharpen,
}

#[derive(Args, Debug)]
struct DescentFlags {
    /// Step policy: sd, lsd, hlsd or fixed:TAU.
    #[arg(long, default_value = "lsd")]
    policy: String,
    /// Stop when the relative change falls to this value.
    #[arg(long, default_value_t = PRE_TOL)]
    tol: f64,
    #[arg(long, default_value_t = PRE_MAX_ITERS)]
    max_iters: usize,
}

#[derive(Args, Debug)]
struct OutputFlags {
    #[arg(long, short)]
    out: PathBuf,
    /// Write the iteration log (CSV) here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write each stage's image into this existing directory.
    #[arg(long)]
    stages: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = DenoiseMethod::Explicit)]
    method: DenoiseMethod,
    /// Regularizer of the explicit method: huber or tukey.
    #[arg(long, default_value = "huber")]
    reg: String,
    #[command(flatten)]
    descent: DescentFlags,
    /// Lagged-diffusivity iterations of the hybrid method.
    #[arg(long, default_value_t = IRLS_ITERS)]
    irls_iters: usize,
    /// Tukey steps of the sharpen method.
    #[arg(long, default_value_t = SHARPEN_STEPS)]
    sharpen_steps: usize,
    /// Synthesize noise of this percentage before denoising. Zero declares the
    /// input noise-free, and it is written back unchanged.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args, Debug)]
struct DeblurArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Kernel, compact form or file.
    #[arg(long)]
    psf: String,
    /// Regularization weight; 1e-3, 1e-4 and 1e-5 are typical.
    #[arg(long)]
    beta: f64,
    #[command(flatten)]
    descent: DescentFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Kernel, compact form or file.
    #[arg(long)]
    psf: String,
    /// Regularization weight of the deblurring stage.
    #[arg(long)]
    beta: f64,
    /// Step policy of the pre-denoising and deblurring stages.
    #[arg(long, default_value = "lsd")]
    policy: String,
    /// Tolerance of the pre-denoising stage.
    #[arg(long, default_value_t = PRE_TOL)]
    pre_tol: f64,
    /// Tolerance of the deblurring stage.
    #[arg(long, default_value_t = PRE_TOL)]
    tol: f64,
    #[arg(long, default_value_t = PRE_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = SHARPEN_STEPS)]
    sharpen_steps: usize,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// portrait, silhouette or cartoon.
    #[arg(long, default_value = "portrait")]
    name: String,
    #[arg(long, default_value_t = 256)]
    side: usize,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_kernel(spec: &str, side: usize) -> Result<PsfKernel> {
    match spec.parse::<PsfParams>() {
        Ok(params) => make_psf_for_side(&params, side),
        Err(parse_err) => {
            if Path::new(spec).is_file() {
                read_psf(spec)
            } else {
                Err(parse_err)
            }
        }
    }
}

fn psf_params(args: &PsfArgs) -> Result<PsfParams> {
    if let Some(spec) = &args.spec {
        return spec.parse();
    }
    let kind = args
        .kind
        .as_deref()
        .ok_or_else(|| RestoreError::Parameter("give --type or --spec".into()))?;
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| RestoreError::Parameter(format!("{kind} kernel needs --{name}")))
    };
    let params = match kind.to_ascii_lowercase().as_str() {
        "motion" => PsfParams::Motion {
            len: need(args.len, "len")?,
            theta: args.theta.unwrap_or(0.0),
        },
        "gaussian" => PsfParams::Gaussian {
            hsize: args.hsize.unwrap_or(3),
            sigma: args.sigma.unwrap_or(0.5),
        },
        "log" => PsfParams::Log {
            hsize: args.hsize.unwrap_or(5),
            sigma: args.sigma.unwrap_or(0.5),
        },
        "disk" => PsfParams::Disk {
            radius: args.radius.unwrap_or(5.0),
        },
        "unsharp" => PsfParams::Unsharp {
            alpha: args.alpha.unwrap_or(0.2),
        },
        "laplacian" => PsfParams::Laplacian {
            alpha: args.alpha.unwrap_or(0.2),
        },
        "delta" => PsfParams::Delta,
        other => {
            return Err(RestoreError::Parameter(format!("unknown kernel type '{other}'")));
        }
    };
    Ok(params)
}

/// Stage images are named `<index>-<stage>.pgm`.
fn write_outputs(report: &PipelineReport, flags: &OutputFlags) -> Result<()> {
    if let Some(dir) = &flags.stages {
        for (idx, stage) in report.stages.iter().enumerate() {
            write_image(&stage.output, dir.join(format!("{idx}-{}.pgm", stage.name)))?;
        }
    }
    if let Some(log_path) = &flags.log {
        // Number records consecutively across stages.
        let records: Vec<IterationRecord> = report
            .records()
            .enumerate()
            .map(|(k, r)| IterationRecord { k, ..*r })
            .collect();
        if records.is_empty() {
            log::warn!("no iterations were taken; log not written");
        } else {
            write_log(&records, log_path)?;
        }
    }
    write_image(&report.output, &flags.out)
}

fn summarize(report: &PipelineReport) {
    for stage in &report.stages {
        log::info!(
            "stage {}: {} iterations in {:.2}s ({:?})",
            stage.name,
            stage.iterations(),
            stage.seconds,
            stage.stop
        );
    }
    if let Some(beta) = report.beta_used {
        log::info!("beta = {beta:.6e}");
    }
}

fn check_stage_dir(flags: &OutputFlags) -> Result<()> {
    match &flags.stages {
        Some(dir) if !dir.is_dir() => Err(RestoreError::Parameter(format!(
            "stage directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(RestoreError::Parameter("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RestoreError::Parameter(e.to_string()))?;
    }

    match cli.command {
        Command::Psf(args) => {
            let psf = make_psf(&psf_params(&args)?)?;
            match &args.out {
                Some(path) => write_psf(&psf, path)?,
                None => print!("{}", imrestore::io::format_psf(&psf)),
            }
        }
        Command::Blur(args) => {
            let spec = NoiseSpec::new(args.noise.eta, args.noise.seed)?;
            let image = read_image(&args.input)?;
            let psf = parse_kernel(&args.psf, image.side())?;
            let blurred = forward_map(&image, &embed(&psf, image.side())?)?;
            write_image(&add_gaussian_noise(&blurred, spec), &args.out)?;
        }
        Command::Noise(args) => {
            let spec = NoiseSpec::new(args.noise.eta, args.noise.seed)?;
            let image = read_image(&args.input)?;
            write_image(&add_gaussian_noise(&image, spec), &args.out)?;
        }
        Command::Denoise(args) => {
            let policy: StepPolicy = args.descent.policy.parse()?;
            let stop = StopRule::new(args.descent.tol, args.descent.max_iters)?;
            let kind: RegularizerKind = args.reg.parse()?;
            let noise = args.eta.map(|eta| NoiseSpec::new(eta, args.seed)).transpose()?;
            check_stage_dir(&args.output)?;
            let input = read_image(&args.input)?;
            let b = match noise {
                Some(spec) if spec.eta_percent == 0.0 => {
                    log::info!("noise level 0: input written unchanged");
                    return write_image(&input, &args.output.out);
                }
                Some(spec) => add_gaussian_noise(&input, spec),
                None => input,
            };
            let report = match args.method {
                DenoiseMethod::Explicit => denoise_explicit(&b, &policy, &stop, kind)?,
                DenoiseMethod::Hybrid => {
                    let opts = HybridOptions {
                        pre_tol: args.descent.tol,
                        irls_iters: args.irls_iters,
                        policy,
                        cg: CgSettings::default(),
                    };
                    denoise_hybrid(&b, &opts)?
                }
                DenoiseMethod::Sharpen => {
                    let mut pre = denoise_explicit(&b, &policy, &stop, RegularizerKind::Huber)?;
                    let sharp = sharpen_tukey(&pre.output, args.sharpen_steps)?;
                    pre.stages.extend(sharp.stages);
                    pre.output = sharp.output;
                    pre
                }
            };
            summarize(&report);
            log::info!("misfit to data = {:.4}", misfit(&report.output, &b)?);
            write_outputs(&report, &args.output)?;
        }
        Command::Deblur(args) => {
            let policy: StepPolicy = args.descent.policy.parse()?;
            let stop = StopRule::new(args.descent.tol, args.descent.max_iters)?;
            if !(args.beta > 0.0 && args.beta.is_finite()) {
                return Err(RestoreError::Parameter(format!("--beta must be positive, got {}", args.beta)));
            }
            check_stage_dir(&args.output)?;
            let b = read_image(&args.input)?;
            let psf = parse_kernel(&args.psf, b.side())?;
            let report = deblur(&b, &psf, args.beta, &policy, &stop)?;
            summarize(&report);
            write_outputs(&report, &args.output)?;
        }
        Command::Restore(args) => {
            let opts = SplitOptions {
                pre_tol: args.pre_tol,
                sharpen_steps: args.sharpen_steps,
                policy: args.policy.parse()?,
                deblur_stop: StopRule::new(args.tol, args.max_iters)?,
            };
            if !(args.pre_tol > 0.0 && args.pre_tol < 1.0) {
                return Err(RestoreError::Parameter(format!(
                    "--pre-tol must lie in (0, 1), got {}",
                    args.pre_tol
                )));
            }
            if !(args.beta > 0.0 && args.beta.is_finite()) {
                return Err(RestoreError::Parameter(format!("--beta must be positive, got {}", args.beta)));
            }
            check_stage_dir(&args.output)?;
            let b = read_image(&args.input)?;
            let psf = parse_kernel(&args.psf, b.side())?;
            let report = restore_split(&b, &psf, args.beta, &opts)?;
            summarize(&report);
            write_outputs(&report, &args.output)?;
        }
        Command::Metrics(args) => {
            let m = read_image(&args.input)?;
            let reference = read_image(&args.reference)?;
            m.ensure_same_side(&reference)?;
            let diff = m.sub(&reference);
            println!("psnr {:.4}", psnr(&m, &reference)?);
            println!("rmse {:.6}", diff.rms());
            println!("misfit {:.6}", misfit(&m, &reference)?);
            println!("relative {:.6e}", diff.norm() / reference.norm().max(f64::MIN_POSITIVE));
        }
        Command::Phantom(args) => {
            let phantom: Phantom = args.name.parse()?;
            write_image(&phantom.render(args.side)?, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imrestore: {e}");
            ExitCode::from(1)
        }
    }
}
