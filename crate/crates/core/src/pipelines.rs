//! Composite restoration procedures built from the descent and IRLS solvers.
//!
//! Every pipeline is a fixed sequence of stages; each stage contributes its
//! iteration log and wall-clock time to the returned [`PipelineReport`].

use std::time::Instant;

use crate::blur::{embed, PsfKernel};
use crate::error::{RestoreError, Result};
use crate::grid::ImageGrid;
use crate::regularization::{
    adaptive_gamma, reg_gradient, RegularizerKind, RegularizerSpec,
};
use crate::solvers::{
    descent_run, irls_outer, CgSettings, DescentOutcome, GammaRule, IterationRecord, ProblemSpec,
    StepPolicy, StopReason, StopRule,
};

/// Default pre-denoising tolerance on the relative change.
pub const PRE_TOL: f64 = 1e-4;
/// Default number of lagged-diffusivity outer iterations after pre-denoising.
pub const IRLS_ITERS: usize = 3;
/// Default number of Tukey sharpening steps.
pub const SHARPEN_STEPS: usize = 10;
/// Iteration cap for pre-denoising stages that stop on tolerance.
pub const PRE_MAX_ITERS: usize = 1000;
/// Below `DEGENERATE_RATIO·‖b‖²` the β-estimate denominator is treated as zero.
const DEGENERATE_RATIO: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: &'static str,
    /// Image produced by the stage.
    pub output: ImageGrid,
    pub records: Vec<IterationRecord>,
    pub seconds: f64,
    /// Why a descent stage stopped; `None` for implicit or skipped stages.
    pub stop: Option<StopReason>,
}

impl StageReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub output: ImageGrid,
    /// Stages in execution order.
    pub stages: Vec<StageReport>,
    /// Regularization weight of the implicit or Tikhonov stage, if one ran.
    pub beta_used: Option<f64>,
}

impl PipelineReport {
    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(StageReport::iterations).sum()
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// All records of all stages, in execution order.
    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.stages.iter().flat_map(|s| s.records.iter())
    }
}

fn descent_stage(name: &'static str, out: DescentOutcome, started: Instant) -> (ImageGrid, StageReport) {
    let stage = StageReport {
        name,
        output: out.image.clone(),
        records: out.records,
        seconds: started.elapsed().as_secs_f64(),
        stop: Some(out.stop),
    };
    (out.image, stage)
}

fn seed_reg(kind: RegularizerKind, m: &ImageGrid) -> Result<RegularizerSpec> {
    RegularizerSpec::from_huber_gamma(kind, adaptive_gamma(m))
}

/// Explicit denoising: descent on the pure diffusion energy from `m⁰ = b`
/// with the threshold re-derived from each iterate.
pub fn denoise_explicit(
    b: &ImageGrid,
    policy: &StepPolicy,
    stop: &StopRule,
    kind: RegularizerKind,
) -> Result<PipelineReport> {
    let started = Instant::now();
    let prob = ProblemSpec::diffusion(b.clone(), seed_reg(kind, b)?, GammaRule::Adaptive);
    let out = descent_run(&prob, policy, stop, b)?;
    let (output, stage) = descent_stage("denoise", out, started);
    Ok(PipelineReport {
        output,
        stages: vec![stage],
        beta_used: None,
    })
}

/// Numerator and denominator of the β estimate.
fn beta_terms(m_bar: &ImageGrid, b: &ImageGrid, reg: &RegularizerSpec) -> Result<(f64, f64)> {
    m_bar.ensure_same_side(b)?;
    let d = m_bar.sub(b);
    let num = d.dot(&d);
    let den = d.dot(&reg_gradient(m_bar, reg));
    Ok((num, den))
}

fn is_degenerate(den: f64, b: &ImageGrid) -> bool {
    den.abs() < DEGENERATE_RATIO * b.dot(b)
}

/// Regularization weight that makes the smoothed image `m_bar` a stationary
/// point of the denoising energy in the least-squares sense:
/// `β = −Σ(m̄−b)² / Σ (m̄−b)·R_m(m̄)`.
pub fn estimate_beta(m_bar: &ImageGrid, b: &ImageGrid, reg: &RegularizerSpec) -> Result<f64> {
    let (num, den) = beta_terms(m_bar, b, reg)?;
    if is_degenerate(den, b) {
        return Err(RestoreError::Parameter(
            "beta estimate undefined: smoothed image carries no correction".into(),
        ));
    }
    let beta = -num / den;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(RestoreError::NonPositiveBeta(beta));
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOptions {
    pub pre_tol: f64,
    pub irls_iters: usize,
    pub policy: StepPolicy,
    pub cg: CgSettings,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            pre_tol: PRE_TOL,
            irls_iters: IRLS_ITERS,
            policy: StepPolicy::lsd(),
            cg: CgSettings::default(),
        }
    }
}

fn check_pre_tol(pre_tol: f64) -> Result<()> {
    if pre_tol > 0.0 && pre_tol < 1.0 {
        Ok(())
    } else {
        Err(RestoreError::Parameter(format!(
            "pre-denoise tolerance must lie in (0, 1), got {pre_tol}"
        )))
    }
}

/// Explicit pre-denoising, β estimation, then a few lagged-diffusivity
/// solves of `(I + βL(mᵏ)) m = b` warm-started at the pre-denoised image.
///
/// Inputs with nothing to smooth (flat images, or pre-denoising that leaves
/// `b` unchanged) are returned after the explicit stage.
pub fn denoise_hybrid(b: &ImageGrid, opts: &HybridOptions) -> Result<PipelineReport> {
    check_pre_tol(opts.pre_tol)?;
    let stop = StopRule::new(opts.pre_tol, PRE_MAX_ITERS)?;
    let mut report = denoise_explicit(b, &opts.policy, &stop, RegularizerKind::Huber)?;
    let m_bar = report.output.clone();

    let reg = seed_reg(RegularizerKind::Huber, &m_bar)?;
    let (num, den) = beta_terms(&m_bar, b, &reg)?;
    if num == 0.0 || is_degenerate(den, b) {
        log::info!("no noise to remove; skipping implicit stage");
        return Ok(report);
    }
    let beta = estimate_beta(&m_bar, b, &reg)?;

    let started = Instant::now();
    let prob = ProblemSpec::tikhonov(b.clone(), None, beta, reg, GammaRule::Adaptive)?;
    let out = irls_outer(&prob, &m_bar, opts.irls_iters, opts.cg)?;
    report.stages.push(StageReport {
        name: "implicit",
        output: out.image.clone(),
        records: out.records,
        seconds: started.elapsed().as_secs_f64(),
        stop: None,
    });
    report.output = out.image;
    report.beta_used = Some(beta);
    Ok(report)
}

/// `steps` steepest-descent steps on the Tukey energy with the threshold
/// fixed at `√5·γ(m_pre)`. Meant for pre-denoised input.
pub fn sharpen_tukey(m_pre: &ImageGrid, steps: usize) -> Result<PipelineReport> {
    let started = Instant::now();
    let reg = RegularizerSpec::tukey_from_huber(adaptive_gamma(m_pre))?;
    let prob = ProblemSpec::diffusion(m_pre.clone(), reg, GammaRule::Fixed);
    let out = if steps == 0 {
        DescentOutcome {
            image: m_pre.clone(),
            records: Vec::new(),
            stop: StopReason::MaxIterations,
        }
    } else {
        descent_run(&prob, &StepPolicy::sd(), &StopRule::fixed_steps(steps), m_pre)?
    };
    let (output, stage) = descent_stage("sharpen", out, started);
    Ok(PipelineReport {
        output,
        stages: vec![stage],
        beta_used: None,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(RestoreError::Parameter(format!("beta must be positive, got {beta}")))
    }
}

fn deblur_from(
    data: &ImageGrid,
    start: &ImageGrid,
    psf: &PsfKernel,
    beta: f64,
    policy: &StepPolicy,
    stop: &StopRule,
) -> Result<(ImageGrid, StageReport)> {
    check_beta(beta)?;
    let started = Instant::now();
    let tf = embed(psf, data.side())?;
    let reg = seed_reg(RegularizerKind::Huber, start)?;
    let prob = ProblemSpec::tikhonov(data.clone(), Some(tf), beta, reg, GammaRule::Adaptive)?;
    let out = descent_run(&prob, policy, stop, start)?;
    Ok(descent_stage("deblur", out, started))
}

/// Deblurring by descent on `½‖Jm − b‖² + β·Σρ(|∇m|)` from `m⁰ = b` with an
/// adaptive Huber threshold.
pub fn deblur(
    b: &ImageGrid,
    psf: &PsfKernel,
    beta: f64,
    policy: &StepPolicy,
    stop: &StopRule,
) -> Result<PipelineReport> {
    let (output, stage) = deblur_from(b, b, psf, beta, policy, stop)?;
    Ok(PipelineReport {
        output,
        stages: vec![stage],
        beta_used: Some(beta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub pre_tol: f64,
    pub sharpen_steps: usize,
    /// Policy of the pre-denoising and deblurring stages.
    pub policy: StepPolicy,
    /// Stopping rule of the deblurring stage.
    pub deblur_stop: StopRule,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            pre_tol: PRE_TOL,
            sharpen_steps: SHARPEN_STEPS,
            policy: StepPolicy::lsd(),
            deblur_stop: StopRule::new(1e-4, PRE_MAX_ITERS).expect("valid default"),
        }
    }
}

/// Restoration of noisy blurred data by splitting: explicit pre-denoising,
/// deblurring of the pre-denoised image, then Tukey sharpening.
///
/// Noise-free input skips the pre-denoising stage.
pub fn restore_split(
    b: &ImageGrid,
    psf: &PsfKernel,
    beta: f64,
    opts: &SplitOptions,
) -> Result<PipelineReport> {
    check_pre_tol(opts.pre_tol)?;
    check_beta(beta)?;
    let stop = StopRule::new(opts.pre_tol, PRE_MAX_ITERS)?;
    let pre = denoise_explicit(b, &opts.policy, &stop, RegularizerKind::Huber)?;
    let reg = seed_reg(RegularizerKind::Huber, &pre.output)?;
    let (num, den) = beta_terms(&pre.output, b, &reg)?;
    let (m_bar, mut stages) = if num == 0.0 || is_degenerate(den, b) {
        log::info!("no noise to remove; skipping pre-denoise stage");
        (b.clone(), Vec::new())
    } else {
        (pre.output, pre.stages)
    };

    let (deblurred, stage) = deblur_from(&m_bar, &m_bar, psf, beta, &opts.policy, &opts.deblur_stop)?;
    stages.push(stage);
    let sharp = sharpen_tukey(&deblurred, opts.sharpen_steps)?;
    stages.extend(sharp.stages);
    Ok(PipelineReport {
        output: sharp.output,
        stages,
        beta_used: Some(beta),
    })
}
