//! Point spread functions and the periodic blur operator `J`.
//!
//! The blur model is circular convolution on the lattice. A PSF is embedded
//! into a `side × side` array with its center at the origin (periodic wrap)
//! and transformed once; `J` and `Jᵀ` are then pointwise products with the
//! spectrum and its conjugate. The forward DFT is unnormalized and the inverse
//! carries the `1/side²` factor, so the spectral product is exactly the
//! circulant matrix-vector product.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{RestoreError, Result};
use crate::grid::ImageGrid;

const DISK_SUPERSAMPLE: usize = 16;
const ROWS_PER_TASK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsfKind {
    Motion,
    Log,
    Disk,
    Unsharp,
    Gaussian,
    Laplacian,
    Delta,
    Custom,
}

/// Generator parameters for the built-in PSF families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsfParams {
    /// Linear motion of `len` pixels at `theta` degrees counterclockwise.
    Motion { len: f64, theta: f64 },
    /// Laplacian of Gaussian on an `hsize × hsize` window.
    Log { hsize: usize, sigma: f64 },
    /// Circular averaging filter.
    Disk { radius: f64 },
    /// 3×3 unsharp contrast enhancement.
    Unsharp { alpha: f64 },
    /// Gaussian low-pass on an `hsize × hsize` window.
    Gaussian { hsize: usize, sigma: f64 },
    /// 3×3 Laplacian approximation.
    Laplacian { alpha: f64 },
    Delta,
}

impl PsfParams {
    pub fn kind(&self) -> PsfKind {
        match self {
            PsfParams::Motion { .. } => PsfKind::Motion,
            PsfParams::Log { .. } => PsfKind::Log,
            PsfParams::Disk { .. } => PsfKind::Disk,
            PsfParams::Unsharp { .. } => PsfKind::Unsharp,
            PsfParams::Gaussian { .. } => PsfKind::Gaussian,
            PsfParams::Laplacian { .. } => PsfKind::Laplacian,
            PsfParams::Delta => PsfKind::Delta,
        }
    }

    /// Clamps window sizes to fit a lattice of the given side, keeping them odd.
    pub fn fitted_to(self, side: usize) -> PsfParams {
        let fit = |hsize: usize| {
            let k = hsize.min(side);
            if k.is_multiple_of(2) {
                k.saturating_sub(1).max(1)
            } else {
                k
            }
        };
        match self {
            PsfParams::Log { hsize, sigma } => PsfParams::Log {
                hsize: fit(hsize),
                sigma,
            },
            PsfParams::Gaussian { hsize, sigma } => PsfParams::Gaussian {
                hsize: fit(hsize),
                sigma,
            },
            other => other,
        }
    }
}

/// Compact `type:param:param` syntax, e.g. `motion:15:30`, `gaussian:1.5`,
/// `gaussian:1.5:9`, `log:0.5`, `disk:5`, `unsharp:0.2`, `laplacian:0.2`,
/// `delta`. Window sizes default to 3 (gaussian) and 5 (log).
impl FromStr for PsfParams {
    type Err = RestoreError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let num = |idx: usize| -> Result<Option<f64>> {
            args.get(idx)
                .map(|a| {
                    a.trim().parse::<f64>().map_err(|_| {
                        RestoreError::Parameter(format!("bad PSF parameter '{a}' in '{s}'"))
                    })
                })
                .transpose()
        };
        let required = |idx: usize| -> Result<f64> {
            num(idx)?.ok_or_else(|| {
                RestoreError::Parameter(format!("PSF '{s}' is missing parameter {}", idx + 1))
            })
        };
        let hsize = |idx: usize, default: usize| -> Result<usize> {
            match num(idx)? {
                None => Ok(default),
                Some(v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize),
                Some(v) => Err(RestoreError::Parameter(format!(
                    "window size must be a positive integer, got {v}"
                ))),
            }
        };
        let max_args = match name.as_str() {
            "motion" | "log" | "gaussian" => 2,
            "disk" | "unsharp" | "laplacian" => 1,
            "delta" => 0,
            _ => {
                return Err(RestoreError::Parameter(format!(
                    "unknown PSF type '{name}'"
                )))
            }
        };
        if args.len() > max_args {
            return Err(RestoreError::Parameter(format!(
                "too many parameters for PSF '{s}'"
            )));
        }
        let params = match name.as_str() {
            "motion" => PsfParams::Motion {
                len: required(0)?,
                theta: num(1)?.unwrap_or(0.0),
            },
            "log" => PsfParams::Log {
                sigma: required(0)?,
                hsize: hsize(1, 5)?,
            },
            "gaussian" => PsfParams::Gaussian {
                sigma: required(0)?,
                hsize: hsize(1, 3)?,
            },
            "disk" => PsfParams::Disk {
                radius: required(0)?,
            },
            "unsharp" => PsfParams::Unsharp {
                alpha: required(0)?,
            },
            "laplacian" => PsfParams::Laplacian {
                alpha: required(0)?,
            },
            _ => PsfParams::Delta,
        };
        Ok(params)
    }
}

impl fmt::Display for PsfParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsfParams::Motion { len, theta } => write!(f, "motion:{len}:{theta}"),
            PsfParams::Log { hsize, sigma } => write!(f, "log:{sigma}:{hsize}"),
            PsfParams::Disk { radius } => write!(f, "disk:{radius}"),
            PsfParams::Unsharp { alpha } => write!(f, "unsharp:{alpha}"),
            PsfParams::Gaussian { hsize, sigma } => write!(f, "gaussian:{sigma}:{hsize}"),
            PsfParams::Laplacian { alpha } => write!(f, "laplacian:{alpha}"),
            PsfParams::Delta => write!(f, "delta"),
        }
    }
}

/// A spatial convolution kernel with an explicit origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    rows: usize,
    cols: usize,
    taps: Vec<f64>,
    center: (usize, usize),
    kind: PsfKind,
}

impl PsfKernel {
    /// A user-supplied kernel whose origin is the middle tap (`rows/2, cols/2`).
    pub fn custom(rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || taps.len() != rows * cols {
            return Err(RestoreError::Parameter(format!(
                "kernel must hold {rows}x{cols} taps, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(RestoreError::Parameter("kernel taps must be finite".into()));
        }
        Ok(PsfKernel {
            rows,
            cols,
            taps,
            center: (rows / 2, cols / 2),
            kind: PsfKind::Custom,
        })
    }

    fn square(k: usize, taps: Vec<f64>, kind: PsfKind) -> Self {
        debug_assert_eq!(taps.len(), k * k);
        PsfKernel {
            rows: k,
            cols: k,
            taps,
            center: (k / 2, k / 2),
            kind,
        }
    }

    pub fn delta() -> Self {
        Self::square(1, vec![1.0], PsfKind::Delta)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.cols + c]
    }

    pub fn center(&self) -> (usize, usize) {
        self.center
    }

    pub fn kind(&self) -> PsfKind {
        self.kind
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(RestoreError::Parameter(msg()))
    }
}

/// Generates a PSF from its family parameters.
pub fn make_psf(params: &PsfParams) -> Result<PsfKernel> {
    match *params {
        PsfParams::Motion { len, theta } => {
            check(len.is_finite() && len >= 1.0, || {
                format!("motion length must be >= 1, got {len}")
            })?;
            check(theta.is_finite(), || format!("motion angle must be finite, got {theta}"))?;
            Ok(motion(len, theta))
        }
        PsfParams::Log { hsize, sigma } => {
            check(sigma.is_finite() && sigma > 0.0, || {
                format!("sigma must be positive, got {sigma}")
            })?;
            check(hsize >= 1, || "window size must be at least 1".into())?;
            Ok(log_of_gaussian(hsize, sigma))
        }
        PsfParams::Disk { radius } => {
            check(radius.is_finite() && radius > 0.0, || {
                format!("disk radius must be positive, got {radius}")
            })?;
            Ok(disk(radius))
        }
        PsfParams::Unsharp { alpha } => {
            check((0.0..=1.0).contains(&alpha), || {
                format!("alpha must lie in [0, 1], got {alpha}")
            })?;
            let a = alpha;
            let s = 1.0 / (a + 1.0);
            let taps = [-a, a - 1.0, -a, a - 1.0, a + 5.0, a - 1.0, -a, a - 1.0, -a]
                .iter()
                .map(|t| s * t)
                .collect();
            Ok(PsfKernel::square(3, taps, PsfKind::Unsharp))
        }
        PsfParams::Gaussian { hsize, sigma } => {
            check(sigma.is_finite() && sigma > 0.0, || {
                format!("sigma must be positive, got {sigma}")
            })?;
            check(hsize >= 1, || "window size must be at least 1".into())?;
            let (mut taps, _) = gaussian_window(hsize, sigma);
            let total: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= total);
            Ok(PsfKernel::square(hsize, taps, PsfKind::Gaussian))
        }
        PsfParams::Laplacian { alpha } => {
            check((0.0..=1.0).contains(&alpha), || {
                format!("alpha must lie in [0, 1], got {alpha}")
            })?;
            let a = alpha;
            let s = 4.0 / (a + 1.0);
            let (c, e) = (a / 4.0, (1.0 - a) / 4.0);
            let taps = [c, e, c, e, -1.0, e, c, e, c]
                .iter()
                .map(|t| s * t)
                .collect();
            Ok(PsfKernel::square(3, taps, PsfKind::Laplacian))
        }
        PsfParams::Delta => Ok(PsfKernel::delta()),
    }
}

/// Like [`make_psf`], but shrinks oversized windows to the lattice first.
pub fn make_psf_for_side(params: &PsfParams, side: usize) -> Result<PsfKernel> {
    make_psf(&params.fitted_to(side))
}

/// Unnormalized Gaussian on a centered `k × k` window, plus the squared radii.
fn gaussian_window(k: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let half = (k as f64 - 1.0) / 2.0;
    let mut g = Vec::with_capacity(k * k);
    let mut r2 = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let y = i as f64 - half;
            let x = j as f64 - half;
            let rr = x * x + y * y;
            r2.push(rr);
            g.push((-rr / (2.0 * sigma * sigma)).exp());
        }
    }
    (g, r2)
}

fn log_of_gaussian(k: usize, sigma: f64) -> PsfKernel {
    let (g, r2) = gaussian_window(k, sigma);
    let total: f64 = g.iter().sum();
    let s4 = sigma.powi(4);
    let mut taps: Vec<f64> = g
        .iter()
        .zip(&r2)
        .map(|(gv, rr)| gv / total * (rr - 2.0 * sigma * sigma) / s4)
        .collect();
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    taps.iter_mut().for_each(|t| *t -= mean);
    PsfKernel::square(k, taps, PsfKind::Log)
}

fn disk(radius: f64) -> PsfKernel {
    let half = radius.ceil() as usize;
    let k = 2 * half + 1;
    let r2 = radius * radius;
    let sub = DISK_SUPERSAMPLE as f64;
    let mut taps = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let y0 = i as f64 - half as f64 - 0.5;
            let x0 = j as f64 - half as f64 - 0.5;
            let mut hits = 0usize;
            for a in 0..DISK_SUPERSAMPLE {
                let y = y0 + (a as f64 + 0.5) / sub;
                for b in 0..DISK_SUPERSAMPLE {
                    let x = x0 + (b as f64 + 0.5) / sub;
                    if x * x + y * y <= r2 {
                        hits += 1;
                    }
                }
            }
            taps[i * k + j] = hits as f64;
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    PsfKernel::square(k, taps, PsfKind::Disk)
}

fn motion(len: f64, theta_deg: f64) -> PsfKernel {
    let half = (len - 1.0) / 2.0;
    let margin = half.ceil() as usize + 1;
    let k = 2 * margin + 1;
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let mut taps = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            // x to the right, y up
            let x = j as f64 - margin as f64;
            let y = margin as f64 - i as f64;
            let t = (x * cos + y * sin).clamp(-half, half);
            let d = (x - t * cos).hypot(y - t * sin);
            taps[i * k + j] = (1.0 - d).max(0.0);
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    PsfKernel::square(k, taps, PsfKind::Motion)
}

/// Row-major 2D DFT plans for a square lattice.
#[derive(Clone)]
struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("side", &self.side).finish()
    }
}

impl Fft2 {
    fn new(side: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            side,
            forward: planner.plan_fft_forward(side),
            inverse: planner.plan_fft_inverse(side),
        }
    }

    fn rows(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        // whole-row chunks keep each row's transform independent of scheduling
        buf.par_chunks_mut(self.side * ROWS_PER_TASK)
            .for_each(|c| plan.process(c));
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let s = self.side;
        for i in 0..s {
            for j in i + 1..s {
                buf.swap(i * s + j, j * s + i);
            }
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        self.rows(buf, plan);
        self.transpose(buf);
        self.rows(buf, plan);
        self.transpose(buf);
    }

    fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform with `1/side²` scaling, keeping the real part.
    fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.side * self.side) as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Frequency-domain form of a PSF embedded periodically on a lattice.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    side: usize,
    spectrum: Vec<Complex64>,
    fft: Fft2,
}

impl TransferFunction {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Diagonal entry of `JᵀJ`, i.e. the sum of squared taps.
    pub fn normal_diagonal(&self) -> f64 {
        self.spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.spectrum.len() as f64
    }

    fn check(&self, m: &ImageGrid) -> Result<()> {
        if m.side() != self.side {
            return Err(RestoreError::SideMismatch {
                expected: self.side,
                actual: m.side(),
            });
        }
        Ok(())
    }

    fn multiply(&self, m: &ImageGrid, conjugate: bool) -> Result<ImageGrid> {
        self.check(m)?;
        let mut spec = self.fft.forward_real(m.values());
        for (x, s) in spec.iter_mut().zip(&self.spectrum) {
            *x *= if conjugate { s.conj() } else { *s };
        }
        ImageGrid::new(self.side, self.fft.inverse_real(spec))
    }
}

/// Zero-pads `psf` to `side × side` with its center wrapped to `(0, 0)` and
/// transforms it.
pub fn embed(psf: &PsfKernel, side: usize) -> Result<TransferFunction> {
    if psf.rows > side || psf.cols > side {
        return Err(RestoreError::KernelTooLarge {
            rows: psf.rows,
            cols: psf.cols,
            side,
        });
    }
    let mut padded = vec![0.0; side * side];
    let (cr, cc) = psf.center;
    for a in 0..psf.rows {
        let i = (a + side - cr) % side;
        for b in 0..psf.cols {
            let j = (b + side - cc) % side;
            padded[i * side + j] += psf.tap(a, b);
        }
    }
    let fft = Fft2::new(side);
    let spectrum = fft.forward_real(&padded);
    Ok(TransferFunction {
        side,
        spectrum,
        fft,
    })
}

/// Applies `J`: circular convolution with the embedded PSF.
pub fn forward_map(m: &ImageGrid, tf: &TransferFunction) -> Result<ImageGrid> {
    tf.multiply(m, false)
}

/// Applies `Jᵀ`: multiplication by the conjugate spectrum.
pub fn adjoint_map(r: &ImageGrid, tf: &TransferFunction) -> Result<ImageGrid> {
    tf.multiply(r, true)
}

/// Reference O(N·k²) periodic convolution `b[i,j] = Σ f[i−p, j−q] m[p,q]`.
pub fn direct_convolve(m: &ImageGrid, psf: &PsfKernel) -> ImageGrid {
    let s = m.side();
    let (cr, cc) = psf.center;
    let mut out = vec![0.0; s * s];
    let wrap = |x: isize| x.rem_euclid(s as isize) as usize;
    for i in 0..s {
        for j in 0..s {
            let mut acc = 0.0;
            for a in 0..psf.rows {
                let p = wrap(i as isize - (a as isize - cr as isize));
                for b in 0..psf.cols {
                    let q = wrap(j as isize - (b as isize - cc as isize));
                    acc += psf.tap(a, b) * m.get(p, q);
                }
            }
            out[i * s + j] = acc;
        }
    }
    ImageGrid::new(s, out).expect("same lattice")
}
