//! Deterministic synthetic test images on the 0–255 intensity scale.
//!
//! The scenes mix smooth shading, sharp-edged objects and fine texture so
//! that denoising and deblurring behave roughly like they do on natural
//! photographs, without shipping image files.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{RestoreError, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phantom {
    /// Portrait-like scene: soft shading, rounded shapes, moderate texture.
    Portrait,
    /// High-contrast scene: dark figure against a bright graded sky and a
    /// textured foreground.
    Silhouette,
    /// Piecewise-constant cartoon with a few smooth blobs.
    Cartoon,
}

impl FromStr for Phantom {
    type Err = RestoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "portrait" => Ok(Phantom::Portrait),
            "silhouette" => Ok(Phantom::Silhouette),
            "cartoon" => Ok(Phantom::Cartoon),
            other => Err(RestoreError::Parameter(format!("unknown phantom '{other}'"))),
        }
    }
}

/// Smoothed indicator of the ellipse centered at `(cx, cy)`, unit coordinates.
#[allow(clippy::too_many_arguments)]
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, angle: f64, soft: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    let u = (dx * c + dy * s) / rx;
    let v = (-dx * s + dy * c) / ry;
    let r = (u * u + v * v).sqrt();
    step((1.0 - r) / soft.max(1e-9))
}

fn rect(x: f64, y: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
        1.0
    } else {
        0.0
    }
}

fn step(t: f64) -> f64 {
    0.5 * (1.0 + t.clamp(-1.0, 1.0))
}

/// Band-limited random texture: a sum of random plane waves.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(seed: u64, count: usize, min_freq: f64, max_freq: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..count)
            .map(|_| {
                let f = rng.random_range(min_freq..max_freq);
                let a = rng.random_range(0.0..PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.0);
                (f * a.cos(), f * a.sin(), phase, amp)
            })
            .collect::<Vec<_>>();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let norm = (self.waves.len() as f64).sqrt();
        self.waves
            .iter()
            .map(|(kx, ky, ph, amp)| amp * (2.0 * PI * (kx * x + ky * y) + ph).sin())
            .sum::<f64>()
            / norm
    }
}

impl Phantom {
    pub fn render(self, side: usize) -> Result<ImageGrid> {
        let n = (side.max(2) - 1) as f64;
        let img = match self {
            Phantom::Portrait => {
                let tex = Texture::new(7, 40, 6.0, 40.0);
                ImageGrid::from_fn(side, |i, j| {
                    let (x, y) = (j as f64 / n, i as f64 / n);
                    let mut v = 90.0 + 70.0 * x - 30.0 * y;
                    v += 80.0 * ellipse(x, y, 0.55, 0.45, 0.22, 0.30, 0.2, 0.05);
                    v -= 60.0 * ellipse(x, y, 0.48, 0.38, 0.05, 0.03, 0.0, 0.2);
                    v -= 60.0 * ellipse(x, y, 0.62, 0.38, 0.05, 0.03, 0.0, 0.2);
                    v += 50.0 * ellipse(x, y, 0.2, 0.8, 0.18, 0.25, -0.5, 0.02);
                    v -= 70.0 * rect(x, y, 0.05, 0.05, 0.25, 0.6);
                    v += 12.0 * tex.at(x, y);
                    v.clamp(0.0, 255.0)
                })?
            }
            Phantom::Silhouette => {
                let tex = Texture::new(11, 60, 20.0, 60.0);
                ImageGrid::from_fn(side, |i, j| {
                    let (x, y) = (j as f64 / n, i as f64 / n);
                    let mut v = 220.0 - 60.0 * y;
                    let ground = if y > 0.72 { 1.0 } else { 0.0 };
                    v = v * (1.0 - ground) + ground * (120.0 + 25.0 * tex.at(x, y));
                    let body = ellipse(x, y, 0.42, 0.55, 0.12, 0.28, 0.1, 0.01)
                        .max(ellipse(x, y, 0.45, 0.22, 0.07, 0.08, 0.0, 0.01))
                        .max(rect(x, y, 0.55, 0.35, 0.57, 0.95))
                        .max(rect(x, y, 0.5, 0.3, 0.7, 0.36));
                    v = v * (1.0 - body) + body * 25.0;
                    v += 40.0 * rect(x, y, 0.78, 0.5, 0.95, 0.72) * (1.0 - body);
                    v.clamp(0.0, 255.0)
                })?
            }
            Phantom::Cartoon => ImageGrid::from_fn(side, |i, j| {
                let (x, y) = (j as f64 / n, i as f64 / n);
                let mut v = 60.0;
                v += 120.0 * rect(x, y, 0.15, 0.2, 0.45, 0.7);
                v += 80.0 * ellipse(x, y, 0.68, 0.4, 0.18, 0.18, 0.0, 0.01);
                v -= 40.0 * ellipse(x, y, 0.6, 0.78, 0.25, 0.1, 0.3, 0.01);
                v += 40.0 * ellipse(x, y, 0.3, 0.45, 0.1, 0.1, 0.0, 0.8);
                v.clamp(0.0, 255.0)
            })?,
        };
        Ok(img)
    }
}
