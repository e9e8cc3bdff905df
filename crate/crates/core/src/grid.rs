//! Square pixel lattices discretizing the unit square, the forward-difference
//! gradient and its negative adjoint, and the error metrics used to monitor
//! descent runs.
//!
//! A lattice has `side = n + 1` nodes per dimension and cell width `h = 1/n`.
//! Values are stored row-major; `(i, j)` is row `i`, column `j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{RestoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    side: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if side < 2 {
            return Err(RestoreError::InvalidGrid(format!(
                "side must be at least 2, got {side}"
            )));
        }
        if values.len() != side * side {
            return Err(RestoreError::InvalidGrid(format!(
                "expected {} values for side {side}, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(ImageGrid { side, values })
    }

    pub fn filled(side: usize, value: f64) -> Result<Self> {
        Self::new(side, vec![value; side * side])
    }

    pub fn zeros(side: usize) -> Result<Self> {
        Self::filled(side, 0.0)
    }

    /// Builds a lattice by evaluating `f(row, col)` at every node.
    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                values.push(f(i, j));
            }
        }
        Self::new(side, values)
    }

    /// A lattice of the same side with new values. Panics on length mismatch.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        ImageGrid {
            side: self.side,
            values,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of cells per dimension, `side - 1`.
    pub fn n(&self) -> usize {
        self.side - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.side + j] = v;
    }

    pub fn ensure_same_side(&self, other: &ImageGrid) -> Result<()> {
        if self.side != other.side {
            return Err(RestoreError::SideMismatch {
                expected: self.side,
                actual: other.side,
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Euclidean norm over all nodes.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.norm() / (self.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> ImageGrid {
        self.with_values(self.values.iter().map(|v| alpha * v).collect())
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ImageGrid) -> ImageGrid {
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ImageGrid) -> ImageGrid {
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &ImageGrid) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> ImageGrid {
        self.with_values(self.values.iter().map(|v| v.clamp(lo, hi)).collect())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-node forward differences `(gx, gy)` on the lattice of the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    side: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField {
    pub fn new(side: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if side < 2 || gx.len() != side * side || gy.len() != side * side {
            return Err(RestoreError::InvalidGrid(format!(
                "gradient components must both hold {side}^2 values"
            )));
        }
        Ok(GradientField { side, gx, gy })
    }

    pub fn zeros(side: usize) -> Result<Self> {
        Self::new(side, vec![0.0; side * side], vec![0.0; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Pointwise magnitude `|∇m|`.
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(x, y)| x.hypot(*y))
            .collect()
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        dot(&self.gx, &other.gx) + dot(&self.gy, &other.gy)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Multiplies both components at each node by `weights[node]`.
    pub fn scale_by(&mut self, weights: &[f64]) {
        for ((x, y), w) in self.gx.iter_mut().zip(self.gy.iter_mut()).zip(weights) {
            *x *= w;
            *y *= w;
        }
    }
}

/// Forward differences with a zero trailing row/column (Neumann closure).
pub fn gradient(m: &ImageGrid) -> GradientField {
    let s = m.side;
    let inv_h = m.n() as f64;
    let v = &m.values;
    let mut gx = vec![0.0; s * s];
    let mut gy = vec![0.0; s * s];
    for i in 0..s {
        let row = i * s;
        for j in 0..s - 1 {
            gx[row + j] = (v[row + j + 1] - v[row + j]) * inv_h;
        }
        if i + 1 < s {
            for j in 0..s {
                gy[row + j] = (v[row + s + j] - v[row + j]) * inv_h;
            }
        }
    }
    GradientField { side: s, gx, gy }
}

/// Discrete divergence, the exact negative adjoint of [`gradient`]:
/// `<gradient(m), p> = -<m, divergence(p)>`.
///
/// Entries of `p` on the trailing column of `gx` and the trailing row of `gy`
/// are ignored since `gradient` never populates them.
pub fn divergence(p: &GradientField) -> ImageGrid {
    let s = p.side;
    let inv_h = (s - 1) as f64;
    let mut out = vec![0.0; s * s];
    for i in 0..s {
        let row = i * s;
        for j in 0..s {
            let mut d = 0.0;
            if j + 1 < s {
                d += p.gx[row + j];
            }
            if j >= 1 {
                d -= p.gx[row + j - 1];
            }
            if i + 1 < s {
                d += p.gy[row + j];
            }
            if i >= 1 {
                d -= p.gy[row - s + j];
            }
            out[row + j] = d * inv_h;
        }
    }
    ImageGrid {
        side: s,
        values: out,
    }
}

/// `‖m_next − m_prev‖ / ‖m_next‖`.
pub fn relative_error(m_next: &ImageGrid, m_prev: &ImageGrid) -> Result<f64> {
    m_next.ensure_same_side(m_prev)?;
    let denom = m_next.norm();
    if denom == 0.0 {
        return Err(RestoreError::ZeroNorm);
    }
    let diff: f64 = m_next
        .values
        .iter()
        .zip(&m_prev.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / denom)
}

/// Computable data misfit `‖m − b‖ / n`.
pub fn misfit(m: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    m.ensure_same_side(b)?;
    let diff: f64 = m
        .values
        .iter()
        .zip(&b.values)
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    Ok(diff.sqrt() / m.n() as f64)
}

/// Peak signal-to-noise ratio in dB against a 255 peak.
pub fn psnr(m: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
    m.ensure_same_side(truth)?;
    let mse = m
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Additive white Gaussian noise at `eta_percent` of the image RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub eta_percent: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(eta_percent: f64, seed: u64) -> Result<Self> {
        if !eta_percent.is_finite() || eta_percent < 0.0 {
            return Err(RestoreError::Parameter(format!(
                "noise level must be finite and non-negative, got {eta_percent}"
            )));
        }
        Ok(NoiseSpec { eta_percent, seed })
    }

    /// Standard deviation `(η/100)·‖m‖/(n+1)` used for `m`.
    pub fn std_dev(&self, m: &ImageGrid) -> f64 {
        self.eta_percent / 100.0 * m.norm() / m.side() as f64
    }
}

pub fn add_gaussian_noise(m: &ImageGrid, spec: NoiseSpec) -> ImageGrid {
    let s = spec.std_dev(m);
    if s == 0.0 {
        return m.clone();
    }
    let normal = Normal::new(0.0, s).expect("finite positive std dev");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    m.with_values(
        m.values
            .iter()
            .map(|v| v + normal.sample(&mut rng))
            .collect(),
    )
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pseudo_random(side: usize, seed: u64) -> ImageGrid {
        crate::testutil::random_image(side, seed, 0.5, 1.0)
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(ImageGrid::new(1, vec![0.0]).is_err());
        assert!(ImageGrid::new(3, vec![0.0; 8]).is_err());
        let g = ImageGrid::zeros(5).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.h() * g.n() as f64, 1.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = gradient(&ImageGrid::filled(7, 3.5).unwrap());
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_has_unit_gradient() {
        let side = 9;
        let h = 1.0 / (side - 1) as f64;
        let m = ImageGrid::from_fn(side, |_, j| j as f64 * h).unwrap();
        let g = gradient(&m);
        for i in 0..side {
            for j in 0..side {
                let expected = if j + 1 < side { 1.0 } else { 0.0 };
                assert!((g.gx[i * side + j] - expected).abs() < 1e-12);
                assert_eq!(g.gy[i * side + j], 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_zero_and_of_constant_gradient() {
        let z = divergence(&GradientField::zeros(6).unwrap());
        assert!(z.values().iter().all(|&v| v == 0.0));
        let c = divergence(&gradient(&ImageGrid::filled(6, 2.0).unwrap()));
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    /// Dense Neumann 5-point Laplacian scaled by 1/h^2, assembled directly.
    fn dense_neumann_laplacian(side: usize) -> Vec<Vec<f64>> {
        let n = side * side;
        let inv_h2 = ((side - 1) * (side - 1)) as f64;
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..side {
            for j in 0..side {
                let p = i * side + j;
                let mut nbrs = Vec::new();
                if i > 0 {
                    nbrs.push(p - side);
                }
                if i + 1 < side {
                    nbrs.push(p + side);
                }
                if j > 0 {
                    nbrs.push(p - 1);
                }
                if j + 1 < side {
                    nbrs.push(p + 1);
                }
                for q in nbrs {
                    l[p][q] += inv_h2;
                    l[p][p] -= inv_h2;
                }
            }
        }
        l
    }

    #[test]
    fn div_grad_is_neumann_laplacian() {
        let side = 6;
        let m = pseudo_random(side, 11);
        let lap = dense_neumann_laplacian(side);
        let got = divergence(&gradient(&m));
        for p in 0..side * side {
            let expected: f64 = (0..side * side).map(|q| lap[p][q] * m.values()[q]).sum();
            assert!(
                (got.values()[p] - expected).abs() <= 1e-12 * expected.abs().max(1.0) * 100.0,
                "node {p}: {} vs {expected}",
                got.values()[p]
            );
        }
    }

    /// Assembles gradient as a dense (2N x N) matrix and divergence as a dense
    /// (N x 2N) matrix by probing with unit vectors, then checks D = -G^T.
    #[test]
    fn dense_assembly_adjointness() {
        let side = 8;
        let n = side * side;
        let mut gmat = vec![vec![0.0; n]; 2 * n];
        for c in 0..n {
            let mut e = ImageGrid::zeros(side).unwrap();
            e.values_mut()[c] = 1.0;
            let g = gradient(&e);
            for r in 0..n {
                gmat[r][c] = g.gx[r];
                gmat[n + r][c] = g.gy[r];
            }
        }
        let mut dmat = vec![vec![0.0; 2 * n]; n];
        for c in 0..2 * n {
            let mut p = GradientField::zeros(side).unwrap();
            if c < n {
                p.gx[c] = 1.0;
            } else {
                p.gy[c - n] = 1.0;
            }
            let d = divergence(&p);
            for r in 0..n {
                dmat[r][c] = d.values()[r];
            }
        }
        for r in 0..n {
            for c in 0..2 * n {
                assert!((dmat[r][c] + gmat[c][r]).abs() < 1e-12);
            }
        }
        let m = pseudo_random(side, 3);
        let mut p = GradientField::zeros(side).unwrap();
        let q = pseudo_random(side, 4);
        let w = pseudo_random(side, 5);
        p.gx.copy_from_slice(q.values());
        p.gy.copy_from_slice(w.values());
        let lhs = gradient(&m).dot(&p);
        let rhs = -m.dot(&divergence(&p));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn relative_error_examples() {
        let a = ImageGrid::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(relative_error(&a, &a).unwrap(), 0.0);
        assert!((relative_error(&a.scaled(2.0), &a).unwrap() - 0.5).abs() < 1e-15);
        let prev = ImageGrid::new(2, vec![3.0, 0.0, 0.0, 0.0]).unwrap();
        let next = ImageGrid::new(2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert!((relative_error(&next, &prev).unwrap() - 0.8).abs() < 1e-15);
        let zero = ImageGrid::zeros(2).unwrap();
        assert!(matches!(
            relative_error(&zero, &a),
            Err(RestoreError::ZeroNorm)
        ));
    }

    #[test]
    fn misfit_examples() {
        let b = pseudo_random(5, 1);
        assert_eq!(misfit(&b, &b).unwrap(), 0.0);
        let mut shifted = b.clone();
        shifted.values_mut().iter_mut().for_each(|v| *v += 2.0);
        assert!((misfit(&shifted, &b).unwrap() - 2.0 * 5.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = pseudo_random(6, 9);
        let out = add_gaussian_noise(&m, NoiseSpec::new(0.0, 42).unwrap());
        assert_eq!(out, m);
        assert!(NoiseSpec::new(-1.0, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn noise_level_concentrates() {
        let side = 128;
        let m = ImageGrid::from_fn(side, |i, j| ((i * 7 + j * 3) % 256) as f64).unwrap();
        let spec = NoiseSpec::new(10.0, 2024).unwrap();
        let noisy = add_gaussian_noise(&m, spec);
        let target = 0.10 * m.norm() / side as f64;
        let got = misfit(&noisy, &m).unwrap();
        assert!(got >= 0.9 * target && got <= 1.1 * target, "{got} vs {target}");
    }

    proptest! {
        #[test]
        fn adjointness_holds(side in 2usize..=16, s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let m = pseudo_random(side, s1);
            let px = pseudo_random(side, s2);
            let py = pseudo_random(side, s3);
            let p = GradientField::new(side, px.values().to_vec(), py.values().to_vec()).unwrap();
            let lhs = gradient(&m).dot(&p);
            let rhs = m.dot(&divergence(&p));
            prop_assert!((lhs + rhs).abs() <= 1e-12 * m.norm() * p.norm());
        }

        #[test]
        fn operators_are_linear(side in 2usize..=12, a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in any::<u64>(), s2 in any::<u64>()) {
            let x = pseudo_random(side, s1);
            let y = pseudo_random(side, s2);
            let mut comb = x.scaled(a);
            comb.axpy(b, &y);
            let lhs = gradient(&comb);
            let gx = gradient(&x);
            let gy = gradient(&y);
            for k in 0..side * side {
                let e = a * gx.gx[k] + b * gy.gx[k];
                prop_assert!((lhs.gx[k] - e).abs() <= 1e-9 * (1.0 + e.abs()));
            }
            let dl = divergence(&lhs);
            let dx = divergence(&gx);
            let dy = divergence(&gy);
            for k in 0..side * side {
                let e = a * dx.values()[k] + b * dy.values()[k];
                prop_assert!((dl.values()[k] - e).abs() <= 1e-9 * (1.0 + e.abs()));
            }
        }

        #[test]
        fn noise_is_deterministic(seed in any::<u64>(), eta in 0.0f64..50.0) {
            let m = pseudo_random(8, 77);
            let spec = NoiseSpec::new(eta, seed).unwrap();
            prop_assert_eq!(add_gaussian_noise(&m, spec), add_gaussian_noise(&m, spec));
        }
    }
}
