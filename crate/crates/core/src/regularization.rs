//! Edge-stopping regularizers and the diffusion operators they induce.
//!
//! Both families are written in terms of the penalty `ρ(σ)`, its influence
//! function `φ = ρ'` and the edge-stopping (diffusivity) function `g = φ/σ`,
//! evaluated at `σ = |∇m|` on every node. The regularizer gradient is the
//! flux-form discretization `−div(g(|∇m|) ∇m)` built from the lattice
//! gradient/divergence pair, so it is exactly the gradient of `Σ ρ(|∇m|)`.

use crate::error::{RestoreError, Result};
use crate::grid::{divergence, gradient, ImageGrid};

/// Ratio between the Tukey cut-off and the Huber threshold it is derived from.
pub const TUKEY_SCALE: f64 = 2.236_067_977_499_79; // sqrt(5)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    Huber,
    Tukey,
}

impl std::str::FromStr for RegularizerKind {
    type Err = RestoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "huber" => Ok(RegularizerKind::Huber),
            "tukey" => Ok(RegularizerKind::Tukey),
            other => Err(RestoreError::Parameter(format!(
                "unknown regularizer '{other}'"
            ))),
        }
    }
}

/// A regularizer family together with its threshold. For Huber `gamma` is
/// the switch `γ`; for Tukey it is the cut-off `γ̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    kind: RegularizerKind,
    gamma: f64,
}

impl RegularizerSpec {
    pub fn huber(gamma: f64) -> Result<Self> {
        Self::checked(RegularizerKind::Huber, gamma)
    }

    /// Tukey with an explicit cut-off `γ̂`.
    pub fn tukey(gamma_hat: f64) -> Result<Self> {
        Self::checked(RegularizerKind::Tukey, gamma_hat)
    }

    /// Tukey whose cut-off is `√5·γ` for the given Huber threshold, so both
    /// start rejecting outliers at the same value.
    pub fn tukey_from_huber(huber_gamma: f64) -> Result<Self> {
        Self::tukey(TUKEY_SCALE * huber_gamma)
    }

    /// Builds `kind` from a Huber-scale threshold, applying the Tukey scaling
    /// when needed.
    pub fn from_huber_gamma(kind: RegularizerKind, huber_gamma: f64) -> Result<Self> {
        match kind {
            RegularizerKind::Huber => Self::huber(huber_gamma),
            RegularizerKind::Tukey => Self::tukey_from_huber(huber_gamma),
        }
    }

    fn checked(kind: RegularizerKind, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(RestoreError::Parameter(format!(
                "regularizer threshold must be finite and positive, got {gamma}"
            )));
        }
        Ok(RegularizerSpec { kind, gamma })
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Penalty `ρ(σ)`.
    pub fn rho(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        let g = self.gamma;
        match self.kind {
            RegularizerKind::Huber => {
                if s >= g {
                    s
                } else {
                    s * s / (2.0 * g) + g / 2.0
                }
            }
            RegularizerKind::Tukey => {
                if s >= g {
                    1.0 / 3.0
                } else {
                    let r2 = (s / g) * (s / g);
                    r2 - r2 * r2 + r2 * r2 * r2 / 3.0
                }
            }
        }
    }

    /// Influence function `φ(σ) = ρ'(σ)` for `σ ≥ 0`.
    pub fn phi(&self, sigma: f64) -> f64 {
        sigma * self.edge_stop(sigma)
    }

    /// Edge-stopping function `g(σ) = φ(σ)/σ`, finite at `σ = 0`.
    pub fn edge_stop(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        let g = self.gamma;
        match self.kind {
            RegularizerKind::Huber => 1.0 / g.max(s),
            RegularizerKind::Tukey => {
                if s >= g {
                    0.0
                } else {
                    let t = 1.0 - (s / g) * (s / g);
                    2.0 / (g * g) * t * t
                }
            }
        }
    }
}

/// Resolution-dependent Huber switch `γ = h · ∫|∇m|`, with the integral taken
/// as `h²·Σ|∇m|` over all nodes.
///
/// A flat image would give `γ = 0`; the result is floored at
/// `1e-8·max(1, max|m|)` and a warning is logged in that case.
pub fn adaptive_gamma(m: &ImageGrid) -> f64 {
    let h = m.h();
    let total: f64 = gradient(m).magnitude().iter().sum();
    let gamma = h * h * h * total;
    let floor = gamma_floor(m);
    if gamma < floor {
        log::warn!("adaptive gamma {gamma:e} below floor, using {floor:e}");
        floor
    } else {
        gamma
    }
}

pub fn gamma_floor(m: &ImageGrid) -> f64 {
    1e-8 * m.max_abs().max(1.0)
}

/// Regularization value `R(m) = h²·Σ ρ(|∇m|)`.
pub fn reg_value(m: &ImageGrid, spec: &RegularizerSpec) -> f64 {
    let h = m.h();
    h * h * node_penalty_sum(m, spec)
}

/// `Σ ρ(|∇m|)` without the cell-area weight; its gradient is exactly
/// [`reg_gradient`].
pub fn node_penalty_sum(m: &ImageGrid, spec: &RegularizerSpec) -> f64 {
    gradient(m).magnitude().iter().map(|&s| spec.rho(s)).sum()
}

/// `R_m(m) = −div(g(|∇m|) ∇m)`.
pub fn reg_gradient(m: &ImageGrid, spec: &RegularizerSpec) -> ImageGrid {
    DiffusionOperator::frozen_at(m, spec).apply(m)
}

/// `L(m)·v = −div(∇v / max(γ, |∇m|))`, the lagged-diffusivity operator frozen
/// at `m_frozen`. Only defined for the Huber family.
pub fn apply_l(m_frozen: &ImageGrid, v: &ImageGrid, spec: &RegularizerSpec) -> Result<ImageGrid> {
    m_frozen.ensure_same_side(v)?;
    if spec.kind() != RegularizerKind::Huber {
        return Err(RestoreError::UnsupportedRegularizer);
    }
    Ok(DiffusionOperator::frozen_at(m_frozen, spec).apply(v))
}

/// The frozen-coefficient operator `v ↦ −div(w ∇v)` with node weights
/// `w = g(|∇m_frozen|)`. Symmetric positive semidefinite since `w ≥ 0`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    side: usize,
    weights: Vec<f64>,
}

impl DiffusionOperator {
    pub fn frozen_at(m: &ImageGrid, spec: &RegularizerSpec) -> Self {
        let weights = gradient(m)
            .magnitude()
            .into_iter()
            .map(|s| spec.edge_stop(s))
            .collect();
        DiffusionOperator {
            side: m.side(),
            weights,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, v: &ImageGrid) -> ImageGrid {
        debug_assert_eq!(v.side(), self.side);
        let mut flux = gradient(v);
        flux.scale_by(&self.weights);
        let mut out = divergence(&flux);
        out.values_mut().iter_mut().for_each(|x| *x = -*x);
        out
    }

    /// Diagonal of the assembled operator.
    pub fn diagonal(&self) -> Vec<f64> {
        let s = self.side;
        let inv_h2 = ((s - 1) * (s - 1)) as f64;
        let w = &self.weights;
        let mut d = vec![0.0; s * s];
        for i in 0..s {
            for j in 0..s {
                let p = i * s + j;
                let mut acc = 0.0;
                if j + 1 < s {
                    acc += w[p];
                }
                if j >= 1 {
                    acc += w[p - 1];
                }
                if i + 1 < s {
                    acc += w[p];
                }
                if i >= 1 {
                    acc += w[p - s];
                }
                d[p] = acc * inv_h2;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(side: usize, seed: u64, mean: f64) -> ImageGrid {
        crate::testutil::random_image(side, seed, mean, 1.0 + mean.abs())
    }

    fn neumann_laplacian_apply(v: &ImageGrid) -> ImageGrid {
        // −Δ_h v with the 5-point stencil and reflecting boundary, by hand
        let s = v.side();
        let inv_h2 = ((s - 1) * (s - 1)) as f64;
        ImageGrid::from_fn(s, |i, j| {
            let c = v.get(i, j);
            let mut acc = 0.0;
            if i > 0 {
                acc += c - v.get(i - 1, j);
            }
            if i + 1 < s {
                acc += c - v.get(i + 1, j);
            }
            if j > 0 {
                acc += c - v.get(i, j - 1);
            }
            if j + 1 < s {
                acc += c - v.get(i, j + 1);
            }
            acc * inv_h2
        })
        .unwrap()
    }

    #[test]
    fn spec_rejects_nonpositive_threshold() {
        assert!(RegularizerSpec::huber(0.0).is_err());
        assert!(RegularizerSpec::huber(-1.0).is_err());
        assert!(RegularizerSpec::tukey(f64::INFINITY).is_err());
        let t = RegularizerSpec::tukey_from_huber(2.0).unwrap();
        assert_eq!(t.gamma(), 2.0 * 5f64.sqrt());
    }

    #[test]
    fn adaptive_gamma_constant_is_floored() {
        let m = ImageGrid::filled(8, 200.0).unwrap();
        assert_eq!(adaptive_gamma(&m), 1e-8 * 200.0);
        let z = ImageGrid::zeros(8).unwrap();
        assert_eq!(adaptive_gamma(&z), 1e-8);
    }

    #[test]
    fn adaptive_gamma_ramp() {
        for side in [3usize, 5, 17] {
            let n = side - 1;
            let h = 1.0 / n as f64;
            let m = ImageGrid::from_fn(side, |_, j| j as f64 * h).unwrap();
            let expected = h.powi(3) * (n * (n + 1)) as f64;
            assert!((adaptive_gamma(&m) - expected).abs() < 1e-14 * expected.max(1.0));
        }
    }

    #[test]
    fn adaptive_gamma_is_homogeneous() {
        let m = random_image(12, 5, 50.0);
        let g1 = adaptive_gamma(&m);
        let g2 = adaptive_gamma(&m.scaled(2.0));
        assert!((g2 - 2.0 * g1).abs() <= 1e-12 * g2);
    }

    #[test]
    fn huber_knee() {
        let spec = RegularizerSpec::huber(0.7).unwrap();
        let g = 0.7;
        assert!((spec.rho(g) - g).abs() < 1e-15);
        assert!((g * g / (2.0 * g) + g / 2.0 - g).abs() < 1e-15);
        assert!((spec.edge_stop(g) - 1.0 / g).abs() < 1e-15);
        assert!(spec.edge_stop(0.0).is_finite());
    }

    #[test]
    fn tukey_branches() {
        let gh = 1.3;
        let spec = RegularizerSpec::tukey(gh).unwrap();
        for s in [gh, 1.5 * gh, 10.0] {
            assert_eq!(spec.phi(s), 0.0);
            assert_eq!(spec.edge_stop(s), 0.0);
            assert_eq!(spec.rho(s), 1.0 / 3.0);
        }
        // polynomial branch at σ = γ̂: 1 − 1 + 1/3
        let r = 1.0_f64;
        assert!((r - r + r / 3.0 - 1.0 / 3.0).abs() < 1e-15);
        assert!((spec.rho(gh * (1.0 - 1e-12)) - 1.0 / 3.0).abs() < 1e-10);
        assert_eq!(spec.rho(0.0), 0.0);
        assert!((spec.edge_stop(0.0) - 2.0 / (gh * gh)).abs() < 1e-15);
    }

    #[test]
    fn penalties_are_c1_at_knee() {
        for spec in [
            RegularizerSpec::huber(0.9).unwrap(),
            RegularizerSpec::tukey(0.9).unwrap(),
        ] {
            let k = spec.gamma();
            let (lo, hi) = (k * (1.0 - 1e-9), k * (1.0 + 1e-9));
            assert!((spec.rho(lo) - spec.rho(hi)).abs() < 1e-8);
            assert!((spec.phi(lo) - spec.phi(hi)).abs() < 1e-8);
            assert!((spec.edge_stop(lo) - spec.edge_stop(hi)).abs() < 1e-7);
            // φ is the derivative of ρ on both sides of the knee
            let d = 1e-6 * k;
            for s in [0.5 * k, 2.0 * k] {
                let fd = (spec.rho(s + d) - spec.rho(s - d)) / (2.0 * d);
                assert!((fd - spec.phi(s)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reg_value_constant_images() {
        let side = 9;
        let m = ImageGrid::filled(side, 4.0).unwrap();
        let h = m.h();
        let gamma = 0.25;
        let hub = RegularizerSpec::huber(gamma).unwrap();
        let expected = h * h * (side * side) as f64 * gamma / 2.0;
        assert!((reg_value(&m, &hub) - expected).abs() < 1e-15);
        let tuk = RegularizerSpec::tukey(gamma).unwrap();
        assert_eq!(reg_value(&m, &tuk), 0.0);
    }

    #[test]
    fn reg_value_ramp_linear_branch() {
        let side = 7;
        let n = side - 1;
        let h = 1.0 / n as f64;
        let m = ImageGrid::from_fn(side, |_, j| j as f64 * h).unwrap();
        let spec = RegularizerSpec::huber(0.5).unwrap();
        // n(n+1) nodes carry |∇m| = 1; the trailing column carries ρ(0) = γ/2
        let expected = h * h * ((n * (n + 1)) as f64 * 1.0 + (side as f64) * 0.25);
        assert!((reg_value(&m, &spec) - expected).abs() < 1e-14);
    }

    #[test]
    fn reg_gradient_of_constant_vanishes() {
        let m = ImageGrid::filled(6, 9.0).unwrap();
        for spec in [
            RegularizerSpec::huber(0.1).unwrap(),
            RegularizerSpec::tukey(0.1).unwrap(),
        ] {
            assert!(reg_gradient(&m, &spec).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn large_gamma_gives_scaled_laplacian() {
        let m = random_image(8, 21, 1.0);
        let max_grad = crate::grid::gradient(&m)
            .magnitude()
            .into_iter()
            .fold(0.0, f64::max);
        let gamma = 2.0 * max_grad;
        let spec = RegularizerSpec::huber(gamma).unwrap();
        let got = reg_gradient(&m, &spec);
        let lap = neumann_laplacian_apply(&m);
        for (a, b) in got.values().iter().zip(lap.values()) {
            assert!((a - b / gamma).abs() < 1e-10 * (1.0 + b.abs() / gamma));
        }
        let v = random_image(8, 22, 1.0);
        let lv = apply_l(&m, &v, &spec).unwrap();
        let lapv = neumann_laplacian_apply(&v);
        for (a, b) in lv.values().iter().zip(lapv.values()) {
            assert!((a - b / gamma).abs() < 1e-10 * (1.0 + b.abs() / gamma));
        }
    }

    #[test]
    fn reg_gradient_matches_finite_differences() {
        let side = 8;
        let m = random_image(side, 7, 1.0);
        let v = random_image(side, 8, 0.0);
        // smooth regime: every |∇m| below γ
        let gamma = 2.0 * crate::grid::gradient(&m).magnitude().into_iter().fold(0.0, f64::max);
        let spec = RegularizerSpec::huber(gamma).unwrap();
        let t = 1e-5;
        let mut plus = m.clone();
        plus.axpy(t, &v);
        let mut minus = m.clone();
        minus.axpy(-t, &v);
        let h2 = m.h() * m.h();
        let fd = (reg_value(&plus, &spec) - reg_value(&minus, &spec)) / (2.0 * t) / h2;
        let an = reg_gradient(&m, &spec).dot(&v);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "{fd} vs {an}");

        let tuk = RegularizerSpec::tukey(gamma).unwrap();
        let fd = (node_penalty_sum(&plus, &tuk) - node_penalty_sum(&minus, &tuk)) / (2.0 * t);
        let an = reg_gradient(&m, &tuk).dot(&v);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "{fd} vs {an}");
    }

    #[test]
    fn apply_l_rejects_tukey_and_mismatch() {
        let m = random_image(5, 1, 1.0);
        let tuk = RegularizerSpec::tukey(1.0).unwrap();
        assert!(matches!(
            apply_l(&m, &m, &tuk),
            Err(RestoreError::UnsupportedRegularizer)
        ));
        let hub = RegularizerSpec::huber(1.0).unwrap();
        assert!(apply_l(&m, &ImageGrid::zeros(4).unwrap(), &hub).is_err());
    }

    #[test]
    fn apply_l_symmetric_by_dense_assembly() {
        let side = 8;
        let n = side * side;
        let m = random_image(side, 31, 10.0);
        let spec = RegularizerSpec::huber(adaptive_gamma(&m)).unwrap();
        let mut cols = Vec::with_capacity(n);
        for c in 0..n {
            let mut e = ImageGrid::zeros(side).unwrap();
            e.values_mut()[c] = 1.0;
            cols.push(apply_l(&m, &e, &spec).unwrap());
        }
        let scale = cols.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
        for r in 0..n {
            for c in 0..n {
                let a = cols[c].values()[r];
                let b = cols[r].values()[c];
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
        let op = DiffusionOperator::frozen_at(&m, &spec);
        let diag = op.diagonal();
        for p in 0..n {
            assert!((diag[p] - cols[p].values()[p]).abs() <= 1e-12 * scale);
        }
        let u = random_image(side, 32, 0.0);
        let v = random_image(side, 33, 0.0);
        let lhs = apply_l(&m, &u, &spec).unwrap().dot(&v);
        let rhs = u.dot(&apply_l(&m, &v, &spec).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn tukey_fixed_point_vs_huber() {
        let side = 16;
        let m = ImageGrid::from_fn(side, |i, j| if i < 8 && j < 10 { 200.0 } else { 20.0 }).unwrap();
        let gamma = adaptive_gamma(&m);
        let tuk = RegularizerSpec::tukey_from_huber(gamma).unwrap();
        let jump = 180.0 * m.n() as f64;
        assert!(jump > tuk.gamma());
        assert!(reg_gradient(&m, &tuk).values().iter().all(|&v| v == 0.0));
        let hub = RegularizerSpec::huber(gamma).unwrap();
        assert!(reg_gradient(&m, &hub).norm() > 0.0);
    }

    proptest! {
        #[test]
        fn huber_reg_gradient_equals_l_of_m(seed in any::<u64>(), side in 2usize..12) {
            let m = random_image(side, seed, 5.0);
            let spec = RegularizerSpec::huber(adaptive_gamma(&m)).unwrap();
            let a = reg_gradient(&m, &spec);
            let b = apply_l(&m, &m, &spec).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn l_is_positive_semidefinite(seed in any::<u64>(), vseed in any::<u64>(), side in 2usize..12, c in -10.0f64..10.0) {
            let m = random_image(side, seed, 5.0);
            let spec = RegularizerSpec::huber(adaptive_gamma(&m)).unwrap();
            let v = random_image(side, vseed, 0.0);
            let lv = apply_l(&m, &v, &spec).unwrap();
            prop_assert!(v.dot(&lv) >= -1e-12 * v.norm() * lv.norm());
            let constant = ImageGrid::filled(side, c).unwrap();
            prop_assert!(apply_l(&m, &constant, &spec).unwrap().values().iter().all(|&x| x == 0.0));
        }
    }
}
