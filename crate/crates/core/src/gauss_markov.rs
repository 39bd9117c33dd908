//! The stationary AR(1) triangular array `X_j = α_n X_{j-1} + σ_n ε_j`
//! with `α_n = 1 - γ/n^β`, plus exact Gaussian total-variation distances
//! and mixing-time quantities.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, replicate_rng};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

pub const DEFAULT_EPS0: f64 = 0.5;

fn default_eps0() -> f64 {
    DEFAULT_EPS0
}

fn default_scale() -> f64 {
    1.0
}

/// Innovation-variance regime relative to `1 - α_n²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// `σ_n² = (1 - α_n²) n^{ε₀}`: stationary variance grows.
    Super {
        #[serde(default = "default_eps0")]
        eps0: f64,
    },
    /// `σ_n² = scale (1 - α_n²)`: stationary variance is `scale`.
    Boundary {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `σ_n² = (1 - α_n²) n^{-ε₀}`: stationary variance shrinks.
    Sub {
        #[serde(default = "default_eps0")]
        eps0: f64,
    },
}

impl Default for Regime {
    fn default() -> Self {
        Regime::Boundary { scale: 1.0 }
    }
}

impl Regime {
    pub fn boundary() -> Self {
        Regime::Boundary { scale: 1.0 }
    }

    pub fn label(&self) -> String {
        match self {
            Regime::Super { eps0 } => format!("super({eps0})"),
            Regime::Boundary { scale } => format!("boundary({scale})"),
            Regime::Sub { eps0 } => format!("sub({eps0})"),
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, Regime::Boundary { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessParams {
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    #[serde(default)]
    pub regime: Regime,
}

impl ProcessParams {
    /// Validated constructor; see [`ProcessParams::validate`].
    pub fn new(beta: f64, gamma: f64, n: usize, regime: Regime) -> Result<Self> {
        let p = ProcessParams { beta, gamma, n, regime };
        p.validate()?;
        Ok(p)
    }

    pub fn boundary(beta: f64, gamma: f64, n: usize) -> Result<Self> {
        Self::new(beta, gamma, n, Regime::boundary())
    }

    /// `γ / n^β`.
    pub fn mean_reversion(&self) -> f64 {
        self.gamma / (self.n as f64).powf(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        match self.regime {
            Regime::Boundary { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(Error::InvalidParams(format!("boundary scale must be positive, got {scale}")));
            }
            Regime::Super { eps0 } | Regime::Sub { eps0 } if !eps0.is_finite() => {
                return Err(Error::InvalidParams(format!("regime exponent must be finite, got {eps0}")));
            }
            _ => {}
        }
        let ratio = self.mean_reversion();
        if ratio >= 1.0 {
            return Err(Error::Nonstationary { beta: self.beta, gamma: self.gamma, n: self.n, ratio });
        }
        Ok(())
    }

    pub fn tuple_label(&self) -> String {
        format!("beta={},gamma={},n={},regime={}", self.beta, self.gamma, self.n, self.regime.label())
    }
}

/// `α_n = 1 - γ/n^β`.
pub fn alpha_n(params: &ProcessParams) -> Result<f64> {
    params.validate()?;
    Ok(1.0 - params.mean_reversion())
}

/// `1 - α_n²` without cancellation.
pub(crate) fn one_minus_alpha2(params: &ProcessParams) -> f64 {
    let g = params.mean_reversion();
    g * (2.0 - g)
}

/// Stationary variance `σ_n² / (1 - α_n²)`.
pub fn stationary_variance(params: &ProcessParams) -> Result<f64> {
    params.validate()?;
    let n = params.n as f64;
    Ok(match params.regime {
        Regime::Boundary { scale } => scale,
        Regime::Super { eps0 } => n.powf(eps0),
        Regime::Sub { eps0 } => n.powf(-eps0),
    })
}

/// Innovation variance `σ_n²` for the selected regime.
pub fn sigma_n2(params: &ProcessParams) -> Result<f64> {
    Ok(stationary_variance(params)? * one_minus_alpha2(params))
}

/// Simulated stationary paths, one row per replicate, columns `X_0..X_n`.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub params: ProcessParams,
    pub master_seed: u64,
    pub paths: Array2<f64>,
    pub standardized: bool,
}

impl PathBatch {
    pub fn replicates(&self) -> usize {
        self.paths.nrows()
    }
}

/// Row generator shared by [`simulate_paths`] and the streaming functional sampler.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathSampler {
    alpha: f64,
    innov_sd: f64,
    scale: f64,
    seed: u64,
}

impl PathSampler {
    pub(crate) fn new(params: &ProcessParams, master_seed: u64, standardized: bool) -> Result<Self> {
        let alpha = alpha_n(params)?;
        let v = stationary_variance(params)?;
        Ok(PathSampler {
            alpha,
            innov_sd: one_minus_alpha2(params).sqrt(),
            scale: if standardized { 1.0 } else { v.sqrt() },
            seed: derive_seed(master_seed, "paths"),
        })
    }

    /// Visits `X_0, X_1, ..., X_n` of one replicate in order.
    #[inline]
    pub(crate) fn for_each(&self, replicate: usize, len: usize, mut visit: impl FnMut(usize, f64)) {
        let mut rng = replicate_rng(self.seed, replicate);
        let mut z: f64 = rng.sample(StandardNormal);
        visit(0, self.scale * z);
        for j in 1..len {
            let e: f64 = rng.sample(StandardNormal);
            z = self.alpha * z + self.innov_sd * e;
            visit(j, self.scale * z);
        }
    }
}

/// Simulates `replicates` independent stationary rows of length `n + 1`.
///
/// Replicate `r` draws from its own substream of `master_seed`, so the batch is
/// identical for any thread count.
pub fn simulate_paths(
    params: &ProcessParams,
    replicates: usize,
    master_seed: u64,
    standardized: bool,
) -> Result<PathBatch> {
    if replicates == 0 {
        return Err(Error::InvalidParams("replicates must be at least 1".into()));
    }
    let sampler = PathSampler::new(params, master_seed, standardized)?;
    let len = params.n + 1;
    let mut data = vec![0.0; replicates * len];
    data.par_chunks_mut(len).enumerate().for_each(|(r, row)| {
        sampler.for_each(r, len, |j, x| row[j] = x);
    });
    let paths = Array2::from_shape_vec((replicates, len), data).expect("shape matches buffer");
    Ok(PathBatch { params: *params, master_seed, paths, standardized })
}

fn check_std(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NonPositiveStd(s));
    }
    Ok(())
}

/// Total variation distance between `N(m1, s1²)` and `N(m2, s2²)`.
///
/// Equal variances use `2Φ(|Δm|/(2s)) - 1`; otherwise the densities cross at
/// two points and the distance is the probability gap on the interval between.
pub fn gaussian_tv(m1: f64, s1: f64, m2: f64, s2: f64) -> Result<f64> {
    check_std(s1)?;
    check_std(s2)?;
    if (s1 - s2).abs() < 1e-12 {
        let s = 0.5 * (s1 + s2);
        return Ok((2.0 * norm_cdf((m1 - m2).abs() / (2.0 * s)) - 1.0).clamp(0.0, 1.0));
    }
    // log φ1 - log φ2 = a x² + b x + c
    let (v1, v2) = (s1 * s1, s2 * s2);
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + (s2 / s1).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let q = if q == 0.0 { -0.5 * disc.sqrt() } else { q };
    let (r1, r2) = (q / a, c / q);
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    let mass = |m: f64, s: f64| interval_prob((lo - m) / s, (hi - m) / s);
    Ok((mass(m1, s1) - mass(m2, s2)).abs().clamp(0.0, 1.0))
}

/// `Φ(b) - Φ(a)` using whichever tail keeps precision.
fn interval_prob(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Quadrature version of [`gaussian_tv`], used as an independent cross-check.
pub fn gaussian_tv_quadrature(m1: f64, s1: f64, m2: f64, s2: f64) -> Result<f64> {
    check_std(s1)?;
    check_std(s2)?;
    let f = |x: f64| 0.5 * (norm_pdf((x - m1) / s1) / s1 - norm_pdf((x - m2) / s2) / s2).abs();
    let smax = s1.max(s2);
    let lo = m1.min(m2) - 40.0 * smax;
    let hi = m1.max(m2) + 40.0 * smax;
    // Split at the narrow density's bulk so the adaptive rule sees the features.
    let mut cuts = vec![lo, hi];
    for (m, s) in [(m1, s1), (m2, s2)] {
        for k in -8..=8 {
            let x = m + k as f64 * s;
            if x > lo && x < hi {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let total: f64 = cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-13, 40)).sum();
    Ok(total.clamp(0.0, 1.0))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Shape and lower bound of the two-sided mixing estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingBounds {
    /// `c · shape` with `c = φ(1)/4`.
    pub lower: f64,
    /// `min{1, |x| α^j / s_∞ + α^{2j}}`.
    pub shape: f64,
}

/// The constant of the lower mixing bound.
pub fn mixing_lower_constant() -> f64 {
    norm_pdf(1.0) / 4.0
}

pub fn mixing_bounds(params: &ProcessParams, x: f64, j: usize) -> Result<MixingBounds> {
    let alpha = alpha_n(params)?;
    let s_inf = stationary_variance(params)?.sqrt();
    let aj = alpha.powi(j as i32);
    let shape = (x.abs() * aj / s_inf + aj * aj).min(1.0);
    Ok(MixingBounds { lower: mixing_lower_constant() * shape, shape })
}

/// Exact TV between the law of `X_j` started at `x` and the stationary law.
///
/// `j = 0` is the point mass at `x`, at distance 1.
pub fn exact_tv_from_start(params: &ProcessParams, x: f64, j: usize) -> Result<f64> {
    let alpha = alpha_n(params)?;
    let v = stationary_variance(params)?;
    if j == 0 {
        return Ok(1.0);
    }
    let log_a = (-params.mean_reversion()).ln_1p();
    let mean = (j as f64 * log_a).exp() * x;
    let frac = -(2.0 * j as f64 * log_a).exp_m1();
    debug_assert!(alpha > 0.0);
    gaussian_tv(mean, (v * frac).sqrt(), 0.0, v.sqrt())
}

/// `k_n(δ)`: half-width of the central stationary interval of mass `1 - δ`.
pub fn bulk_radius(params: &ProcessParams, delta: f64) -> Result<f64> {
    Ok(stationary_variance(params)?.sqrt() * norm_quantile(1.0 - delta / 2.0))
}

/// Smallest `m ≥ 0` with `max_{x ∈ {-k, 0, k}} TV(L(X_m | X_0 = x), π_n) ≤ ε`.
pub fn mixing_time(params: &ProcessParams, eps: f64, delta: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParams(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParams(format!("delta must lie in (0, 1), got {delta}")));
    }
    let k = bulk_radius(params, delta)?;
    let cutoff = (100.0 / params.mean_reversion()).ceil() as usize;
    for m in 0..=cutoff {
        let mut worst = 0.0f64;
        for x in [-k, 0.0, k] {
            worst = worst.max(exact_tv_from_start(params, x, m)?);
        }
        if worst <= eps {
            return Ok(m);
        }
    }
    Err(Error::SearchExhausted { cutoff })
}
