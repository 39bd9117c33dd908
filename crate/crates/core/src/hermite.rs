//! Probabilists' Hermite polynomials and the coefficient algebra built on them.
//!
//! `H_0 = 1`, `H_1 = x`, `H_{k+1} = x H_k - k H_{k-1}`. The family is
//! orthogonal under the standard Gaussian weight with `E[H_q(Z)^2] = q!`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{binomial, factorial, mult_coeff};

/// Guard for direct evaluation by recurrence.
pub const MAX_EVAL_ORDER: usize = 64;

/// Highest order accepted in a [`PolySpec`].
pub const MAX_POLY_ORDER: usize = 8;

/// Evaluates `H_q(x)` by upward recurrence.
pub fn hermite_eval(q: usize, x: f64) -> Result<f64> {
    if q > MAX_EVAL_ORDER {
        return Err(Error::OrderTooLarge { order: q, max: MAX_EVAL_ORDER });
    }
    Ok(hermite_unchecked(q, x))
}

#[inline]
pub(crate) fn hermite_unchecked(q: usize, x: f64) -> f64 {
    match q {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for k in 1..q {
                let next = x * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Fills `out[k] = H_k(x)` for `k = 0..out.len()`.
#[inline]
pub(crate) fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = x * out[k - 1] - (k - 1) as f64 * out[k - 2];
    }
}

/// `H_q(x; σ²) = σ^q H_q(x/σ)`, orthogonal under `N(0, σ²)`.
pub fn hermite_transformed_eval(q: usize, sigma2: f64, x: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    let sigma = sigma2.sqrt();
    Ok(sigma.powi(q as i32) * hermite_eval(q, x / sigma)?)
}

/// `Cov(H_q(X), H_q(Y)) = q! ρ^q` for standard Gaussians with correlation `ρ`.
pub fn mehler_cov(q: usize, rho: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::CorrelationDomain(rho));
    }
    Ok(factorial(q) * rho.powi(q as i32))
}

/// Expansion of `H_q(X)` in the standardized variable `Z = X/√v` for `X ~ N(0, v)`:
/// pairs `(q - 2l, C_{q,l} v^{(q-2l)/2} (v - 1)^l)`. Terms with a zero
/// coefficient are omitted.
pub fn multiplication_expand(q: usize, v: f64) -> Result<Vec<(usize, f64)>> {
    if !(v > 0.0) {
        return Err(Error::NonPositiveVariance(v));
    }
    let sd = v.sqrt();
    Ok((0..=q / 2)
        .map(|l| {
            let order = q - 2 * l;
            (order, mult_coeff(q, l) * sd.powi(order as i32) * (v - 1.0).powi(l as i32))
        })
        .filter(|&(_, c)| c != 0.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `f = Σ c_q H_q`.
    #[default]
    Fixed,
    /// `f_n = Σ c_q H_q(·; Var X)`, rescaled to the current stationary variance.
    VarianceAdapted,
}

/// A Hermite observable `f = Σ_{q=m}^p c_q H_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolySpecRaw", into = "PolySpecRaw")]
pub struct PolySpec {
    coeffs: BTreeMap<usize, f64>,
    basis: Basis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolySpecRaw {
    coeffs: BTreeMap<usize, f64>,
    #[serde(default)]
    basis: Basis,
}

impl TryFrom<PolySpecRaw> for PolySpec {
    type Error = Error;

    fn try_from(raw: PolySpecRaw) -> Result<Self> {
        PolySpec::new(raw.coeffs, raw.basis)
    }
}

impl From<PolySpec> for PolySpecRaw {
    fn from(spec: PolySpec) -> Self {
        PolySpecRaw { coeffs: spec.coeffs, basis: spec.basis }
    }
}

impl PolySpec {
    /// Zero coefficients are dropped; at least one nonzero finite coefficient
    /// with order at most [`MAX_POLY_ORDER`] is required.
    pub fn new(coeffs: impl IntoIterator<Item = (usize, f64)>, basis: Basis) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (q, c) in coeffs {
            if !c.is_finite() {
                return Err(Error::InvalidPoly(format!("coefficient of order {q} is not finite")));
            }
            if q > MAX_POLY_ORDER {
                return Err(Error::OrderTooLarge { order: q, max: MAX_POLY_ORDER });
            }
            if c != 0.0 {
                *map.entry(q).or_insert(0.0) += c;
            }
        }
        map.retain(|_, c| *c != 0.0);
        if map.is_empty() {
            return Err(Error::EmptySpec);
        }
        Ok(PolySpec { coeffs: map, basis })
    }

    pub fn fixed(coeffs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        Self::new(coeffs, Basis::Fixed)
    }

    pub fn adapted(coeffs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        Self::new(coeffs, Basis::VarianceAdapted)
    }

    /// The single Hermite polynomial `H_q`.
    pub fn single(q: usize) -> Result<Self> {
        Self::fixed([(q, 1.0)])
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    /// Lowest order with a nonzero coefficient.
    pub fn m(&self) -> usize {
        *self.coeffs.keys().next().expect("nonempty")
    }

    /// Highest order with a nonzero coefficient.
    pub fn p(&self) -> usize {
        *self.coeffs.keys().next_back().expect("nonempty")
    }

    pub fn coeff(&self, q: usize) -> f64 {
        self.coeffs.get(&q).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs.iter().map(|(&q, &c)| (q, c))
    }

    /// Dense coefficient vector indexed by order `0..=p`.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p() + 1];
        for (q, c) in self.coeffs() {
            out[q] = c;
        }
        out
    }

    /// Short label such as `H2` or `1*H1+1*H2`.
    pub fn label(&self) -> String {
        if self.coeffs.len() == 1 && self.coeff(self.p()) == 1.0 {
            return format!("H{}", self.p());
        }
        self.coeffs().map(|(q, c)| format!("{c}*H{q}")).collect::<Vec<_>>().join("+")
    }
}

/// Evaluates the observable. `current_variance` is the stationary variance
/// used by the adapted basis and ignored by the fixed basis.
pub fn poly_eval(spec: &PolySpec, x: f64, current_variance: f64) -> Result<f64> {
    match spec.basis {
        Basis::Fixed => Ok(eval_dense(&spec.dense(), x)),
        Basis::VarianceAdapted => {
            if !(current_variance > 0.0) {
                return Err(Error::NonPositiveVariance(current_variance));
            }
            let sd = current_variance.sqrt();
            let scaled: Vec<f64> = spec.dense().iter().enumerate().map(|(q, c)| c * sd.powi(q as i32)).collect();
            Ok(eval_dense(&scaled, x / sd))
        }
    }
}

/// `Σ_q coeffs[q] H_q(x)` by a single recurrence sweep.
#[inline]
pub(crate) fn eval_dense(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = coeffs.first().copied().unwrap_or(0.0);
    if coeffs.len() < 2 {
        return acc;
    }
    let (mut prev, mut cur) = (1.0, x);
    acc += coeffs[1] * x;
    for (k, c) in coeffs.iter().enumerate().skip(2) {
        let next = x * cur - (k - 1) as f64 * prev;
        prev = cur;
        cur = next;
        acc += c * cur;
    }
    acc
}

/// Coefficients `a_r` with `f(X) = Σ_r a_r H_r(X/√v)` for `X ~ N(0, v)`.
///
/// `a_0 = E f(X)` and `Var f(X) = Σ_{r≥1} a_r² r!`.
pub fn chaos_coefficients(spec: &PolySpec, v: f64) -> Result<Vec<f64>> {
    if !(v > 0.0) {
        return Err(Error::NonPositiveVariance(v));
    }
    let mut out = vec![0.0; spec.p() + 1];
    match spec.basis {
        Basis::Fixed => {
            for (q, c) in spec.coeffs() {
                for (r, a) in multiplication_expand(q, v)? {
                    out[r] += c * a;
                }
            }
        }
        Basis::VarianceAdapted => {
            let sd = v.sqrt();
            for (q, c) in spec.coeffs() {
                out[q] = c * sd.powi(q as i32);
            }
        }
    }
    Ok(out)
}

/// Small-variance expansion `f(δZ) - E f(δZ) = Σ_{w≥1} δ^w Σ_r D[r][w] H_r(Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallVarianceExpansion {
    /// `d[r][w]` for `r, w` in `0..=p`; row and column 0 stay zero.
    pub d: Vec<Vec<f64>>,
    /// Leading power index.
    pub m_star: usize,
}

impl SmallVarianceExpansion {
    pub fn coeff(&self, r: usize, w: usize) -> f64 {
        self.d.get(r).and_then(|row| row.get(w)).copied().unwrap_or(0.0)
    }

    /// Column `D[·][m_star]`, indexed by chaos order.
    pub fn leading(&self) -> Vec<f64> {
        self.d.iter().map(|row| row[self.m_star]).collect()
    }
}

/// Builds `D_r^{(w,m,p)}` from the triple indicator sum and locates `m_star`.
pub fn small_variance_expansion(spec: &PolySpec) -> Result<SmallVarianceExpansion> {
    if spec.basis != Basis::Fixed {
        return Err(Error::InvalidPoly("small-variance expansion needs the fixed basis".into()));
    }
    if spec.m() < 1 {
        return Err(Error::InvalidPoly("small-variance expansion needs Hermite rank m >= 1".into()));
    }
    let (m, p) = (spec.m(), spec.p());
    let half = p / 2;
    let in_a = |s: usize, r: usize, x: usize| x == 2 * s + r;
    let in_b = |y: usize| m <= y && y <= p;

    let mut d = vec![vec![0.0; p + 1]; p + 1];
    for (r, row) in d.iter_mut().enumerate().skip(1) {
        for (w, cell) in row.iter_mut().enumerate().skip(1) {
            let mut total = 0.0;
            for s in 0..=half {
                if !in_a(s, r, w) {
                    continue;
                }
                for u in 0..=half {
                    let q = w + 2 * u;
                    if !in_b(q) {
                        continue;
                    }
                    let sign = if u % 2 == 0 { 1.0 } else { -1.0 };
                    total += spec.coeff(q) * mult_coeff(q, s + u) * binomial(s + u, s) * sign;
                }
            }
            *cell = total;
        }
    }

    let m_star = (1..=p).find(|&w| (1..=p).any(|r| d[r][w] != 0.0)).ok_or(Error::EmptySpec)?;
    Ok(SmallVarianceExpansion { d, m_star })
}

/// Gauss-Hermite rule for the standard Gaussian weight: `Σ w_i g(x_i) ≈ E g(Z)`.
///
/// Nodes come from Newton iteration on the orthonormal physicists' recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes = t.iter().rev().map(|x| x * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().rev().map(|x| x / sqrt_pi).collect();
    (nodes, weights)
}
