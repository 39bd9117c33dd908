//! Additive functionals `S_{n,t}(f) = Σ_{k ≤ ⌊nt⌋} f(X_k)`, their variances,
//! weights and the auxiliary sums that control the limit theorems.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_markov::{alpha_n, stationary_variance, PathBatch, PathSampler, ProcessParams, Regime};
use crate::hermite::{chaos_coefficients, eval_dense, hermite_eval, small_variance_expansion, Basis, PolySpec};
use crate::special::{binomial, factorial, mult_coeff, tempered_factor};

/// Standardized partial sums on a time grid, one row per replicate.
#[derive(Debug, Clone)]
pub struct FunctionalSeries {
    pub params: ProcessParams,
    pub spec: PolySpec,
    pub grid: Vec<f64>,
    /// `Ŝ_{n,t}(f)`, shape `replicates × grid.len()`.
    pub values: Array2<f64>,
    /// `Var S_{n,1}(f)`.
    pub variance_used: f64,
    /// `⌊nt⌋ E f(X)` per grid point.
    pub centering_used: Vec<f64>,
}

impl FunctionalSeries {
    pub fn replicates(&self) -> usize {
        self.values.nrows()
    }

    /// Values at grid index `k` across replicates.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    /// Values at the last grid point.
    pub fn terminal(&self) -> Vec<f64> {
        self.at(self.grid.len() - 1)
    }

    /// Undoes the standardization: `S_{n,t}(f)` for replicate `r`, grid index `k`.
    pub fn raw(&self, r: usize, k: usize) -> f64 {
        self.values[[r, k]] * self.variance_used.sqrt() + self.centering_used[k]
    }
}

/// `⌊nt⌋`, tolerant of representation error just below an integer.
pub fn steps_for(n: usize, t: f64) -> usize {
    ((n as f64) * t + 1e-9).floor() as usize
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    for w in grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidGrid(format!("grid not strictly increasing at {} -> {}", w[0], w[1])));
        }
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidGrid(format!("grid point {t} outside [0, 1]")));
    }
    Ok(())
}

/// The observable as `x ↦ Σ coeffs[q] H_q(x · inv_scale)`.
#[derive(Debug, Clone)]
struct Observable {
    coeffs: Vec<f64>,
    inv_scale: f64,
}

impl Observable {
    fn new(spec: &PolySpec, v: f64) -> Self {
        match spec.basis() {
            Basis::Fixed => Observable { coeffs: spec.dense(), inv_scale: 1.0 },
            Basis::VarianceAdapted => {
                let sd = v.sqrt();
                let coeffs = spec.dense().iter().enumerate().map(|(q, c)| c * sd.powi(q as i32)).collect();
                Observable { coeffs, inv_scale: 1.0 / sd }
            }
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        eval_dense(&self.coeffs, x * self.inv_scale)
    }
}

/// Everything needed to turn a path into standardized partial sums.
struct Plan {
    obs: Observable,
    steps: Vec<usize>,
    centering: Vec<f64>,
    variance: f64,
}

impl Plan {
    fn new(params: &ProcessParams, spec: &PolySpec, grid: &[f64], standardized: bool) -> Result<Self> {
        check_grid(grid)?;
        // A standardized batch is the unit-variance boundary process.
        let effective = if standardized {
            if !params.regime.is_boundary() {
                return Err(Error::IncompatibleBatch(format!(
                    "standardized paths only represent the boundary regime, got {}",
                    params.regime.label()
                )));
            }
            ProcessParams { regime: Regime::Boundary { scale: 1.0 }, ..*params }
        } else {
            *params
        };
        let v = stationary_variance(&effective)?;
        let mean = chaos_coefficients(spec, v)?[0];
        let steps: Vec<usize> = grid.iter().map(|&t| steps_for(params.n, t)).collect();
        let centering = steps.iter().map(|&k| k as f64 * mean).collect();
        let variance = variance_s(&effective, spec, 1.0)?;
        if !(variance > 0.0) {
            return Err(Error::NonPositiveVariance(variance));
        }
        Ok(Plan { obs: Observable::new(spec, v), steps, centering, variance })
    }

    fn finish(&self, sums: &mut [f64]) {
        let inv = 1.0 / self.variance.sqrt();
        for (s, c) in sums.iter_mut().zip(&self.centering) {
            *s = (*s - c) * inv;
        }
    }
}

/// Running partial sum of `f(x_k)` over `k = 1..`, recorded at the grid steps.
struct Recorder<'a> {
    plan: &'a Plan,
    out: &'a mut [f64],
    acc: f64,
    next: usize,
}

impl<'a> Recorder<'a> {
    fn new(plan: &'a Plan, out: &'a mut [f64]) -> Self {
        let mut next = 0;
        while next < plan.steps.len() && plan.steps[next] == 0 {
            out[next] = 0.0;
            next += 1;
        }
        Recorder { plan, out, acc: 0.0, next }
    }

    #[inline]
    fn push(&mut self, k: usize, x: f64) {
        if k == 0 || self.next >= self.plan.steps.len() {
            return;
        }
        self.acc += self.plan.obs.eval(x);
        while self.next < self.plan.steps.len() && self.plan.steps[self.next] == k {
            self.out[self.next] = self.acc;
            self.next += 1;
        }
    }

    fn finish(self) {
        self.plan.finish(self.out);
    }
}

/// `Ŝ_{n,t}(f)` for every row of `batch` at every `t` in `grid`.
///
/// Raw batches use the regime's stationary variance; standardized batches are
/// only accepted for the boundary regime and are treated as unit variance.
pub fn additive_functional(batch: &PathBatch, spec: &PolySpec, grid: &[f64]) -> Result<FunctionalSeries> {
    let plan = Plan::new(&batch.params, spec, grid, batch.standardized)?;
    let (reps, len) = batch.paths.dim();
    if len != batch.params.n + 1 {
        return Err(Error::IncompatibleBatch(format!("rows have length {len}, expected {}", batch.params.n + 1)));
    }
    let g = grid.len();
    let mut data = vec![0.0; reps * g];
    data.par_chunks_mut(g).enumerate().for_each(|(r, out)| {
        let row = batch.paths.row(r);
        let mut rec = Recorder::new(&plan, out);
        for (k, &x) in row.iter().enumerate() {
            rec.push(k, x);
        }
        rec.finish();
    });
    Ok(series(batch.params, spec, grid, plan, reps, data))
}

/// Same result as `additive_functional(&simulate_paths(..), ..)` without
/// storing the paths.
pub fn sample_functional(
    params: &ProcessParams,
    spec: &PolySpec,
    grid: &[f64],
    replicates: usize,
    master_seed: u64,
    standardized: bool,
) -> Result<FunctionalSeries> {
    Ok(sample_impl(params, spec, grid, replicates, master_seed, standardized)?.0)
}

/// [`sample_functional`] on raw paths, also returning each replicate's
/// standardized starting value `X_0 / √Var X_0`.
pub fn sample_functional_with_start(
    params: &ProcessParams,
    spec: &PolySpec,
    grid: &[f64],
    replicates: usize,
    master_seed: u64,
) -> Result<(FunctionalSeries, Vec<f64>)> {
    sample_impl(params, spec, grid, replicates, master_seed, false)
}

fn sample_impl(
    params: &ProcessParams,
    spec: &PolySpec,
    grid: &[f64],
    replicates: usize,
    master_seed: u64,
    standardized: bool,
) -> Result<(FunctionalSeries, Vec<f64>)> {
    if replicates == 0 {
        return Err(Error::InvalidParams("replicates must be at least 1".into()));
    }
    let plan = Plan::new(params, spec, grid, standardized)?;
    let sampler = PathSampler::new(params, master_seed, standardized)?;
    let inv_sd = if standardized { 1.0 } else { 1.0 / stationary_variance(params)?.sqrt() };
    let g = grid.len();
    let last = *plan.steps.last().expect("nonempty grid");
    let mut data = vec![0.0; replicates * g];
    let mut starts = vec![0.0; replicates];
    data.par_chunks_mut(g).zip(starts.par_iter_mut()).enumerate().for_each(|(r, (out, start))| {
        let mut rec = Recorder::new(&plan, out);
        sampler.for_each(r, last + 1, |k, x| {
            if k == 0 {
                *start = x * inv_sd;
            }
            rec.push(k, x);
        });
        rec.finish();
    });
    Ok((series(*params, spec, grid, plan, replicates, data), starts))
}

fn series(
    params: ProcessParams,
    spec: &PolySpec,
    grid: &[f64],
    plan: Plan,
    reps: usize,
    data: Vec<f64>,
) -> FunctionalSeries {
    FunctionalSeries {
        params,
        spec: spec.clone(),
        grid: grid.to_vec(),
        values: Array2::from_shape_vec((reps, grid.len()), data).expect("shape matches buffer"),
        variance_used: plan.variance,
        centering_used: plan.centering,
    }
}

/// `Λ_q = Σ_{i,j ≤ n_eff} α^{q|i-j|}`, collapsed by lag.
pub fn lambda_exact(n_eff: usize, alpha: f64, q: usize) -> f64 {
    if n_eff == 0 {
        return 0.0;
    }
    let rho = alpha.powi(q as i32);
    let mut pow = 1.0;
    let mut off = 0.0;
    for d in 1..n_eff {
        pow *= rho;
        if pow == 0.0 {
            break;
        }
        off += (n_eff - d) as f64 * pow;
    }
    n_eff as f64 + 2.0 * off
}

/// Leading-order closed form of `Λ_q(n, t)` for the three β ranges.
pub fn lambda_asymptotic(params: &ProcessParams, q: usize, t: f64) -> Result<f64> {
    params.validate()?;
    let (n, g, b, qf) = (params.n as f64, params.gamma, params.beta, q as f64);
    Ok(if (b - 1.0).abs() < 1e-12 {
        let x = qf * g * t;
        2.0 * n * n / (qf * qf * g * g) * tempered_factor(x)
    } else if b < 1.0 {
        2.0 * n.powf(b + 1.0) * t / (qf * g)
    } else {
        n * n * t * t
    })
}

/// Exact `Var S_{n,t}(f)` from the chaos decomposition of `f(X)` in `Z = X/√v`:
/// `Σ_{r≥1} a_r² r! Λ_r(⌊nt⌋, α)`.
pub fn variance_s(params: &ProcessParams, spec: &PolySpec, t: f64) -> Result<f64> {
    let alpha = alpha_n(params)?;
    let v = stationary_variance(params)?;
    let a = chaos_coefficients(spec, v)?;
    let n_eff = steps_for(params.n, t);
    Ok(a.iter()
        .enumerate()
        .skip(1)
        .filter(|(_, a)| **a != 0.0)
        .map(|(r, a)| a * a * factorial(r) * lambda_exact(n_eff, alpha, r))
        .sum())
}

/// Leading-term variance for the regime: the top-order expansion for the
/// super regime, `Σ c_q² q! σ^{2q} Λ_q` on the boundary, the small-variance
/// column `D[·][m*]` for the sub regime, and `Σ c_q² q! v^q Λ_q` for the
/// adapted basis. Differs from [`variance_s`] by a factor `1 + o(1)`.
pub fn variance_leading(params: &ProcessParams, spec: &PolySpec, t: f64) -> Result<f64> {
    let alpha = alpha_n(params)?;
    let v = stationary_variance(params)?;
    let n_eff = steps_for(params.n, t);
    let lam = |r: usize| if r == 0 { 0.0 } else { lambda_exact(n_eff, alpha, r) };
    if spec.basis() == Basis::VarianceAdapted {
        return Ok(spec.coeffs().map(|(q, c)| c * c * factorial(q) * v.powi(q as i32) * lam(q)).sum());
    }
    Ok(match params.regime {
        Regime::Boundary { scale } => {
            spec.coeffs().map(|(q, c)| c * c * factorial(q) * scale.powi(q as i32) * lam(q)).sum()
        }
        Regime::Super { .. } => {
            let p = spec.p();
            let cp = spec.coeff(p);
            let inner: f64 =
                (0..=p / 2).map(|l| mult_coeff(p, l).powi(2) * factorial(p - 2 * l) * lam(p - 2 * l)).sum();
            cp * cp * v.powi(p as i32) * inner
        }
        Regime::Sub { .. } => {
            let e = small_variance_expansion(spec)?;
            let inner: f64 = e.leading().iter().enumerate().map(|(r, d)| d * d * factorial(r) * lam(r)).sum();
            v.powi(e.m_star as i32) * inner
        }
    })
}

/// Which normalized limit family the leading decomposition feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    /// `β < 1`: Brownian weights `b`.
    BrownianWeightsB,
    /// `β = 1`, boundary regime: tempered Hermite weights `d`.
    TemperedWeightsD,
    /// `β > 1`, boundary regime: degenerate weights `h`.
    DegenerateWeightsH,
    /// `β = 1`, super regime.
    CaseIE,
    /// `β > 1`, super regime.
    CaseIF,
    /// `β = 1`, sub regime.
    CaseIIIG,
    /// `β > 1`, sub regime.
    CaseIIIL,
}

/// The law that a [`LimitKind`] combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitLaw {
    Brownian,
    TemperedHermite,
    Degenerate,
}

impl LimitKind {
    pub fn law(&self) -> LimitLaw {
        match self {
            LimitKind::BrownianWeightsB => LimitLaw::Brownian,
            LimitKind::TemperedWeightsD | LimitKind::CaseIE | LimitKind::CaseIIIG => LimitLaw::TemperedHermite,
            LimitKind::DegenerateWeightsH | LimitKind::CaseIF | LimitKind::CaseIIIL => LimitLaw::Degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// `w_{n,q} = c_q √(Var S_{n,1}(H_q) / Var S_{n,1}(f))` per input order.
    pub w: BTreeMap<usize, f64>,
    /// Finite-n share of each chaos order: `a_r √(r! Λ_r / Var S_{n,1}(f))`.
    pub chaos: BTreeMap<usize, f64>,
    pub limit_kind: LimitKind,
    /// Unit-norm limit weights per chaos order.
    pub limit_values: BTreeMap<usize, f64>,
}

/// Per-order `Λ` shape in the limit: `1/r`, `(e^{-rγ}-1+rγ)/r²`, or `1`.
fn lambda_shape(beta: f64, gamma: f64, r: usize) -> f64 {
    let rf = r as f64;
    if (beta - 1.0).abs() < 1e-12 {
        tempered_factor(rf * gamma) / (rf * rf)
    } else if beta < 1.0 {
        1.0 / rf
    } else {
        1.0
    }
}

/// Leading chaos coefficients (up to a common power of `v`) per order `r ≥ 1`.
fn leading_chaos(params: &ProcessParams, spec: &PolySpec) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    match (spec.basis(), params.regime) {
        (Basis::Fixed, Regime::Boundary { scale }) | (Basis::VarianceAdapted, Regime::Boundary { scale }) => {
            for (q, c) in spec.coeffs().filter(|(q, _)| *q >= 1) {
                out.insert(q, c * scale.powf(q as f64 / 2.0));
            }
        }
        (Basis::Fixed, Regime::Super { .. }) => {
            let p = spec.p();
            for l in 0..=p / 2 {
                if p - 2 * l >= 1 {
                    out.insert(p - 2 * l, spec.coeff(p) * mult_coeff(p, l));
                }
            }
        }
        (Basis::Fixed, Regime::Sub { .. }) => {
            let e = small_variance_expansion(spec)?;
            for (r, d) in e.leading().into_iter().enumerate() {
                if r >= 1 && d != 0.0 {
                    out.insert(r, d);
                }
            }
        }
        (Basis::VarianceAdapted, Regime::Super { .. }) => {
            out.insert(spec.p(), spec.coeff(spec.p()));
        }
        (Basis::VarianceAdapted, Regime::Sub { .. }) => {
            let (q, c) = spec.coeffs().find(|(q, _)| *q >= 1).ok_or(Error::EmptySpec)?;
            out.insert(q, c);
        }
    }
    out.retain(|_, c| *c != 0.0);
    if out.is_empty() {
        return Err(Error::EmptySpec);
    }
    Ok(out)
}

pub fn weights(params: &ProcessParams, spec: &PolySpec) -> Result<WeightSet> {
    let alpha = alpha_n(params)?;
    let v = stationary_variance(params)?;
    let total = variance_s(params, spec, 1.0)?;
    if !(total > 0.0) {
        return Err(Error::NonPositiveVariance(total));
    }

    let mut w = BTreeMap::new();
    for (q, c) in spec.coeffs() {
        let single = PolySpec::new([(q, 1.0)], spec.basis())?;
        w.insert(q, c * (variance_s(params, &single, 1.0)? / total).sqrt());
    }

    let mut chaos = BTreeMap::new();
    for (r, a) in chaos_coefficients(spec, v)?.into_iter().enumerate().skip(1) {
        if a != 0.0 {
            chaos.insert(r, a * (factorial(r) * lambda_exact(params.n, alpha, r) / total).sqrt());
        }
    }

    let lead = leading_chaos(params, spec)?;
    let mass: Vec<(usize, f64, f64)> =
        lead.iter().map(|(&r, &l)| (r, l, l * l * factorial(r) * lambda_shape(params.beta, params.gamma, r))).collect();
    let norm: f64 = mass.iter().map(|m| m.2).sum();
    let limit_values = mass.into_iter().map(|(r, l, m)| (r, l.signum() * (m / norm).sqrt())).collect();

    let b = params.beta;
    let limit_kind = if b < 1.0 && (b - 1.0).abs() >= 1e-12 {
        LimitKind::BrownianWeightsB
    } else {
        let critical = (b - 1.0).abs() < 1e-12;
        match (spec.basis(), params.regime, critical) {
            (Basis::VarianceAdapted, _, true) | (_, Regime::Boundary { .. }, true) => LimitKind::TemperedWeightsD,
            (Basis::VarianceAdapted, _, false) | (_, Regime::Boundary { .. }, false) => LimitKind::DegenerateWeightsH,
            (_, Regime::Super { .. }, true) => LimitKind::CaseIE,
            (_, Regime::Super { .. }, false) => LimitKind::CaseIF,
            (_, Regime::Sub { .. }, true) => LimitKind::CaseIIIG,
            (_, Regime::Sub { .. }, false) => LimitKind::CaseIIIL,
        }
    };

    Ok(WeightSet { w, chaos, limit_kind, limit_values })
}

/// `Σ_{i,j,k,l ≤ n} α^{r|i-j|} α^{r|k-l|} α^{(q-r)|i-k|} α^{(q-r)|j-l|}`.
///
/// Evaluated as `tr((R Q)²)` for the two symmetric Toeplitz kernels.
pub fn contraction_diagnostic(n: usize, alpha: f64, q: usize, r: usize) -> Result<f64> {
    const MAX_N: usize = 200;
    if n > MAX_N {
        return Err(Error::SizeLimit(format!("n = {n} exceeds {MAX_N}")));
    }
    if q < 2 || r < 1 || r >= q {
        return Err(Error::InvalidParams(format!("need q >= 2 and 1 <= r <= q-1, got q={q}, r={r}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let kernel = |power: usize| -> Vec<f64> {
        let rho = alpha.powi(power as i32);
        let mut lag = vec![1.0; n];
        for d in 1..n {
            lag[d] = lag[d - 1] * rho;
        }
        lag
    };
    let rk = kernel(r);
    let qk = kernel(q - r);
    let lag = |a: usize, b: usize| a.abs_diff(b);
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            m[i * n + l] = (0..n).map(|j| rk[lag(i, j)] * qk[lag(j, l)]).sum();
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for l in 0..n {
            s += m[i * n + l] * m[l * n + i];
        }
    }
    Ok(s)
}

/// `Σ_{k ≤ n} k^{-1/2} (1 - γ/n^β)^k` and its bound: `1 + √(n^β π / γ)` for
/// `β < 1`, `1 + 2√n` otherwise.
pub fn sqrt_sum_bound_check(n: usize, beta: f64, gamma: f64) -> Result<(f64, f64)> {
    let params = ProcessParams::boundary(beta, gamma, n)?;
    let alpha = alpha_n(&params)?;
    let mut pow = 1.0;
    let mut lhs = 0.0;
    for k in 1..=n {
        pow *= alpha;
        lhs += pow / (k as f64).sqrt();
    }
    let nf = n as f64;
    let rhs =
        if beta < 1.0 { 1.0 + (nf.powf(beta) * std::f64::consts::PI / gamma).sqrt() } else { 1.0 + 2.0 * nf.sqrt() };
    Ok((lhs, rhs))
}

/// Both sides of `H_q(Z_i) = α^{qi} H_q(Z_0) + R_q(Z_i)` for the path driven by
/// `z0` and `innovations`.
pub fn hermite_shift_decomposition(z0: f64, innovations: &[f64], alpha: f64, q: usize, i: usize) -> Result<(f64, f64)> {
    if i == 0 || i > innovations.len() {
        return Err(Error::InvalidParams(format!("need 1 <= i <= {}, got {i}", innovations.len())));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParams(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let innov_sd = (1.0 - alpha * alpha).sqrt();
    let mut z = z0;
    for e in &innovations[..i] {
        z = alpha * z + innov_sd * e;
    }
    let lhs = hermite_eval(q, z)?;

    let ai = alpha.powi(i as i32);
    let tail = (1.0 - ai * ai).sqrt();
    let weighted: f64 = innovations[..i].iter().enumerate().map(|(k, e)| e * alpha.powi((i - 1 - k) as i32)).sum();
    let y = ((1.0 - alpha * alpha) / (1.0 - ai * ai)).sqrt() * weighted;

    let mut rest = 0.0;
    for r in 0..q {
        rest += binomial(q, r)
            * ai.powi(r as i32)
            * tail.powi((q - r) as i32)
            * hermite_eval(r, z0)?
            * hermite_eval(q - r, y)?;
    }
    let rhs = ai.powi(q as i32) * hermite_eval(q, z0)? + rest;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_markov::simulate_paths;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn bp(beta: f64, gamma: f64, n: usize) -> ProcessParams {
        ProcessParams::boundary(beta, gamma, n).unwrap()
    }

    fn var_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let c2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let v = c2.iter().sum::<f64>() / (n - 1.0);
        let m4 = c2.iter().map(|x| x * x).sum::<f64>() / n;
        (v, ((m4 - v * v) / n).sqrt())
    }

    fn brute_lambda(n: usize, alpha: f64, q: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += alpha.powi((q * i.abs_diff(j)) as i32);
            }
        }
        s
    }

    fn brute_contraction(n: usize, alpha: f64, q: usize, r: usize) -> f64 {
        let a = |p: usize, x: usize, y: usize| alpha.powi((p * x.abs_diff(y)) as i32);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        s += a(r, i, j) * a(r, k, l) * a(q - r, i, k) * a(q - r, j, l);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_exact(2, 0.5, 1), 3.0);
        assert_eq!(lambda_exact(3, 0.0, 2), 3.0);
        assert_eq!(lambda_exact(1, 0.7, 4), 1.0);
        assert_eq!(lambda_exact(0, 0.7, 4), 0.0);
        for (n, a, q) in [(7, 0.3, 1), (12, 0.9, 3), (30, 0.99, 2)] {
            assert_relative_eq!(lambda_exact(n, a, q), brute_lambda(n, a, q), max_relative = 1e-12);
        }
    }

    #[test]
    fn lambda_asymptotic_examples() {
        assert_relative_eq!(lambda_asymptotic(&bp(2.0, 0.5, 100), 3, 0.5).unwrap(), 2500.0, epsilon = 1e-9);
        let p = bp(1.0, 0.5, 1000);
        let asym = lambda_asymptotic(&p, 1, 1.0).unwrap();
        assert_relative_eq!(asym, 8.0e6 * ((-0.5f64).exp() - 0.5), max_relative = 1e-12);
        assert_relative_eq!(asym, 8.5224e5, max_relative = 1e-4);
        let exact = lambda_exact(1000, 0.9995, 1);
        assert!((asym / exact - 1.0).abs() < 0.02);

        let p = bp(0.5, 0.5, 10_000);
        let asym = lambda_asymptotic(&p, 2, 1.0).unwrap();
        assert_relative_eq!(asym, 2.0e6, max_relative = 1e-12);
        let exact = lambda_exact(10_000, alpha_n(&p).unwrap(), 2);
        assert!((asym / exact - 1.0).abs() < 0.05);
    }

    #[test]
    fn lambda_consistency_full_horizon() {
        for beta in [0.5, 1.0, 2.0] {
            let p = bp(beta, 0.5, 10_000);
            let alpha = alpha_n(&p).unwrap();
            for q in 1..=3 {
                let rel = lambda_asymptotic(&p, q, 1.0).unwrap() / lambda_exact(10_000, alpha, q) - 1.0;
                assert!(rel.abs() <= 0.05, "beta={beta} q={q} rel={rel}");
            }
        }
    }

    #[test]
    fn lambda_consistency_quarter_horizon() {
        // The β < 1 correction decays like n^{β-1}/(γ t), so t = 1/4 needs a longer array.
        for (beta, n) in [(0.5, 100_000), (1.0, 10_000), (2.0, 10_000)] {
            let p = bp(beta, 0.5, n);
            let alpha = alpha_n(&p).unwrap();
            for q in 1..=3 {
                let rel = lambda_asymptotic(&p, q, 0.25).unwrap() / lambda_exact(steps_for(n, 0.25), alpha, q) - 1.0;
                assert!(rel.abs() <= 0.05, "beta={beta} q={q} rel={rel}");
            }
        }
    }

    #[test]
    fn variance_examples() {
        let p = bp(1.0, 0.5, 300);
        let alpha = alpha_n(&p).unwrap();
        let h1 = PolySpec::single(1).unwrap();
        assert_relative_eq!(variance_s(&p, &h1, 1.0).unwrap(), lambda_exact(300, alpha, 1), max_relative = 1e-14);
        let mix = PolySpec::fixed([(1, 1.0), (2, 1.0)]).unwrap();
        let want = lambda_exact(300, alpha, 1) + 2.0 * lambda_exact(300, alpha, 2);
        assert_relative_eq!(variance_s(&p, &mix, 1.0).unwrap(), want, max_relative = 1e-14);
        assert_eq!(variance_s(&p, &mix, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn leading_variance_is_asymptotically_exact() {
        let spec = PolySpec::fixed([(1, 0.5), (3, 1.0)]).unwrap();
        for regime in [Regime::Super { eps0: 0.5 }, Regime::Sub { eps0: 0.5 }] {
            let ratio = |n: usize| {
                let p = ProcessParams::new(1.0, 0.5, n, regime).unwrap();
                (variance_leading(&p, &spec, 1.0).unwrap() / variance_s(&p, &spec, 1.0).unwrap() - 1.0).abs()
            };
            let (small, large) = (ratio(100), ratio(10_000));
            assert!(large < small, "{regime:?}: {small} -> {large}");
            assert!(large < 0.1, "{regime:?}: {large}");
        }
        let p = bp(1.0, 0.5, 200);
        let h12 = PolySpec::fixed([(1, 1.0), (2, 1.0)]).unwrap();
        assert_relative_eq!(
            variance_leading(&p, &h12, 1.0).unwrap(),
            variance_s(&p, &h12, 1.0).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn adapted_variance_matches_leading_form() {
        let p = ProcessParams::new(1.0, 0.5, 200, Regime::Super { eps0: 0.5 }).unwrap();
        let v = stationary_variance(&p).unwrap();
        let alpha = alpha_n(&p).unwrap();
        let spec = PolySpec::adapted([(3, 1.0)]).unwrap();
        let want = v.powi(3) * 6.0 * lambda_exact(200, alpha, 3);
        assert_relative_eq!(variance_s(&p, &spec, 1.0).unwrap(), want, max_relative = 1e-12);
        assert_relative_eq!(variance_leading(&p, &spec, 1.0).unwrap(), want, max_relative = 1e-12);
    }

    #[test]
    fn functional_examples() {
        let p = bp(1.0, 0.5, 4);
        let batch = PathBatch { params: p, master_seed: 0, paths: Array2::zeros((1, 5)), standardized: true };
        let s = additive_functional(&batch, &PolySpec::single(2).unwrap(), &[1.0]).unwrap();
        assert_relative_eq!(s.raw(0, 0), -4.0, epsilon = 1e-12);
        assert_eq!(s.centering_used, vec![0.0]);

        let sup = ProcessParams::new(1.0, 0.5, 4, Regime::Super { eps0: 0.5 }).unwrap();
        let bad = PathBatch { params: sup, ..batch.clone() };
        assert!(matches!(
            additive_functional(&bad, &PolySpec::single(2).unwrap(), &[1.0]),
            Err(Error::IncompatibleBatch(_))
        ));
        assert!(matches!(
            additive_functional(&batch, &PolySpec::single(2).unwrap(), &[0.5, 0.5]),
            Err(Error::InvalidGrid(_))
        ));
        assert!(additive_functional(&batch, &PolySpec::single(2).unwrap(), &[]).is_err());
        assert!(additive_functional(&batch, &PolySpec::single(2).unwrap(), &[1.5]).is_err());
    }

    #[test]
    fn empty_prefix_is_zero() {
        let p = bp(1.0, 0.5, 50);
        let batch = simulate_paths(&p, 3, 1, true).unwrap();
        let s = additive_functional(&batch, &PolySpec::single(1).unwrap(), &[0.0, 0.01, 1.0]).unwrap();
        // ⌊50·0.01⌋ = 0 as well
        for r in 0..3 {
            assert_eq!(s.values[[r, 0]], 0.0);
            assert_eq!(s.values[[r, 1]], 0.0);
        }
    }

    #[test]
    fn streaming_matches_stored_paths() {
        for (regime, standardized) in [(Regime::boundary(), true), (Regime::Sub { eps0: 0.5 }, false)] {
            let p = ProcessParams::new(1.0, 0.5, 64, regime).unwrap();
            let spec = PolySpec::fixed([(1, 1.0), (3, -0.5)]).unwrap();
            let grid = [0.25, 0.5, 1.0];
            let stored = additive_functional(&simulate_paths(&p, 200, 3, standardized).unwrap(), &spec, &grid).unwrap();
            let streamed = sample_functional(&p, &spec, &grid, 200, 3, standardized).unwrap();
            assert_eq!(stored.values, streamed.values);
        }
    }

    #[test]
    fn standardization_and_centering_mc() {
        let p = bp(1.0, 0.5, 100);
        let r = 20_000;
        let s1 = sample_functional(&p, &PolySpec::single(1).unwrap(), &[1.0], r, 11, true).unwrap();
        let (v, se) = var_and_se(&s1.terminal());
        assert!((v - 1.0).abs() <= 4.0 * se, "var {v} se {se}");

        let s2 = sample_functional(&p, &PolySpec::single(2).unwrap(), &[0.3, 1.0], r, 12, true).unwrap();
        for k in 0..2 {
            let xs = s2.at(k);
            let m = xs.iter().sum::<f64>() / r as f64;
            let (v, _) = var_and_se(&xs);
            assert!(m.abs() <= 4.0 * (v / r as f64).sqrt(), "mean {m}");
        }
    }

    #[test]
    fn variance_oracle_all_regimes_small() {
        let spec = PolySpec::fixed([(1, 1.0), (2, 1.0)]).unwrap();
        for (i, regime) in
            [Regime::Super { eps0: 0.5 }, Regime::boundary(), Regime::Sub { eps0: 0.5 }].into_iter().enumerate()
        {
            let p = ProcessParams::new(1.0, 0.5, 100, regime).unwrap();
            let s = sample_functional(&p, &spec, &[1.0], 20_000, 100 + i as u64, false).unwrap();
            // Ŝ has unit variance iff the empirical and exact variances agree.
            let (v, se) = var_and_se(&s.terminal());
            assert!((v - 1.0).abs() <= 4.0 * se, "{regime:?}: {v} ± {se}");
        }
    }

    #[test]
    fn weight_examples() {
        let h12 = PolySpec::fixed([(1, 1.0), (2, 1.0)]).unwrap();
        let w = weights(&bp(0.5, 0.5, 100), &h12).unwrap();
        assert_eq!(w.limit_kind, LimitKind::BrownianWeightsB);
        assert_relative_eq!(w.limit_values[&1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(w.limit_values[&2], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);

        let w = weights(&bp(2.0, 0.5, 100), &h12).unwrap();
        assert_eq!(w.limit_kind, LimitKind::DegenerateWeightsH);
        assert_relative_eq!(w.limit_values[&1], 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(w.limit_values[&2], (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);

        let w = weights(&bp(1.0, 0.5, 100), &h12).unwrap();
        assert_eq!(w.limit_kind, LimitKind::TemperedWeightsD);
        let d1 = tempered_factor(0.5);
        let d2 = 2.0 * tempered_factor(1.0) / 4.0;
        assert_relative_eq!(w.limit_values[&1], (d1 / (d1 + d2)).sqrt(), epsilon = 1e-12);

        for beta in [0.5, 1.0, 2.0] {
            let w = weights(&bp(beta, 0.5, 100), &PolySpec::single(3).unwrap()).unwrap();
            assert_relative_eq!(w.w[&3], 1.0, epsilon = 1e-12);
            assert_relative_eq!(w.limit_values[&3], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn limit_kinds_by_regime() {
        let spec = PolySpec::fixed([(1, 1.0), (3, 1.0)]).unwrap();
        let kind =
            |beta, regime| weights(&ProcessParams::new(beta, 0.5, 100, regime).unwrap(), &spec).unwrap().limit_kind;
        let (sup, sub) = (Regime::Super { eps0: 0.5 }, Regime::Sub { eps0: 0.5 });
        assert_eq!(kind(0.5, sup), LimitKind::BrownianWeightsB);
        assert_eq!(kind(1.0, sup), LimitKind::CaseIE);
        assert_eq!(kind(2.0, sup), LimitKind::CaseIF);
        assert_eq!(kind(1.0, sub), LimitKind::CaseIIIG);
        assert_eq!(kind(2.0, sub), LimitKind::CaseIIIL);
        assert_eq!(LimitKind::CaseIIIL.law(), LimitLaw::Degenerate);
    }

    #[test]
    fn weights_converge_in_n() {
        let spec = PolySpec::fixed([(1, 0.7), (2, 1.0), (3, -0.4)]).unwrap();
        for regime in [Regime::Super { eps0: 0.5 }, Regime::boundary(), Regime::Sub { eps0: 0.5 }] {
            for beta in [0.5, 1.0, 2.0] {
                let gap = |n: usize| -> f64 {
                    let ws = weights(&ProcessParams::new(beta, 0.5, n, regime).unwrap(), &spec).unwrap();
                    let mut g = 0.0f64;
                    for (r, lim) in &ws.limit_values {
                        g = g.max((ws.chaos.get(r).copied().unwrap_or(0.0) - lim).abs());
                    }
                    for (r, c) in &ws.chaos {
                        if !ws.limit_values.contains_key(r) {
                            g = g.max(c.abs());
                        }
                    }
                    if regime.is_boundary() {
                        for (q, w) in &ws.w {
                            g = g.max((w - ws.limit_values[q]).abs());
                        }
                    }
                    g
                };
                let (first, last) = (gap(100), gap(10_000));
                assert!(last < first, "{regime:?} beta={beta}: {first} -> {last}");
            }
        }
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contraction_diagnostic(1, 0.3, 2, 1).unwrap(), 1.0);
        assert_relative_eq!(
            contraction_diagnostic(2, 0.5, 2, 1).unwrap(),
            brute_contraction(2, 0.5, 2, 1),
            max_relative = 1e-14
        );
        for (n, a, q, r) in [(5, 0.7, 3, 1), (9, 0.9, 4, 2), (12, 0.95, 5, 3)] {
            assert_relative_eq!(
                contraction_diagnostic(n, a, q, r).unwrap(),
                brute_contraction(n, a, q, r),
                max_relative = 1e-12
            );
        }
        let s: Vec<f64> = (1..=3).map(|r| contraction_diagnostic(50, 0.9, 4, r).unwrap()).collect();
        assert!(s[0] >= s[1] && (s[0] - s[2]).abs() <= 1e-9 * s[0]);
        assert!(matches!(contraction_diagnostic(201, 0.5, 2, 1), Err(Error::SizeLimit(_))));
        assert!(contraction_diagnostic(10, 0.5, 2, 2).is_err());
    }

    #[test]
    fn sqrt_sum_examples() {
        let (l, r) = sqrt_sum_bound_check(100, 0.5, 0.5).unwrap();
        assert!(l <= r);
        let (l, r) = sqrt_sum_bound_check(1, 0.5, 0.5).unwrap();
        assert_relative_eq!(l, 0.5, epsilon = 1e-15);
        assert!(l <= r);
        let (l, r) = sqrt_sum_bound_check(10_000, 2.0, 0.5).unwrap();
        assert_eq!(r, 201.0);
        assert!(l <= r);
    }

    #[test]
    fn hermite_shift_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let innov: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let (l, r) = hermite_shift_decomposition(0.3, &innov, 0.8, 1, 7).unwrap();
        assert!((l - r).abs() < 1e-14);
        let (l, r) = hermite_shift_decomposition(0.7, &innov, 0.9, 3, 5).unwrap();
        assert!((l - r).abs() <= 1e-10);
        let (l, r) = hermite_shift_decomposition(1.1, &innov, 0.2, 2, 50).unwrap();
        let memory = 0.2f64.powi(100) * hermite_eval(2, 1.1).unwrap();
        assert!((l - r).abs() < 1e-10 && memory.abs() < 1e-60);
        assert!(hermite_shift_decomposition(0.0, &innov, 0.5, 2, 51).is_err());
    }

    #[test]
    fn hypercontractive_fourth_moment() {
        let p = bp(1.0, 0.5, 128);
        for q in 1..=3 {
            let s =
                sample_functional(&p, &PolySpec::single(q).unwrap(), &[0.5, 1.0], 20_000, 40 + q as u64, true).unwrap();
            for k in 0..2 {
                let xs = s.at(k);
                let n = xs.len() as f64;
                let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
                let x4: Vec<f64> = xs.iter().map(|x| x.powi(4)).collect();
                let m4 = x4.iter().sum::<f64>() / n;
                let se4 = (x4.iter().map(|x| (x - m4).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
                let bound = 3f64.powi(2 * q as i32) * m2 * m2;
                assert!(m4 <= bound * (1.0 + 5.0 * se4 / m4), "q={q}: {m4} > {bound}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weight_limits_are_unit_norm(
            c in proptest::collection::vec(-2.0f64..2.0, 4),
            beta in prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
            gamma in 0.1f64..0.9,
        ) {
            let spec = match PolySpec::fixed(c.iter().enumerate().map(|(i, &c)| (i + 1, c))) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            let ws = weights(&bp(beta, gamma, 200), &spec).unwrap();
            let total: f64 = ws.limit_values.values().map(|x| x * x).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let chaos: f64 = ws.chaos.values().map(|x| x * x).sum();
            prop_assert!((chaos - 1.0).abs() < 1e-12);
        }

        #[test]
        fn contraction_log_convex_and_maximal(n in 1usize..=30, alpha in 0.05f64..0.99, q in 3usize..=5) {
            let s: Vec<f64> = (1..q).map(|r| contraction_diagnostic(n, alpha, q, r).unwrap()).collect();
            let max = s.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!((s[0] - max).abs() <= 1e-10 * max);
            prop_assert!((s[0] - s[q - 2]).abs() <= 1e-10 * max);
            for r in 1..s.len() - 1 {
                prop_assert!(s[r] * s[r] <= s[r - 1] * s[r + 1] * (1.0 + 1e-10));
            }
        }

        #[test]
        fn hermite_shift_holds(z0 in -3.0f64..3.0, alpha in 0.0f64..0.99, q in 1usize..=5, i in 1usize..=20, seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let innov: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
            let (l, r) = hermite_shift_decomposition(z0, &innov, alpha, q, i).unwrap();
            prop_assert!((l - r).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }
}
