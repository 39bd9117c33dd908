use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{
    sort_rows, write_manifest, write_results, write_samples, Manifest, ResultRow, SampleDump, SCHEMA_VERSION,
};
use crate::distance::{
    default_bins, ks_critical_value, ks_two_sample, ks_vs_std_normal, loglog_slope, tv_histogram_default,
    tv_vs_std_normal,
};
use crate::error::{Error, Result};
use crate::functionals::{
    contraction_diagnostic, hermite_shift_decomposition, sample_functional, sample_functional_with_start,
    sqrt_sum_bound_check, variance_leading, variance_s, weights, LimitLaw,
};
use crate::gauss_markov::{bulk_radius, exact_tv_from_start, mixing_bounds, mixing_time, ProcessParams};
use crate::hermite::{gauss_hermite, hermite_eval, multiplication_expand};
use crate::limits::{
    k_q_gamma, simulate_degenerate, simulate_tempered_combination, simulate_tempered_hermite_family,
    simulate_tempered_hermite_family_with_start, tempered_hermite_cov,
};
use crate::rng::derive_seed;
use crate::special::factorial;

/// Rows and optional raw samples of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub samples: Vec<SampleDump>,
}

/// Runs the configured experiment. Rows come back in canonical order.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut ctx = Ctx { cfg: config, rows: Vec::new(), samples: Vec::new() };
    match config.experiment {
        ExperimentKind::VarianceValidation => variance_validation(&mut ctx)?,
        ExperimentKind::PhaseTransition => phase_transition(&mut ctx)?,
        ExperimentKind::TvDecayRates => tv_decay_rates(&mut ctx)?,
        ExperimentKind::GammaContinuity => gamma_continuity(&mut ctx)?,
        ExperimentKind::MixingTimeSweep => mixing_time_sweep(&mut ctx)?,
        ExperimentKind::CovarianceCheck => covariance_check(&mut ctx)?,
        ExperimentKind::IdentitySuite => identity_suite(&mut ctx)?,
    }
    let mut rows = ctx.rows;
    sort_rows(&mut rows);
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = rows.iter().find(|r| !seen.insert(r.key())) {
        return Err(Error::Config(format!("duplicate result row {}", dup.key())));
    }
    Ok(RunOutput { rows, samples: ctx.samples })
}

/// Runs and writes `results.csv`, `manifest.json` and, if asked, `samples/`.
///
/// Nothing is written when the config fails validation.
pub fn run_and_write(config: &ExperimentConfig, out_dir: &Path, dump_samples: bool) -> Result<Manifest> {
    config.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let out = run(config)?;
    fs::create_dir_all(out_dir)?;
    write_results(&out_dir.join("results.csv"), &out.rows)?;
    let samples = if dump_samples { write_samples(&out_dir.join("samples"), &out.samples)? } else { Vec::new() };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: config.experiment.name().to_string(),
        master_seed: config.master_seed,
        rows: out.rows.len(),
        threads: rayon::current_num_threads(),
        started_unix,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        estimated_path_steps: config.estimated_path_steps(),
        samples,
        config: config.clone(),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    rows: Vec<ResultRow>,
    samples: Vec<SampleDump>,
}

impl Ctx<'_> {
    fn name(&self) -> &'static str {
        self.cfg.experiment.name()
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.master_seed, &format!("{}/{tag}", self.name()))
    }

    fn row(&self, label: impl Into<String>, metric: &str, value: f64, seed: u64) -> ResultRow {
        ResultRow::new(self.name(), label, metric, value, seed)
    }

    fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    fn dump(&mut self, name: String, values: Vec<f64>) {
        self.samples.push(SampleDump { name, values });
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance and its delta-method standard error.
fn variance_with_se(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).max(0.0).sqrt())
}

/// `E[XY]` for mean-zero samples and its standard error.
fn cross_moment_with_se(x: &[f64], y: &[f64]) -> (f64, f64) {
    let prod: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let m = mean(&prod);
    let n = prod.len() as f64;
    let var = prod.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `t Σ w_q H_q(z)/√q!` for each start value `z`.
fn degenerate_from_starts(orders: &[(usize, f64)], starts: &[f64], t: f64) -> Result<Vec<f64>> {
    starts
        .iter()
        .map(|&z| {
            let mut s = 0.0;
            for &(q, w) in orders {
                s += w * hermite_eval(q, z)? / factorial(q).sqrt();
            }
            Ok(t * s)
        })
        .collect()
}

fn pairs(map: &BTreeMap<usize, f64>) -> Vec<(usize, f64)> {
    map.iter().map(|(&q, &w)| (q, w)).collect()
}

type GroupKey = (u64, u64, String);

fn group_key(p: &ProcessParams) -> GroupKey {
    (p.beta.to_bits(), p.gamma.to_bits(), p.regime.label())
}

fn variance_validation(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = &cfg.spec;
    let label = spec.label();
    for p in cfg.grid_points() {
        let seed = ctx.seed(&p.tuple_label());
        let series = sample_functional(&p, spec, &[1.0], cfg.replicates, seed, false)?;
        let shat = series.terminal();
        let (v, se) = variance_with_se(&shat);
        let (emp, emp_se) = (v * series.variance_used, se * series.variance_used);
        let exact = variance_s(&p, spec, 1.0)?;
        let leading = variance_leading(&p, spec, 1.0)?;
        let z = (emp - exact) / emp_se;
        ctx.push(ctx.row(&label, "var_empirical", emp, seed).at(&p).with_se(emp_se));
        ctx.push(ctx.row(&label, "var_exact", exact, seed).at(&p));
        ctx.push(ctx.row(&label, "var_leading", leading, seed).at(&p));
        ctx.push(ctx.row(&label, "leading_rel_err", leading / exact - 1.0, seed).at(&p));
        ctx.push(ctx.row(&label, "z_score", z, seed).at(&p).with_pass(z.abs() <= 4.0));
        ctx.dump(format!("{}_{}_{}", ctx.name(), p.tuple_label(), label), shat);
    }
    Ok(())
}

fn with_beta(p: &ProcessParams, beta: f64) -> ProcessParams {
    ProcessParams { beta, ..*p }
}

fn phase_transition(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = &cfg.spec;
    let label = spec.label();
    for p in cfg.grid_points() {
        let law = weights(&p, spec)?.limit_kind.law();
        let tempered = pairs(&weights(&with_beta(&p, 1.0), spec)?.limit_values);
        let degenerate = pairs(&weights(&with_beta(&p, 2.0), spec)?.limit_values);
        let spu = cfg.steps_per_unit(p.gamma);
        let mut correct = 0;
        for s in 0..cfg.options.seeds {
            let tag = format!("seed={s}");
            let seed = ctx.seed(&format!("{}/{tag}", p.tuple_label()));
            let shat = sample_functional(&p, spec, &[1.0], cfg.replicates, seed, false)?.terminal();
            let w = simulate_tempered_combination(&tempered, p.gamma, &[1.0], spu, cfg.limit_replicates(), seed)?;
            let h = simulate_degenerate(&degenerate, &[1.0], cfg.limit_replicates(), seed)?;
            let ks = [
                ks_vs_std_normal(&shat)?.value,
                ks_two_sample(&shat, &w.terminal())?.value,
                ks_two_sample(&shat, &h.terminal())?.value,
            ];
            let best = (0..3).min_by(|&a, &b| ks[a].total_cmp(&ks[b])).expect("three candidates");
            let expected = match law {
                LimitLaw::Brownian => 0,
                LimitLaw::TemperedHermite => 1,
                LimitLaw::Degenerate => 2,
            };
            let ok = best == expected;
            correct += usize::from(ok);
            ctx.push(ctx.row(&tag, "ks_brownian", ks[0], seed).at(&p));
            ctx.push(ctx.row(&tag, "ks_tempered", ks[1], seed).at(&p));
            ctx.push(ctx.row(&tag, "ks_degenerate", ks[2], seed).at(&p));
            ctx.push(ctx.row(&tag, "argmin_correct", f64::from(u8::from(ok)), seed).at(&p).with_pass(ok));
            if s == 0 {
                ctx.dump(format!("{}_{}_{}", ctx.name(), p.tuple_label(), label), shat);
            }
        }
        let majority = 2 * correct > cfg.options.seeds;
        let seed = ctx.seed(&p.tuple_label());
        ctx.push(ctx.row(&label, "argmin_majority", correct as f64, seed).at(&p).with_pass(majority));
    }
    Ok(())
}

fn reference_slope(beta: f64, q: usize) -> Option<f64> {
    if (beta - 1.0).abs() < 1e-12 {
        None
    } else if beta < 1.0 {
        Some(-(1.0 - beta) / 2.0)
    } else {
        Some((1.0 - beta) / (4.0 * q as f64))
    }
}

fn tv_decay_rates(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = &cfg.spec;
    let label = spec.label();
    let mut groups: BTreeMap<GroupKey, (ProcessParams, Vec<(f64, f64, f64)>)> = BTreeMap::new();
    for p in cfg.grid_points() {
        let ws = weights(&p, spec)?;
        let seed = ctx.seed(&p.tuple_label());
        let (ks, tv) = match ws.limit_kind.law() {
            LimitLaw::Brownian => {
                let shat = sample_functional(&p, spec, &[1.0], cfg.replicates, seed, false)?.terminal();
                (ks_vs_std_normal(&shat)?.value, tv_vs_std_normal(&shat, default_bins(shat.len()))?.value)
            }
            LimitLaw::TemperedHermite => {
                let shat = sample_functional(&p, spec, &[1.0], cfg.replicates, seed, false)?.terminal();
                let spu = cfg.steps_per_unit(p.gamma);
                let w = simulate_tempered_combination(
                    &pairs(&ws.limit_values),
                    p.gamma,
                    &[1.0],
                    spu,
                    cfg.limit_replicates(),
                    seed,
                )?
                .terminal();
                (ks_two_sample(&shat, &w)?.value, tv_histogram_default(&shat, &w)?.value)
            }
            LimitLaw::Degenerate => {
                // The limit sample reuses each path's starting value.
                let (series, starts) = sample_functional_with_start(&p, spec, &[1.0], cfg.replicates, seed)?;
                let shat = series.terminal();
                let h = degenerate_from_starts(&pairs(&ws.limit_values), &starts, 1.0)?;
                (ks_two_sample(&shat, &h)?.value, tv_histogram_default(&shat, &h)?.value)
            }
        };
        ctx.push(ctx.row(&label, "ks_to_limit", ks, seed).at(&p));
        ctx.push(ctx.row(&label, "tv_to_limit", tv, seed).at(&p));
        groups.entry(group_key(&p)).or_insert_with(|| (p, Vec::new())).1.push((p.n as f64, ks, tv));
    }
    for (_, (p, pts)) in groups {
        let seed = ctx.seed(&format!("beta={},gamma={},regime={}", p.beta, p.gamma, p.regime.label()));
        let ks_pts: Vec<(f64, f64)> = pts.iter().map(|x| (x.0, x.1)).collect();
        let tv_pts: Vec<(f64, f64)> = pts.iter().map(|x| (x.0, x.2)).collect();
        let g = |r: ResultRow| r.group(p.beta, p.gamma, &p.regime);
        match loglog_slope(&ks_pts) {
            Ok(fit) => {
                let pass = fit.slope < 0.0 && fit.r2 >= 0.8;
                ctx.push(g(ctx.row(&label, "ks_slope", fit.slope, seed)).with_pass(pass));
                ctx.push(g(ctx.row(&label, "ks_r2", fit.r2, seed)));
            }
            Err(e) => {
                log::warn!("ks slope fit failed for {}: {e}", p.tuple_label());
                ctx.push(g(ctx.row(&label, "ks_slope", f64::NAN, seed)).with_pass(false));
            }
        }
        if let Ok(fit) = loglog_slope(&tv_pts) {
            ctx.push(g(ctx.row(&label, "tv_slope", fit.slope, seed)));
            ctx.push(g(ctx.row(&label, "tv_r2", fit.r2, seed)));
        }
        if let Some(r) = reference_slope(p.beta, cfg.spec.p()) {
            ctx.push(g(ctx.row(&label, "reference_slope", r, seed)));
        }
    }
    Ok(())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn gamma_continuity(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let o = &cfg.options;
    let mut gammas = cfg.gammas();
    gammas.sort_by(f64::total_cmp);
    let r = cfg.replicates;
    let tests = gammas.len() * o.orders.len();
    let crit = ks_critical_value(o.continuity_level / tests as f64, r, r);
    let mut normal: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut degenerate: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for &gamma in &gammas {
        let spu = cfg.steps_per_unit(gamma);
        let seed = ctx.seed(&format!("gamma={gamma}"));
        let seed_b = ctx.seed(&format!("gamma={gamma}/perturbed"));
        let (a, starts) = simulate_tempered_hermite_family_with_start(&o.orders, gamma, &[1.0], spu, r, seed)?;
        let b =
            simulate_tempered_hermite_family(&o.orders, gamma * (1.0 + o.gamma_perturbation), &[1.0], spu, r, seed_b)?;
        for ((&q, sa), sb) in o.orders.iter().zip(&a).zip(&b) {
            let label = format!("q={q}");
            let wa = sa.terminal();
            let ks_pert = ks_two_sample(&wa, &sb.terminal())?.value;
            let ks_norm = ks_vs_std_normal(&wa)?.value;
            // Coupled through the driving path's starting value.
            let h = degenerate_from_starts(&[(q, 1.0)], &starts, 1.0)?;
            let ks_deg = ks_two_sample(&wa, &h)?.value;
            let g = |row: ResultRow| row.with_gamma(gamma);
            ctx.push(g(ctx.row(&label, "ks_perturbed", ks_pert, seed)).with_pass(ks_pert <= crit));
            ctx.push(g(ctx.row(&label, "ks_critical", crit, seed)));
            ctx.push(g(ctx.row(&label, "ks_normal", ks_norm, seed)));
            ctx.push(g(ctx.row(&label, "ks_degenerate", ks_deg, seed)));
            normal.entry(q).or_default().push((gamma, ks_norm));
            degenerate.entry(q).or_default().push((gamma, ks_deg));
            ctx.dump(format!("{}_q={q}_gamma={gamma}", ctx.name()), wa);
        }
    }
    let seed = ctx.seed("trends");
    for &q in &o.orders {
        let label = format!("q={q}");
        let large: Vec<f64> = normal[&q].iter().filter(|x| x.0 >= 1.0).map(|x| x.1).collect();
        let small: Vec<f64> = degenerate[&q].iter().rev().filter(|x| x.0 <= 1.0).map(|x| x.1).collect();
        if large.len() >= 2 {
            let ok = strictly_decreasing(&large);
            ctx.push(ctx.row(&label, "normal_trend_large_gamma", large.len() as f64, seed).with_pass(ok));
        }
        if small.len() >= 2 {
            let ok = strictly_decreasing(&small);
            ctx.push(ctx.row(&label, "degenerate_trend_small_gamma", small.len() as f64, seed).with_pass(ok));
        }
    }
    Ok(())
}

/// Lags at which the TV sandwich is checked: every lag up to 2000, then a
/// geometric grid up to `4 · t_mix`.
fn sandwich_lags(t_mix: usize) -> Vec<usize> {
    let top = (4 * t_mix).max(1);
    let mut lags: Vec<usize> = (1..=top.min(2000)).collect();
    if top > 2000 {
        let ratio = (top as f64 / 2000.0).powf(1.0 / 200.0);
        let mut x = 2000.0;
        for _ in 0..200 {
            x *= ratio;
            lags.push(x.round() as usize);
        }
        lags.dedup();
    }
    lags
}

fn mixing_time_sweep(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (eps, delta) = (cfg.options.eps, cfg.options.delta);
    let label = format!("eps={eps},delta={delta}");
    let mut groups: BTreeMap<GroupKey, (ProcessParams, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut c_fit = 0.0f64;
    let mut violations = 0usize;
    let seed = ctx.seed("deterministic");
    for p in cfg.grid_points() {
        let t = mixing_time(&p, eps, delta)?;
        let k = bulk_radius(&p, delta)?;
        let mut c_point = 0.0f64;
        let mut low = 0usize;
        for j in sandwich_lags(t) {
            for x in [0.0, k] {
                let exact = exact_tv_from_start(&p, x, j)?;
                let b = mixing_bounds(&p, x, j)?;
                if exact < b.lower * (1.0 - 1e-12) {
                    low += 1;
                }
                if b.shape > 0.0 {
                    c_point = c_point.max(exact / b.shape);
                }
            }
        }
        c_fit = c_fit.max(c_point);
        violations += low;
        ctx.push(ctx.row(&label, "t_mix", t as f64, seed).at(&p));
        ctx.push(ctx.row(&label, "upper_ratio_max", c_point, seed).at(&p));
        ctx.push(ctx.row(&label, "lower_violations", low as f64, seed).at(&p).with_pass(low == 0));
        groups.entry(group_key(&p)).or_insert_with(|| (p, Vec::new())).1.push((p.n as f64, t.max(1) as f64));
    }
    for (_, (p, pts)) in groups {
        let g = |r: ResultRow| r.group(p.beta, p.gamma, &p.regime);
        let fit = loglog_slope(&pts)?;
        let pass = (fit.slope - p.beta).abs() <= 0.15;
        ctx.push(g(ctx.row(&label, "t_mix_slope", fit.slope, seed)).with_pass(pass));
        ctx.push(g(ctx.row(&label, "t_mix_r2", fit.r2, seed)));
        ctx.push(g(ctx.row(&label, "reference_slope", p.beta, seed)));
    }
    ctx.push(ctx.row(&label, "fitted_upper_constant", c_fit, seed).with_pass(c_fit.is_finite() && c_fit <= 10.0));
    ctx.push(ctx.row(&label, "lower_violations_total", violations as f64, seed).with_pass(violations == 0));
    Ok(())
}

fn covariance_check(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid = &cfg.options.time_grid;
    let orders = &cfg.options.orders;
    for gamma in cfg.gammas() {
        let spu = cfg.steps_per_unit(gamma);
        let seed = ctx.seed(&format!("gamma={gamma}"));
        let family = simulate_tempered_hermite_family(orders, gamma, grid, spu, cfg.replicates, seed)?;
        let slack = 10.0 / spu as f64;
        for (&q, sample) in orders.iter().zip(&family) {
            let cols: Vec<Vec<f64>> = (0..grid.len()).map(|k| sample.at(k)).collect();
            let mut worst = 0.0f64;
            let mut all = true;
            for i in 0..grid.len() {
                for j in i..grid.len() {
                    let (s, t) = (grid[i], grid[j]);
                    let (emp, se) = cross_moment_with_se(&cols[i], &cols[j]);
                    let exact = tempered_hermite_cov(q, gamma, s, t);
                    let ok = (emp - exact).abs() <= 4.0 * se + slack;
                    all &= ok;
                    worst = worst.max((emp - exact).abs());
                    let label = format!("q={q},s={s},t={t}");
                    ctx.push(ctx.row(&label, "cov_empirical", emp, seed).with_gamma(gamma).with_se(se).with_pass(ok));
                    ctx.push(ctx.row(&label, "cov_exact", exact, seed).with_gamma(gamma));
                }
            }
            ctx.push(ctx.row(format!("q={q}"), "max_abs_error", worst, seed).with_gamma(gamma).with_pass(all));
        }
    }
    Ok(())
}

const IDENTITY_TOL: f64 = 1e-9;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn identity_suite(ctx: &mut Ctx) -> Result<()> {
    let seed = ctx.seed("identities");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (nodes, w) = gauss_hermite(48);
    let mut orth = 0.0f64;
    for a in 0..=8 {
        for b in 0..=8 {
            let mut s = 0.0;
            for (x, wi) in nodes.iter().zip(&w) {
                s += wi * hermite_eval(a, *x)? * hermite_eval(b, *x)?;
            }
            let target = if a == b { factorial(a) } else { 0.0 };
            orth = orth.max(rel_err(s, target));
        }
    }
    ctx.push(ctx.row("hermite_orthogonality", "max_rel_error", orth, seed).with_pass(orth <= IDENTITY_TOL));

    let mut mult = 0.0f64;
    for q in 0..=6 {
        for v in [0.25, 1.0, 4.0] {
            let terms = multiplication_expand(q, v)?;
            for _ in 0..100 {
                let z: f64 = rng.sample(StandardNormal);
                let lhs = hermite_eval(q, v.sqrt() * z)?;
                let mut rhs = 0.0;
                for &(r, c) in &terms {
                    rhs += c * hermite_eval(r, z)?;
                }
                mult = mult.max(rel_err(lhs, rhs));
            }
        }
    }
    ctx.push(ctx.row("multiplication_theorem", "max_rel_error", mult, seed).with_pass(mult <= IDENTITY_TOL));

    let mut decomp = 0.0f64;
    for _ in 0..100 {
        let q = rng.gen_range(1..=6);
        let alpha = rng.gen_range(0.05..0.99);
        let len = rng.gen_range(1..=40);
        let i = rng.gen_range(1..=len);
        let z0: f64 = rng.sample(StandardNormal);
        let innov: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let (lhs, rhs) = hermite_shift_decomposition(z0, &innov, alpha, q, i)?;
        decomp = decomp.max(rel_err(lhs, rhs));
    }
    ctx.push(ctx.row("hermite_decomposition", "max_rel_error", decomp, seed).with_pass(decomp <= IDENTITY_TOL));

    let mut unit = 0.0f64;
    for q in 1..=4 {
        for gamma in [0.1, 1.0, 10.0] {
            unit = unit.max((tempered_hermite_cov(q, gamma, 1.0, 1.0) - 1.0).abs());
        }
    }
    ctx.push(ctx.row("tempered_unit_variance", "max_abs_error", unit, seed).with_pass(unit <= IDENTITY_TOL));

    let k = (k_q_gamma(1, 1.0)? - 0.5f64.exp()).abs();
    ctx.push(ctx.row("spectral_constant_k11", "abs_error", k, seed).with_pass(k <= 1e-12));

    let mut points = 0usize;
    let mut failures = 0usize;
    for n in [1usize, 10, 100, 1000, 10_000] {
        for beta in [0.5, 0.9, 1.0, 1.5, 2.0] {
            for gamma in [0.1, 0.5, 0.9] {
                let (lhs, rhs) = sqrt_sum_bound_check(n, beta, gamma)?;
                points += 1;
                failures += usize::from(lhs > rhs);
            }
        }
    }
    ctx.push(ctx.row("sqrt_sum_bound", "points", points as f64, seed));
    ctx.push(ctx.row("sqrt_sum_bound", "violations", failures as f64, seed).with_pass(failures == 0));

    let mut max_fail = 0usize;
    let mut convex_fail = 0usize;
    let mut checked = 0usize;
    for n in [2usize, 5, 10, 20, 40, 60] {
        for alpha in [0.5, 0.9, 0.99] {
            for q in 2..=5 {
                let s: Vec<f64> = (1..q).map(|r| contraction_diagnostic(n, alpha, q, r)).collect::<Result<_>>()?;
                checked += 1;
                let top = s.iter().cloned().fold(f64::MIN, f64::max);
                if rel_err(s[0], top) > IDENTITY_TOL || rel_err(s[0], s[q - 2]) > IDENTITY_TOL {
                    max_fail += 1;
                }
                for r in 1..s.len().saturating_sub(1) {
                    if s[r] * s[r] > s[r - 1] * s[r + 1] * (1.0 + IDENTITY_TOL) {
                        convex_fail += 1;
                    }
                }
            }
        }
    }
    ctx.push(ctx.row("contraction", "cases", checked as f64, seed));
    ctx.push(ctx.row("contraction", "maximality_violations", max_fail as f64, seed).with_pass(max_fail == 0));
    ctx.push(ctx.row("contraction", "log_convexity_violations", convex_fail as f64, seed).with_pass(convex_fail == 0));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::ParamsGrid;
    use crate::gauss_markov::Regime;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::with_defaults(kind);
        cfg.replicates = 400;
        cfg.options.seeds = 3;
        cfg.options.steps_per_unit = Some(200);
        cfg.options.gammas = Some(vec![0.5, 1.0]);
        if let Some(g) = cfg.params_grid.as_mut() {
            g.n = match kind {
                ExperimentKind::MixingTimeSweep => vec![50, 100, 200],
                _ => vec![32, 64, 128, 256],
            };
        }
        cfg
    }

    #[test]
    fn every_experiment_is_deterministic() {
        for kind in ExperimentKind::ALL {
            let cfg = small(kind);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert!(!a.rows.is_empty(), "{}", kind.name());
            assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows), "{}", kind.name());
        }
    }

    #[test]
    fn identity_suite_passes() {
        let out = run(&ExperimentConfig::with_defaults(ExperimentKind::IdentitySuite)).unwrap();
        for r in &out.rows {
            assert_ne!(r.pass, Some(false), "{r:?}");
        }
        let pts = out.rows.iter().find(|r| r.metric == "points").unwrap();
        assert!(pts.value >= 50.0);
    }

    #[test]
    fn variance_rows_match_oracle() {
        let mut cfg = ExperimentConfig::with_defaults(ExperimentKind::VarianceValidation);
        cfg.replicates = 20_000;
        cfg.params_grid =
            Some(ParamsGrid { beta: vec![1.0], gamma: vec![0.5], n: vec![100], regime: vec![Regime::boundary()] });
        let out = run(&cfg).unwrap();
        let z = out.rows.iter().find(|r| r.metric == "z_score").unwrap();
        assert_eq!(z.pass, Some(true), "{z:?}");
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].values.len(), 20_000);
    }

    #[test]
    fn mixing_sweep_reports_slopes() {
        let out = run(&small(ExperimentKind::MixingTimeSweep)).unwrap();
        let slopes: Vec<&ResultRow> = out.rows.iter().filter(|r| r.metric == "t_mix_slope").collect();
        assert_eq!(slopes.len(), 3);
        let lower = out.rows.iter().find(|r| r.metric == "lower_violations_total").unwrap();
        assert_eq!(lower.value, 0.0);
    }

    #[test]
    fn nothing_written_for_invalid_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut cfg = small(ExperimentKind::VarianceValidation);
        cfg.params_grid.as_mut().unwrap().beta.clear();
        assert!(run_and_write(&cfg, &out, true).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn writes_results_manifest_and_samples() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ExperimentKind::VarianceValidation);
        cfg.params_grid.as_mut().unwrap().n = vec![16];
        let m = run_and_write(&cfg, dir.path(), true).unwrap();
        assert_eq!(m.schema_version, SCHEMA_VERSION);
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("manifest.json").exists());
        assert_eq!(m.samples.len(), 3);
        for s in &m.samples {
            assert!(dir.path().join(s).exists());
        }
    }
}
