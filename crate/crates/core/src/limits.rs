//! Limit processes: Brownian motion, tempered Hermite processes and the
//! degenerate processes `t Σ h_q H_q(Z)/√q!`.
//!
//! Tempered Hermite processes are sampled through their time-domain form
//! `W_{q,γ}(t) = K_q^{(γ)} (2γ)^{-q/2} ∫_0^t H_q(U(s)) ds` with `U` a
//! unit-variance Ornstein-Uhlenbeck process of rate `γ`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::check_grid;
use crate::hermite::hermite_table;
use crate::rng::{derive_seed, replicate_rng};
use crate::special::{factorial, tempered_factor};

#[derive(Debug, Clone, PartialEq)]
pub enum LimitSampleKind {
    Brownian,
    TemperedHermite {
        q: usize,
        gamma: f64,
    },
    /// `Σ w_q W_{q,γ}` driven by one OU path.
    TemperedCombination {
        orders: Vec<(usize, f64)>,
        gamma: f64,
    },
    Degenerate {
        orders: Vec<(usize, f64)>,
    },
}

#[derive(Debug, Clone)]
pub struct LimitSample {
    pub kind: LimitSampleKind,
    pub grid: Vec<f64>,
    /// Shape `replicates × grid.len()`.
    pub values: Array2<f64>,
    /// OU step size for tempered samples.
    pub discretization: Option<f64>,
}

impl LimitSample {
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.at(self.grid.len() - 1)
    }
}

/// `K_q^{(γ)} = √(2^{q-1} q² γ^{q+2} / (q! (e^{-γq} - 1 + γq)))`.
pub fn k_q_gamma(q: usize, gamma: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidParams("order must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParams(format!("gamma must be positive, got {gamma}")));
    }
    let qf = q as f64;
    // γ^{q+2} / tempered_factor(γq) in logs keeps large γ finite.
    let log_k2 = (qf - 1.0) * std::f64::consts::LN_2 + 2.0 * qf.ln() + (qf + 2.0) * gamma.ln()
        - factorial(q).ln()
        - tempered_factor(gamma * qf).ln();
    Ok((0.5 * log_k2).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedHermiteLaw {
    pub q: usize,
    pub gamma: f64,
    pub k: f64,
}

impl TemperedHermiteLaw {
    pub fn new(q: usize, gamma: f64) -> Result<Self> {
        Ok(TemperedHermiteLaw { q, gamma, k: k_q_gamma(q, gamma)? })
    }

    /// Factor in front of `∫ H_q(U)`.
    pub fn integral_scale(&self) -> f64 {
        self.k * (2.0 * self.gamma).powf(-(self.q as f64) / 2.0)
    }

    pub fn cov(&self, s: f64, t: f64) -> f64 {
        tempered_hermite_cov(self.q, self.gamma, s, t)
    }
}

/// `Cov(W_{q,γ}(s), W_{q,γ}(t))`.
pub fn tempered_hermite_cov(q: usize, gamma: f64, s: f64, t: f64) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    let x = q as f64 * gamma;
    let num = 2.0 * x * s + (-x * t).exp_m1() + (-x * s).exp_m1() - (-x * (t - s)).exp_m1();
    0.5 * num / tempered_factor(x)
}

/// Default fine-grid resolution per unit time.
pub fn default_steps_per_unit(gamma: f64) -> usize {
    1000usize.max((1000.0 * gamma).ceil() as usize)
}

/// Stationary unit-variance OU with exact transitions, `replicates × (steps + 1)`.
pub fn simulate_ou(gamma: f64, grid_step: f64, steps: usize, seed: u64, replicates: usize) -> Result<Array2<f64>> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParams(format!("grid step must be positive, got {grid_step}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParams(format!("gamma must be positive, got {gamma}")));
    }
    let ou = OuStep::new(gamma, grid_step);
    let seed = derive_seed(seed, "ou");
    let len = steps + 1;
    let mut data = vec![0.0; replicates * len];
    data.par_chunks_mut(len).enumerate().for_each(|(r, row)| {
        let mut rng = replicate_rng(seed, r);
        ou.run(&mut rng, len, |k, u| row[k] = u);
    });
    Ok(Array2::from_shape_vec((replicates, len), data).expect("shape matches buffer"))
}

#[derive(Debug, Clone, Copy)]
struct OuStep {
    decay: f64,
    noise: f64,
}

impl OuStep {
    fn new(gamma: f64, dt: f64) -> Self {
        let decay = (-gamma * dt).exp();
        OuStep { decay, noise: (-(-2.0 * gamma * dt).exp_m1()).sqrt() }
    }

    #[inline]
    fn run(&self, rng: &mut impl Rng, len: usize, mut visit: impl FnMut(usize, f64)) {
        let mut u: f64 = rng.sample(StandardNormal);
        visit(0, u);
        for k in 1..len {
            let xi: f64 = rng.sample(StandardNormal);
            u = self.decay * u + self.noise * xi;
            visit(k, u);
        }
    }
}

/// Samples `W_{q,γ}` for every order in `orders` from shared OU paths.
///
/// Sharing the driving path gives the correct joint law, so weighted sums of
/// the returned samples are samples of the corresponding combination.
pub fn simulate_tempered_hermite_family(
    orders: &[usize],
    gamma: f64,
    grid: &[f64],
    steps_per_unit: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<LimitSample>> {
    Ok(simulate_tempered_hermite_family_with_start(orders, gamma, grid, steps_per_unit, replicates, seed)?.0)
}

/// [`simulate_tempered_hermite_family`] plus the stationary starting value
/// `U(0) ~ N(0, 1)` of each replicate's driving path.
pub fn simulate_tempered_hermite_family_with_start(
    orders: &[usize],
    gamma: f64,
    grid: &[f64],
    steps_per_unit: usize,
    replicates: usize,
    seed: u64,
) -> Result<(Vec<LimitSample>, Vec<f64>)> {
    check_grid(grid)?;
    if orders.is_empty() {
        return Err(Error::InvalidParams("no orders requested".into()));
    }
    let laws: Vec<TemperedHermiteLaw> =
        orders.iter().map(|&q| TemperedHermiteLaw::new(q, gamma)).collect::<Result<_>>()?;
    let needed = (100.0 * gamma.max(1.0)).ceil() as usize;
    if steps_per_unit < needed {
        return Err(Error::Resolution(format!(
            "steps_per_unit = {steps_per_unit} below 100 * max(1, gamma) = {needed}"
        )));
    }
    let dt = 1.0 / steps_per_unit as f64;
    let ou = OuStep::new(gamma, dt);
    let positions: Vec<(usize, f64)> = grid
        .iter()
        .map(|&t| {
            let p = t * steps_per_unit as f64;
            let i = (p + 1e-9).floor();
            let frac = p - i;
            (i as usize, if frac < 1e-9 { 0.0 } else { frac })
        })
        .collect();
    let last = positions.last().map(|p| p.0 + usize::from(p.1 > 0.0)).expect("nonempty grid");
    let pmax = *orders.iter().max().expect("nonempty");
    let scales: Vec<f64> = laws.iter().map(|l| l.integral_scale()).collect();
    let seed_ou = derive_seed(seed, "tempered-hermite");
    let g = grid.len();
    let width = orders.len() * g;

    let mut data = vec![0.0; replicates * width];
    let mut starts = vec![0.0; replicates];
    data.par_chunks_mut(width).zip(starts.par_iter_mut()).enumerate().for_each(|(r, (out, start))| {
        let mut rng = replicate_rng(seed_ou, r);
        let mut table = vec![0.0; pmax + 1];
        let mut prev = vec![0.0; orders.len()];
        let mut cur = vec![0.0; orders.len()];
        let mut acc = vec![0.0; orders.len()];
        let mut next = 0;
        // Writes every pending point on fine index `k` whose offset class
        // matches; `prev`/`cur` bracket the panel a fractional point falls in.
        let mut record = |k: usize, inside: bool, acc: &[f64], prev: &[f64], cur: &[f64], next: &mut usize| {
            while *next < g && positions[*next].0 == k && (positions[*next].1 > 0.0) == inside {
                let frac = positions[*next].1;
                for o in 0..acc.len() {
                    let extra = frac * dt * (prev[o] + 0.5 * frac * (cur[o] - prev[o]));
                    out[o * g + *next] = scales[o] * (acc[o] + extra);
                }
                *next += 1;
            }
        };
        ou.run(&mut rng, last + 1, |k, u| {
            if k == 0 {
                *start = u;
            }
            hermite_table(u, &mut table);
            for (o, &q) in orders.iter().enumerate() {
                cur[o] = table[q];
            }
            if k > 0 {
                record(k - 1, true, &acc, &prev, &cur, &mut next);
                for o in 0..orders.len() {
                    acc[o] += 0.5 * dt * (prev[o] + cur[o]);
                }
            }
            prev.copy_from_slice(&cur);
            record(k, false, &acc, &prev, &cur, &mut next);
        });
    });

    let samples = orders
        .iter()
        .enumerate()
        .map(|(o, &q)| {
            let mut values = Array2::zeros((replicates, g));
            for r in 0..replicates {
                for k in 0..g {
                    values[[r, k]] = data[r * width + o * g + k];
                }
            }
            LimitSample {
                kind: LimitSampleKind::TemperedHermite { q, gamma },
                grid: grid.to_vec(),
                values,
                discretization: Some(dt),
            }
        })
        .collect();
    Ok((samples, starts))
}

pub fn simulate_tempered_hermite(
    q: usize,
    gamma: f64,
    grid: &[f64],
    steps_per_unit: usize,
    replicates: usize,
    seed: u64,
) -> Result<LimitSample> {
    Ok(simulate_tempered_hermite_family(&[q], gamma, grid, steps_per_unit, replicates, seed)?.remove(0))
}

/// `Σ w_q W_{q,γ}` with all orders driven by the same OU path.
pub fn simulate_tempered_combination(
    orders: &[(usize, f64)],
    gamma: f64,
    grid: &[f64],
    steps_per_unit: usize,
    replicates: usize,
    seed: u64,
) -> Result<LimitSample> {
    let qs: Vec<usize> = orders.iter().map(|o| o.0).collect();
    let parts = simulate_tempered_hermite_family(&qs, gamma, grid, steps_per_unit, replicates, seed)?;
    let mut values = Array2::zeros((replicates, grid.len()));
    for (part, (_, w)) in parts.iter().zip(orders) {
        values.scaled_add(*w, &part.values);
    }
    Ok(LimitSample {
        kind: LimitSampleKind::TemperedCombination { orders: orders.to_vec(), gamma },
        grid: grid.to_vec(),
        values,
        discretization: parts[0].discretization,
    })
}

/// `t Σ w_q H_q(Z)/√q!` with one `Z ~ N(0, 1)` per replicate.
pub fn simulate_degenerate(orders: &[(usize, f64)], grid: &[f64], replicates: usize, seed: u64) -> Result<LimitSample> {
    check_grid(grid)?;
    if orders.is_empty() {
        return Err(Error::InvalidParams("no orders requested".into()));
    }
    let norm: f64 = orders.iter().map(|o| o.1 * o.1).sum();
    if (norm - 1.0).abs() > 1e-9 {
        log::warn!("degenerate limit weights have squared norm {norm}, not 1");
    }
    let pmax = orders.iter().map(|o| o.0).max().expect("nonempty");
    let scaled: Vec<(usize, f64)> = orders.iter().map(|&(q, w)| (q, w / factorial(q).sqrt())).collect();
    let seed = derive_seed(seed, "degenerate");
    let g = grid.len();
    let mut data = vec![0.0; replicates * g];
    data.par_chunks_mut(g).enumerate().for_each(|(r, out)| {
        let z: f64 = replicate_rng(seed, r).sample(StandardNormal);
        let mut table = vec![0.0; pmax + 1];
        hermite_table(z, &mut table);
        let level: f64 = scaled.iter().map(|&(q, w)| w * table[q]).sum();
        for (o, &t) in out.iter_mut().zip(grid) {
            *o = t * level;
        }
    });
    Ok(LimitSample {
        kind: LimitSampleKind::Degenerate { orders: orders.to_vec() },
        grid: grid.to_vec(),
        values: Array2::from_shape_vec((replicates, g), data).expect("shape matches buffer"),
        discretization: None,
    })
}

/// Brownian motion on `grid` from independent Gaussian increments.
pub fn simulate_brownian(grid: &[f64], replicates: usize, seed: u64) -> Result<LimitSample> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidGrid("grid must be nonnegative and strictly increasing".into()));
    }
    let seed = derive_seed(seed, "brownian");
    let g = grid.len();
    let mut data = vec![0.0; replicates * g];
    data.par_chunks_mut(g).enumerate().for_each(|(r, out)| {
        let mut rng = replicate_rng(seed, r);
        let (mut b, mut t0) = (0.0, 0.0);
        for (o, &t) in out.iter_mut().zip(grid) {
            if t > t0 {
                let xi: f64 = rng.sample(StandardNormal);
                b += (t - t0).sqrt() * xi;
            }
            *o = b;
            t0 = t;
        }
    });
    Ok(LimitSample {
        kind: LimitSampleKind::Brownian,
        grid: grid.to_vec(),
        values: Array2::from_shape_vec((replicates, g), data).expect("shape matches buffer"),
        discretization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    /// Sample covariance and its standard error.
    fn cov_se(a: &[f64], b: &[f64]) -> (f64, f64) {
        let (ma, mb) = (mean(a), mean(b));
        let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
        let c = mean(&p);
        let v = p.iter().map(|x| (x - c).powi(2)).sum::<f64>() / (p.len() as f64 - 1.0);
        (c, (v / p.len() as f64).sqrt())
    }

    #[test]
    fn k_examples() {
        assert_relative_eq!(k_q_gamma(1, 1.0).unwrap(), 1f64.exp().sqrt(), epsilon = 1e-12);
        let direct = (2.0 * 4.0 / (2.0 * ((-2.0f64).exp() + 1.0))).sqrt();
        assert_relative_eq!(k_q_gamma(2, 1.0).unwrap(), direct, max_relative = 1e-12);
        // K_1 → √(2γ) as γ → 0 along the series branch.
        let a = k_q_gamma(1, 1e-6).unwrap() / (2e-6f64).sqrt();
        let b = k_q_gamma(1, 1e-8).unwrap() / (2e-8f64).sqrt();
        assert!((a - b).abs() < 1e-6 && (a - 1.0).abs() < 1e-6);
        assert!(k_q_gamma(3, 1e3).unwrap().is_finite());
        assert!(k_q_gamma(1, 0.0).is_err());
    }

    #[test]
    fn cov_examples() {
        for q in 1..=4 {
            for gamma in [0.01, 0.5, 1.0, 7.0] {
                assert!((tempered_hermite_cov(q, gamma, 1.0, 1.0) - 1.0).abs() < 1e-12);
                assert_eq!(tempered_hermite_cov(q, gamma, 0.0, 0.6), 0.0);
            }
        }
        assert!((tempered_hermite_cov(1, 1e3, 0.3, 0.7) - 0.3).abs() < 1e-2);
        assert_eq!(tempered_hermite_cov(2, 1.0, 0.7, 0.2), tempered_hermite_cov(2, 1.0, 0.2, 0.7));
    }

    #[test]
    fn ou_is_stationary_with_exponential_correlation() {
        let (gamma, dt) = (2.0, 0.05);
        let r = 40_000;
        let u = simulate_ou(gamma, dt, 30, 3, r).unwrap();
        for k in [0, 30] {
            let col = u.column(k).to_vec();
            let (v, se) = cov_se(&col, &col);
            assert!((v - 1.0).abs() <= 4.0 * se, "var {v}");
        }
        for (j, k) in [(0, 1), (5, 15)] {
            let (c, se) = cov_se(&u.column(j).to_vec(), &u.column(k).to_vec());
            let want = (-gamma * dt * (k - j) as f64).exp();
            assert!((c - want).abs() <= 4.0 * se, "corr({j},{k}) {c} vs {want}");
        }
        let fine = simulate_ou(gamma, 1e-7, 1, 3, 2000).unwrap();
        let (c, _) = cov_se(&fine.column(0).to_vec(), &fine.column(1).to_vec());
        assert!(c > 0.999);
    }

    #[test]
    fn tempered_rejects_coarse_grid() {
        assert!(matches!(simulate_tempered_hermite(1, 4.0, &[1.0], 399, 10, 1), Err(Error::Resolution(_))));
        assert!(simulate_tempered_hermite(1, 4.0, &[1.0], 400, 10, 1).is_ok());
    }

    #[test]
    fn tempered_unit_variance_and_covariance() {
        let grid = [0.2, 0.5, 1.0];
        let spu = 1000;
        let r = 20_000;
        let fam = simulate_tempered_hermite_family(&[1, 2], 1.0, &grid, spu, r, 8).unwrap();
        for (q, s) in [1, 2].iter().zip(&fam) {
            for i in 0..3 {
                for j in i..3 {
                    let (c, se) = cov_se(&s.at(i), &s.at(j));
                    let want = tempered_hermite_cov(*q, 1.0, grid[i], grid[j]);
                    assert!((c - want).abs() <= 4.0 * se + 10.0 / spu as f64, "q={q} ({i},{j}) {c} vs {want}");
                }
            }
        }
    }

    #[test]
    fn off_grid_points_interpolate_the_integral() {
        let on = simulate_tempered_hermite(2, 1.0, &[0.5, 1.0], 1000, 8, 4).unwrap();
        let mid = simulate_tempered_hermite(2, 1.0, &[0.5, 0.50025, 1.0], 1000, 8, 4).unwrap();
        for r in 0..8 {
            assert_eq!(on.values[[r, 0]], mid.values[[r, 0]]);
            assert_eq!(on.values[[r, 1]], mid.values[[r, 2]]);
            let (a, b, c) = (mid.values[[r, 0]], mid.values[[r, 1]], mid.values[[r, 2]]);
            assert!((b - a).abs() < (c - a).abs() + 1e-3);
        }
    }

    #[test]
    fn combination_is_weighted_family() {
        let grid = [0.5, 1.0];
        let fam = simulate_tempered_hermite_family(&[1, 3], 0.5, &grid, 500, 16, 2).unwrap();
        let comb = simulate_tempered_combination(&[(1, 0.6), (3, 0.8)], 0.5, &grid, 500, 16, 2).unwrap();
        for r in 0..16 {
            let want = 0.6 * fam[0].values[[r, 1]] + 0.8 * fam[1].values[[r, 1]];
            assert_relative_eq!(comb.values[[r, 1]], want, max_relative = 1e-12);
        }
    }

    #[test]
    fn degenerate_examples() {
        let grid = [0.0, 0.25, 0.5, 1.0];
        let r = 100_000;
        let s = simulate_degenerate(&[(1, 1.0)], &grid, r, 5).unwrap();
        let (v, se) = cov_se(&s.at(3), &s.at(3));
        assert!((v - 1.0).abs() <= 4.0 * se);
        for row in s.values.rows() {
            assert_eq!(row[0], 0.0);
            assert!((row[2] - 0.5 * row[3]).abs() < 1e-15 && (row[1] - 0.25 * row[3]).abs() < 1e-15);
        }

        let s = simulate_degenerate(&[(2, 1.0)], &[1.0], r, 6).unwrap();
        let x = s.terminal();
        let m = mean(&x);
        let (v, se) = cov_se(&x, &x);
        let skew = x.iter().map(|y| (y - m).powi(3)).sum::<f64>() / r as f64 / v.powf(1.5);
        assert!(m.abs() < 4.0 * (v / r as f64).sqrt());
        assert!((v - 1.0).abs() <= 4.0 * se);
        // (Z² - 1)/√2 has skewness 2√2.
        assert!((skew - 2.0 * 2f64.sqrt()).abs() < 0.15, "skew {skew}");
    }

    #[test]
    fn brownian_examples() {
        let grid = [0.25, 0.5, 1.0];
        let r = 100_000;
        let b = simulate_brownian(&grid, r, 9).unwrap();
        for i in 0..3 {
            for j in i..3 {
                let (c, se) = cov_se(&b.at(i), &b.at(j));
                assert!((c - grid[i]).abs() <= 4.0 * se, "({i},{j}) {c}");
            }
        }
        let inc1: Vec<f64> = b.values.rows().into_iter().map(|row| row[1] - row[0]).collect();
        let inc2: Vec<f64> = b.values.rows().into_iter().map(|row| row[2] - row[1]).collect();
        let (c, se) = cov_se(&inc1, &inc2);
        assert!(c.abs() <= 4.0 * se);
        assert!(simulate_brownian(&[0.5, 0.2], 1, 0).is_err());
    }
}
