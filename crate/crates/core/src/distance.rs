//! Empirical distances between samples and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::norm_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    KsTwoSample,
    KsVsStdNormal,
    TvHistogram,
    TvVsDensity,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::KsTwoSample => "ks_two_sample",
            Metric::KsVsStdNormal => "ks_vs_std_normal",
            Metric::TvHistogram => "tv_histogram",
            Metric::TvVsDensity => "tv_vs_density",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub metric: Metric,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub bins: Option<usize>,
    pub notes: String,
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn nonempty(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        Err(Error::EmptySample)
    } else {
        Ok(())
    }
}

/// Two-sample Kolmogorov-Smirnov statistic by merge scan.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<DistanceReport> {
    nonempty(a)?;
    nonempty(b)?;
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(DistanceReport {
        metric: Metric::KsTwoSample,
        value: d.min(1.0),
        n_a: sa.len(),
        n_b: sb.len(),
        bins: None,
        notes: String::new(),
    })
}

/// `sup_x |F̂(x) - Φ(x)|`.
pub fn ks_vs_std_normal(a: &[f64]) -> Result<DistanceReport> {
    nonempty(a)?;
    let s = sorted(a);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let lo = i as f64 / n;
        while i < s.len() && s[i] == x {
            i += 1;
        }
        let hi = i as f64 / n;
        let f = norm_cdf(x);
        d = d.max((hi - f).abs()).max((f - lo).abs());
    }
    Ok(DistanceReport {
        metric: Metric::KsVsStdNormal,
        value: d.min(1.0),
        n_a: s.len(),
        n_b: 0,
        bins: None,
        notes: String::new(),
    })
}

fn histogram(a: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut h = vec![0.0; bins];
    for &x in a {
        let k = ((x - lo) / width).floor();
        let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        h[k] += 1.0;
    }
    let n = a.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 10 {
        return Err(Error::TooFewBins(bins));
    }
    Ok(())
}

/// Histogram TV on `bins` equal-width bins over `[lo, hi]`; values outside
/// fall into the edge bins.
pub fn tv_histogram_range(a: &[f64], b: &[f64], bins: usize, lo: f64, hi: f64) -> Result<DistanceReport> {
    nonempty(a)?;
    nonempty(b)?;
    check_bins(bins)?;
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    let (ha, hb) = (histogram(a, bins, lo, hi), histogram(b, bins, lo, hi));
    let value = 0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(DistanceReport {
        metric: Metric::TvHistogram,
        value: value.min(1.0),
        n_a: a.len(),
        n_b: b.len(),
        bins: Some(bins),
        notes: format!("range=[{lo}, {hi}]"),
    })
}

/// Histogram TV over the union of the two sample ranges.
pub fn tv_histogram(a: &[f64], b: &[f64], bins: usize) -> Result<DistanceReport> {
    nonempty(a)?;
    nonempty(b)?;
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(Error::DegenerateRange(lo));
    }
    tv_histogram_range(a, b, bins, lo, hi)
}

/// `⌈min(200, 2 n^{1/3})⌉`, floored at the 10-bin minimum.
pub fn default_bins(n: usize) -> usize {
    ((2.0 * (n as f64).cbrt()).min(200.0).ceil() as usize).max(10)
}

/// Empirical quantile by linear interpolation of a sorted sample.
pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = p * (s.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(s.len() - 1);
    s[i] + (h - i as f64) * (s[j] - s[i])
}

/// Histogram TV over the pooled 0.1%-99.9% quantile range.
pub fn tv_histogram_quantile(a: &[f64], b: &[f64], bins: usize) -> Result<DistanceReport> {
    nonempty(a)?;
    nonempty(b)?;
    let pooled = sorted(&[a, b].concat());
    let (lo, hi) = (quantile_sorted(&pooled, 0.001), quantile_sorted(&pooled, 0.999));
    if hi == lo {
        return Err(Error::DegenerateRange(lo));
    }
    tv_histogram_range(a, b, bins, lo, hi)
}

/// [`tv_histogram_quantile`] with [`default_bins`] of the smaller sample.
pub fn tv_histogram_default(a: &[f64], b: &[f64]) -> Result<DistanceReport> {
    tv_histogram_quantile(a, b, default_bins(a.len().min(b.len())))
}

/// Histogram TV of a sample against `N(0, 1)` bin masses, over the sample's
/// 0.1%-99.9% quantile range with the tails folded into the edge bins.
pub fn tv_vs_std_normal(a: &[f64], bins: usize) -> Result<DistanceReport> {
    nonempty(a)?;
    check_bins(bins)?;
    let s = sorted(a);
    let (lo, hi) = (quantile_sorted(&s, 0.001), quantile_sorted(&s, 0.999));
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    let h = histogram(&s, bins, lo, hi);
    let width = (hi - lo) / bins as f64;
    let edge = |k: usize| match k {
        0 => f64::NEG_INFINITY,
        k if k == bins => f64::INFINITY,
        k => lo + k as f64 * width,
    };
    let value = 0.5 * (0..bins).map(|k| (h[k] - (norm_cdf(edge(k + 1)) - norm_cdf(edge(k)))).abs()).sum::<f64>();
    Ok(DistanceReport {
        metric: Metric::TvVsDensity,
        value: value.min(1.0),
        n_a: s.len(),
        n_b: 0,
        bins: Some(bins),
        notes: "reference=N(0,1)".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `ln y = intercept + slope · ln x`.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<LogLogFit> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientPoints { need: 3, got: pairs.len() });
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositivePoint(x, y));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParams("log-log fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LogLogFit { slope, intercept, r2 })
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical_value(alpha: f64, n_a: usize, n_b: usize) -> f64 {
    let (a, b) = (n_a as f64, n_b as f64);
    (-(alpha / 2.0).ln() / 2.0).sqrt() * ((a + b) / (a * b)).sqrt()
}
