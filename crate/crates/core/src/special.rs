//! Scalar special functions shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Inverse of the standard normal distribution function.
pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// `q!` as a float. Exact for the orders used here.
pub fn factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Multiplication-theorem coefficient `q! / (l! (q-2l)! 2^l)`.
pub fn mult_coeff(q: usize, l: usize) -> f64 {
    if 2 * l > q {
        return 0.0;
    }
    factorial(q) / (factorial(l) * factorial(q - 2 * l) * 2f64.powi(l as i32))
}

/// `e^{-x} - 1 + x`, with a short series where the closed form cancels.
pub fn tempered_factor(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        x * x / 2.0 - x * x * x / 6.0 + x.powi(4) / 24.0
    } else {
        (-x).exp_m1() + x
    }
}
