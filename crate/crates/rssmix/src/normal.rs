//! Scalar normal density, log-density, CDF and survival function.
//!
//! The CDF is computed through `erfc` so that both tails retain full
//! relative accuracy; acceptance-ratio and rank-weight computations are
//! sensitive to CDF values extremely close to 0 or 1.

use std::f64::consts::PI;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Normal density at `x` with mean `mu` and variance `var`.
pub fn pdf(x: f64, mu: f64, var: f64) -> f64 {
    log_pdf(x, mu, var).exp()
}

/// Natural log of the normal density.
pub fn log_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * (var * 2.0 * PI).ln() - d * d / (2.0 * var)
}

/// P(X <= x) for X ~ N(mu, var).
pub fn cdf(x: f64, mu: f64, var: f64) -> f64 {
    let z = (x - mu) / var.sqrt();
    0.5 * libm::erfc(-z / SQRT_2)
}

/// P(X > x) for X ~ N(mu, var); more accurate than `1 - cdf` in the
/// upper tail.
pub fn survival(x: f64, mu: f64, var: f64) -> f64 {
    let z = (x - mu) / var.sqrt();
    0.5 * libm::erfc(z / SQRT_2)
}
