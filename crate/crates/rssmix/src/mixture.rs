//! Finite normal-mixture parameters and the densities built on them,
//! including the order-statistic density used by ranked-set sampling.

use crate::error::{Error, Result};
use crate::normal;

/// Parameters of a finite normal mixture: weights, means and either one
/// variance per component or a single shared variance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    /// Length J (heteroscedastic) or length 1 (shared variance).
    variances: Vec<f64>,
    homoscedastic: bool,
}

impl MixtureParams {
    /// Mixture with a separate variance per component.
    pub fn new_het(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let p = Self { weights, means, variances, homoscedastic: false };
        p.validate()?;
        Ok(p)
    }

    /// Mixture with one shared variance.
    pub fn new_hom(weights: Vec<f64>, means: Vec<f64>, variance: f64) -> Result<Self> {
        let p = Self { weights, means, variances: vec![variance], homoscedastic: true };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let j = self.weights.len();
        if j == 0 {
            return Err(Error::InvalidParam("mixture needs at least one component".into()));
        }
        if self.means.len() != j {
            return Err(Error::InvalidParam(format!(
                "{} weights but {} means",
                j,
                self.means.len()
            )));
        }
        let expect_vars = if self.homoscedastic { 1 } else { j };
        if self.variances.len() != expect_vars {
            return Err(Error::InvalidParam(format!(
                "expected {} variance entries, got {}",
                expect_vars,
                self.variances.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam("weights must be strictly positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("weights sum to {sum}, not 1")));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParam("means must be finite".into()));
        }
        if self.variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam("variances must be strictly positive".into()));
        }
        Ok(())
    }

    /// Number of components J.
    pub fn j_count(&self) -> usize {
        self.weights.len()
    }

    pub fn is_homoscedastic(&self) -> bool {
        self.homoscedastic
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Variance of component `j` (0-based).
    pub fn var(&self, j: usize) -> f64 {
        if self.homoscedastic {
            self.variances[0]
        } else {
            self.variances[j]
        }
    }

    /// Raw variance storage (length J, or 1 when shared).
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        (0..self.j_count())
            .map(|j| self.weights[j] * normal::pdf(x, self.means[j], self.var(j)))
            .sum()
    }

    /// Natural log of the mixture density, stable in the far tails.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.j_count())
            .map(|j| self.weights[j].ln() + normal::log_pdf(x, self.means[j], self.var(j)))
            .collect();
        log_sum_exp(&terms)
    }

    /// Mixture CDF at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        (0..self.j_count())
            .map(|j| self.weights[j] * normal::cdf(x, self.means[j], self.var(j)))
            .sum()
    }

    /// Mixture survival function P(X > x); keeps relative accuracy in the
    /// upper tail where `1 - cdf` would cancel.
    pub fn survival(&self, x: f64) -> f64 {
        (0..self.j_count())
            .map(|j| self.weights[j] * normal::survival(x, self.means[j], self.var(j)))
            .sum()
    }

    /// Inverse CDF by bracketed bisection; accurate to ~1e-13 in x.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::InvalidParam(format!("quantile level {p} outside [0, 1]")));
        }
        let max_sd = (0..self.j_count()).map(|j| self.var(j).sqrt()).fold(0.0, f64::max);
        let mut lo = self.means.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * max_sd;
        let mut hi = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * max_sd;
        // Expand until the bracket certainly contains the quantile.
        while self.cdf(lo) > p {
            lo -= 10.0 * max_sd;
        }
        while self.cdf(hi) < p {
            hi += 10.0 * max_sd;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Overall mixture standard deviation sqrt(Var(X)).
    pub fn overall_sd(&self) -> f64 {
        let mean: f64 = (0..self.j_count()).map(|j| self.weights[j] * self.means[j]).sum();
        let second: f64 = (0..self.j_count())
            .map(|j| self.weights[j] * (self.var(j) + self.means[j] * self.means[j]))
            .sum();
        (second - mean * mean).sqrt()
    }
}

/// log(sum(exp(v))) with max subtraction; -inf inputs are handled.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// ln of the Beta(h, H-h+1) normalization constant for integer ranks:
/// ln B(h, H-h+1) = ln((h-1)! (H-h)! / H!).
fn ln_beta_rank(h: usize, hh: usize) -> f64 {
    ln_factorial(h - 1) + ln_factorial(hh - h) - ln_factorial(hh)
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn check_rank(h: usize, hh: usize) -> Result<()> {
    if h < 1 || h > hh {
        return Err(Error::InvalidParam(format!("rank {h} outside [1, {hh}]")));
    }
    Ok(())
}

/// Density of the h-th order statistic of H iid mixture draws:
/// f^(h:H)(x) = f(x) * Beta_{h, H-h+1} pdf at F(x).
pub fn order_stat_pdf(x: f64, h: usize, hh: usize, params: &MixtureParams) -> Result<f64> {
    Ok(order_stat_log_pdf(x, h, hh, params)?.exp())
}

/// Log-space version of [`order_stat_pdf`].
pub fn order_stat_log_pdf(x: f64, h: usize, hh: usize, params: &MixtureParams) -> Result<f64> {
    check_rank(h, hh)?;
    Ok(params.log_pdf(x) + beta_log_pdf_at_cdf(x, h, hh, params)?)
}

/// Beta(h, H-h+1) density evaluated at the mixture CDF of `x`.
pub fn beta_pdf_at_cdf(x: f64, h: usize, hh: usize, params: &MixtureParams) -> Result<f64> {
    Ok(beta_log_pdf_at_cdf(x, h, hh, params)?.exp())
}

/// Log of [`beta_pdf_at_cdf`]; the zero-exponent terms are skipped so the
/// extreme cases F(x) = 0 with h = 1 (and F(x) = 1 with h = H) stay finite.
pub fn beta_log_pdf_at_cdf(x: f64, h: usize, hh: usize, params: &MixtureParams) -> Result<f64> {
    check_rank(h, hh)?;
    let f = params.cdf(x);
    let s = params.survival(x);
    let mut lp = -ln_beta_rank(h, hh);
    if h > 1 {
        lp += (h as f64 - 1.0) * f.ln();
    }
    if h < hh {
        lp += (hh - h) as f64 * s.ln();
    }
    Ok(lp)
}

/// Simpson-rule integral of `f` over `[a, b]` with `n` panels (n even).
/// Used by normalization tests; exposed for the test suites of dependent
/// crates.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let dx = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * dx);
    }
    acc * dx / 3.0
}

/// Integration window covering effectively all mixture mass:
/// [min mean - 10 max sd, max mean + 10 max sd].
pub fn integration_window(params: &MixtureParams) -> (f64, f64) {
    let max_sd = (0..params.j_count()).map(|j| params.var(j).sqrt()).fold(0.0, f64::max);
    let lo = params.means().iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * max_sd;
    let hi = params.means().iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * max_sd;
    (lo, hi)
}
