//! Random draws used by the samplers: categorical, multinomial,
//! Dirichlet, normal and inverse-gamma, all taking an explicit RNG so
//! every sequence is reproducible from its stream.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidParam("empty probability vector".into()));
    }
    if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidParam("negative or non-finite probability".into()));
    }
    if probs.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParam("probability vector sums to zero".into()));
    }
    Ok(())
}

/// Draw an index with probability proportional to `probs` (need not be
/// normalized).
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> Result<usize> {
    check_probs(probs)?;
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding can push u past the last partial sum; return the last
    // positive-probability index.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap())
}

/// Draw an index from unnormalized log-weights (max-subtracted).
pub fn categorical_from_log<R: Rng + ?Sized>(rng: &mut R, log_w: &[f64]) -> Result<usize> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::InvalidParam("all log-weights are -inf or NaN".into()));
    }
    let probs: Vec<f64> = log_w.iter().map(|&lw| (lw - m).exp()).collect();
    categorical(rng, &probs)
}

/// Counts of `m` independent categorical trials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, m: usize, probs: &[f64]) -> Result<Vec<u32>> {
    check_probs(probs)?;
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..m {
        counts[categorical(rng, probs)?] += 1;
    }
    Ok(counts)
}

/// Dirichlet draw via normalized Gamma(concentration, 1) variates.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, conc: &[f64]) -> Result<Vec<f64>> {
    if conc.is_empty() || conc.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParam("Dirichlet concentrations must be positive".into()));
    }
    let mut g: Vec<f64> = conc
        .iter()
        .map(|&a| {
            let d = Gamma::new(a, 1.0).expect("positive shape");
            // Guard against a zero from underflow at very small shapes.
            d.sample(rng).max(1e-300)
        })
        .collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    Ok(g)
}

/// Normal draw with mean `mu` and variance `var`.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::InvalidParam(format!("normal variance {var} must be positive")));
    }
    Ok(Normal::new(mu, var.sqrt())
        .map_err(|e| Error::InvalidParam(e.to_string()))?
        .sample(rng))
}

/// Inverse-gamma draw parameterized by (shape, rate), i.e. the
/// distribution of rate / Gamma(shape, 1); mean = rate / (shape - 1)
/// for shape > 1.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidParam(format!(
            "inverse-gamma shape {shape} and rate {rate} must be positive"
        )));
    }
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng).max(1e-300);
    Ok(rate / g)
}

/// Log-density of the inverse-gamma (shape, rate) distribution at `x`.
pub fn inverse_gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Unnormalized inverse-gamma log-density: the x-dependent terms only.
pub fn inverse_gamma_log_kernel(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -(shape + 1.0) * x.ln() - rate / x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_invalid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(categorical(&mut rng, &[]).is_err());
        assert!(categorical(&mut rng, &[0.2, -0.1]).is_err());
        assert!(categorical(&mut rng, &[0.0, 0.0]).is_err());
        assert!(dirichlet(&mut rng, &[1.0, 0.0]).is_err());
        assert!(inverse_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(inverse_gamma(&mut rng, 1.0, -1.0).is_err());
        assert!(normal(&mut rng, 0.0, 0.0).is_err());
    }

    #[test]
    fn multinomial_zero_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(multinomial(&mut rng, 0, &[0.3, 0.7]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn multinomial_counts_sum_to_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = multinomial(&mut rng, 17, &[0.1, 0.4, 0.5]).unwrap();
        assert_eq!(c.iter().sum::<u32>(), 17);
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = [0.2, 0.5, 0.3];
        let mut counts = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[categorical(&mut rng, &p).unwrap()] += 1.0;
        }
        for j in 0..3 {
            assert_abs_diff_eq!(counts[j] / n as f64, p[j], epsilon = 0.01);
        }
    }

    #[test]
    fn categorical_from_log_matches_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Shifted log-weights that would underflow in linear space.
        let lw = [-800.0, -800.5, -799.2];
        let mut counts = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[categorical_from_log(&mut rng, &lw).unwrap()] += 1.0;
        }
        let w: Vec<f64> = lw.iter().map(|&l| (l + 800.0).exp()).collect();
        let total: f64 = w.iter().sum();
        for j in 0..3 {
            assert_abs_diff_eq!(counts[j] / n as f64, w[j] / total, epsilon = 0.01);
        }
    }

    #[test]
    fn dirichlet_uniform_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mean = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            let d = dirichlet(&mut rng, &[1.0, 1.0, 1.0]).unwrap();
            for j in 0..3 {
                mean[j] += d[j];
            }
        }
        for m in mean {
            assert_abs_diff_eq!(m / n as f64, 1.0 / 3.0, epsilon = 0.01);
        }
    }

    #[test]
    fn inverse_gamma_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (5.0, 4.0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| inverse_gamma(&mut rng, a, b).unwrap()).sum::<f64>() / n as f64;
        // Mean b/(a-1) = 1.0, checked within 2%.
        assert_abs_diff_eq!(mean, b / (a - 1.0), epsilon = 0.02);
    }

    #[test]
    fn inverse_gamma_log_pdf_normalizes() {
        // Integrate the density over a wide window.
        let (a, b) = (3.0, 2.0);
        let total = crate::mixture::simpson(
            |x| inverse_gamma_log_pdf(x, a, b).exp(),
            1e-9,
            200.0,
            200_000,
        );
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn fixed_seed_bit_identical() {
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = categorical(&mut rng, &[0.3, 0.7]).unwrap();
            let b = dirichlet(&mut rng, &[2.0, 1.0]).unwrap();
            let c = inverse_gamma(&mut rng, 2.0, 3.0).unwrap();
            let d = normal(&mut rng, 0.0, 1.0).unwrap();
            (a, b, c, d)
        };
        assert_eq!(draw(42), draw(42));
    }
}
