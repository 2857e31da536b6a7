//! Chain initialization, post-processing, and replicate summarization:
//! deterministic K-means-style initialization with data-dependent
//! hyperparameters, burn-in/thinning, order-constrained relabeling,
//! KDE posterior modes, shortest credible intervals, and the
//! percentile/coverage rows of the study tables.

use crate::error::{Error, Result};
use crate::mixture::MixtureParams;
use crate::sampler::{ChainDraws, Hyperparams};

/// Type-7 quantile (linear interpolation between order statistics) of
/// an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let pos = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Deterministic one-pass K-means initialization: centers at the
/// (j + 1/2)/J quantiles, one nearest-center assignment, one centroid
/// update. Returns the labels and the data-dependent hyperparameters
/// kappa_j = cluster mean, tau_j = 2.6 / cluster range squared (global
/// range when a cluster has fewer than two points), nu = 1.28,
/// beta = 0.36 * sample variance, gamma_j = 1.
pub fn kmeans_init(y: &[f64], j_count: usize) -> Result<(Vec<usize>, Hyperparams)> {
    if j_count == 0 {
        return Err(Error::InvalidParam("need at least one component".into()));
    }
    let mut distinct = y.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < j_count {
        return Err(Error::InvalidParam(format!(
            "need at least {j_count} distinct values, got {}",
            distinct.len()
        )));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let centers: Vec<f64> =
        (0..j_count).map(|j| quantile_type7(&sorted, (j as f64 + 0.5) / j_count as f64)).collect();
    let labels: Vec<usize> = y
        .iter()
        .map(|&x| {
            let mut best = 0;
            for j in 1..j_count {
                if (x - centers[j]).abs() < (x - centers[best]).abs() {
                    best = j;
                }
            }
            best
        })
        .collect();

    let global_range = sorted[sorted.len() - 1] - sorted[0];
    let mut kappa = vec![0.0; j_count];
    let mut tau = vec![0.0; j_count];
    for j in 0..j_count {
        let sel: Vec<f64> = y
            .iter()
            .zip(&labels)
            .filter_map(|(&x, &l)| (l == j).then_some(x))
            .collect();
        if sel.is_empty() {
            kappa[j] = centers[j];
        } else {
            kappa[j] = sel.iter().sum::<f64>() / sel.len() as f64;
        }
        let range = if sel.len() >= 2 {
            let mx = sel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mn = sel.iter().cloned().fold(f64::INFINITY, f64::min);
            mx - mn
        } else {
            0.0
        };
        let r = if range > 0.0 { range } else { global_range };
        if r <= 0.0 {
            return Err(Error::InvalidParam("data has zero range".into()));
        }
        tau[j] = 2.6 / (r * r);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
    let hyper = Hyperparams::new_hom(kappa, tau, vec![1.0; j_count], 1.28, 0.36 * var)?;
    Ok((labels, hyper))
}

/// Starting parameters from the initialization: weights proportional to
/// cluster counts (floored at 1/2 so empty clusters stay alive), means
/// at kappa, variance(s) at the sample variance.
pub fn initial_params(
    y: &[f64],
    labels: &[usize],
    hyper: &Hyperparams,
    homoscedastic: bool,
) -> Result<MixtureParams> {
    let j_count = hyper.j_count();
    let mut counts = vec![0.0f64; j_count];
    for &l in labels {
        counts[l] += 1.0;
    }
    let floored: Vec<f64> = counts.iter().map(|&c| c.max(0.5)).collect();
    let total: f64 = floored.iter().sum();
    let weights: Vec<f64> = floored.iter().map(|c| c / total).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
    if homoscedastic {
        MixtureParams::new_hom(weights, hyper.kappa.clone(), var)
    } else {
        MixtureParams::new_het(weights, hyper.kappa.clone(), vec![var; j_count])
    }
}

/// Drop the first `burn` states and keep every `thin`-th of the rest
/// (indices burn, burn + thin, ...).
pub fn burn_thin(draws: &ChainDraws, burn: usize, thin: usize) -> Result<ChainDraws> {
    if thin == 0 {
        return Err(Error::InvalidParam("thinning step must be positive".into()));
    }
    if burn >= draws.rows.len() {
        return Err(Error::InvalidParam(format!(
            "burn-in {burn} not below chain length {}",
            draws.rows.len()
        )));
    }
    let rows: Vec<Vec<f64>> = draws.rows[burn..].iter().step_by(thin).cloned().collect();
    Ok(ChainDraws { rows, j_count: draws.j_count, homoscedastic: draws.homoscedastic })
}

/// Impose the increasing-means ordering within every draw, permuting
/// weights (and per-component variances) consistently. Ties keep the
/// original component order.
pub fn relabel_ordered(draws: &ChainDraws) -> ChainDraws {
    let j = draws.j_count;
    let rows = draws
        .rows
        .iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..j).collect();
            order.sort_by(|&a, &b| row[j + a].total_cmp(&row[j + b]));
            let mut out = Vec::with_capacity(row.len());
            out.extend(order.iter().map(|&k| row[k]));
            out.extend(order.iter().map(|&k| row[j + k]));
            if draws.homoscedastic {
                out.push(row[2 * j]);
            } else {
                out.extend(order.iter().map(|&k| row[2 * j + k]));
            }
            out
        })
        .collect();
    ChainDraws { rows, j_count: j, homoscedastic: draws.homoscedastic }
}

/// Which scalar series to extract from relabeled draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimand {
    /// Mixing weight of component j (0-based).
    Weight(usize),
    /// Mean of component j.
    Mean(usize),
    /// Standard deviation of component j (square root of the variance
    /// draws; for a shared variance any index maps to the single column).
    Sigma(usize),
}

/// Extract one scalar series from the draws.
pub fn series(draws: &ChainDraws, which: Estimand) -> Vec<f64> {
    let j = draws.j_count;
    match which {
        Estimand::Weight(k) => draws.rows.iter().map(|r| r[k]).collect(),
        Estimand::Mean(k) => draws.rows.iter().map(|r| r[j + k]).collect(),
        Estimand::Sigma(k) => {
            let col = if draws.homoscedastic { 2 * j } else { 2 * j + k };
            draws.rows.iter().map(|r| r[col].sqrt()).collect()
        }
    }
}

/// Posterior mode via a Gaussian kernel density estimate evaluated at
/// the sample points, with the Silverman bandwidth
/// 0.9 * min(sd, IQR/1.34) * n^(-1/5). A constant sample returns the
/// constant.
pub fn posterior_mode(xs: &[f64]) -> f64 {
    let n = xs.len();
    debug_assert!(n > 0);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if n == 1 || sorted[n - 1] == sorted[0] {
        return xs[0];
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bw = 0.9 * spread * (n as f64).powf(-0.2);
    if bw <= 0.0 {
        return xs[0];
    }
    let mut best = (f64::NEG_INFINITY, xs[0]);
    for &c in xs {
        let dens: f64 = xs.iter().map(|&x| (-0.5 * ((x - c) / bw).powi(2)).exp()).sum();
        if dens > best.0 {
            best = (dens, c);
        }
    }
    best.1
}

/// Shortest interval holding at least `level` posterior mass: the
/// minimal-width window of ceil(level * n) consecutive sorted draws.
pub fn shortest_credible_interval(xs: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParam(format!("level {level} outside (0, 1)")));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParam("need at least two draws".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..=(n - m) {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best.0 {
            best = (width, i);
        }
    }
    Ok((sorted[best.1], sorted[best.1 + m - 1]))
}

/// Point estimate and credible interval of one estimand in one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mode: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Posterior mode and shortest credible interval of a series.
pub fn summarize_series(xs: &[f64], level: f64) -> Result<PosteriorSummary> {
    let (ci_low, ci_high) = shortest_credible_interval(xs, level)?;
    Ok(PosteriorSummary { mode: posterior_mode(xs), ci_low, ci_high, level })
}

/// One row of a study table: squared-error percentiles (10th, 50th,
/// 90th), credible-interval-width percentiles (2.5th, 50th, 97.5th),
/// and the coverage rate, over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySummaryRow {
    pub estimand: String,
    pub se_l: f64,
    pub se_m: f64,
    pub se_u: f64,
    pub ci_l: f64,
    pub ci_m: f64,
    pub ci_u: f64,
    pub coverage: f64,
}

/// Summarize one estimand across replicates against its true value.
pub fn summarize_estimand(
    name: &str,
    replicates: &[PosteriorSummary],
    truth: f64,
) -> Result<StudySummaryRow> {
    if replicates.len() < 2 {
        return Err(Error::InvalidParam("need at least two replicates".into()));
    }
    let mut se: Vec<f64> = replicates.iter().map(|r| (r.mode - truth).powi(2)).collect();
    se.sort_by(f64::total_cmp);
    let mut widths: Vec<f64> = replicates.iter().map(|r| r.ci_high - r.ci_low).collect();
    widths.sort_by(f64::total_cmp);
    let covered = replicates
        .iter()
        .filter(|r| r.ci_low <= truth && truth <= r.ci_high)
        .count();
    Ok(StudySummaryRow {
        estimand: name.to_string(),
        se_l: quantile_type7(&se, 0.10),
        se_m: quantile_type7(&se, 0.50),
        se_u: quantile_type7(&se, 0.90),
        ci_l: quantile_type7(&widths, 0.025),
        ci_m: quantile_type7(&widths, 0.50),
        ci_u: quantile_type7(&widths, 0.975),
        coverage: covered as f64 / replicates.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draws_from(rows: Vec<Vec<f64>>, j: usize, hom: bool) -> ChainDraws {
        ChainDraws { rows, j_count: j, homoscedastic: hom }
    }

    #[test]
    fn quantile_type7_textbook_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 9.0, 12.0, 20.0];
        assert_eq!(quantile_type7(&x, 0.25), 3.0);
        assert_eq!(quantile_type7(&x, 0.5), 6.0);
        assert_eq!(quantile_type7(&x, 0.75), 9.0);
        assert_abs_diff_eq!(quantile_type7(&x, 0.9), 13.6, epsilon = 1e-12);
        assert_eq!(quantile_type7(&x, 0.0), 1.0);
        assert_eq!(quantile_type7(&x, 1.0), 20.0);
    }

    #[test]
    fn kmeans_two_clumps() {
        let y = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
        let (labels, hyper) = kmeans_init(&y, 2).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
        assert_abs_diff_eq!(hyper.kappa[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(hyper.kappa[1], 5.1, epsilon = 1e-12);
        assert_abs_diff_eq!(hyper.tau[0], 2.6 / (0.2f64 * 0.2), epsilon = 1e-9);
        assert_eq!(hyper.gamma, vec![1.0, 1.0]);
        assert_eq!(hyper.nu(0), 1.28);
    }

    #[test]
    fn kmeans_single_component_formulas() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let (labels, hyper) = kmeans_init(&y, 1).unwrap();
        assert_eq!(labels, vec![0; 4]);
        assert_abs_diff_eq!(hyper.kappa[0], 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(hyper.tau[0], 2.6 / 36.0, epsilon = 1e-12);
        // Sample variance with denominator n-1: 7, beta = 0.36 * 7.
        assert_abs_diff_eq!(hyper.beta(0), 0.36 * 7.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_permutation_invariant_hyper() {
        let y1 = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
        let y2 = [5.2, 0.2, 5.0, 0.1, 5.1, 0.0];
        let (_, h1) = kmeans_init(&y1, 2).unwrap();
        let (_, h2) = kmeans_init(&y2, 2).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(h1.kappa[j], h2.kappa[j], epsilon = 1e-12);
            assert_abs_diff_eq!(h1.tau[j], h2.tau[j], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(h1.beta(0), h2.beta(0), epsilon = 1e-12);
    }

    #[test]
    fn kmeans_rejects_too_few_distinct() {
        assert!(kmeans_init(&[1.0, 1.0, 1.0], 2).is_err());
        assert!(kmeans_init(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn kmeans_singleton_cluster_uses_global_range() {
        // One point far right forms its own cluster: tau falls back to
        // the global range.
        let y = [0.0, 0.1, 0.2, 9.0];
        let (labels, hyper) = kmeans_init(&y, 2).unwrap();
        assert_eq!(labels[3], 1);
        assert_abs_diff_eq!(hyper.tau[1], 2.6 / 81.0, epsilon = 1e-12);
    }

    #[test]
    fn initial_params_counts_and_floor() {
        let y = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
        let (labels, hyper) = kmeans_init(&y, 2).unwrap();
        let p = initial_params(&y, &labels, &hyper, true).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 0.5, epsilon = 1e-12);
        assert_eq!(p.means(), hyper.kappa.as_slice());
        // Empty-cluster floor: labels all zero.
        let p2 = initial_params(&y, &[0; 6], &hyper, true).unwrap();
        assert_abs_diff_eq!(p2.weights()[1], 0.5 / 6.5, epsilon = 1e-12);
    }

    #[test]
    fn burn_thin_keeps_documented_indices() {
        // Encode the iteration index in the first column.
        let rows: Vec<Vec<f64>> = (0..15_000).map(|t| vec![t as f64, 0.0, 0.0]).collect();
        let d = draws_from(rows, 1, true);
        let kept = burn_thin(&d, 5000, 5).unwrap();
        assert_eq!(kept.rows.len(), 2000);
        assert_eq!(kept.rows[0][0], 5000.0);
        assert_eq!(kept.rows[1][0], 5005.0);
        assert_eq!(kept.rows[1999][0], 14995.0);
    }

    #[test]
    fn burn_thin_identity_and_errors() {
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64, 0.0, 0.0]).collect();
        let d = draws_from(rows.clone(), 1, true);
        let kept = burn_thin(&d, 0, 1).unwrap();
        assert_eq!(kept.rows, rows);
        assert!(burn_thin(&d, 10, 1).is_err());
        assert!(burn_thin(&d, 2, 0).is_err());
    }

    #[test]
    fn relabel_swaps_all_blocks() {
        let d = draws_from(vec![vec![0.3, 0.7, 5.0, 0.0, 1.0, 2.0]], 2, false);
        let out = relabel_ordered(&d);
        assert_eq!(out.rows[0], vec![0.7, 0.3, 0.0, 5.0, 2.0, 1.0]);
        // Shared variance stays in place.
        let dh = draws_from(vec![vec![0.3, 0.7, 5.0, 0.0, 1.7]], 2, true);
        assert_eq!(relabel_ordered(&dh).rows[0], vec![0.7, 0.3, 0.0, 5.0, 1.7]);
    }

    #[test]
    fn relabel_idempotent_and_multiset_preserving() {
        let d = draws_from(
            vec![vec![0.2, 0.5, 0.3, 4.0, -1.0, 9.0, 1.0, 2.0, 3.0]],
            3,
            false,
        );
        let once = relabel_ordered(&d);
        let twice = relabel_ordered(&once);
        assert_eq!(once.rows, twice.rows);
        // The component triples survive as a set.
        let triple = |r: &Vec<f64>, k: usize| (r[k], r[3 + k], r[6 + k]);
        let mut orig: Vec<_> = (0..3).map(|k| triple(&d.rows[0], k)).collect();
        let mut post: Vec<_> = (0..3).map(|k| triple(&once.rows[0], k)).collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        post.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(orig, post);
        // Means are ascending after relabeling.
        assert!(once.rows[0][3] <= once.rows[0][4] && once.rows[0][4] <= once.rows[0][5]);
    }

    #[test]
    fn relabel_ordered_draw_unchanged() {
        let d = draws_from(vec![vec![0.6, 0.4, -1.0, 2.0, 1.5]], 2, true);
        assert_eq!(relabel_ordered(&d).rows, d.rows);
    }

    #[test]
    fn series_extracts_sigma_as_sqrt() {
        let d = draws_from(vec![vec![0.6, 0.4, -1.0, 2.0, 4.0]], 2, true);
        assert_eq!(series(&d, Estimand::Weight(1)), vec![0.4]);
        assert_eq!(series(&d, Estimand::Mean(0)), vec![-1.0]);
        assert_eq!(series(&d, Estimand::Sigma(0)), vec![2.0]);
        let dh = draws_from(vec![vec![0.6, 0.4, -1.0, 2.0, 4.0, 9.0]], 2, false);
        assert_eq!(series(&dh, Estimand::Sigma(1)), vec![3.0]);
    }

    #[test]
    fn mode_constant_chain() {
        assert_eq!(posterior_mode(&[2.5; 40]), 2.5);
        assert_eq!(posterior_mode(&[1.25]), 1.25);
    }

    #[test]
    fn mode_of_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let xs: Vec<f64> =
            (0..100_000).map(|_| crate::draws::normal(&mut rng, 3.0, 1.0).unwrap()).collect();
        assert_abs_diff_eq!(posterior_mode(&xs[..20_000]), 3.0, epsilon = 0.1);
    }

    #[test]
    fn mode_picks_higher_peak_of_bimodal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut xs = Vec::with_capacity(5000);
        for i in 0..5000 {
            if i % 5 == 0 {
                xs.push(crate::draws::normal(&mut rng, 5.0, 0.01).unwrap());
            } else {
                xs.push(crate::draws::normal(&mut rng, 0.0, 0.01).unwrap());
            }
        }
        assert!(posterior_mode(&xs).abs() < 0.5);
    }

    #[test]
    fn shortest_ci_on_uniform_grid() {
        let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let (lo, hi) = shortest_credible_interval(&xs, 0.95).unwrap();
        assert_abs_diff_eq!(hi - lo, 0.95, epsilon = 1e-3 + 1e-12);
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn shortest_ci_constant_chain() {
        let (lo, hi) = shortest_credible_interval(&[4.2; 50], 0.95).unwrap();
        assert_eq!(lo, 4.2);
        assert_eq!(hi, 4.2);
    }

    #[test]
    fn shortest_ci_normal_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let xs: Vec<f64> =
            (0..100_000).map(|_| crate::draws::normal(&mut rng, 0.0, 1.0).unwrap()).collect();
        let (lo, hi) = shortest_credible_interval(&xs, 0.95).unwrap();
        assert_abs_diff_eq!(hi - lo, 3.92, epsilon = 0.05);
    }

    #[test]
    fn shortest_ci_never_wider_than_equal_tailed() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..500)
                .map(|_| crate::draws::inverse_gamma(&mut rng, 3.0, 2.0).unwrap())
                .collect();
            let (lo, hi) = shortest_credible_interval(&xs, 0.95).unwrap();
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let eq_width =
                quantile_type7(&sorted, 0.975) - quantile_type7(&sorted, 0.025);
            assert!(hi - lo <= eq_width + 1e-12);
        }
    }

    #[test]
    fn shortest_ci_rejects_bad_level() {
        assert!(shortest_credible_interval(&[1.0, 2.0], 0.0).is_err());
        assert!(shortest_credible_interval(&[1.0, 2.0], 1.0).is_err());
        assert!(shortest_credible_interval(&[1.0], 0.95).is_err());
    }

    #[test]
    fn summarize_five_replicate_toy() {
        // Hand-computed type-7 percentiles of the squared errors and
        // interval widths, and 3-of-5 coverage of truth = 1.
        let reps = [
            PosteriorSummary { mode: 1.1, ci_low: 0.9, ci_high: 1.4, level: 0.95 },
            PosteriorSummary { mode: 0.9, ci_low: 0.5, ci_high: 0.9, level: 0.95 },
            PosteriorSummary { mode: 1.3, ci_low: 1.2, ci_high: 1.8, level: 0.95 },
            PosteriorSummary { mode: 1.0, ci_low: 0.7, ci_high: 1.15, level: 0.95 },
            PosteriorSummary { mode: 0.8, ci_low: 0.55, ci_high: 1.1, level: 0.95 },
        ];
        let row = summarize_estimand("mu1", &reps, 1.0).unwrap();
        assert_abs_diff_eq!(row.se_l, 0.004, epsilon = 1e-12);
        assert_abs_diff_eq!(row.se_m, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(row.se_u, 0.07, epsilon = 1e-12);
        assert_abs_diff_eq!(row.ci_l, 0.405, epsilon = 1e-12);
        assert_abs_diff_eq!(row.ci_m, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(row.ci_u, 0.595, epsilon = 1e-12);
        assert_abs_diff_eq!(row.coverage, 0.6, epsilon = 1e-12);
        assert!(row.se_l <= row.se_m && row.se_m <= row.se_u);
        assert!(row.ci_l <= row.ci_m && row.ci_m <= row.ci_u);
    }

    #[test]
    fn summarize_exact_replicates() {
        let reps = [
            PosteriorSummary { mode: 2.0, ci_low: 1.5, ci_high: 2.5, level: 0.95 },
            PosteriorSummary { mode: 2.0, ci_low: 1.8, ci_high: 2.2, level: 0.95 },
        ];
        let row = summarize_estimand("pi1", &reps, 2.0).unwrap();
        assert_eq!((row.se_l, row.se_m, row.se_u), (0.0, 0.0, 0.0));
        assert_eq!(row.coverage, 1.0);
    }

    #[test]
    fn summarize_permutation_invariant() {
        let a = PosteriorSummary { mode: 1.1, ci_low: 0.9, ci_high: 1.4, level: 0.95 };
        let b = PosteriorSummary { mode: 0.7, ci_low: 0.5, ci_high: 0.9, level: 0.95 };
        let c = PosteriorSummary { mode: 1.4, ci_low: 1.2, ci_high: 1.8, level: 0.95 };
        let r1 = summarize_estimand("x", &[a, b, c], 1.0).unwrap();
        let r2 = summarize_estimand("x", &[c, a, b], 1.0).unwrap();
        assert_eq!(r1, r2);
    }
}
