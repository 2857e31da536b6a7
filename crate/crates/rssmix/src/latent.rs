//! Latent-variable augmentation for the RSS likelihood: the true-stratum
//! indicator delta, the component label z of the measured unit, and the
//! component counts l (units below) and u (units above) within the set.

use crate::design::MisplacementMatrix;
use crate::draws;
use crate::error::{Error, Result};
use crate::mixture::{self, MixtureParams};
use crate::normal;

/// Latent draw for one observation (cycle i, judgment rank r).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsLatent {
    /// True stratum h (1-based): the measured unit is the h-th order
    /// statistic of its set.
    pub h: usize,
    /// Component label of the measured unit (0-based).
    pub z: usize,
    /// Component counts of the h-1 set units below the measured one.
    pub l: Vec<u32>,
    /// Component counts of the H-h set units above the measured one.
    pub u: Vec<u32>,
}

impl ObsLatent {
    /// Check the sum constraints against a set size.
    pub fn validate(&self, set_size: usize, j_count: usize) -> Result<()> {
        if self.h < 1 || self.h > set_size {
            return Err(Error::InvalidParam(format!(
                "stratum {} outside [1, {set_size}]",
                self.h
            )));
        }
        if self.z >= j_count || self.l.len() != j_count || self.u.len() != j_count {
            return Err(Error::InvalidParam("component dimensions mismatch".into()));
        }
        let l_total: u32 = self.l.iter().sum();
        let u_total: u32 = self.u.iter().sum();
        if l_total as usize != self.h - 1 {
            return Err(Error::InvalidParam(format!(
                "l counts sum to {l_total}, expected {}",
                self.h - 1
            )));
        }
        if u_total as usize != set_size - self.h {
            return Err(Error::InvalidParam(format!(
                "u counts sum to {u_total}, expected {}",
                set_size - self.h
            )));
        }
        Ok(())
    }
}

/// Log order-statistic density factor ln Beta_{h,H-h+1}(F(x)) for every
/// true stratum h = 1..H. The factors depend on the parameters and the
/// observation only — not on the misplacement matrix — so callers that
/// evaluate many matrices against fixed parameters (the EM loop) compute
/// them once per observation. Zero-exponent tail terms are skipped
/// inside the Beta factor, so extreme x stay finite for the matching
/// boundary rank.
pub fn stratum_log_factors(
    x: f64,
    set_size: usize,
    params: &MixtureParams,
) -> Result<Vec<f64>> {
    (1..=set_size).map(|h| mixture::beta_log_pdf_at_cdf(x, h, set_size, params)).collect()
}

/// Unnormalized log weights over the true stratum h = 1..H:
/// ln alpha_{r,h} + ln Beta_{h,H-h+1}(F(x)).
fn zeta_log_unnorm(
    r: usize,
    alpha: &MisplacementMatrix,
    factors: &[f64],
) -> Result<Vec<f64>> {
    let hh = alpha.set_size();
    if r < 1 || r > hh {
        return Err(Error::InvalidParam(format!("judgment rank {r} outside [1, {hh}]")));
    }
    let mut lw = Vec::with_capacity(hh);
    for h in 1..=hh {
        let a = alpha.get(r, h);
        if a <= 0.0 {
            lw.push(f64::NEG_INFINITY);
        } else {
            lw.push(a.ln() + factors[h - 1]);
        }
    }
    Ok(lw)
}

/// Conditional probabilities of the true stratum given the judgment
/// rank: zeta_h proportional to alpha_{r,h} * Beta_{h,H-h+1} pdf at F(x).
/// The result is nonnegative and sums to 1 within 1e-12.
pub fn zeta_weights(
    x: f64,
    r: usize,
    alpha: &MisplacementMatrix,
    params: &MixtureParams,
) -> Result<Vec<f64>> {
    let factors = stratum_log_factors(x, alpha.set_size(), params)?;
    zeta_weights_from_factors(r, alpha, &factors)
}

/// As [`zeta_weights`] with the observation's stratum log factors
/// already computed by [`stratum_log_factors`].
pub fn zeta_weights_from_factors(
    r: usize,
    alpha: &MisplacementMatrix,
    factors: &[f64],
) -> Result<Vec<f64>> {
    let lw = zeta_log_unnorm(r, alpha, factors)?;
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::InvalidParam(format!(
            "judgment-rank row {r} carries no positive weight"
        )));
    }
    let mut w: Vec<f64> = lw.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Draw the true stratum h (1-based) from the zeta distribution.
pub fn sample_delta<R: rand::Rng + ?Sized>(
    x: f64,
    r: usize,
    alpha: &MisplacementMatrix,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<usize> {
    let factors = stratum_log_factors(x, alpha.set_size(), params)?;
    let lw = zeta_log_unnorm(r, alpha, &factors)?;
    Ok(draws::categorical_from_log(rng, &lw)? + 1)
}

/// Component log-weights of the measured unit: ln pi_j + ln phi_j(x).
fn z_log_weights(x: f64, params: &MixtureParams) -> Vec<f64> {
    (0..params.j_count())
        .map(|j| params.weights()[j].ln() + normal::log_pdf(x, params.means()[j], params.var(j)))
        .collect()
}

/// Draw the component label (0-based) of the measured unit, with
/// probabilities pi_j phi_j(x) / f(x).
pub fn sample_z<R: rand::Rng + ?Sized>(
    x: f64,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<usize> {
    draws::categorical_from_log(rng, &z_log_weights(x, params))
}

/// Component log-weights of one unit known to lie below x:
/// ln pi_j + ln Phi_j(x).
fn l_log_weights(x: f64, params: &MixtureParams) -> Vec<f64> {
    (0..params.j_count())
        .map(|j| {
            let c = normal::cdf(x, params.means()[j], params.var(j));
            params.weights()[j].ln() + c.ln()
        })
        .collect()
}

/// Component log-weights of one unit known to lie above x:
/// ln pi_j + ln (1 - Phi_j(x)).
fn u_log_weights(x: f64, params: &MixtureParams) -> Vec<f64> {
    (0..params.j_count())
        .map(|j| {
            let s = normal::survival(x, params.means()[j], params.var(j));
            params.weights()[j].ln() + s.ln()
        })
        .collect()
}

fn multinomial_from_log<R: rand::Rng + ?Sized>(
    rng: &mut R,
    trials: usize,
    log_w: &[f64],
) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; log_w.len()];
    for _ in 0..trials {
        counts[draws::categorical_from_log(rng, log_w)?] += 1;
    }
    Ok(counts)
}

/// Draw the component counts of the h-1 units below the measured value;
/// multinomial with weights pi_j Phi_j(x) / F(x).
pub fn sample_l<R: rand::Rng + ?Sized>(
    x: f64,
    h: usize,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if h < 1 {
        return Err(Error::InvalidParam("stratum must be at least 1".into()));
    }
    multinomial_from_log(rng, h - 1, &l_log_weights(x, params))
}

/// Draw the component counts of the H-h units above the measured value;
/// multinomial with weights pi_j (1 - Phi_j(x)) / (1 - F(x)).
pub fn sample_u<R: rand::Rng + ?Sized>(
    x: f64,
    h: usize,
    set_size: usize,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if h > set_size {
        return Err(Error::InvalidParam(format!("stratum {h} above set size {set_size}")));
    }
    multinomial_from_log(rng, set_size - h, &u_log_weights(x, params))
}

/// Full augmentation of one observation: stratum, component label and
/// below/above counts, drawn in that order.
pub fn augment_observation<R: rand::Rng + ?Sized>(
    x: f64,
    r: usize,
    alpha: &MisplacementMatrix,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<ObsLatent> {
    let h = sample_delta(x, r, alpha, params, rng)?;
    let z = sample_z(x, params, rng)?;
    let l = sample_l(x, h, params, rng)?;
    let u = sample_u(x, h, alpha.set_size(), params, rng)?;
    Ok(ObsLatent { h, z, l, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_component() -> MixtureParams {
        MixtureParams::new_hom(vec![0.7, 0.3], vec![0.0, 5.0], 1.0).unwrap()
    }

    /// Symmetric doubly stochastic matrix holding the published
    /// moderate-quality ranking probabilities.
    fn alpha_rho07() -> MisplacementMatrix {
        MisplacementMatrix::new(
            vec![
                0.83, 0.1536, 0.0164, //
                0.1536, 0.7416, 0.1048, //
                0.0164, 0.1048, 0.8788,
            ],
            3,
        )
        .unwrap()
    }

    #[test]
    fn zeta_identity_alpha_is_one_hot() {
        let p = two_component();
        let id = MisplacementMatrix::identity(3);
        for &x in &[-2.0, 0.3, 4.9] {
            for r in 1..=3 {
                let w = zeta_weights(x, r, &id, &p).unwrap();
                for h in 1..=3 {
                    assert_eq!(w[h - 1], if h == r { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn zeta_single_unit() {
        let p = two_component();
        let id = MisplacementMatrix::identity(1);
        assert_eq!(zeta_weights(1.7, 1, &id, &p).unwrap(), vec![1.0]);
    }

    #[test]
    fn zeta_rejects_bad_rank() {
        let p = two_component();
        let id = MisplacementMatrix::identity(3);
        assert!(zeta_weights(0.0, 0, &id, &p).is_err());
        assert!(zeta_weights(0.0, 4, &id, &p).is_err());
    }

    #[test]
    fn zeta_oracle_at_mixture_median() {
        // At F(x) = 1/2 the Beta(h, 4-h) densities are (0.75, 1.5, 0.75);
        // row 1 of the alpha matrix then gives these exact weights.
        let p = two_component();
        let x = p.quantile(0.5).unwrap();
        let w = zeta_weights(x, 1, &alpha_rho07(), &p).unwrap();
        assert_relative_eq!(w[0], 0.7194868238557559, epsilon = 1e-9);
        assert_relative_eq!(w[1], 0.26629680998613037, epsilon = 1e-9);
        assert_relative_eq!(w[2], 0.014216366158113733, epsilon = 1e-9);
    }

    #[test]
    fn zeta_sums_to_one() {
        let p = two_component();
        let a = alpha_rho07();
        for i in 0..60 {
            let x = -6.0 + i as f64 * 0.3;
            for r in 1..=3 {
                let w = zeta_weights(x, r, &a, &p).unwrap();
                assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(w.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn zeta_matches_order_stat_ratio() {
        // zeta_h = alpha_{r,h} f^(h:H)(x) / sum_h' alpha_{r,h'} f^(h':H)(x).
        let p = two_component();
        let a = alpha_rho07();
        for i in 0..25 {
            let x = -3.0 + i as f64 * 0.4;
            for r in 1..=3 {
                let w = zeta_weights(x, r, &a, &p).unwrap();
                let terms: Vec<f64> = (1..=3)
                    .map(|h| a.get(r, h) * mixture::order_stat_pdf(x, h, 3, &p).unwrap())
                    .collect();
                let total: f64 = terms.iter().sum();
                for h in 1..=3 {
                    assert_abs_diff_eq!(w[h - 1], terms[h - 1] / total, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn zeta_extreme_tails_stay_valid() {
        // Far below every component the CDF underflows; the log-space
        // path must still return the boundary-rank point mass.
        let p = two_component();
        let a = alpha_rho07();
        let w_lo = zeta_weights(-300.0, 2, &a, &p).unwrap();
        assert_abs_diff_eq!(w_lo[0], 1.0, epsilon = 1e-12);
        let w_hi = zeta_weights(300.0, 2, &a, &p).unwrap();
        assert_abs_diff_eq!(w_hi[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn delta_frequencies_match_weights() {
        let p = two_component();
        let a = alpha_rho07();
        let x = 0.8;
        let w = zeta_weights(x, 2, &a, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut freq = [0.0; 3];
        for _ in 0..n {
            freq[sample_delta(x, 2, &a, &p, &mut rng).unwrap() - 1] += 1.0;
        }
        for h in 0..3 {
            assert_abs_diff_eq!(freq[h] / n as f64, w[h], epsilon = 0.01);
        }
    }

    #[test]
    fn delta_deterministic() {
        let p = two_component();
        let a = alpha_rho07();
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_delta(0.4, 1, &a, &p, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
    }

    #[test]
    fn z_single_component() {
        let p = MixtureParams::new_hom(vec![1.0], vec![0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            assert_eq!(sample_z(3.0, &p, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn z_far_tail_prefers_nearest_component() {
        // At x = mu_2 the second component dominates: weight > 0.99.
        let p = two_component();
        let lw = super::z_log_weights(5.0, &p);
        let w1 = (lw[1] - crate::mixture::log_sum_exp(&lw)).exp();
        assert!(w1 > 0.99, "weight {w1}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hits = (0..2000).filter(|_| sample_z(5.0, &p, &mut rng).unwrap() == 1).count();
        assert!(hits > 1950);
    }

    #[test]
    fn z_weights_sum_to_one() {
        let p = two_component();
        for &x in &[-3.0, 0.0, 2.5, 7.0] {
            let lw = super::z_log_weights(x, &p);
            let m = crate::mixture::log_sum_exp(&lw);
            let total: f64 = lw.iter().map(|&l| (l - m).exp()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn l_zero_trials_at_bottom_stratum() {
        let p = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_l(0.5, 1, &p, &mut rng).unwrap(), vec![0, 0]);
    }

    #[test]
    fn l_single_component_all_mass() {
        let p = MixtureParams::new_hom(vec![1.0], vec![0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_l(0.5, 3, &p, &mut rng).unwrap(), vec![2]);
    }

    #[test]
    fn l_empirical_mean_matches_weights() {
        let p = two_component();
        let (x, h) = (1.2, 3usize);
        let lw = super::l_log_weights(x, &p);
        let m = crate::mixture::log_sum_exp(&lw);
        let w: Vec<f64> = lw.iter().map(|&l| (l - m).exp()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut mean = vec![0.0; 2];
        for _ in 0..n {
            let c = sample_l(x, h, &p, &mut rng).unwrap();
            for j in 0..2 {
                mean[j] += c[j] as f64;
            }
        }
        for j in 0..2 {
            assert_abs_diff_eq!(mean[j] / n as f64, (h - 1) as f64 * w[j], epsilon = 0.01);
        }
    }

    #[test]
    fn u_zero_trials_at_top_stratum() {
        let p = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(sample_u(0.5, 4, 4, &p, &mut rng).unwrap(), vec![0, 0]);
    }

    #[test]
    fn u_single_component_all_mass() {
        let p = MixtureParams::new_hom(vec![1.0], vec![0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sample_u(0.5, 1, 3, &p, &mut rng).unwrap(), vec![2]);
    }

    #[test]
    fn u_empirical_mean_matches_weights() {
        let p = two_component();
        let (x, h, hh) = (1.2, 1usize, 4usize);
        let lw = super::u_log_weights(x, &p);
        let m = crate::mixture::log_sum_exp(&lw);
        let w: Vec<f64> = lw.iter().map(|&l| (l - m).exp()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut mean = vec![0.0; 2];
        for _ in 0..n {
            let c = sample_u(x, h, hh, &p, &mut rng).unwrap();
            for j in 0..2 {
                mean[j] += c[j] as f64;
            }
        }
        for j in 0..2 {
            assert_abs_diff_eq!(mean[j] / n as f64, (hh - h) as f64 * w[j], epsilon = 0.01);
        }
    }

    #[test]
    fn augmented_states_satisfy_sum_constraints() {
        let p = two_component();
        let a = alpha_rho07();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..500 {
            let x = -4.0 + (i % 40) as f64 * 0.25;
            let r = i % 3 + 1;
            let s = augment_observation(x, r, &a, &p, &mut rng).unwrap();
            s.validate(3, 2).unwrap();
        }
    }

    #[test]
    fn latent_joint_marginalizes_to_stratum_joint() {
        // Summing the fully augmented joint over every (z, l, u)
        // configuration must recover alpha_{r,h} * f^(h:H)(x): checked by
        // exhaustive enumeration at H = 2, J = 2.
        let p = two_component();
        let a = MisplacementMatrix::new(vec![0.9, 0.1, 0.1, 0.9], 2).unwrap();
        let hh = 2usize;
        let pi = p.weights();
        for &x in &[-1.3, 0.0, 0.9, 4.2, 6.0] {
            for r in 1..=hh {
                for h in 1..=hh {
                    // Joint factor without latent sums:
                    // alpha * H!/((h-1)!(H-h)!) * sum_z pi_j phi_j
                    //   * prod over l,u multinomials.
                    let comb = match h {
                        1 => 2.0, // H! / (0! 1!)
                        _ => 2.0, // H! / (1! 0!)
                    };
                    let mut total = 0.0;
                    for z in 0..2 {
                        let f_z = pi[z] * normal::pdf(x, p.means()[z], p.var(z));
                        // l configurations: h-1 trials over 2 components.
                        let l_confs: Vec<Vec<usize>> = if h == 1 {
                            vec![vec![0, 0]]
                        } else {
                            vec![vec![1, 0], vec![0, 1]]
                        };
                        // u configurations: H-h trials.
                        let u_confs: Vec<Vec<usize>> = if h == hh {
                            vec![vec![0, 0]]
                        } else {
                            vec![vec![1, 0], vec![0, 1]]
                        };
                        for lc in &l_confs {
                            let f_l: f64 = (0..2)
                                .map(|j| {
                                    (pi[j] * normal::cdf(x, p.means()[j], p.var(j)))
                                        .powi(lc[j] as i32)
                                })
                                .product();
                            for uc in &u_confs {
                                let f_u: f64 = (0..2)
                                    .map(|j| {
                                        (pi[j] * normal::survival(x, p.means()[j], p.var(j)))
                                            .powi(uc[j] as i32)
                                    })
                                    .product();
                                total += a.get(r, h) * comb * f_z * f_l * f_u;
                            }
                        }
                    }
                    let expect = a.get(r, h) * mixture::order_stat_pdf(x, h, hh, &p).unwrap();
                    assert_relative_eq!(total, expect, epsilon = 1e-12);
                }
            }
        }
    }
}
