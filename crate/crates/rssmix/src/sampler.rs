//! Posterior samplers: the conjugate Gibbs chain for simple random
//! samples and the Metropolis-within-Gibbs chain for ranked set samples,
//! each in shared-variance and per-component-variance variants. The RSS
//! chain re-estimates the misplacement matrix by EM at the top of every
//! iteration and treats it as fixed for the rest of the scan.

use crate::design::{MisplacementMatrix, RssDataset};
use crate::draws;
use crate::em::{self, EmConfig};
use crate::error::{Error, Result};
use crate::latent::{self, ObsLatent};
use crate::mixture::MixtureParams;
use crate::normal;
use rand::Rng;

/// Prior hyperparameters. Inverse-gamma shape/rate (`nu`, `beta`) carry
/// one shared entry for the shared-variance prior or one entry per
/// component, mirroring how [`MixtureParams`] stores variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Prior component means (length J).
    pub kappa: Vec<f64>,
    /// Prior precision scalings of the means (length J, positive).
    pub tau: Vec<f64>,
    /// Dirichlet concentration on the weights (length J, positive).
    pub gamma: Vec<f64>,
    /// Inverse-gamma shape(s): length 1 (shared) or J (per component).
    pub nu: Vec<f64>,
    /// Inverse-gamma rate(s): length 1 (shared) or J (per component).
    pub beta: Vec<f64>,
}

impl Hyperparams {
    /// Shared-variance prior: scalar inverse-gamma (shape, rate).
    pub fn new_hom(
        kappa: Vec<f64>,
        tau: Vec<f64>,
        gamma: Vec<f64>,
        nu: f64,
        beta: f64,
    ) -> Result<Self> {
        let h = Self { kappa, tau, gamma, nu: vec![nu], beta: vec![beta] };
        h.validate()?;
        Ok(h)
    }

    /// Per-component-variance prior: one (shape, rate) pair per component.
    pub fn new_het(
        kappa: Vec<f64>,
        tau: Vec<f64>,
        gamma: Vec<f64>,
        nu: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let h = Self { kappa, tau, gamma, nu, beta };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let j = self.kappa.len();
        if j == 0 {
            return Err(Error::InvalidParam("need at least one component".into()));
        }
        if self.tau.len() != j || self.gamma.len() != j {
            return Err(Error::InvalidParam("hyperparameter lengths disagree".into()));
        }
        if self.nu.len() != self.beta.len() || !(self.nu.len() == 1 || self.nu.len() == j) {
            return Err(Error::InvalidParam(
                "nu/beta need one shared entry or one per component".into(),
            ));
        }
        let pos = |v: &[f64]| v.iter().all(|&x| x.is_finite() && x > 0.0);
        if !pos(&self.tau) || !pos(&self.gamma) || !pos(&self.nu) || !pos(&self.beta) {
            return Err(Error::InvalidParam(
                "tau, gamma, nu, beta must be positive and finite".into(),
            ));
        }
        if self.kappa.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidParam("kappa must be finite".into()));
        }
        Ok(())
    }

    pub fn j_count(&self) -> usize {
        self.kappa.len()
    }

    /// Inverse-gamma shape for component `j` (0-based).
    pub fn nu(&self, j: usize) -> f64 {
        if self.nu.len() == 1 {
            self.nu[0]
        } else {
            self.nu[j]
        }
    }

    /// Inverse-gamma rate for component `j` (0-based).
    pub fn beta(&self, j: usize) -> f64 {
        if self.beta.len() == 1 {
            self.beta[0]
        } else {
            self.beta[j]
        }
    }
}

/// Per-component counts and sums under the current labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Observations assigned to each component.
    pub n: Vec<f64>,
    /// Sum of values per component.
    pub s1: Vec<f64>,
    /// Sum of squared deviations from the component mean.
    pub s2: Vec<f64>,
}

/// Accumulate sufficient statistics of `y` under `labels`, with squared
/// deviations taken around `means`.
pub fn sufficient_stats(y: &[f64], labels: &[usize], means: &[f64]) -> SufficientStats {
    let j_count = means.len();
    let mut st = SufficientStats {
        n: vec![0.0; j_count],
        s1: vec![0.0; j_count],
        s2: vec![0.0; j_count],
    };
    for (&x, &z) in y.iter().zip(labels) {
        st.n[z] += 1.0;
        st.s1[z] += x;
        st.s2[z] += (x - means[z]).powi(2);
    }
    st
}

/// Conjugate mean update for one component: posterior mean and variance
/// of mu_j given its variance, labels and prior. An empty component
/// falls back exactly to the prior N(kappa_j, var_j / tau_j).
pub fn srs_mu_conditional(
    n_j: f64,
    s1_j: f64,
    var_j: f64,
    kappa_j: f64,
    tau_j: f64,
) -> (f64, f64) {
    let denom = tau_j + n_j;
    ((tau_j * kappa_j + s1_j) / denom, var_j / denom)
}

/// Shared-variance inverse-gamma update: (shape, rate) given current
/// means. The shape counts all observations plus one per component mean.
pub fn srs_sigma_conditional_hom(
    stats: &SufficientStats,
    means: &[f64],
    hyper: &Hyperparams,
) -> (f64, f64) {
    let j_count = means.len();
    let n_total: f64 = stats.n.iter().sum();
    let shape = hyper.nu(0) + (n_total + j_count as f64) / 2.0;
    let mut rate = hyper.beta(0);
    for j in 0..j_count {
        rate += hyper.tau[j] * (means[j] - hyper.kappa[j]).powi(2) / 2.0 + stats.s2[j] / 2.0;
    }
    (shape, rate)
}

/// Per-component inverse-gamma update: (shape, rate) for sigma_j^2.
pub fn srs_sigma_conditional_het(
    j: usize,
    stats: &SufficientStats,
    mu_j: f64,
    hyper: &Hyperparams,
) -> (f64, f64) {
    let shape = hyper.nu(j) + (stats.n[j] + 1.0) / 2.0;
    let rate =
        hyper.beta(j) + hyper.tau[j] * (mu_j - hyper.kappa[j]).powi(2) / 2.0 + stats.s2[j] / 2.0;
    (shape, rate)
}

/// State of the SRS Gibbs chain.
#[derive(Debug, Clone)]
pub struct SrsState {
    pub params: MixtureParams,
    /// Component labels of each observation (0-based), as of the last scan.
    pub labels: Vec<usize>,
    pub iteration: usize,
}

impl SrsState {
    pub fn new(params: MixtureParams) -> Self {
        Self { params, labels: Vec::new(), iteration: 0 }
    }
}

fn draw_labels<R: Rng + ?Sized>(
    y: &[f64],
    params: &MixtureParams,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let j_count = params.j_count();
    let mut labels = Vec::with_capacity(y.len());
    let mut lw = vec![0.0; j_count];
    for &x in y {
        for j in 0..j_count {
            lw[j] = params.weights()[j].ln() + normal::log_pdf(x, params.means()[j], params.var(j));
        }
        labels.push(draws::categorical_from_log(rng, &lw)?);
    }
    Ok(labels)
}

/// One scan of the shared-variance SRS Gibbs chain, in the order
/// labels, weights, means, variance. Means are drawn against the
/// pre-update variance; the variance update sees the new means.
pub fn srs_gibbs_iteration_hom<R: Rng + ?Sized>(
    state: &mut SrsState,
    y: &[f64],
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let j_count = state.params.j_count();
    let labels = draw_labels(y, &state.params, rng)?;
    let var = state.params.var(0);
    let stats = sufficient_stats(y, &labels, state.params.means());

    let conc: Vec<f64> = (0..j_count).map(|j| stats.n[j] + hyper.gamma[j]).collect();
    let weights = draws::dirichlet(rng, &conc)?;

    let mut means = vec![0.0; j_count];
    for j in 0..j_count {
        let (pm, pv) = srs_mu_conditional(stats.n[j], stats.s1[j], var, hyper.kappa[j], hyper.tau[j]);
        means[j] = draws::normal(rng, pm, pv)?;
    }

    let stats_new = sufficient_stats(y, &labels, &means);
    let (shape, rate) = srs_sigma_conditional_hom(&stats_new, &means, hyper);
    let s2 = draws::inverse_gamma(rng, shape, rate)?;

    state.params = MixtureParams::new_hom(weights, means, s2)?;
    state.labels = labels;
    state.iteration += 1;
    Ok(())
}

/// One scan of the per-component-variance SRS Gibbs chain.
pub fn srs_gibbs_iteration_het<R: Rng + ?Sized>(
    state: &mut SrsState,
    y: &[f64],
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let j_count = state.params.j_count();
    let labels = draw_labels(y, &state.params, rng)?;
    let stats = sufficient_stats(y, &labels, state.params.means());

    let conc: Vec<f64> = (0..j_count).map(|j| stats.n[j] + hyper.gamma[j]).collect();
    let weights = draws::dirichlet(rng, &conc)?;

    let mut means = vec![0.0; j_count];
    for j in 0..j_count {
        let (pm, pv) = srs_mu_conditional(
            stats.n[j],
            stats.s1[j],
            state.params.var(j),
            hyper.kappa[j],
            hyper.tau[j],
        );
        means[j] = draws::normal(rng, pm, pv)?;
    }

    let stats_new = sufficient_stats(y, &labels, &means);
    let mut vars = vec![0.0; j_count];
    for j in 0..j_count {
        let (shape, rate) = srs_sigma_conditional_het(j, &stats_new, means[j], hyper);
        vars[j] = draws::inverse_gamma(rng, shape, rate)?;
    }

    state.params = MixtureParams::new_het(weights, means, vars)?;
    state.labels = labels;
    state.iteration += 1;
    Ok(())
}

/// Unnormalized log posterior of one component mean given the augmented
/// ranked data: observed-unit density, below-unit CDF and above-unit
/// survival factors for component `j`, plus the normal prior.
pub fn rss_target_logpdf_mu(
    mu_j: f64,
    j: usize,
    xs: &[f64],
    latent: &[ObsLatent],
    var_j: f64,
    kappa_j: f64,
    tau_j: f64,
) -> f64 {
    let mut t = -tau_j * (mu_j - kappa_j).powi(2) / (2.0 * var_j);
    for (ob, &x) in latent.iter().zip(xs) {
        if ob.z == j {
            t += normal::log_pdf(x, mu_j, var_j);
        }
        let lj = ob.l[j];
        if lj > 0 {
            t += lj as f64 * normal::cdf(x, mu_j, var_j).ln();
        }
        let uj = ob.u[j];
        if uj > 0 {
            t += uj as f64 * normal::survival(x, mu_j, var_j).ln();
        }
    }
    t
}

/// Unnormalized log posterior of the shared variance given the
/// augmented ranked data; includes every component's likelihood factor,
/// the J mean-prior factors, and the inverse-gamma prior.
pub fn rss_target_logpdf_sigma_hom(
    s2: f64,
    xs: &[f64],
    latent: &[ObsLatent],
    means: &[f64],
    hyper: &Hyperparams,
) -> f64 {
    if s2 <= 0.0 || !s2.is_finite() {
        return f64::NEG_INFINITY;
    }
    let j_count = means.len();
    let mut t = 0.0;
    for (ob, &x) in latent.iter().zip(xs) {
        t += normal::log_pdf(x, means[ob.z], s2);
        for j in 0..j_count {
            let lj = ob.l[j];
            if lj > 0 {
                t += lj as f64 * normal::cdf(x, means[j], s2).ln();
            }
            let uj = ob.u[j];
            if uj > 0 {
                t += uj as f64 * normal::survival(x, means[j], s2).ln();
            }
        }
    }
    let mut prior_quad = 0.0;
    for j in 0..j_count {
        prior_quad += hyper.tau[j] * (means[j] - hyper.kappa[j]).powi(2);
    }
    t += -0.5 * s2.ln() * j_count as f64 - prior_quad / (2.0 * s2);
    t + draws::inverse_gamma_log_kernel(s2, hyper.nu(0), hyper.beta(0))
}

/// Unnormalized log posterior of one component variance (per-component
/// variant): the factors of component `j` only, its mean prior, and its
/// inverse-gamma prior.
pub fn rss_target_logpdf_sigma_het(
    s2_j: f64,
    j: usize,
    xs: &[f64],
    latent: &[ObsLatent],
    mu_j: f64,
    kappa_j: f64,
    tau_j: f64,
    nu_j: f64,
    beta_j: f64,
) -> f64 {
    if s2_j <= 0.0 || !s2_j.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut t = 0.0;
    for (ob, &x) in latent.iter().zip(xs) {
        if ob.z == j {
            t += normal::log_pdf(x, mu_j, s2_j);
        }
        let lj = ob.l[j];
        if lj > 0 {
            t += lj as f64 * normal::cdf(x, mu_j, s2_j).ln();
        }
        let uj = ob.u[j];
        if uj > 0 {
            t += uj as f64 * normal::survival(x, mu_j, s2_j).ln();
        }
    }
    t += -0.5 * s2_j.ln() - tau_j * (mu_j - kappa_j).powi(2) / (2.0 * s2_j);
    t + draws::inverse_gamma_log_kernel(s2_j, nu_j, beta_j)
}

/// One independence Metropolis-Hastings transition. The candidate is
/// drawn fresh from the instrumental density; the log acceptance ratio
/// (target(cand) - target(curr)) + (instr(curr) - instr(cand)) is
/// evaluated in log space, with a candidate at -inf target or a NaN
/// ratio auto-rejected.
pub fn mh_step<R, D, T, Q>(
    current: f64,
    target: T,
    instrumental_draw: D,
    instrumental_logpdf: Q,
    rng: &mut R,
) -> (f64, bool)
where
    R: Rng + ?Sized,
    D: FnOnce(&mut R) -> f64,
    T: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    let cand = instrumental_draw(rng);
    let lt_c = target(cand);
    if lt_c == f64::NEG_INFINITY || lt_c.is_nan() {
        return (current, false);
    }
    let lt_x = target(current);
    let log_ratio = (lt_c - lt_x) + (instrumental_logpdf(current) - instrumental_logpdf(cand));
    if log_ratio.is_nan() {
        return (current, false);
    }
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        (cand, true)
    } else {
        (current, false)
    }
}

/// State of the RSS Metropolis-within-Gibbs chain.
#[derive(Debug, Clone)]
pub struct RssState {
    pub params: MixtureParams,
    pub alpha: MisplacementMatrix,
    /// Latent augmentation of every observation, as of the last scan.
    pub latent: Vec<ObsLatent>,
    pub iteration: usize,
}

impl RssState {
    /// Start a chain at `params` with a uniform misplacement matrix.
    pub fn new(params: MixtureParams, set_size: usize) -> Self {
        Self {
            params,
            alpha: MisplacementMatrix::uniform(set_size),
            latent: Vec::new(),
            iteration: 0,
        }
    }
}

/// Per-scan diagnostics of the RSS chain.
#[derive(Debug, Clone)]
pub struct MwgDiagnostics {
    /// EM iterations used by the misplacement update.
    pub em_iterations: usize,
    /// Acceptance flag of each component-mean move.
    pub mu_accepted: Vec<bool>,
    /// Acceptance flags of the variance move(s): one entry (shared) or J.
    pub sigma_accepted: Vec<bool>,
}

/// One scan of the RSS Metropolis-within-Gibbs chain, in the order:
/// misplacement matrix by EM, latent augmentation, weights, means (one
/// MH move each), then the variance block (one MH move per variance).
/// The variance variant follows `state.params`. EM non-convergence
/// aborts the scan with the state untouched.
pub fn rss_mwg_iteration<R: Rng + ?Sized>(
    state: &mut RssState,
    data: &RssDataset,
    hyper: &Hyperparams,
    em_config: EmConfig,
    rng: &mut R,
) -> Result<MwgDiagnostics> {
    let j_count = state.params.j_count();
    let n_obs = data.len();

    // Misplacement step: EM from the current matrix, parameters fixed.
    let em_out = em::em_alpha(data, &state.alpha, &state.params, em_config)?;

    // Augmentation step.
    let mut latent = Vec::with_capacity(n_obs);
    let mut xs = Vec::with_capacity(n_obs);
    for (x, r) in data.iter_rank_value() {
        latent.push(latent::augment_observation(x, r, &em_out.alpha, &state.params, rng)?);
        xs.push(x);
    }

    // Weight step: every latent trial counts toward the concentration.
    let mut conc = hyper.gamma.clone();
    for ob in &latent {
        conc[ob.z] += 1.0;
        for j in 0..j_count {
            conc[j] += ob.l[j] as f64 + ob.u[j] as f64;
        }
    }
    let weights = draws::dirichlet(rng, &conc)?;

    // Sufficient statistics of the measured units only.
    let labels: Vec<usize> = latent.iter().map(|ob| ob.z).collect();
    let stats = sufficient_stats(&xs, &labels, state.params.means());

    // Mean steps: independence MH against the ranked-data target, with
    // the SRS conjugate conditional (ranking ignored) as instrumental.
    let mut means = state.params.means().to_vec();
    let mut mu_accepted = vec![false; j_count];
    for j in 0..j_count {
        let var_j = state.params.var(j);
        let (pm, pv) = srs_mu_conditional(stats.n[j], stats.s1[j], var_j, hyper.kappa[j], hyper.tau[j]);
        let (next, acc) = mh_step(
            means[j],
            |m| rss_target_logpdf_mu(m, j, &xs, &latent, var_j, hyper.kappa[j], hyper.tau[j]),
            |r| draws::normal(r, pm, pv).expect("positive proposal variance"),
            |m| normal::log_pdf(m, pm, pv),
            rng,
        );
        means[j] = next;
        mu_accepted[j] = acc;
    }

    // Variance step(s), seeing the new means.
    let stats_new = sufficient_stats(&xs, &labels, &means);
    let mut sigma_accepted;
    let params_next;
    if state.params.is_homoscedastic() {
        let (shape, rate) = srs_sigma_conditional_hom(&stats_new, &means, hyper);
        let (s2, acc) = mh_step(
            state.params.var(0),
            |v| rss_target_logpdf_sigma_hom(v, &xs, &latent, &means, hyper),
            |r| draws::inverse_gamma(r, shape, rate).expect("positive IG parameters"),
            |v| draws::inverse_gamma_log_pdf(v, shape, rate),
            rng,
        );
        sigma_accepted = vec![acc];
        params_next = MixtureParams::new_hom(weights, means.clone(), s2)?;
    } else {
        let mut vars = vec![0.0; j_count];
        sigma_accepted = vec![false; j_count];
        for j in 0..j_count {
            let (shape, rate) = srs_sigma_conditional_het(j, &stats_new, means[j], hyper);
            let (s2, acc) = mh_step(
                state.params.var(j),
                |v| {
                    rss_target_logpdf_sigma_het(
                        v,
                        j,
                        &xs,
                        &latent,
                        means[j],
                        hyper.kappa[j],
                        hyper.tau[j],
                        hyper.nu(j),
                        hyper.beta(j),
                    )
                },
                |r| draws::inverse_gamma(r, shape, rate).expect("positive IG parameters"),
                |v| draws::inverse_gamma_log_pdf(v, shape, rate),
                rng,
            );
            vars[j] = s2;
            sigma_accepted[j] = acc;
        }
        params_next = MixtureParams::new_het(weights, means.clone(), vars)?;
    }

    state.params = params_next;
    state.alpha = em_out.alpha;
    state.latent = latent;
    state.iteration += 1;
    Ok(MwgDiagnostics { em_iterations: em_out.iterations, mu_accepted, sigma_accepted })
}

/// Raw draws of one chain: row t holds the weights, means, and
/// variance(s) after iteration t, in that order.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub rows: Vec<Vec<f64>>,
    pub j_count: usize,
    pub homoscedastic: bool,
}

impl ChainDraws {
    /// Number of variance columns.
    pub fn var_count(&self) -> usize {
        if self.homoscedastic {
            1
        } else {
            self.j_count
        }
    }
}

fn params_row(params: &MixtureParams) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * params.j_count() + params.variances().len());
    row.extend_from_slice(params.weights());
    row.extend_from_slice(params.means());
    row.extend_from_slice(params.variances());
    row
}

/// Run the SRS Gibbs chain for `iterations` scans from `init`.
pub fn run_srs_chain<R: Rng + ?Sized>(
    y: &[f64],
    init: MixtureParams,
    hyper: &Hyperparams,
    iterations: usize,
    rng: &mut R,
) -> Result<ChainDraws> {
    let j_count = init.j_count();
    let homoscedastic = init.is_homoscedastic();
    let mut state = SrsState::new(init);
    let mut rows = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        if homoscedastic {
            srs_gibbs_iteration_hom(&mut state, y, hyper, rng)?;
        } else {
            srs_gibbs_iteration_het(&mut state, y, hyper, rng)?;
        }
        rows.push(params_row(&state.params));
    }
    Ok(ChainDraws { rows, j_count, homoscedastic })
}

/// Output of an RSS chain run: draws plus the final misplacement
/// estimate and acceptance diagnostics.
#[derive(Debug, Clone)]
pub struct RssChainOutput {
    pub draws: ChainDraws,
    pub alpha: MisplacementMatrix,
    /// Mean acceptance rate of each component-mean move.
    pub mu_acceptance: Vec<f64>,
    /// Mean acceptance rate of the variance move(s).
    pub sigma_acceptance: Vec<f64>,
    /// Total EM iterations across all scans.
    pub em_iterations: usize,
}

/// Run the RSS Metropolis-within-Gibbs chain for `iterations` scans.
/// EM non-convergence at any scan aborts the whole run with the error.
pub fn run_rss_chain<R: Rng + ?Sized>(
    data: &RssDataset,
    init: MixtureParams,
    hyper: &Hyperparams,
    iterations: usize,
    em_config: EmConfig,
    rng: &mut R,
) -> Result<RssChainOutput> {
    let j_count = init.j_count();
    let homoscedastic = init.is_homoscedastic();
    let mut state = RssState::new(init, data.set_size());
    let mut rows = Vec::with_capacity(iterations);
    let var_slots = if homoscedastic { 1 } else { j_count };
    let mut mu_acc = vec![0.0; j_count];
    let mut sigma_acc = vec![0.0; var_slots];
    let mut em_total = 0usize;
    for _ in 0..iterations {
        let diag = rss_mwg_iteration(&mut state, data, hyper, em_config, rng)?;
        for (a, &f) in mu_acc.iter_mut().zip(&diag.mu_accepted) {
            *a += f as u8 as f64;
        }
        for (a, &f) in sigma_acc.iter_mut().zip(&diag.sigma_accepted) {
            *a += f as u8 as f64;
        }
        em_total += diag.em_iterations;
        rows.push(params_row(&state.params));
    }
    let scans = iterations.max(1) as f64;
    for a in &mut mu_acc {
        *a /= scans;
    }
    for a in &mut sigma_acc {
        *a /= scans;
    }
    Ok(RssChainOutput {
        draws: ChainDraws { rows, j_count, homoscedastic },
        alpha: state.alpha,
        mu_acceptance: mu_acc,
        sigma_acceptance: sigma_acc,
        em_iterations: em_total,
    })
}
