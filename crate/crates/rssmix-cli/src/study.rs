//! Replicated study pipelines: stage-1 misplacement estimation, the
//! per-replicate draw -> fit-SRS -> fit-RSS -> summarize loop, the
//! case-study variants (surrogate generator or finite dataset), and the
//! report files (manifest, estimates, summary tables, misplacement
//! recovery, plot data).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use rssmix::analysis::{
    burn_thin, initial_params, kmeans_init, relabel_ordered, series, summarize_estimand,
    summarize_series, Estimand, PosteriorSummary, StudySummaryRow,
};
use rssmix::design::{
    draw_mixture, draw_rss_dataset, estimate_alpha_stage1, sinkhorn_project, MisplacementMatrix,
    RankerConfig, RssDataset, RssSource,
};
use rssmix::em::EmConfig;
use rssmix::error::Error;
use rssmix::mixture::MixtureParams;
use rssmix::sampler::{run_rss_chain, run_srs_chain, ChainDraws, Hyperparams};
use rssmix::stream::{derive, Purpose};

use crate::config::{
    CaseStudyConfig, ChainSpec, StudyConfig, SurrogateSpec, TruthSpec, Variant,
};
use crate::plots;
use crate::CliError;

/// Which design produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Srs,
    Rss,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Srs => "SRS",
            Method::Rss => "RSS",
        })
    }
}

/// One estimand of one replicate fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub method: Method,
    pub h: usize,
    pub rho: f64,
    pub replicate: usize,
    pub estimand: String,
    pub summary: PosteriorSummary,
}

/// Misplacement-recovery table row: the chains' final EM estimates of
/// one matrix entry against the stage-1 value treated as truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRecoveryRow {
    pub judgment_rank: usize,
    pub true_rank: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub abs_bias: f64,
    pub mse: f64,
}

/// Everything produced for one (H, rho) design cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub h: usize,
    pub rho: f64,
    pub stage1_alpha: MisplacementMatrix,
    pub records: Vec<ReplicateRecord>,
    /// Replicate indices excluded because the embedded EM exhausted its
    /// budget (the whole replicate is dropped from both methods).
    pub excluded: Vec<usize>,
    pub replicates: usize,
    pub alpha_recovery: Vec<AlphaRecoveryRow>,
}

/// Chain protocol resolved from config for one fit.
#[derive(Debug, Clone, Copy)]
pub struct FitProtocol {
    pub j_count: usize,
    pub variant: Variant,
    pub iterations: usize,
    pub burn: usize,
    pub thin: usize,
    pub level: f64,
    pub em_max_iter: usize,
}

impl FitProtocol {
    pub fn from_chains(chains: &ChainSpec, j_count: usize) -> Self {
        Self {
            j_count,
            variant: chains.variant,
            iterations: chains.iterations,
            burn: chains.burn,
            thin: chains.thin,
            level: chains.level,
            em_max_iter: chains.em_max_iter,
        }
    }
}

/// Names of the reported estimands: mixing weights (the last is
/// redundant and omitted), component means, and the standard
/// deviation(s).
pub fn estimand_names(j_count: usize, variant: Variant) -> Vec<String> {
    let mut names = Vec::new();
    for j in 1..j_count {
        names.push(format!("pi{j}"));
    }
    for j in 1..=j_count {
        names.push(format!("mu{j}"));
    }
    match variant {
        Variant::Hom => names.push("sigma".into()),
        Variant::Het => {
            for j in 1..=j_count {
                names.push(format!("sigma{j}"));
            }
        }
    }
    names
}

/// True values of the reported estimands (sigma as standard deviation).
pub fn truth_values(params: &MixtureParams, variant: Variant) -> Vec<(String, f64)> {
    let j = params.j_count();
    let mut out = Vec::new();
    for k in 1..j {
        out.push((format!("pi{k}"), params.weights()[k - 1]));
    }
    for k in 1..=j {
        out.push((format!("mu{k}"), params.means()[k - 1]));
    }
    match variant {
        Variant::Hom => out.push(("sigma".into(), params.var(0).sqrt())),
        Variant::Het => {
            for k in 1..=j {
                out.push((format!("sigma{k}"), params.var(k - 1).sqrt()));
            }
        }
    }
    out
}

fn estimand_columns(j_count: usize, variant: Variant) -> Vec<Estimand> {
    let mut cols = Vec::new();
    for j in 0..j_count.saturating_sub(1) {
        cols.push(Estimand::Weight(j));
    }
    for j in 0..j_count {
        cols.push(Estimand::Mean(j));
    }
    match variant {
        Variant::Hom => cols.push(Estimand::Sigma(0)),
        Variant::Het => {
            for j in 0..j_count {
                cols.push(Estimand::Sigma(j));
            }
        }
    }
    cols
}

fn het_hyper(h: &Hyperparams, j_count: usize) -> Result<Hyperparams, Error> {
    Hyperparams::new_het(
        h.kappa.clone(),
        h.tau.clone(),
        h.gamma.clone(),
        vec![h.nu(0); j_count],
        vec![h.beta(0); j_count],
    )
}

fn postprocess(
    draws: &ChainDraws,
    proto: &FitProtocol,
) -> Result<Vec<(String, PosteriorSummary)>, CliError> {
    let kept = burn_thin(draws, proto.burn, proto.thin)?;
    let ordered = relabel_ordered(&kept);
    let names = estimand_names(proto.j_count, proto.variant);
    let cols = estimand_columns(proto.j_count, proto.variant);
    names
        .into_iter()
        .zip(cols)
        .map(|(name, col)| {
            let xs = series(&ordered, col);
            Ok((name, summarize_series(&xs, proto.level)?))
        })
        .collect()
}

/// Initialize and run one SRS chain on `y`, returning kept draws and
/// per-estimand posterior summaries.
pub fn fit_srs<R: Rng + ?Sized>(
    y: &[f64],
    proto: &FitProtocol,
    rng: &mut R,
) -> Result<(ChainDraws, Vec<(String, PosteriorSummary)>), CliError> {
    let (labels, hyper) = kmeans_init(y, proto.j_count)?;
    let (hyper, init) = match proto.variant {
        Variant::Hom => {
            let init = initial_params(y, &labels, &hyper, true)?;
            (hyper, init)
        }
        Variant::Het => {
            let init = initial_params(y, &labels, &hyper, false)?;
            (het_hyper(&hyper, proto.j_count)?, init)
        }
    };
    let draws = run_srs_chain(y, init, &hyper, proto.iterations, rng)?;
    let summaries = postprocess(&draws, proto)?;
    Ok((draws, summaries))
}

/// Initialize and run one RSS Metropolis-within-Gibbs chain, returning
/// kept draws, per-estimand summaries, and the final misplacement
/// estimate. EM budget exhaustion surfaces as
/// [`CliError::NonConvergence`].
pub fn fit_rss<R: Rng + ?Sized>(
    data: &RssDataset,
    proto: &FitProtocol,
    rng: &mut R,
) -> Result<(ChainDraws, Vec<(String, PosteriorSummary)>, MisplacementMatrix), CliError> {
    let y = data.values();
    let (labels, hyper) = kmeans_init(y, proto.j_count)?;
    let (hyper, init) = match proto.variant {
        Variant::Hom => {
            let init = initial_params(y, &labels, &hyper, true)?;
            (hyper, init)
        }
        Variant::Het => {
            let init = initial_params(y, &labels, &hyper, false)?;
            (het_hyper(&hyper, proto.j_count)?, init)
        }
    };
    let em = EmConfig { max_iter: proto.em_max_iter, ..EmConfig::default() };
    let out = run_rss_chain(data, init, &hyper, proto.iterations, em, rng)?;
    let summaries = postprocess(&out.draws, proto)?;
    Ok((out.draws, summaries, out.alpha))
}

/// Concomitant noise scale of a ranker on this population: the
/// component standard deviation (root mean variance when component
/// variances differ).
pub fn ranker_sigma(params: &MixtureParams) -> f64 {
    let j = params.j_count();
    let mean_var = (0..j).map(|k| params.var(k)).sum::<f64>() / j as f64;
    mean_var.sqrt()
}

enum RepOutcome {
    Kept {
        srs: Vec<(String, PosteriorSummary)>,
        rss: Vec<(String, PosteriorSummary)>,
        alpha: MisplacementMatrix,
    },
    Excluded,
}

fn run_study_replicate(
    truth: &MixtureParams,
    h: usize,
    rho: f64,
    proto: &FitProtocol,
    seed: u64,
    cell: u32,
    rep: u32,
    n_total: usize,
) -> Result<RepOutcome, CliError> {
    let ranker = RankerConfig::new(rho, ranker_sigma(truth))?;
    let mut rng = derive(seed, Purpose::SrsData, cell, rep);
    let y: Vec<f64> = (0..n_total).map(|_| draw_mixture(truth, &mut rng)).collect();
    let mut rng = derive(seed, Purpose::RssData, cell, rep);
    let data =
        draw_rss_dataset(truth, h, n_total / h, &RssSource::Ranker(ranker), &mut rng)?;
    let mut rng = derive(seed, Purpose::SrsChain, cell, rep);
    let (_, srs) = fit_srs(&y, proto, &mut rng)?;
    let mut rng = derive(seed, Purpose::RssChain, cell, rep);
    match fit_rss(&data, proto, &mut rng) {
        Ok((_, rss, alpha)) => Ok(RepOutcome::Kept { srs, rss, alpha }),
        Err(CliError::NonConvergence(_)) => Ok(RepOutcome::Excluded),
        Err(e) => Err(e),
    }
}

fn collect_cell(
    h: usize,
    rho: f64,
    stage1_alpha: MisplacementMatrix,
    replicates: usize,
    outcomes: Vec<RepOutcome>,
) -> CellReport {
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    let mut alphas = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            RepOutcome::Kept { srs, rss, alpha } => {
                for (estimand, summary) in srs {
                    records.push(ReplicateRecord {
                        method: Method::Srs,
                        h,
                        rho,
                        replicate: i,
                        estimand,
                        summary,
                    });
                }
                for (estimand, summary) in rss {
                    records.push(ReplicateRecord {
                        method: Method::Rss,
                        h,
                        rho,
                        replicate: i,
                        estimand,
                        summary,
                    });
                }
                alphas.push(alpha);
            }
            RepOutcome::Excluded => excluded.push(i),
        }
    }
    let alpha_recovery = alpha_recovery_rows(&stage1_alpha, &alphas);
    CellReport { h, rho, stage1_alpha, records, excluded, replicates, alpha_recovery }
}

fn alpha_recovery_rows(
    truth: &MisplacementMatrix,
    estimates: &[MisplacementMatrix],
) -> Vec<AlphaRecoveryRow> {
    let h = truth.set_size();
    let mut rows = Vec::with_capacity(h * h);
    for r in 1..=h {
        for t in 1..=h {
            let tv = truth.get(r, t);
            let (mut sum, mut sum_abs, mut sum_sq) = (0.0, 0.0, 0.0);
            for a in estimates {
                let e = a.get(r, t);
                sum += e;
                sum_abs += (e - tv).abs();
                sum_sq += (e - tv) * (e - tv);
            }
            let m = estimates.len().max(1) as f64;
            rows.push(AlphaRecoveryRow {
                judgment_rank: r,
                true_rank: t,
                truth: tv,
                mean_estimate: sum / m,
                abs_bias: sum_abs / m,
                mse: sum_sq / m,
            });
        }
    }
    rows
}

fn run_cells<F>(
    cells: Vec<(usize, f64, MisplacementMatrix)>,
    replicates: usize,
    workers: Option<usize>,
    replicate_fn: F,
) -> Result<Vec<CellReport>, CliError>
where
    F: Fn(u32, u32, usize, f64) -> Result<RepOutcome, CliError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Data(format!("worker pool: {e}")))?;
    let mut reports = Vec::with_capacity(cells.len());
    for (cell_idx, (h, rho, alpha)) in cells.into_iter().enumerate() {
        let outcomes: Vec<Result<RepOutcome, CliError>> = pool.install(|| {
            use rayon::prelude::*;
            (0..replicates)
                .into_par_iter()
                .map(|rep| replicate_fn(cell_idx as u32, rep as u32, h, rho))
                .collect()
        });
        let mut ok = Vec::with_capacity(replicates);
        for o in outcomes {
            ok.push(o?);
        }
        reports.push(collect_cell(h, rho, alpha, replicates, ok));
    }
    Ok(reports)
}

/// Full study report.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub seed: u64,
    pub truth: MixtureParams,
    pub variant: Variant,
    pub level: f64,
    pub cells: Vec<CellReport>,
}

/// Run the two-stage study: stage 1 estimates the misplacement matrix
/// per (H, rho) cell; stage 2 repeats draw -> fit-SRS -> fit-RSS over
/// replicates with independent derived streams.
pub fn run_study(cfg: &StudyConfig, workers: Option<usize>) -> Result<StudyReport, CliError> {
    let truth = cfg.truth.to_params()?;
    let proto = FitProtocol::from_chains(&cfg.chains, cfg.j_count());
    let sigma = ranker_sigma(&truth);
    let mut cells = Vec::new();
    for &h in &cfg.design.set_sizes {
        for &rho in &cfg.design.rho {
            let cell_idx = cells.len() as u32;
            let ranker = RankerConfig::new(rho, sigma)?;
            let mut rng = derive(cfg.seed, Purpose::Stage1, cell_idx, 0);
            let alpha =
                estimate_alpha_stage1(&truth, h, &ranker, cfg.study.stage1_reps, &mut rng)?;
            cells.push((h, rho, alpha));
        }
    }
    let truth_ref = &truth;
    let reports = run_cells(
        cells,
        cfg.study.replicates,
        workers,
        |cell, rep, h, rho| {
            run_study_replicate(
                truth_ref,
                h,
                rho,
                &proto,
                cfg.seed,
                cell,
                rep,
                cfg.design.n_total,
            )
        },
    )?;
    Ok(StudyReport {
        seed: cfg.seed,
        truth,
        variant: cfg.chains.variant,
        level: cfg.chains.level,
        cells: reports,
    })
}

// ---------------------------------------------------------------------
// Case study
// ---------------------------------------------------------------------

/// Finite population of (outcome, concomitant) pairs.
#[derive(Debug, Clone)]
pub struct Population {
    pub outcome: Vec<f64>,
    pub concomitant: Vec<f64>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    /// Pearson correlation between outcome and concomitant.
    pub fn correlation(&self) -> f64 {
        let n = self.len() as f64;
        let mx = self.outcome.iter().sum::<f64>() / n;
        let mz = self.concomitant.iter().sum::<f64>() / n;
        let (mut sxx, mut szz, mut sxz) = (0.0, 0.0, 0.0);
        for (&x, &z) in self.outcome.iter().zip(&self.concomitant) {
            sxx += (x - mx) * (x - mx);
            szz += (z - mz) * (z - mz);
            sxz += (x - mx) * (z - mz);
        }
        sxz / (sxx * szz).sqrt()
    }
}

/// Read a population CSV with named outcome and concomitant columns.
/// Malformed rows are rejected with their line number.
pub fn load_population(
    path: &Path,
    outcome_column: &str,
    concomitant_column: &str,
) -> Result<Population, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("open {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!("{}: no column named {name}", path.display()))
        })
    };
    let xi = col(outcome_column)?;
    let zi = col(concomitant_column)?;
    let mut outcome = Vec::new();
    let mut concomitant = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize, what: &str| -> Result<f64, CliError> {
            let raw = rec.get(i).ok_or_else(|| {
                CliError::Data(format!("{} line {line}: missing {what} field", path.display()))
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                CliError::Data(format!(
                    "{} line {line}: {what} value {raw:?} is not a number",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{} line {line}: non-finite {what}",
                    path.display()
                )));
            }
            Ok(v)
        };
        outcome.push(parse(xi, "outcome")?);
        concomitant.push(parse(zi, "concomitant")?);
    }
    if outcome.is_empty() {
        return Err(CliError::Data(format!("{}: dataset has no rows", path.display())));
    }
    Ok(Population { outcome, concomitant })
}

/// Draw `k` distinct indices from `pool` (consumed) via partial
/// Fisher-Yates.
fn take_distinct<R: Rng + ?Sized>(pool: &mut Vec<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

/// Rank `set` (indices into the population) by concomitant, ascending
/// when the outcome-concomitant correlation is nonnegative, descending
/// otherwise, so judgment rank 1 targets the smallest outcome.
fn rank_by_concomitant(pop: &Population, set: &mut [usize], ascending: bool) {
    set.sort_by(|&a, &b| {
        let ord = pop.concomitant[a].total_cmp(&pop.concomitant[b]);
        (if ascending { ord } else { ord.reverse() }).then(a.cmp(&b))
    });
}

/// One balanced RSS replicate from a finite population: for every
/// (cycle, judgment rank) a fresh set of H units is ranked on the
/// concomitant and the unit at that judgment rank is measured. Default
/// consumes the population without replacement across the whole
/// replicate; `with_replacement` redraws each set from the full
/// population.
pub fn draw_rss_from_population<R: Rng + ?Sized>(
    pop: &Population,
    set_size: usize,
    cycles: usize,
    ascending: bool,
    with_replacement: bool,
    rng: &mut R,
) -> Result<RssDataset, CliError> {
    let need = cycles * set_size * set_size;
    if !with_replacement && need > pop.len() {
        return Err(CliError::Data(format!(
            "population of {} cannot supply {need} distinct units ({cycles} cycles x {set_size}^2); \
             enable with_replacement",
            pop.len()
        )));
    }
    let mut pool: Vec<usize> = (0..pop.len()).collect();
    let mut values = Vec::with_capacity(cycles * set_size);
    let mut true_ranks = Vec::with_capacity(cycles * set_size);
    for _ in 0..cycles {
        for r in 1..=set_size {
            let mut set = if with_replacement {
                let mut fresh: Vec<usize> = (0..pop.len()).collect();
                take_distinct(&mut fresh, set_size, rng)
            } else {
                take_distinct(&mut pool, set_size, rng)
            };
            rank_by_concomitant(pop, &mut set, ascending);
            let chosen = set[r - 1];
            let x = pop.outcome[chosen];
            let true_rank = 1 + set
                .iter()
                .filter(|&&i| {
                    pop.outcome[i] < x || (pop.outcome[i] == x && i < chosen)
                })
                .count();
            values.push(x);
            true_ranks.push(true_rank as u8);
        }
    }
    Ok(RssDataset::new(values, cycles, set_size, Some(true_ranks))?)
}

/// One SRS replicate from a finite population.
pub fn draw_srs_from_population<R: Rng + ?Sized>(
    pop: &Population,
    n_total: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Vec<f64>, CliError> {
    if with_replacement {
        return Ok((0..n_total)
            .map(|_| pop.outcome[rng.random_range(0..pop.len())])
            .collect());
    }
    if n_total > pop.len() {
        return Err(CliError::Data(format!(
            "population of {} cannot supply {n_total} distinct units; enable with_replacement",
            pop.len()
        )));
    }
    let mut pool: Vec<usize> = (0..pop.len()).collect();
    Ok(take_distinct(&mut pool, n_total, rng).into_iter().map(|i| pop.outcome[i]).collect())
}

/// Stage-1 misplacement estimation against a finite population:
/// repeatedly rank fresh sets on the concomitant and count true ranks
/// of the outcome.
pub fn estimate_alpha_population<R: Rng + ?Sized>(
    pop: &Population,
    set_size: usize,
    ascending: bool,
    reps: usize,
    rng: &mut R,
) -> Result<MisplacementMatrix, CliError> {
    if reps == 0 {
        return Err(CliError::Config("stage1_reps must be positive".into()));
    }
    if set_size > pop.len() {
        return Err(CliError::Data(format!(
            "population of {} smaller than one set of {set_size}",
            pop.len()
        )));
    }
    let h = set_size;
    let mut counts = vec![0.0f64; h * h];
    for _ in 0..reps {
        let mut fresh: Vec<usize> = (0..pop.len()).collect();
        let mut set = take_distinct(&mut fresh, h, rng);
        rank_by_concomitant(pop, &mut set, ascending);
        for (r, &chosen) in set.iter().enumerate() {
            let x = pop.outcome[chosen];
            let true_rank = set
                .iter()
                .filter(|&&i| pop.outcome[i] < x || (pop.outcome[i] == x && i < chosen))
                .count();
            counts[r * h + true_rank] += 1.0;
        }
    }
    for c in &mut counts {
        *c /= reps as f64;
    }
    Ok(sinkhorn_project(&counts, h)?)
}

/// Case-study report: study cells plus the population context.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub seed: u64,
    pub reference: MixtureParams,
    pub variant: Variant,
    pub level: f64,
    pub population_size: Option<usize>,
    pub correlation: f64,
    pub cells: Vec<CellReport>,
}

/// Fit the reference parameters of a finite population: a long SRS
/// chain on every outcome, summarized by posterior modes (weights
/// renormalized, means ordered by the relabeling convention).
pub fn fit_reference<R: Rng + ?Sized>(
    pop: &Population,
    proto: &FitProtocol,
    rng: &mut R,
) -> Result<MixtureParams, CliError> {
    let (_, summaries) = fit_srs(&pop.outcome, proto, rng)?;
    let j = proto.j_count;
    let get = |name: &str| {
        summaries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.mode)
            .expect("estimand present")
    };
    let mut weights: Vec<f64> = (1..j).map(|k| get(&format!("pi{k}"))).collect();
    let last = (1.0 - weights.iter().sum::<f64>()).max(1e-6);
    weights.push(last);
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let means: Vec<f64> = (1..=j).map(|k| get(&format!("mu{k}"))).collect();
    let params = match proto.variant {
        Variant::Hom => {
            let sd = get("sigma");
            MixtureParams::new_hom(weights, means, sd * sd)?
        }
        Variant::Het => {
            let vars: Vec<f64> = (1..=j)
                .map(|k| {
                    let sd = get(&format!("sigma{k}"));
                    sd * sd
                })
                .collect();
            MixtureParams::new_het(weights, means, vars)?
        }
    };
    Ok(params)
}

/// Run the case study in surrogate or dataset mode.
pub fn run_case_study(
    cfg: &CaseStudyConfig,
    workers: Option<usize>,
) -> Result<CaseReport, CliError> {
    let j_count = cfg
        .j_count()
        .ok_or_else(|| CliError::Config("component count unresolved".into()))?;
    let proto = FitProtocol::from_chains(&cfg.chains, j_count);
    match (&cfg.population.dataset, &cfg.population.surrogate) {
        (None, Some(surrogate)) => run_case_surrogate(cfg, surrogate, &proto, workers),
        (Some(path), None) => run_case_dataset(cfg, path, &proto, workers),
        _ => Err(CliError::Config("population needs exactly one mode".into())),
    }
}

fn run_case_surrogate(
    cfg: &CaseStudyConfig,
    surrogate: &SurrogateSpec,
    proto: &FitProtocol,
    workers: Option<usize>,
) -> Result<CaseReport, CliError> {
    let truth = surrogate.truth.to_params()?;
    let rho = surrogate.rho;
    let sigma = ranker_sigma(&truth);
    let mut cells = Vec::new();
    for &h in &cfg.design.set_sizes {
        let cell_idx = cells.len() as u32;
        let ranker = RankerConfig::new(rho, sigma)?;
        let mut rng = derive(cfg.seed, Purpose::Stage1, cell_idx, 0);
        let alpha = estimate_alpha_stage1(&truth, h, &ranker, cfg.study.stage1_reps, &mut rng)?;
        cells.push((h, rho, alpha));
    }
    let truth_ref = &truth;
    let reports =
        run_cells(cells, cfg.study.replicates, workers, |cell, rep, h, rho| {
            run_study_replicate(
                truth_ref,
                h,
                rho,
                proto,
                cfg.seed,
                cell,
                rep,
                cfg.design.n_total,
            )
        })?;
    Ok(CaseReport {
        seed: cfg.seed,
        reference: truth,
        variant: cfg.chains.variant,
        level: cfg.chains.level,
        population_size: None,
        correlation: rho,
        cells: reports,
    })
}

fn run_case_dataset(
    cfg: &CaseStudyConfig,
    path: &Path,
    proto: &FitProtocol,
    workers: Option<usize>,
) -> Result<CaseReport, CliError> {
    let pop = load_population(
        path,
        &cfg.population.outcome_column,
        &cfg.population.concomitant_column,
    )?;
    let correlation = pop.correlation();
    let ascending = correlation >= 0.0;
    let with_replacement = cfg.population.with_replacement;
    let mut rng = derive(cfg.seed, Purpose::Adhoc, 0, 0);
    let reference = fit_reference(&pop, proto, &mut rng)?;
    let mut cells = Vec::new();
    for &h in &cfg.design.set_sizes {
        let cell_idx = cells.len() as u32;
        let mut rng = derive(cfg.seed, Purpose::Stage1, cell_idx, 0);
        let alpha =
            estimate_alpha_population(&pop, h, ascending, cfg.study.stage1_reps, &mut rng)?;
        cells.push((h, correlation, alpha));
    }
    let pop_ref = &pop;
    let reports =
        run_cells(cells, cfg.study.replicates, workers, |cell, rep, h, _rho| {
            let mut rng = derive(cfg.seed, Purpose::SrsData, cell, rep);
            let y = draw_srs_from_population(
                pop_ref,
                cfg.design.n_total,
                with_replacement,
                &mut rng,
            )?;
            let mut rng = derive(cfg.seed, Purpose::RssData, cell, rep);
            let data = draw_rss_from_population(
                pop_ref,
                h,
                cfg.design.n_total / h,
                ascending,
                with_replacement,
                &mut rng,
            )?;
            let mut rng = derive(cfg.seed, Purpose::SrsChain, cell, rep);
            let (_, srs) = fit_srs(&y, proto, &mut rng)?;
            let mut rng = derive(cfg.seed, Purpose::RssChain, cell, rep);
            match fit_rss(&data, proto, &mut rng) {
                Ok((_, rss, alpha)) => Ok(RepOutcome::Kept { srs, rss, alpha }),
                Err(CliError::NonConvergence(_)) => Ok(RepOutcome::Excluded),
                Err(e) => Err(e),
            }
        })?;
    Ok(CaseReport {
        seed: cfg.seed,
        reference,
        variant: cfg.chains.variant,
        level: cfg.chains.level,
        population_size: Some(pop.len()),
        correlation,
        cells: reports,
    })
}

// ---------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------

/// Group replicate records by (method, h, rho, estimand) and build one
/// summary row per group against the matching truth value. Groups with
/// fewer than two records are skipped (a single replicate has no
/// percentile spread).
pub fn summarize_records(
    records: &[ReplicateRecord],
    truths: &[(String, f64)],
) -> Result<Vec<(Method, usize, f64, StudySummaryRow)>, CliError> {
    let mut keys: Vec<(Method, usize, String)> = Vec::new();
    let mut hs: BTreeSet<usize> = BTreeSet::new();
    let mut rhos: Vec<f64> = Vec::new();
    for r in records {
        hs.insert(r.h);
        if !rhos.iter().any(|&x| x == r.rho) {
            rhos.push(r.rho);
        }
    }
    for &h in &hs {
        for m in [Method::Srs, Method::Rss] {
            for (name, _) in truths {
                keys.push((m, h, name.clone()));
            }
        }
    }
    let mut out = Vec::new();
    for rho in rhos {
        for (m, h, name) in &keys {
            let group: Vec<PosteriorSummary> = records
                .iter()
                .filter(|r| {
                    r.method == *m && r.h == *h && r.rho == rho && r.estimand == *name
                })
                .map(|r| r.summary)
                .collect();
            if group.len() < 2 {
                continue;
            }
            let truth = truths
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    CliError::Data(format!("no truth value for estimand {name}"))
                })?;
            out.push((*m, *h, rho, summarize_estimand(name, &group, truth)?));
        }
    }
    Ok(out)
}

fn csv_float(v: f64) -> String {
    format!("{v}")
}

/// Write per-replicate estimates: method, h, rho, replicate, estimand,
/// mode, ci_low, ci_high, level.
pub fn write_estimates_csv<W: std::io::Write>(
    records: &[ReplicateRecord],
    w: W,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "method", "h", "rho", "replicate", "estimand", "mode", "ci_low", "ci_high", "level",
    ])
    .map_err(csv_err)?;
    for r in records {
        wtr.write_record([
            r.method.to_string(),
            r.h.to_string(),
            csv_float(r.rho),
            r.replicate.to_string(),
            r.estimand.clone(),
            csv_float(r.summary.mode),
            csv_float(r.summary.ci_low),
            csv_float(r.summary.ci_high),
            csv_float(r.summary.level),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

/// Read an estimates CSV back (the `summarize` and `plot-data` inputs).
pub fn read_estimates_csv(path: &Path) -> Result<Vec<ReplicateRecord>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("open {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: EstimateRow =
            rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let method = match row.method.as_str() {
            "SRS" => Method::Srs,
            "RSS" => Method::Rss,
            other => {
                return Err(CliError::Data(format!(
             "{}: unknown method {other:?} (expected SRS or RSS)",
                    path.display()
                )))
            }
        };
        out.push(ReplicateRecord {
            method,
            h: row.h,
            rho: row.rho,
            replicate: row.replicate,
            estimand: row.estimand,
            summary: PosteriorSummary {
                mode: row.mode,
                ci_low: row.ci_low,
                ci_high: row.ci_high,
                level: row.level,
            },
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no estimate rows", path.display())));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EstimateRow {
    method: String,
    h: usize,
    rho: f64,
    replicate: usize,
    estimand: String,
    mode: f64,
    ci_low: f64,
    ci_high: f64,
    level: f64,
}

/// Write summary table rows: method, h, estimand, squared-error
/// percentiles, interval-width percentiles, coverage.
pub fn write_summary_csv<W: std::io::Write>(
    rows: &[(Method, usize, f64, StudySummaryRow)],
    w: W,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "method", "h", "estimand", "se_l", "se_m", "se_u", "ci_l", "ci_m", "ci_u", "coverage",
    ])
    .map_err(csv_err)?;
    for (m, h, _rho, row) in rows {
        wtr.write_record([
            m.to_string(),
            h.to_string(),
            row.estimand.clone(),
            csv_float(row.se_l),
            csv_float(row.se_m),
            csv_float(row.se_u),
            csv_float(row.ci_l),
            csv_float(row.ci_m),
            csv_float(row.ci_u),
            csv_float(row.coverage),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

/// Write a misplacement matrix: judgment_rank row label then one column
/// per true rank.
pub fn write_alpha_csv<W: std::io::Write>(
    alpha: &MisplacementMatrix,
    w: W,
) -> Result<(), CliError> {
    let h = alpha.set_size();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["judgment_rank".to_string()];
    for t in 1..=h {
        header.push(format!("true_rank_{t}"));
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for r in 1..=h {
        let mut rec = vec![r.to_string()];
        for t in 1..=h {
            rec.push(csv_float(alpha.get(r, t)));
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

fn write_alpha_recovery_csv<W: std::io::Write>(
    rows: &[AlphaRecoveryRow],
    w: W,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["judgment_rank", "true_rank", "truth", "mean_estimate", "abs_bias", "mse"])
        .map_err(csv_err)?;
    for r in rows {
        wtr.write_record([
            r.judgment_rank.to_string(),
            r.true_rank.to_string(),
            csv_float(r.truth),
            csv_float(r.mean_estimate),
            csv_float(r.abs_bias),
            csv_float(r.mse),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

/// Write kept or raw chain draws: iteration, weights, means,
/// variance(s).
pub fn write_chain_csv<W: std::io::Write>(draws: &ChainDraws, w: W) -> Result<(), CliError> {
    let j = draws.j_count;
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["iteration".to_string()];
    for k in 1..=j {
        header.push(format!("pi{k}"));
    }
    for k in 1..=j {
        header.push(format!("mu{k}"));
    }
    if draws.homoscedastic {
        header.push("sigma2".into());
    } else {
        for k in 1..=j {
            header.push(format!("sigma2_{k}"));
        }
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for (t, row) in draws.rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|&v| csv_float(v)));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(format!("csv write: {e}"))
}

/// Write plain sample values: index, value.
pub fn write_values_csv<W: std::io::Write>(values: &[f64], w: W) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["index", "value"]).map_err(csv_err)?;
    for (i, v) in values.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), csv_float(*v)]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

/// Read plain sample values (a `value` column; other columns ignored).
/// Malformed rows are rejected with their line number.
pub fn read_values_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("open {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let vi = headers.iter().position(|h| h == "value").ok_or_else(|| {
        CliError::Data(format!("{}: no column named value", path.display()))
    })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw = rec.get(vi).ok_or_else(|| {
            CliError::Data(format!("{} line {line}: missing value field", path.display()))
        })?;
        let v: f64 = raw.trim().parse().map_err(|_| {
            CliError::Data(format!(
                "{} line {line}: value {raw:?} is not a number",
                path.display()
            ))
        })?;
        if !v.is_finite() {
            return Err(CliError::Data(format!(
                "{} line {line}: non-finite value",
                path.display()
            )));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: dataset has no rows", path.display())));
    }
    Ok(out)
}

#[derive(Serialize)]
struct ManifestCell {
    h: usize,
    rho: f64,
    replicates: usize,
    excluded: usize,
    excluded_replicates: Vec<usize>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    kind: &'a str,
    versions: ManifestVersions<'a>,
    seed: u64,
    config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    population_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<TruthSpec>,
    cells: Vec<ManifestCell>,
}

#[derive(Serialize)]
struct ManifestVersions<'a> {
    rssmix: &'a str,
    #[serde(rename = "rssmix-cli")]
    cli: &'a str,
}

fn manifest_cells(cells: &[CellReport]) -> Vec<ManifestCell> {
    cells
        .iter()
        .map(|c| ManifestCell {
            h: c.h,
            rho: c.rho,
            replicates: c.replicates,
            excluded: c.excluded.len(),
            excluded_replicates: c.excluded.clone(),
        })
        .collect()
}

fn rho_tag(rho: f64) -> String {
    format!("{rho}")
}

fn write_cell_files(
    dir: &Path,
    cell: &CellReport,
    truths: &[(String, f64)],
) -> Result<(), CliError> {
    let tag = format!("H{}_rho{}", cell.h, rho_tag(cell.rho));
    let alpha_path = dir.join(format!("stage1_alpha_{tag}.csv"));
    write_alpha_csv(&cell.stage1_alpha, fs::File::create(&alpha_path)?)?;
    let est_path = dir.join(format!("estimates_{tag}.csv"));
    write_estimates_csv(&cell.records, fs::File::create(&est_path)?)?;
    let rec_path = dir.join(format!("alpha_recovery_{tag}.csv"));
    write_alpha_recovery_csv(&cell.alpha_recovery, fs::File::create(&rec_path)?)?;
    let rows = summarize_records(&cell.records, truths)?;
    if !rows.is_empty() {
        let sum_path = dir.join(format!("summary_{tag}.csv"));
        write_summary_csv(&rows, fs::File::create(&sum_path)?)?;
    }
    let survivors = cell.replicates - cell.excluded.len();
    if survivors >= 5 {
        let rows = plots::boxplot_rows(&cell.records)?;
        let plot_path = dir.join(format!("plots_{tag}.csv"));
        plots::write_boxplot_csv(&rows, fs::File::create(&plot_path)?)?;
    }
    Ok(())
}

/// Write the full study output tree under the configured directory.
pub fn write_study_report(
    cfg: &StudyConfig,
    report: &StudyReport,
) -> Result<PathBuf, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let truths = truth_values(&report.truth, report.variant);
    for cell in &report.cells {
        write_cell_files(dir, cell, &truths)?;
    }
    let manifest = Manifest {
        kind: "study",
        versions: ManifestVersions {
            rssmix: env!("CARGO_PKG_VERSION"),
            cli: env!("CARGO_PKG_VERSION"),
        },
        seed: report.seed,
        config: cfg,
        population_size: None,
        correlation: None,
        reference: None,
        cells: manifest_cells(&report.cells),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(dir.clone())
}

/// Write the full case-study output tree.
pub fn write_case_report(
    cfg: &CaseStudyConfig,
    report: &CaseReport,
) -> Result<PathBuf, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let truths = truth_values(&report.reference, report.variant);
    for cell in &report.cells {
        write_cell_files(dir, cell, &truths)?;
    }
    let j = report.reference.j_count();
    let reference = TruthSpec {
        weights: report.reference.weights().to_vec(),
        means: report.reference.means().to_vec(),
        variances: if report.reference.is_homoscedastic() {
            vec![report.reference.var(0)]
        } else {
            (0..j).map(|k| report.reference.var(k)).collect()
        },
    };
    let manifest = Manifest {
        kind: "case-study",
        versions: ManifestVersions {
            rssmix: env!("CARGO_PKG_VERSION"),
            cli: env!("CARGO_PKG_VERSION"),
        },
        seed: report.seed,
        config: cfg,
        population_size: report.population_size,
        correlation: Some(report.correlation),
        reference: Some(reference),
        cells: manifest_cells(&report.cells),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(dir.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimand_names_follow_convention() {
        assert_eq!(estimand_names(2, Variant::Hom), vec!["pi1", "mu1", "mu2", "sigma"]);
        assert_eq!(
            estimand_names(3, Variant::Het),
            vec!["pi1", "pi2", "mu1", "mu2", "mu3", "sigma1", "sigma2", "sigma3"]
        );
    }

    #[test]
    fn truth_values_take_sd_not_variance() {
        let p = MixtureParams::new_hom(vec![0.7, 0.3], vec![0.0, 5.0], 4.0).unwrap();
        let tv = truth_values(&p, Variant::Hom);
        assert_eq!(tv[0], ("pi1".to_string(), 0.7));
        assert_eq!(tv[3], ("sigma".to_string(), 2.0));
    }

    #[test]
    fn population_correlation_sign() {
        let pop = Population {
            outcome: vec![1.0, 2.0, 3.0, 4.0],
            concomitant: vec![4.0, 3.0, 2.0, 1.0],
        };
        assert!((pop.correlation() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rss_from_population_without_replacement_is_distinct() {
        use rand::SeedableRng;
        let n = 40;
        let pop = Population {
            outcome: (0..n).map(|i| i as f64).collect(),
            concomitant: (0..n).map(|i| i as f64).collect(),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data = draw_rss_from_population(&pop, 3, 4, true, false, &mut rng).unwrap();
        assert_eq!(data.len(), 12);
        // Perfect concomitant: judgment rank equals true rank.
        for i in 1..=4 {
            for r in 1..=3 {
                assert_eq!(data.true_rank(i, r), Some(r as u8));
            }
        }
        // 4 cycles x 9 identified units = 36 distinct of 40: measured
        // values cannot repeat.
        let mut vals: Vec<f64> = data.values().to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals.len(), 12);
    }

    #[test]
    fn rss_from_population_too_small_errors() {
        use rand::SeedableRng;
        let pop = Population { outcome: vec![1.0, 2.0, 3.0], concomitant: vec![1.0, 2.0, 3.0] };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let err = draw_rss_from_population(&pop, 2, 2, true, false, &mut rng).unwrap_err();
        assert!(err.to_string().contains("with_replacement"));
        assert!(draw_rss_from_population(&pop, 2, 2, true, true, &mut rng).is_ok());
    }

    #[test]
    fn alpha_recovery_zero_bias_for_exact_estimates() {
        let truth = MisplacementMatrix::identity(2);
        let rows = alpha_recovery_rows(&truth, &[truth.clone(), truth.clone()]);
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.abs_bias.abs() < 1e-15);
            assert!(r.mse.abs() < 1e-30);
            assert_eq!(r.mean_estimate, r.truth);
        }
    }

    #[test]
    fn estimates_csv_round_trip() {
        let records = vec![
            ReplicateRecord {
                method: Method::Srs,
                h: 3,
                rho: 0.9,
                replicate: 0,
                estimand: "mu1".into(),
                summary: PosteriorSummary {
                    mode: 0.25,
                    ci_low: -0.5,
                    ci_high: 1.0,
                    level: 0.95,
                },
            },
            ReplicateRecord {
                method: Method::Rss,
                h: 3,
                rho: 0.9,
                replicate: 1,
                estimand: "sigma".into(),
                summary: PosteriorSummary {
                    mode: 1.1,
                    ci_low: 0.8,
                    ci_high: 1.6,
                    level: 0.95,
                },
            },
        ];
        let mut buf = Vec::new();
        write_estimates_csv(&records, &mut buf).unwrap();
        let tmp = std::env::temp_dir().join("rssmix_estimates_roundtrip.csv");
        fs::write(&tmp, &buf).unwrap();
        let back = read_estimates_csv(&tmp).unwrap();
        fs::remove_file(&tmp).ok();
        assert_eq!(back, records);
    }

    #[test]
    fn summarize_records_groups_and_skips_singletons() {
        let mk = |method, estimand: &str, rep, mode| ReplicateRecord {
            method,
            h: 3,
            rho: 0.9,
            replicate: rep,
            estimand: estimand.into(),
            summary: PosteriorSummary {
                mode,
                ci_low: mode - 0.5,
                ci_high: mode + 0.5,
                level: 0.95,
            },
        };
        let records = vec![
            mk(Method::Srs, "mu1", 0, 0.1),
            mk(Method::Srs, "mu1", 1, -0.1),
            mk(Method::Rss, "mu1", 0, 0.05),
        ];
        let truths = vec![("mu1".to_string(), 0.0)];
        let rows = summarize_records(&records, &truths).unwrap();
        // Only the SRS group has >= 2 replicates.
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, Method::Srs);
        assert_eq!(rows[0].3.coverage, 1.0);
    }
}
