//! Ranked-set sampling design: simulating imperfectly ranked samples via
//! a noisy concomitant and estimating the misplacement probability
//! matrix from repeated ranking rounds (stage 1 of the studies).

use crate::draws;
use crate::error::{Error, Result};
use crate::mixture::MixtureParams;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// H x H doubly stochastic matrix of ranking-error probabilities;
/// entry (r, h) is P(true rank h | judgment rank r).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MisplacementMatrix {
    /// Row-major H x H probabilities.
    alpha: Vec<f64>,
    h: usize,
}

/// Tolerance on row/column sums for a valid doubly stochastic matrix.
pub const DS_TOL: f64 = 1e-9;

impl MisplacementMatrix {
    /// Validate and wrap an H x H matrix (row-major).
    pub fn new(alpha: Vec<f64>, h: usize) -> Result<Self> {
        Self::with_tolerance(alpha, h, DS_TOL)
    }

    /// As [`new`](Self::new) but with an explicit tolerance on the
    /// row/column sums (some callers accept looser, e.g. user input).
    pub fn with_tolerance(alpha: Vec<f64>, h: usize, tol: f64) -> Result<Self> {
        if h == 0 || alpha.len() != h * h {
            return Err(Error::InvalidParam(format!(
                "misplacement matrix needs {h}x{h} = {} entries, got {}",
                h * h,
                alpha.len()
            )));
        }
        if alpha.iter().any(|&a| !(0.0..=1.0).contains(&a) || !a.is_finite()) {
            return Err(Error::InvalidParam("matrix entries must lie in [0, 1]".into()));
        }
        let m = Self { alpha, h };
        let dev = m.ds_deviation();
        if dev > tol {
            return Err(Error::InvalidParam(format!(
                "matrix is not doubly stochastic: max row/col sum deviation {dev:.3e} > {tol:.0e}"
            )));
        }
        Ok(m)
    }

    /// Identity matrix: perfect ranking.
    pub fn identity(h: usize) -> Self {
        let mut alpha = vec![0.0; h * h];
        for i in 0..h {
            alpha[i * h + i] = 1.0;
        }
        Self { alpha, h }
    }

    /// Uniform matrix 1/H: complete ranking noise and the EM start.
    pub fn uniform(h: usize) -> Self {
        Self { alpha: vec![1.0 / h as f64; h * h], h }
    }

    pub fn set_size(&self) -> usize {
        self.h
    }

    /// Entry (r, h) with 1-based ranks.
    pub fn get(&self, r: usize, h: usize) -> f64 {
        self.alpha[(r - 1) * self.h + (h - 1)]
    }

    /// Row for judgment rank `r` (1-based).
    pub fn row(&self, r: usize) -> &[f64] {
        &self.alpha[(r - 1) * self.h..r * self.h]
    }

    /// Raw row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.alpha
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn ds_deviation(&self) -> f64 {
        let h = self.h;
        let mut dev: f64 = 0.0;
        for r in 0..h {
            let s: f64 = self.alpha[r * h..(r + 1) * h].iter().sum();
            dev = dev.max((s - 1.0).abs());
        }
        for c in 0..h {
            let s: f64 = (0..h).map(|r| self.alpha[r * h + c]).sum();
            dev = dev.max((s - 1.0).abs());
        }
        dev
    }

    /// Max absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.alpha
            .iter()
            .zip(&other.alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Project a nonnegative matrix onto the doubly stochastic set by
/// alternating row/column normalization until every row and column sum
/// is within `DS_TOL` of 1. Entries are floored at 1e-12 first so the
/// scaling has strictly positive support; an input that already
/// satisfies the invariant (e.g. an exact permutation matrix) is
/// returned unchanged.
pub fn sinkhorn_project(counts: &[f64], h: usize) -> Result<MisplacementMatrix> {
    if h == 0 || counts.len() != h * h {
        return Err(Error::InvalidParam("projection input must be H x H".into()));
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::InvalidParam("projection input must be nonnegative".into()));
    }
    let probe = MisplacementMatrix { alpha: counts.to_vec(), h };
    if probe.ds_deviation() <= DS_TOL && counts.iter().all(|&c| (0.0..=1.0).contains(&c)) {
        return Ok(probe);
    }
    let mut a: Vec<f64> = counts.iter().map(|&c| c.max(1e-12)).collect();
    for _ in 0..10_000 {
        for r in 0..h {
            let s: f64 = a[r * h..(r + 1) * h].iter().sum();
            for v in &mut a[r * h..(r + 1) * h] {
                *v /= s;
            }
        }
        for c in 0..h {
            let s: f64 = (0..h).map(|r| a[r * h + c]).sum();
            for r in 0..h {
                a[r * h + c] /= s;
            }
        }
        let m = MisplacementMatrix { alpha: a.clone(), h };
        if m.ds_deviation() <= DS_TOL {
            return Ok(m);
        }
    }
    Err(Error::InvalidParam(
        "alternating normalization did not reach a doubly stochastic matrix".into(),
    ))
}

/// Concomitant ranker: Z = X + eps with eps ~ N(0, (1-rho^2)/rho^2 * sigma^2).
/// A negative `rho` ranks in reverse concomitant order with ranking
/// quality |rho|.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankerConfig {
    /// Correlation between the measured value and the ranking variable;
    /// 0 < |rho| <= 1, negative means reversed ranking order.
    pub rho: f64,
    /// Population scale multiplying the noise.
    pub sigma: f64,
}

impl RankerConfig {
    pub fn new(rho: f64, sigma: f64) -> Result<Self> {
        if !(rho.abs() > 0.0 && rho.abs() <= 1.0) || !rho.is_finite() {
            return Err(Error::InvalidParam(format!("|rho| = {} outside (0, 1]", rho.abs())));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParam(format!("ranker sigma {sigma} must be positive")));
        }
        Ok(Self { rho, sigma })
    }

    /// Standard deviation of the concomitant noise.
    pub fn noise_sd(&self) -> f64 {
        let r2 = self.rho * self.rho;
        ((1.0 - r2) / r2).sqrt() * self.sigma
    }
}

/// A balanced ranked set sample: one measured value per
/// (cycle, judgment rank) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RssDataset {
    /// Row-major n x H values; entry (i, r) is the value measured at
    /// judgment rank r+1 in cycle i+1.
    values: Vec<f64>,
    cycles: usize,
    set_size: usize,
    /// True ranks (1-based), known only in simulation.
    true_ranks: Option<Vec<u8>>,
}

impl RssDataset {
    pub fn new(
        values: Vec<f64>,
        cycles: usize,
        set_size: usize,
        true_ranks: Option<Vec<u8>>,
    ) -> Result<Self> {
        if set_size == 0 || cycles == 0 || values.len() != cycles * set_size {
            return Err(Error::Data(format!(
                "need {cycles} cycles x {set_size} ranks = {} values, got {}",
                cycles * set_size,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite measurement".into()));
        }
        if let Some(tr) = &true_ranks {
            if tr.len() != values.len() {
                return Err(Error::Data("true-rank vector length mismatch".into()));
            }
            if tr.iter().any(|&t| t < 1 || t as usize > set_size) {
                return Err(Error::Data("true rank outside [1, H]".into()));
            }
        }
        Ok(Self { values, cycles, set_size, true_ranks })
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn set_size(&self) -> usize {
        self.set_size
    }

    /// Total number of measurements N = n * H.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at cycle `i`, judgment rank `r` (both 1-based).
    pub fn value(&self, i: usize, r: usize) -> f64 {
        self.values[(i - 1) * self.set_size + (r - 1)]
    }

    pub fn true_rank(&self, i: usize, r: usize) -> Option<u8> {
        self.true_ranks.as_ref().map(|tr| tr[(i - 1) * self.set_size + (r - 1)])
    }

    pub fn has_true_ranks(&self) -> bool {
        self.true_ranks.is_some()
    }

    /// Copy without the simulation-only true ranks.
    pub fn without_true_ranks(&self) -> Self {
        Self {
            values: self.values.clone(),
            cycles: self.cycles,
            set_size: self.set_size,
            true_ranks: None,
        }
    }

    /// All values in (cycle, rank) order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterate (value, judgment rank 1-based) over all observations.
    pub fn iter_rank_value(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (v, k % self.set_size + 1))
    }

    /// Write as CSV with columns cycle, judgment_rank, value[, true_rank].
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io_err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
        if self.true_ranks.is_some() {
            wtr.write_record(["cycle", "judgment_rank", "value", "true_rank"]).map_err(io_err)?;
        } else {
            wtr.write_record(["cycle", "judgment_rank", "value"]).map_err(io_err)?;
        }
        for i in 1..=self.cycles {
            for r in 1..=self.set_size {
                let mut rec = vec![i.to_string(), r.to_string(), format!("{:?}", self.value(i, r))];
                if let Some(t) = self.true_rank(i, r) {
                    rec.push(t.to_string());
                }
                wtr.write_record(&rec).map_err(io_err)?;
            }
        }
        wtr.flush().map_err(|e| Error::Data(format!("csv flush: {e}")))?;
        Ok(())
    }

    /// Parse the CSV format written by [`to_csv`](Self::to_csv). Rows may
    /// arrive in any order but must cover each (cycle, rank) pair exactly
    /// once; malformed rows are rejected with their line number.
    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| Error::Data(format!("csv header: {e}")))?.clone();
        let has_true = headers.iter().any(|f| f == "true_rank");
        for (name, pos) in [("cycle", 0), ("judgment_rank", 1), ("value", 2)] {
            if headers.get(pos) != Some(name) {
                return Err(Error::Data(format!("expected column {pos} to be '{name}'")));
            }
        }
        let mut rows: Vec<(usize, usize, f64, Option<u8>)> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2; // 1-based, after the header line
            let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            let field = |pos: usize, name: &str| {
                rec.get(pos)
                    .ok_or_else(|| Error::Data(format!("line {line}: missing {name}")))
            };
            let cycle: usize = field(0, "cycle")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad cycle")))?;
            let rank: usize = field(1, "judgment_rank")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad judgment_rank")))?;
            let value: f64 = field(2, "value")?
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad value")))?;
            let t = if has_true {
                Some(
                    field(3, "true_rank")?
                        .parse::<u8>()
                        .map_err(|_| Error::Data(format!("line {line}: bad true_rank")))?,
                )
            } else {
                None
            };
            rows.push((cycle, rank, value, t));
        }
        if rows.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let cycles = rows.iter().map(|r| r.0).max().unwrap();
        let set_size = rows.iter().map(|r| r.1).max().unwrap();
        if rows.len() != cycles * set_size {
            return Err(Error::Data(format!(
                "{} rows for {cycles} cycles x {set_size} ranks",
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; cycles * set_size];
        let mut ranks = vec![0u8; cycles * set_size];
        for (cycle, rank, value, t) in rows {
            if cycle == 0 || rank == 0 {
                return Err(Error::Data("cycle and judgment_rank are 1-based".into()));
            }
            let k = (cycle - 1) * set_size + (rank - 1);
            if !values[k].is_nan() {
                return Err(Error::Data(format!("duplicate (cycle {cycle}, rank {rank})")));
            }
            values[k] = value;
            if let Some(t) = t {
                ranks[k] = t;
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("missing (cycle, rank) combinations".into()));
        }
        Self::new(values, cycles, set_size, has_true.then_some(ranks))
    }
}

/// Draw one RSS cycle: for each judgment rank r = 1..H a fresh set of H
/// iid mixture values is ranked by the noisy concomitant and the unit
/// at concomitant rank r is measured. Returns the measured values and
/// their true within-set ranks.
///
/// Negative `rho` models a concomitant Z = -X + eps; judgment ranks are
/// then assigned in descending Z order so that judgment rank 1 still
/// targets the smallest value. Quality depends only on |rho|.
pub fn draw_rss_cycle<R: Rng + ?Sized>(
    params: &MixtureParams,
    set_size: usize,
    ranker: &RankerConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<u8>) {
    let h = set_size;
    let noise_sd = ranker.noise_sd();
    let sign = if ranker.rho < 0.0 { -1.0 } else { 1.0 };
    let mut values = Vec::with_capacity(h);
    let mut true_ranks = Vec::with_capacity(h);
    let mut set = vec![0.0f64; h];
    let mut concomitant: Vec<(f64, usize)> = Vec::with_capacity(h);
    for r in 0..h {
        for v in set.iter_mut() {
            *v = draw_mixture(params, rng);
        }
        concomitant.clear();
        for (idx, &x) in set.iter().enumerate() {
            let eps = if noise_sd > 0.0 {
                draws::normal(rng, 0.0, noise_sd * noise_sd).expect("positive variance")
            } else {
                0.0
            };
            concomitant.push((sign * x + eps, idx));
        }
        // Ascending Z for a positive concomitant, descending for a
        // negative one (reversed rank order).
        concomitant.sort_by(|a, b| {
            let ord = a.0.total_cmp(&b.0);
            (if sign < 0.0 { ord.reverse() } else { ord }).then(a.1.cmp(&b.1))
        });
        let chosen = concomitant[r].1;
        let true_rank = 1 + set
            .iter()
            .enumerate()
            .filter(|&(idx, &x)| {
                x < set[chosen] || (x == set[chosen] && idx < chosen)
            })
            .count();
        values.push(set[chosen]);
        true_ranks.push(true_rank as u8);
    }
    (values, true_ranks)
}

/// One iid draw from the mixture.
pub fn draw_mixture<R: Rng + ?Sized>(params: &MixtureParams, rng: &mut R) -> f64 {
    let j = draws::categorical(rng, params.weights()).expect("valid weights");
    draws::normal(rng, params.means()[j], params.var(j)).expect("positive variance")
}

/// Stage-1 estimation of the misplacement matrix: repeat the ranking
/// process `reps` times, count judgment-rank -> true-rank occurrences,
/// divide by `reps` and project onto the doubly stochastic set.
pub fn estimate_alpha_stage1<R: Rng + ?Sized>(
    params: &MixtureParams,
    set_size: usize,
    ranker: &RankerConfig,
    reps: usize,
    rng: &mut R,
) -> Result<MisplacementMatrix> {
    if reps == 0 {
        return Err(Error::InvalidParam("stage-1 needs at least one reranking".into()));
    }
    let h = set_size;
    let mut counts = vec![0.0f64; h * h];
    for _ in 0..reps {
        let (_, true_ranks) = draw_rss_cycle(params, h, ranker, rng);
        for (r, &t) in true_ranks.iter().enumerate() {
            counts[r * h + (t as usize - 1)] += 1.0;
        }
    }
    for c in &mut counts {
        *c /= reps as f64;
    }
    sinkhorn_project(&counts, h)
}

/// How stage-2 datasets are generated.
#[derive(Debug, Clone)]
pub enum RssSource {
    /// Physically rank fresh mixture sets with a noisy concomitant.
    Ranker(RankerConfig),
    /// Treat a fixed misplacement matrix as the truth: draw the true
    /// stratum h from row r, then draw the value by inverting the
    /// mixture CDF at a Beta(h, H-h+1) variate (the h-th order statistic
    /// of H mixture draws, without rejection).
    Alpha(MisplacementMatrix),
}

/// Draw a balanced RSS dataset of `cycles` cycles.
pub fn draw_rss_dataset<R: Rng + ?Sized>(
    params: &MixtureParams,
    set_size: usize,
    cycles: usize,
    source: &RssSource,
    rng: &mut R,
) -> Result<RssDataset> {
    let h = set_size;
    if h == 0 || cycles == 0 {
        return Err(Error::InvalidParam("need positive set size and cycle count".into()));
    }
    let mut values = Vec::with_capacity(cycles * h);
    let mut true_ranks = Vec::with_capacity(cycles * h);
    match source {
        RssSource::Ranker(ranker) => {
            for _ in 0..cycles {
                let (v, t) = draw_rss_cycle(params, h, ranker, rng);
                values.extend(v);
                true_ranks.extend(t);
            }
        }
        RssSource::Alpha(alpha) => {
            if alpha.set_size() != h {
                return Err(Error::InvalidParam(format!(
                    "misplacement matrix is {}x{} but set size is {h}",
                    alpha.set_size(),
                    alpha.set_size()
                )));
            }
            if alpha.ds_deviation() > 1e-6 {
                return Err(Error::InvalidParam(
                    "misplacement matrix deviates from doubly stochastic beyond 1e-6".into(),
                ));
            }
            for _ in 0..cycles {
                for r in 1..=h {
                    let stratum = draws::categorical(rng, alpha.row(r))? + 1;
                    let beta = Beta::new(stratum as f64, (h - stratum + 1) as f64)
                        .expect("valid Beta parameters");
                    let w: f64 = beta.sample(rng);
                    values.push(params.quantile(w)?);
                    true_ranks.push(stratum as u8);
                }
            }
        }
    }
    RssDataset::new(values, cycles, h, Some(true_ranks))
}
