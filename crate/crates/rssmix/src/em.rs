//! EM estimation of the misplacement matrix: the E-step aggregates the
//! per-observation stratum posteriors into an H x H table, and the M-step
//! maximizes the expected complete-data log-likelihood over doubly
//! stochastic matrices exactly, via the KKT system alpha_rh =
//! zeta_rh / (u_r + v_h) solved in the dual.

use crate::design::{MisplacementMatrix, RssDataset};
use crate::error::{Error, Result};
use crate::latent;
use crate::mixture::MixtureParams;

/// Entries below this are floored before the dual solve; alpha is
/// scale-free in zeta, so this only guards logs and divisions.
const ZETA_FLOOR: f64 = 1e-12;
/// Target on the doubly stochastic deviation of the M-step output.
const DUAL_TOL: f64 = 1e-11;
/// Escalation rounds of (alternating sweeps, joint Newton).
const ROUNDS: usize = 8;

/// Expected stratum counts: entry (r, h) sums, over the observations
/// with judgment rank r, the posterior probability that the true
/// stratum is h. Each row of a balanced design sums to the cycle count.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaAggregate {
    entries: Vec<f64>,
    h: usize,
}

impl ZetaAggregate {
    /// Wrap a row-major H x H table of nonnegative finite values.
    pub fn new(entries: Vec<f64>, set_size: usize) -> Result<Self> {
        if set_size == 0 || entries.len() != set_size * set_size {
            return Err(Error::InvalidParam(format!(
                "zeta aggregate needs {set_size}x{set_size} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|&z| !z.is_finite() || z < 0.0) {
            return Err(Error::InvalidParam(
                "zeta aggregate entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { entries, h: set_size })
    }

    pub fn set_size(&self) -> usize {
        self.h
    }

    /// Entry for judgment rank `r` and true stratum `h` (both 1-based).
    pub fn get(&self, r: usize, h: usize) -> f64 {
        self.entries[(r - 1) * self.h + (h - 1)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Row sums (one per judgment rank).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.h)
            .map(|r| self.entries[r * self.h..(r + 1) * self.h].iter().sum())
            .collect()
    }
}

/// E-step: accumulate the stratum posteriors of every observation into
/// the aggregate table, row by judgment rank.
pub fn e_step(
    data: &RssDataset,
    alpha: &MisplacementMatrix,
    params: &MixtureParams,
) -> Result<ZetaAggregate> {
    let h = alpha.set_size();
    if data.set_size() != h {
        return Err(Error::InvalidParam(format!(
            "data set size {} does not match matrix size {h}",
            data.set_size()
        )));
    }
    let mut agg = vec![0.0; h * h];
    for (x, r) in data.iter_rank_value() {
        let w = latent::zeta_weights(x, r, alpha, params)?;
        for (c, &wc) in w.iter().enumerate() {
            agg[(r - 1) * h + c] += wc;
        }
    }
    ZetaAggregate::new(agg, h)
}

/// Expected complete-data log-likelihood term in alpha:
/// sum_rh zeta_rh ln alpha_rh, with the 0 * ln 0 = 0 convention.
pub fn q_value(zeta: &ZetaAggregate, alpha: &MisplacementMatrix) -> f64 {
    let h = zeta.set_size();
    let mut q = 0.0;
    for r in 1..=h {
        for c in 1..=h {
            let z = zeta.get(r, c);
            if z > 0.0 {
                q += z * alpha.get(r, c).ln();
            }
        }
    }
    q
}

/// Solve one dual block: for each row r, find u_r with
/// sum_c z_rc / (u_r + v_c) = 1 by monotone Newton started at
/// max_c(z_rc - v_c), where the residual is nonnegative.
fn block_rows(z: &[f64], h: usize, v: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; h];
    for r in 0..h {
        let row = &z[r * h..(r + 1) * h];
        let mut ur = f64::NEG_INFINITY;
        for c in 0..h {
            ur = ur.max(row[c] - v[c]);
        }
        for _ in 0..80 {
            let mut f = -1.0;
            let mut df = 0.0;
            for c in 0..h {
                let d = ur + v[c];
                let w = row[c] / d;
                f += w;
                df += w / d;
            }
            if f.abs() < 1e-14 {
                break;
            }
            ur += f / df;
        }
        u[r] = ur;
    }
    u
}

/// As [`block_rows`] over columns: v_c solving sum_r z_rc/(u_r+v_c) = 1.
fn block_cols(z: &[f64], h: usize, u: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; h];
    for c in 0..h {
        let mut vc = f64::NEG_INFINITY;
        for r in 0..h {
            vc = vc.max(z[r * h + c] - u[r]);
        }
        for _ in 0..80 {
            let mut f = -1.0;
            let mut df = 0.0;
            for r in 0..h {
                let d = u[r] + vc;
                let w = z[r * h + c] / d;
                f += w;
                df += w / d;
            }
            if f.abs() < 1e-14 {
                break;
            }
            vc += f / df;
        }
        v[c] = vc;
    }
    v
}

/// Max deviation of row/column sums of a row-major H x H matrix from one.
fn primal_deviation(alpha: &[f64], h: usize) -> f64 {
    let mut dev: f64 = 0.0;
    for r in 0..h {
        let s: f64 = alpha[r * h..(r + 1) * h].iter().sum();
        dev = dev.max((s - 1.0).abs());
    }
    for c in 0..h {
        let s: f64 = (0..h).map(|r| alpha[r * h + c]).sum();
        dev = dev.max((s - 1.0).abs());
    }
    dev
}

/// Max deviation of row/column sums of z/(u+v) from one.
fn dual_deviation(z: &[f64], h: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut dev: f64 = 0.0;
    for r in 0..h {
        let s: f64 = (0..h).map(|c| z[r * h + c] / (u[r] + v[c])).sum();
        dev = dev.max((s - 1.0).abs());
    }
    for c in 0..h {
        let s: f64 = (0..h).map(|r| z[r * h + c] / (u[r] + v[c])).sum();
        dev = dev.max((s - 1.0).abs());
    }
    dev
}

/// Dual objective -sum z ln(u+v) + sum u + sum v; +inf when infeasible.
fn dual_value(z: &[f64], h: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut g = 0.0;
    for r in 0..h {
        for c in 0..h {
            let d = u[r] + v[c];
            if d <= 0.0 {
                return f64::INFINITY;
            }
            g -= z[r * h + c] * d.ln();
        }
    }
    g + u.iter().sum::<f64>() + v.iter().sum::<f64>()
}

/// Gaussian elimination with partial pivoting; None when singular.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for k in 0..m {
        let mut p = k;
        for i in k + 1..m {
            if a[i * m + k].abs() > a[p * m + k].abs() {
                p = i;
            }
        }
        if a[p * m + k].abs() < 1e-300 {
            return None;
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            b.swap(k, p);
        }
        for i in k + 1..m {
            let f = a[i * m + k] / a[k * m + k];
            for c in k..m {
                a[i * m + c] -= f * a[k * m + c];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = b[k];
        for c in k + 1..m {
            s -= a[k * m + c] * x[c];
        }
        x[k] = s / a[k * m + k];
    }
    if x.iter().all(|xv| xv.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// One damped Newton pass on the reduced dual (gauge v_0 = 0), mutating
/// (u, v) until the gradient falls under `gtol` or progress stalls.
fn joint_newton(z: &[f64], h: usize, u: &mut Vec<f64>, v: &mut Vec<f64>, gtol: f64) {
    let m = 2 * h - 1;
    for _ in 0..100 {
        // Gradient of the dual: 1 - row sums / 1 - column sums of alpha.
        let mut gu = vec![1.0; h];
        let mut gv = vec![1.0; h];
        let mut w2 = vec![0.0; h * h];
        for r in 0..h {
            for c in 0..h {
                let d = u[r] + v[c];
                let a = z[r * h + c] / d;
                gu[r] -= a;
                gv[c] -= a;
                w2[r * h + c] = a / d;
            }
        }
        let gmax = gu
            .iter()
            .chain(gv.iter())
            .fold(0.0f64, |acc, &g| acc.max(g.abs()));
        if gmax < gtol {
            break;
        }
        // Reduced Hessian over (u, v_1..v_{H-1}).
        let mut hm = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for r in 0..h {
            hm[r * m + r] = (0..h).map(|c| w2[r * h + c]).sum();
            rhs[r] = -gu[r];
        }
        for c in 1..h {
            let k = h + c - 1;
            hm[k * m + k] = (0..h).map(|r| w2[r * h + c]).sum();
            rhs[k] = -gv[c];
            for r in 0..h {
                hm[r * m + k] = w2[r * h + c];
                hm[k * m + r] = w2[r * h + c];
            }
        }
        // Adaptive ridge on a singular solve.
        let base = (0..m).map(|k| hm[k * m + k]).fold(1e-300f64, f64::max);
        let mut lam = 0.0;
        let mut step = None;
        for _ in 0..40 {
            let mut hr = hm.clone();
            for k in 0..m {
                hr[k * m + k] += lam;
            }
            if let Some(s) = solve_linear(hr, rhs.clone(), m) {
                step = Some(s);
                break;
            }
            lam = if lam == 0.0 { base * 1e-14 } else { lam * 100.0 };
        }
        let Some(s) = step else { break };
        let du = &s[..h];
        let mut dv = vec![0.0; h];
        dv[1..h].copy_from_slice(&s[h..]);
        // Pull back to keep every u_r + v_c positive.
        let mut t = 1.0f64;
        for r in 0..h {
            for c in 0..h {
                let dd = du[r] + dv[c];
                if dd < 0.0 {
                    t = t.min(0.9 * (-(u[r] + v[c]) / dd));
                }
            }
        }
        t = t.min(1.0);
        // Backtrack on the dual value.
        let g0 = dual_value(z, h, u, v);
        let mut accepted = false;
        for _ in 0..60 {
            let ut: Vec<f64> = (0..h).map(|r| u[r] + t * du[r]).collect();
            let vt: Vec<f64> = (0..h).map(|c| v[c] + t * dv[c]).collect();
            if dual_value(z, h, &ut, &vt) <= g0 + 1e-18 {
                *u = ut;
                *v = vt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// M-step: the doubly stochastic matrix maximizing
/// sum_rh zeta_rh ln alpha_rh. The unique interior maximizer has the
/// form alpha = zeta / (u_r + v_h); the dual pair is found by
/// alternating row/column solves escalated with damped Newton.
pub fn m_step(zeta: &ZetaAggregate) -> Result<MisplacementMatrix> {
    let h = zeta.set_size();
    for r in 1..=h {
        if zeta.row_sums()[r - 1] <= 0.0 {
            return Err(Error::DegenerateZeta { row: r });
        }
    }
    if h == 1 {
        return MisplacementMatrix::new(vec![1.0], 1);
    }
    // Scale-free in zeta: normalize total mass to H to condition the dual.
    let total: f64 = zeta.entries().iter().map(|&z| z.max(ZETA_FLOOR)).sum();
    let z: Vec<f64> = zeta
        .entries()
        .iter()
        .map(|&e| e.max(ZETA_FLOOR) * (h as f64 / total))
        .collect();

    // For H = 2 the doubly stochastic set is the segment
    // [[t, 1-t], [1-t, t]], and the maximizer is explicit.
    if h == 2 {
        let t = (z[0] + z[3]) / z.iter().sum::<f64>();
        return MisplacementMatrix::new(vec![t, 1.0 - t, 1.0 - t, t], 2);
    }

    let mut u: Vec<f64> = (0..h).map(|r| z[r * h..(r + 1) * h].iter().sum()).collect();
    let mut v = vec![0.0; h];
    let mut sweeps = 3usize;
    for _ in 0..ROUNDS {
        for _ in 0..sweeps {
            u = block_rows(&z, h, &v);
            v = block_cols(&z, h, &u);
        }
        if dual_deviation(&z, h, &u, &v) < DUAL_TOL {
            break;
        }
        joint_newton(&z, h, &mut u, &mut v, DUAL_TOL * 0.1);
        if dual_deviation(&z, h, &u, &v) < DUAL_TOL {
            break;
        }
        sweeps = (sweeps * 4).min(200);
    }
    // Final row polish: rows become exact to ~1e-14.
    u = block_rows(&z, h, &v);
    let mut alpha: Vec<f64> = (0..h * h)
        .map(|k| (z[k] / (u[k / h] + v[k % h])).clamp(0.0, 1.0))
        .collect();
    // When the optimum puts a large alpha_rh on a near-zero aggregate
    // entry, the dual sum u_r + v_h for that cell is a tiny difference
    // of O(1) terms, and one ulp of placement error in the duals already
    // moves the entry past the target tolerance. Finish on the primal
    // scale: subtracting the rank-2 correction with row sums r_i and
    // column sums c_j lands exactly on the sum constraints in one pass,
    // except where a small entry would turn negative; those entries are
    // halved instead, and their leftover obstruction halves with them,
    // so the deviation dies geometrically. The correction size is the
    // residual itself, so the maximized objective moves only at second
    // order.
    if primal_deviation(&alpha, h) > 1e-10 {
        let hf = h as f64;
        for _ in 0..500 {
            let rr: Vec<f64> = (0..h)
                .map(|r| alpha[r * h..(r + 1) * h].iter().sum::<f64>() - 1.0)
                .collect();
            let cc: Vec<f64> =
                (0..h).map(|c| (0..h).map(|r| alpha[r * h + c]).sum::<f64>() - 1.0).collect();
            let s: f64 = rr.iter().sum();
            for r in 0..h {
                for c in 0..h {
                    let corr = rr[r] / hf + cc[c] / hf - s / (hf * hf);
                    let a = alpha[r * h + c];
                    alpha[r * h + c] = (a - corr).max(0.5 * a);
                }
            }
            if primal_deviation(&alpha, h) <= 1e-12 {
                break;
            }
        }
        for a in &mut alpha {
            *a = a.clamp(0.0, 1.0);
        }
    }
    MisplacementMatrix::new(alpha, h)
}

/// Stopping rule and iteration budget for [`em_alpha`].
#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    /// Stop when the max absolute change of alpha falls to this.
    pub tol: f64,
    /// Iteration budget; exhausting it is an error.
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 100 }
    }
}

/// Converged EM output.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub alpha: MisplacementMatrix,
    /// Iterations actually used (final one included).
    pub iterations: usize,
}

/// Alternate [`e_step`] and [`m_step`] from `alpha0` until the matrix
/// moves less than `config.tol` in max norm. Exhausting the budget
/// returns [`Error::EmNonConvergence`]; callers treat that as a failure
/// of the surrounding chain or replicate.
pub fn em_alpha(
    data: &RssDataset,
    alpha0: &MisplacementMatrix,
    params: &MixtureParams,
    config: EmConfig,
) -> Result<EmOutcome> {
    let h = alpha0.set_size();
    if data.set_size() != h {
        return Err(Error::InvalidParam(format!(
            "data set size {} does not match matrix size {h}",
            data.set_size()
        )));
    }
    // The order-statistic factor of each observation depends on the
    // parameters only, so the iterations share one precomputed table and
    // each pass costs a single log-sum-exp per observation.
    let mut table = Vec::with_capacity(data.len());
    for (x, r) in data.iter_rank_value() {
        table.push((r, latent::stratum_log_factors(x, h, params)?));
    }
    let mut alpha = alpha0.clone();
    let mut delta = f64::INFINITY;
    for it in 1..=config.max_iter {
        let mut agg = vec![0.0; h * h];
        for (r, factors) in &table {
            let w = latent::zeta_weights_from_factors(*r, &alpha, factors)?;
            for (c, &wc) in w.iter().enumerate() {
                agg[(*r - 1) * h + c] += wc;
            }
        }
        let next = m_step(&ZetaAggregate::new(agg, h)?)?;
        delta = next.max_abs_diff(&alpha);
        alpha = next;
        if delta <= config.tol {
            return Ok(EmOutcome { alpha, iterations: it });
        }
    }
    Err(Error::EmNonConvergence { max_iter: config.max_iter, delta })
}
