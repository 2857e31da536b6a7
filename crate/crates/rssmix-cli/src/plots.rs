//! Boxplot-ready quantile summaries of per-replicate point estimates:
//! five-number summary plus Tukey whiskers per (method, set size,
//! estimand) group.

use rssmix::analysis::quantile_type7;

use crate::study::{Method, ReplicateRecord};
use crate::CliError;

/// One boxplot row; whiskers are the most extreme points within 1.5
/// interquartile ranges of the quartiles.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotRow {
    pub method: Method,
    pub h: usize,
    pub rho: f64,
    pub estimand: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

/// Five-number summary with Tukey whiskers of one sample.
pub fn boxplot_stats(values: &[f64]) -> (f64, f64, f64, f64, f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_type7(&sorted, 0.25);
    let median = quantile_type7(&sorted, 0.50);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted.iter().cloned().find(|&v| v >= lo_fence).unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .cloned()
        .find(|&v| v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    (sorted[0], q1, median, q3, sorted[sorted.len() - 1], whisker_low, whisker_high)
}

/// Group replicate records and compute one boxplot row per
/// (method, h, rho, estimand) over the posterior modes. Every group
/// must hold at least five replicates.
pub fn boxplot_rows(records: &[ReplicateRecord]) -> Result<Vec<BoxplotRow>, CliError> {
    let mut keys: Vec<(Method, usize, f64, String)> = Vec::new();
    for r in records {
        let key = (r.method, r.h, r.rho, r.estimand.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then(a.2.total_cmp(&b.2))
            .then(a.0.cmp(&b.0))
            .then(a.3.cmp(&b.3))
    });
    let mut rows = Vec::with_capacity(keys.len());
    for (method, h, rho, estimand) in keys {
        let modes: Vec<f64> = records
            .iter()
            .filter(|r| {
                r.method == method && r.h == h && r.rho == rho && r.estimand == estimand
            })
            .map(|r| r.summary.mode)
            .collect();
        if modes.len() < 5 {
            return Err(CliError::Data(format!(
                "boxplot group {method} H={h} {estimand} has {} replicates; need at least 5",
                modes.len()
            )));
        }
        let (min, q1, median, q3, max, whisker_low, whisker_high) = boxplot_stats(&modes);
        rows.push(BoxplotRow {
            method,
            h,
            rho,
            estimand,
            min,
            q1,
            median,
            q3,
            max,
            whisker_low,
            whisker_high,
        });
    }
    Ok(rows)
}

/// Write boxplot rows as CSV with a fixed column schema.
pub fn write_boxplot_csv<W: std::io::Write>(
    rows: &[BoxplotRow],
    w: W,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "method",
        "h",
        "rho",
        "estimand",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "whisker_low",
        "whisker_high",
    ])
    .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    for r in rows {
        wtr.write_record([
            r.method.to_string(),
            r.h.to_string(),
            format!("{}", r.rho),
            r.estimand.clone(),
            format!("{}", r.min),
            format!("{}", r.q1),
            format!("{}", r.median),
            format!("{}", r.q3),
            format!("{}", r.max),
            format!("{}", r.whisker_low),
            format!("{}", r.whisker_high),
        ])
        .map_err(|e| CliError::Data(format!("csv write: {e}")))?;
    }
    wtr.flush().map_err(|e| CliError::Data(format!("csv flush: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rssmix::analysis::PosteriorSummary;

    fn rec(method: Method, estimand: &str, rep: usize, mode: f64) -> ReplicateRecord {
        ReplicateRecord {
            method,
            h: 3,
            rho: 0.9,
            replicate: rep,
            estimand: estimand.into(),
            summary: PosteriorSummary {
                mode,
                ci_low: mode - 1.0,
                ci_high: mode + 1.0,
                level: 0.95,
            },
        }
    }

    #[test]
    fn textbook_quartiles_on_nine_values() {
        let (min, q1, median, q3, max, wl, wh) =
            boxplot_stats(&[9.0, 1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0]);
        assert_eq!((min, q1, median, q3, max), (1.0, 3.0, 5.0, 7.0, 9.0));
        // No outliers: whiskers reach the extremes.
        assert_eq!((wl, wh), (1.0, 9.0));
    }

    #[test]
    fn outlier_shortens_whisker() {
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 100.0];
        let (min, q1, _, q3, max, wl, wh) = boxplot_stats(&vals);
        assert_eq!((min, max), (1.0, 100.0));
        assert_eq!((q1, q3), (3.0, 7.0));
        // Fence at q3 + 1.5*4 = 13: the outlier is beyond it.
        assert_eq!(wl, 1.0);
        assert_eq!(wh, 8.0);
    }

    #[test]
    fn constant_estimates_collapse() {
        let (min, q1, median, q3, max, wl, wh) = boxplot_stats(&[2.5; 12]);
        assert!(
            [min, q1, median, q3, max, wl, wh].iter().all(|&v| v == 2.5),
            "all quantiles equal the constant"
        );
    }

    #[test]
    fn groups_are_separate_and_small_groups_rejected() {
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(rec(Method::Srs, "mu1", i, i as f64));
            records.push(rec(Method::Rss, "mu1", i, 10.0 + i as f64));
        }
        let rows = boxplot_rows(&records).unwrap();
        assert_eq!(rows.len(), 2);
        let srs = rows.iter().find(|r| r.method == Method::Srs).unwrap();
        let rss = rows.iter().find(|r| r.method == Method::Rss).unwrap();
        assert_eq!(srs.median, 2.0);
        assert_eq!(rss.median, 12.0);

        records.truncate(9);
        assert!(boxplot_rows(&records).is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = boxplot_rows(
            &(0..5).map(|i| rec(Method::Srs, "pi1", i, 0.1 * i as f64)).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_boxplot_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "method,h,rho,estimand,min,q1,median,q3,max,whisker_low,whisker_high\n"
        ));
        assert!(text.contains("SRS,3,0.9,pi1,"));
    }
}
