use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::simple_ols;

/// Log-log least-squares fit of a metric against sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub sample_sizes: Vec<usize>,
    pub metric_means: Vec<f64>,
    pub runs_per_size: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Default minimum number of runs aggregated per sample size.
pub const MIN_RUNS_PER_SIZE: usize = 5;

/// Fit `log(mean metric) = intercept + slope * log N` over `(N, metric)` runs.
pub fn fit_rate(runs: &[(usize, f64)]) -> Result<RateFit> {
    fit_rate_with(runs, MIN_RUNS_PER_SIZE)
}

pub fn fit_rate_with(runs: &[(usize, f64)], min_runs: usize) -> Result<RateFit> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(n, m) in runs {
        if n == 0 {
            return Err(invalid("sample size must be positive"));
        }
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Degenerate(format!("metric {m} at N = {n} is not a positive finite number")));
        }
        groups.entry(n).or_default().push(m);
    }
    if groups.len() < 3 {
        return Err(invalid(format!("need at least 3 distinct sample sizes, got {}", groups.len())));
    }
    if let Some((n, v)) = groups.iter().find(|(_, v)| v.len() < min_runs) {
        return Err(invalid(format!("N = {n} has {} runs, need at least {min_runs}", v.len())));
    }
    let sample_sizes: Vec<usize> = groups.keys().copied().collect();
    let metric_means: Vec<f64> = groups.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let runs_per_size = groups.values().map(Vec::len).collect();
    let lx: Vec<f64> = sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = metric_means.iter().map(|m| m.ln()).collect();
    let (slope, intercept, r_squared) = simple_ols(&lx, &ly);
    Ok(RateFit { sample_sizes, metric_means, runs_per_size, slope, intercept, r_squared })
}

impl RateFit {
    /// `N,metric` CSV of the aggregated points.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "metric"])?;
        for (n, m) in self.sample_sizes.iter().zip(&self.metric_means) {
            w.write_record([n.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
