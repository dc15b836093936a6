//! End-to-end diagnostics: orthogonality of both scores, instrument
//! relevance, and the empirical rate fit from a sweep report.

use std::path::{Path, PathBuf};

use dmliv::diagnostics::{
    fit_rate_with, probe_directions, relevance_check, truth_nuisances, OrthogonalityReport, RateFit, RelevanceReport,
    ScoreKind, Verdict,
};
use dmliv::rng::{derive_seed, str_tag};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::{read_report, REPORT_FILE};

/// A suite result, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Entry<T> {
    Ok { report: T },
    Skipped { reason: String },
    Error { message: String },
}

impl<T> Entry<T> {
    fn from_result<E: std::fmt::Display>(r: std::result::Result<T, E>) -> Self {
        match r {
            Ok(report) => Entry::Ok { report },
            Err(e) => Entry::Error { message: e.to_string() },
        }
    }

    pub fn report(&self) -> Option<&T> {
        match self {
            Entry::Ok { report } => Some(report),
            _ => None,
        }
    }
}

/// One pass/fail verdict against its acceptance bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub config_digest: String,
    pub version: String,
    pub relevance: Entry<RelevanceReport>,
    pub orthogonal_score: Entry<OrthogonalityReport>,
    pub standard_score: Entry<OrthogonalityReport>,
    pub rate: Entry<RateFit>,
    pub checks: Vec<Check>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

fn max_z(r: &OrthogonalityReport) -> f64 {
    r.probes.iter().map(|p| p.joint.z_score()).fold(0.0, f64::max)
}

/// `(N, RMSE)` pairs of successful `method` rows in a report.
pub fn rate_runs(path: &Path, method: &str) -> crate::error::Result<Vec<(usize, f64)>> {
    Ok(read_report(path)?
        .into_iter()
        .filter(|r| r.is_ok() && r.method == method)
        .filter_map(|r| r.mse_h.map(|m| (r.n, m.sqrt())))
        .collect())
}

fn rate_source(cfg: &ExperimentConfig, output_dir: &Path) -> PathBuf {
    if cfg.diagnostics.rate_report.is_empty() {
        output_dir.join(REPORT_FILE)
    } else {
        PathBuf::from(&cfg.diagnostics.rate_report)
    }
}

/// Run every suite. Failures inside a suite become error entries and
/// failed checks; nothing here returns early.
pub fn run_diagnostics(cfg: &ExperimentConfig, output_dir: &Path) -> DiagnosticsReport {
    let d = &cfg.diagnostics;
    let seed = derive_seed(cfg.root_seed, &[str_tag("diagnostics")]);
    let data = cfg.generate(d.n_samples, seed);
    let mut checks = Vec::new();

    let relevance = Entry::from_result(
        data.as_ref()
            .map_err(|e| e.to_string())
            .and_then(|x| relevance_check(x, cfg.fit.weak_instrument_threshold).map_err(|e| e.to_string())),
    );
    checks.push(match relevance.report() {
        Some(r) => {
            check("instrument_relevance", !r.weak, format!("F = {:.3} against threshold {}", r.statistic, r.threshold))
        }
        None => check("instrument_relevance", false, "relevance check failed".into()),
    });

    let (orthogonal_score, standard_score) = match &data {
        Ok(x) => match truth_nuisances(x, d.orthogonality.oracle_draws, d.orthogonality.mc_samples, seed) {
            Ok(nuis) => {
                let probe = |kind| Entry::from_result(probe_directions(kind, x, &nuis, &d.orthogonality, seed));
                (probe(ScoreKind::Orthogonal), probe(ScoreKind::Standard))
            }
            Err(e) => (Entry::Error { message: e.to_string() }, Entry::Error { message: e.to_string() }),
        },
        Err(e) => (Entry::Error { message: e.to_string() }, Entry::Error { message: e.to_string() }),
    };
    checks.push(match orthogonal_score.report() {
        Some(r) => check(
            "orthogonal_score",
            r.verdict == Verdict::Orthogonal,
            format!("verdict {:?}, max |est|/SE {:.2}", r.verdict, max_z(r)),
        ),
        None => check("orthogonal_score", false, "probe failed".into()),
    });
    checks.push(match standard_score.report() {
        Some(r) => check(
            "standard_score_control",
            r.verdict == Verdict::NotOrthogonal,
            format!("verdict {:?}, max |est|/SE {:.2}", r.verdict, max_z(r)),
        ),
        None => check("standard_score_control", false, "probe failed".into()),
    });

    let source = rate_source(cfg, output_dir);
    let rate = if source.exists() {
        Entry::from_result(
            rate_runs(&source, d.rate_method.as_str())
                .map_err(|e| e.to_string())
                .and_then(|runs| fit_rate_with(&runs, d.rate_min_runs).map_err(|e| e.to_string())),
        )
    } else {
        Entry::Skipped { reason: format!("{} not found", source.display()) }
    };
    match &rate {
        Entry::Ok { report } => checks.push(check(
            "rate_slope",
            report.slope <= d.rate_max_slope && report.r_squared >= d.rate_min_r_squared,
            format!(
                "slope {:.3} (bound {}), r2 {:.3} (bound {})",
                report.slope, d.rate_max_slope, report.r_squared, d.rate_min_r_squared
            ),
        )),
        Entry::Error { message } => checks.push(check("rate_slope", false, message.clone())),
        Entry::Skipped { .. } => {}
    }

    DiagnosticsReport {
        config_digest: cfg.digest(),
        version: dmliv::VERSION.to_string(),
        relevance,
        orthogonal_score,
        standard_score,
        rate,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load;
    use crate::report::{sample_row, write_rows};

    fn small(extra: &[&str]) -> ExperimentConfig {
        let mut o: Vec<String> = [
            "diagnostics.n_samples=2000",
            "diagnostics.orthogonality.oracle_draws=4000",
            "diagnostics.orthogonality.mc_samples=64",
            "diagnostics.orthogonality.directions=2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        o.extend(extra.iter().map(|s| s.to_string()));
        load(None, &o).unwrap()
    }

    #[test]
    fn irrelevant_instrument_fails_the_relevance_check() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_diagnostics(&small(&["iv_strength=0"]), dir.path());
        let c = rep.checks.iter().find(|c| c.name == "instrument_relevance").unwrap();
        assert!(!c.passed);
        assert!(!rep.passed());
        assert!(matches!(rep.rate, Entry::Skipped { .. }));
    }

    #[test]
    fn planted_rate_law_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for n in [500, 1000, 2000, 4000, 8000] {
            for s in 0..5 {
                rows.push(sample_row("dmliv", n, s, 4.0 / n as f64));
            }
        }
        write_rows(&rows, std::fs::File::create(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        let rep = run_diagnostics(&small(&[]), dir.path());
        let r = rep.rate.report().unwrap();
        assert!((r.slope + 0.5).abs() < 0.01, "slope {}", r.slope);
        assert!(rep.checks.iter().find(|c| c.name == "rate_slope").unwrap().passed);
    }
}
