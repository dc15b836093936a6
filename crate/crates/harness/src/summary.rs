//! Per-group statistics of a report and plot-ready series.

use std::collections::BTreeMap;
use std::io::Write;

use dmliv::stats::{mean, quantile_type7, sample_std};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::report::{ReportRow, GROUP_KEYS, METRICS};

/// Mean, sample standard deviation and type-7 quartiles of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            count: values.len(),
            mean: mean(values),
            std: if values.len() > 1 { sample_std(values) } else { 0.0 },
            median: quantile_type7(values, 0.5),
            q25: quantile_type7(values, 0.25),
            q75: quantile_type7(values, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Values of the grouping columns, in the requested order.
    pub group: Vec<String>,
    pub n_rows: usize,
    pub n_errors: usize,
    /// Statistics over the successful rows, per metric.
    pub metrics: BTreeMap<String, MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub group_keys: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

pub fn check_group_keys<S: AsRef<str>>(keys: &[S]) -> Result<()> {
    for k in keys {
        if !GROUP_KEYS.contains(&k.as_ref()) {
            return Err(HarnessError::UnknownGroupKey(k.as_ref().to_string()));
        }
    }
    Ok(())
}

/// Group `rows` by `group_keys`. Groups are ordered by first appearance.
pub fn summarize<S: AsRef<str>>(rows: &[ReportRow], group_keys: &[S]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    check_group_keys(group_keys)?;
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut groups: BTreeMap<Vec<String>, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let g: Vec<String> = group_keys.iter().map(|k| r.group_value(k.as_ref()).expect("checked key")).collect();
        let members = groups.entry(g.clone()).or_default();
        if members.is_empty() {
            order.push(g);
        }
        members.push(r);
    }
    let rows = order
        .into_iter()
        .map(|g| {
            let members = &groups[&g];
            let ok: Vec<&&ReportRow> = members.iter().filter(|r| r.is_ok()).collect();
            let mut metrics = BTreeMap::new();
            for m in METRICS {
                let vals: Vec<f64> = ok.iter().filter_map(|r| r.metric(m).flatten()).collect();
                if let Some(s) = MetricStats::of(&vals) {
                    metrics.insert(m.to_string(), s);
                }
            }
            SummaryRow { n_rows: members.len(), n_errors: members.len() - ok.len(), group: g, metrics }
        })
        .collect();
    Ok(Summary { group_keys: group_keys.iter().map(|k| k.as_ref().to_string()).collect(), rows })
}

impl Summary {
    /// Wide CSV: group columns, counts, then `<metric>_<stat>` columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let stats = ["mean", "std", "median", "q25", "q75"];
        let mut header: Vec<String> = self.group_keys.clone();
        header.extend(["n_rows".to_string(), "n_errors".to_string()]);
        for m in METRICS {
            header.extend(stats.iter().map(|s| format!("{m}_{s}")));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = r.group.clone();
            rec.push(r.n_rows.to_string());
            rec.push(r.n_errors.to_string());
            for m in METRICS {
                match r.metrics.get(m) {
                    Some(s) => rec.extend([s.mean, s.std, s.median, s.q25, s.q75].iter().map(f64::to_string)),
                    None => rec.extend(std::iter::repeat_n(String::new(), stats.len())),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: usize,
    #[serde(flatten)]
    pub stats: MetricStats,
}

/// Series keyed by method, x = N, for every metric present in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x: String,
    pub series_key: String,
    pub metrics: BTreeMap<String, BTreeMap<String, Vec<PlotPoint>>>,
}

pub fn plot_data(rows: &[ReportRow]) -> Result<PlotData> {
    let summary = summarize(rows, &["method", "N"])?;
    let mut metrics: BTreeMap<String, BTreeMap<String, Vec<PlotPoint>>> = BTreeMap::new();
    for r in &summary.rows {
        let x: usize = r.group[1].parse().expect("N renders as an integer");
        for (m, s) in &r.metrics {
            metrics
                .entry(m.clone())
                .or_default()
                .entry(r.group[0].clone())
                .or_default()
                .push(PlotPoint { x, stats: *s });
        }
    }
    for series in metrics.values_mut().flat_map(|s| s.values_mut()) {
        series.sort_by_key(|p| p.x);
    }
    Ok(PlotData { x: "N".into(), series_key: "method".into(), metrics })
}
