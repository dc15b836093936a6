//! Cell execution and the sweep driver.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use dmliv::bandit::{evaluate_policy, Policy, PolicyValue, RandomPolicy};
use dmliv::datagen::ObservationSet;
use dmliv::estimation::{counterfactual_mse, fit_method, DmlivEstimate, Method};
use dmliv::rng::{derive_seed, str_tag};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{ReportRow, ReportWriter, RowStatus, REPORT_FILE};

/// One `(method, N, seed)` job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> (String, usize, u64) {
        (self.method.as_str().to_string(), self.n, self.seed)
    }

    pub fn label(&self) -> String {
        format!("{}-N{}-s{}", self.method, self.n, self.seed)
    }
}

/// Full grid, ordered by sample size, then seed, then method.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &cfg.sample_sizes {
        for &seed in &cfg.seeds {
            for &method in &cfg.methods {
                out.push(Cell { method, n, seed });
            }
        }
    }
    out
}

/// Seed of the fit itself: `hash(root_seed, method, N, seed)`.
pub fn cell_seed(cfg: &ExperimentConfig, cell: &Cell) -> u64 {
    derive_seed(cfg.root_seed, &[str_tag(cell.method.as_str()), cell.n as u64, cell.seed])
}

/// Seed of the dataset and of the evaluation draws, shared by every method
/// in the same `(N, seed)` slot so methods are compared on identical data.
pub fn data_seed(cfg: &ExperimentConfig, n: usize, seed: u64) -> u64 {
    derive_seed(cfg.root_seed, &[str_tag("data"), n as u64, seed])
}

pub fn cell_data(cfg: &ExperimentConfig, cell: &Cell) -> Result<ObservationSet> {
    cfg.generate(cell.n, data_seed(cfg, cell.n, cell.seed))
}

/// Metrics of a fitted model, computed against the data's truth model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellMetrics {
    pub mse_h: Option<f64>,
    pub reward_in_dist: Option<f64>,
    pub reward_ood: Option<f64>,
    pub subopt: Option<f64>,
    pub subopt_ood: Option<f64>,
    pub subopt_random: Option<f64>,
    pub reward_in_dist_std: Option<f64>,
    pub reward_ood_std: Option<f64>,
    pub subopt_std: Option<f64>,
}

pub fn evaluate_estimate(
    cfg: &ExperimentConfig,
    est: &DmlivEstimate,
    data: &ObservationSet,
    fit_seed: u64,
    eval_seed: u64,
) -> Result<CellMetrics> {
    let mut m = CellMetrics::default();
    if data.truth().is_none() {
        return Ok(m);
    }
    let e = &cfg.eval;
    m.mse_h = Some(counterfactual_mse(&est.model, data, e.n_test, derive_seed(eval_seed, &[str_tag("test")]))?);
    let policy =
        Policy::from_data(&est.model, data, e.action_grid, e.action_widen, derive_seed(fit_seed, &[str_tag("grid")]))?;
    let bounds = policy.bounds();
    let contexts = derive_seed(eval_seed, &[str_tag("policy")]);
    if let PolicyValue::Known(v) = evaluate_policy(&policy, data, bounds, e.n_eval, 0.0, contexts)? {
        m.reward_in_dist = Some(v.value);
        m.subopt = Some(v.suboptimality);
        m.reward_in_dist_std = Some(v.value_std);
        m.subopt_std = Some(v.suboptimality_std);
    }
    if let PolicyValue::Known(v) = evaluate_policy(&policy, data, bounds, e.n_eval, e.ood_shift, contexts)? {
        m.reward_ood = Some(v.value);
        m.subopt_ood = Some(v.suboptimality);
        m.reward_ood_std = Some(v.value_std);
    }
    let random = RandomPolicy { bounds, seed: derive_seed(eval_seed, &[str_tag("random")]) };
    if let PolicyValue::Known(v) = evaluate_policy(&random, data, bounds, e.n_eval, 0.0, contexts)? {
        m.subopt_random = Some(v.suboptimality);
    }
    Ok(m)
}

/// Outcome of one cell: the report row and, on success, the estimate.
pub struct CellResult {
    pub row: ReportRow,
    pub estimate: Option<DmlivEstimate>,
}

fn blank_row(cfg: &ExperimentConfig, digest: &str, cell: &Cell) -> ReportRow {
    ReportRow {
        method: cell.method.as_str().to_string(),
        estimator: cfg.estimator.as_str().to_string(),
        dataset: cfg.dataset.as_str().to_string(),
        n: cell.n,
        rho: cfg.rho,
        iv_strength: cfg.iv_strength,
        seed: cell.seed,
        status: RowStatus::Error,
        mse_h: None,
        reward_in_dist: None,
        reward_ood: None,
        subopt: None,
        subopt_ood: None,
        subopt_random: None,
        reward_in_dist_std: None,
        reward_ood_std: None,
        subopt_std: None,
        final_loss: None,
        epochs: None,
        wall_clock_s: 0.0,
        config_digest: digest.to_string(),
        version: dmliv::VERSION.to_string(),
        error: String::new(),
    }
}

/// Generate, fit and evaluate one cell. Failures become error rows.
pub fn run_cell(cfg: &ExperimentConfig, digest: &str, cell: &Cell) -> CellResult {
    let start = Instant::now();
    match cell_data(cfg, cell) {
        Ok(data) => {
            let mut res = run_cell_with_data(cfg, digest, cell, &data);
            res.row.wall_clock_s = start.elapsed().as_secs_f64();
            res
        }
        Err(e) => {
            let mut row = blank_row(cfg, digest, cell);
            row.error = e.to_string();
            row.wall_clock_s = start.elapsed().as_secs_f64();
            CellResult { row, estimate: None }
        }
    }
}

/// Fit and evaluate one cell on the given data.
pub fn run_cell_with_data(cfg: &ExperimentConfig, digest: &str, cell: &Cell, data: &ObservationSet) -> CellResult {
    let start = Instant::now();
    let mut row = blank_row(cfg, digest, cell);
    let outcome = (|| -> Result<(DmlivEstimate, CellMetrics)> {
        let seed = cell_seed(cfg, cell);
        let est = fit_method(cell.method, data, &cfg.fit_config(cell.method), seed)?;
        let metrics = evaluate_estimate(cfg, &est, data, seed, data_seed(cfg, cell.n, cell.seed))?;
        Ok((est, metrics))
    })();
    row.wall_clock_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((est, m)) => {
            row.status = RowStatus::Ok;
            row.mse_h = m.mse_h;
            row.reward_in_dist = m.reward_in_dist;
            row.reward_ood = m.reward_ood;
            row.subopt = m.subopt;
            row.subopt_ood = m.subopt_ood;
            row.subopt_random = m.subopt_random;
            row.reward_in_dist_std = m.reward_in_dist_std;
            row.reward_ood_std = m.reward_ood_std;
            row.subopt_std = m.subopt_std;
            row.final_loss = Some(est.final_loss);
            row.epochs = Some(est.epoch_losses.len());
            CellResult { row, estimate: Some(est) }
        }
        Err(e) => {
            row.error = e.to_string();
            CellResult { row, estimate: None }
        }
    }
}

/// Write a cell's estimate and training trace under `dir/cells/<label>/`.
pub fn stage_cell(dir: &Path, cell: &Cell, est: &DmlivEstimate) -> Result<PathBuf> {
    let cell_dir = dir.join("cells").join(cell.label());
    std::fs::create_dir_all(&cell_dir)?;
    std::fs::write(cell_dir.join("estimate.json"), est.to_json()?)?;
    est.write_trace_csv(std::fs::File::create(cell_dir.join("trace.csv"))?)?;
    Ok(cell_dir)
}

/// Rows of a finished (or resumed) sweep.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_digest: String,
    pub rows: Vec<ReportRow>,
    pub report_path: PathBuf,
}

/// Run every cell of the grid that `report.csv` under `dir` does not
/// already hold, appending rows as cells finish. `progress` sees each new row.
pub fn run_experiment_in(
    cfg: &ExperimentConfig,
    dir: &Path,
    progress: &mut dyn FnMut(&ReportRow),
) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let digest = cfg.digest();
    cfg.write_lock(dir)?;
    let report_path = dir.join(REPORT_FILE);
    let mut writer = ReportWriter::open(&report_path, &digest)?;
    let todo: Vec<Cell> = cells(cfg).into_iter().filter(|c| !writer.is_done(&c.key())).collect();

    let finish = |cell: &Cell, res: CellResult| -> Result<ReportRow> {
        if let Some(est) = &res.estimate {
            stage_cell(dir, cell, est)?;
        }
        Ok(res.row)
    };

    if cfg.jobs <= 1 || todo.len() <= 1 {
        for cell in &todo {
            let row = finish(cell, run_cell(cfg, &digest, cell))?;
            progress(&row);
            writer.append(row)?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<Result<ReportRow>>();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..cfg.jobs.min(todo.len()) {
                let tx = tx.clone();
                let (next, todo, digest, finish) = (&next, &todo, &digest, &finish);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cell) = todo.get(i) else { break };
                    if tx.send(finish(cell, run_cell(cfg, digest, cell))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for row in rx {
                let row = row?;
                progress(&row);
                writer.append(row)?;
            }
            Ok(())
        })?;
    }
    Ok(ExperimentReport { config_digest: digest, rows: writer.into_rows(), report_path })
}

/// [`run_experiment_in`] at the configured output location.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_in(cfg, &cfg.output_path_from_env(), &mut |_| {})
}
