use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{config_digest, DmlivConfig};
use super::nuisance::{fit_nuisance_pair, NuisancePair};
use super::partition::{make_partition, FoldPartition};
use super::score::{draw_actions, draw_means, g_hat_frozen, pseudo_inputs};
use crate::datagen::{Affine, ObservationSet};
use crate::diagnostics::relevance_check;
use crate::error::{invalid, Error, Result};
use crate::learners::{
    fit_scalers, from_blob, new_counterfactual_model, to_blob, AdamW, BinnedMatrix, BoostedTrees, CounterfactualModel,
    FittedCounterfactual, MixtureBatch, RegressionTree, RegressorKind,
};
use crate::rng::{child_rng, derive_seed, shuffle, str_tag};

const ESTIMATE_FORMAT: &str = "dmliv-estimate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-fitted nuisances and the orthogonal loss.
    Dmliv,
    /// Nuisances fitted once on all rows, orthogonal loss.
    CeDmliv,
    /// Nuisances fitted once, stage 2 regresses the raw outcome.
    Naive,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dmliv, Method::CeDmliv, Method::Naive];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dmliv => "dmliv",
            Method::CeDmliv => "ce_dmliv",
            Method::Naive => "naive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}' (expected dmliv, ce_dmliv or naive)")))
    }
}

/// One stage-2 update (or one boosting round, with `fold = None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub fold: Option<usize>,
    pub loss: f64,
}

/// A fitted counterfactual model with the nuisances and partition behind it.
#[derive(Debug, Clone)]
pub struct DmlivEstimate {
    pub method: Method,
    pub model: FittedCounterfactual,
    /// `nuisances[k]` serves fold `k` of `partition`.
    pub nuisances: Vec<NuisancePair>,
    pub partition: FoldPartition,
    pub training_trace: Vec<TraceEntry>,
    /// Full-data stage-2 loss after each epoch (or boosting round), fixed draws.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    /// Whether the stopping rule fired before the epoch cap.
    pub converged: bool,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
    pub relevance_statistic: Option<f64>,
    pub config_digest: String,
}

/// The portable part of an estimate: enough to rebuild policies and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: Method,
    pub model: FittedCounterfactual,
    pub partition: FoldPartition,
    pub config_digest: String,
    pub final_loss: f64,
}

impl DmlivEstimate {
    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn record(&self) -> EstimateRecord {
        EstimateRecord {
            method: self.method,
            model: self.model.clone(),
            partition: self.partition.clone(),
            config_digest: self.config_digest.clone(),
            final_loss: self.final_loss,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_blob(ESTIMATE_FORMAT, &self.record())
    }

    /// Write the training trace as `step,fold,loss` CSV.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "fold", "loss"])?;
        for e in &self.training_trace {
            let fold = e.fold.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([e.step.to_string(), fold, e.loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Every fold's nuisances were trained without any row of that fold.
    pub fn check_cross_fitting(&self) -> Result<()> {
        if self.method != Method::Dmliv {
            return Ok(());
        }
        let owner = self.partition.fold_of();
        for (k, pair) in self.nuisances.iter().enumerate() {
            if let Some(&i) = pair.train_rows.iter().find(|&&i| owner[i] == k) {
                return Err(Error::Fold {
                    fold: k,
                    source: Box::new(invalid(format!("row {i} leaks into its own nuisances"))),
                });
            }
        }
        Ok(())
    }
}

impl EstimateRecord {
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: EstimateRecord = from_blob(ESTIMATE_FORMAT, text)?;
        rec.partition.validate()?;
        Ok(rec)
    }
}

/// DML-IV with `cfg.k_folds`-fold cross-fitting.
pub fn fit_dmliv(data: &ObservationSet, cfg: &DmlivConfig, seed: u64) -> Result<DmlivEstimate> {
    fit_method(Method::Dmliv, data, cfg, seed)
}

/// Orthogonal loss with nuisances fitted once on all rows.
pub fn fit_ce_dmliv(data: &ObservationSet, cfg: &DmlivConfig, seed: u64) -> Result<DmlivEstimate> {
    fit_method(Method::CeDmliv, data, cfg, seed)
}

/// Plain two-stage fit: stage 2 regresses the observed outcome on `g`.
pub fn fit_naive_twostage(data: &ObservationSet, cfg: &DmlivConfig, seed: u64) -> Result<DmlivEstimate> {
    fit_method(Method::Naive, data, cfg, seed)
}

pub fn fit_method(method: Method, data: &ObservationSet, cfg: &DmlivConfig, seed: u64) -> Result<DmlivEstimate> {
    cfg.validate()?;
    let n = data.len();
    let (dc, _, da) = data.dims();
    if da != 1 {
        return Err(invalid(format!("only scalar actions are supported, got {da} action columns")));
    }
    if n < 2 * cfg.k_folds {
        return Err(invalid(format!("need at least {} rows for {} folds, got {n}", 2 * cfg.k_folds, cfg.k_folds)));
    }
    data.check_finite()?;
    let relevance_statistic = if cfg.allow_weak_instrument {
        relevance_check(data, cfg.weak_instrument_threshold).ok().map(|r| r.statistic)
    } else {
        let r = relevance_check(data, cfg.weak_instrument_threshold)?;
        if r.weak {
            return Err(Error::WeakInstrument { statistic: r.statistic, threshold: r.threshold });
        }
        Some(r.statistic)
    };
    let digest = config_digest(&(method, cfg));
    let cfg = cfg.resolved(n);

    let stage1_start = Instant::now();
    let inputs = data.context_instrument();
    let partition = match method {
        Method::Dmliv => make_partition(n, cfg.k_folds, derive_seed(seed, &[str_tag("partition")]))?,
        _ => FoldPartition::single(n),
    };
    let mut nuisances = Vec::with_capacity(partition.k());
    for k in 0..partition.k() {
        let rows = match method {
            Method::Dmliv => partition.complement(k),
            _ => (0..n).collect(),
        };
        let pair_seed = derive_seed(seed, &[str_tag("stage1"), k as u64]);
        let pair = fit_nuisance_pair(&inputs, data, rows, &cfg, method != Method::Naive, pair_seed)
            .map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?;
        nuisances.push(pair);
    }

    // Per-row stage-2 target and action law, each from the row's own fold.
    let ncomp = nuisances[0].density.n_components();
    let mut targets = Array1::zeros(n);
    let mut mixtures = MixtureBatch {
        weights: Array2::zeros((n, ncomp)),
        means: Array2::zeros((n, ncomp)),
        stds: Array2::zeros((n, ncomp)),
    };
    for (k, pair) in nuisances.iter().enumerate() {
        let rows = partition.fold(k);
        let x = inputs.select(Axis(0), rows);
        let mix = pair.density.mixture(x.view());
        let t = match &pair.s_hat {
            Some(s) => s.predict(x.view()),
            None => data.outcome().select(Axis(0), rows),
        };
        for (r, &i) in rows.iter().enumerate() {
            targets[i] = t[r];
            mixtures.weights.row_mut(i).assign(&mix.weights.row(r));
            mixtures.means.row_mut(i).assign(&mix.means.row(r));
            mixtures.stds.row_mut(i).assign(&mix.stds.row(r));
        }
    }
    let stage1_seconds = stage1_start.elapsed().as_secs_f64();

    let stage2_start = Instant::now();
    let problem = Stage2Problem {
        context: data.context().view(),
        action: data.action_column(),
        targets: &targets,
        mixtures: &mixtures,
        folds: partition.folds(),
    };
    let stage2_seed = derive_seed(seed, &[str_tag("stage2")]);
    let fit = match cfg.stage2.kind {
        RegressorKind::FeedForward => fit_stage2_network(&problem, &cfg, dc, stage2_seed)?,
        RegressorKind::BoostedTrees => fit_stage2_trees(&problem, &cfg, dc, stage2_seed)?,
    };
    Ok(DmlivEstimate {
        method,
        model: fit.model,
        nuisances,
        partition,
        training_trace: fit.trace,
        epoch_losses: fit.epoch_losses,
        final_loss: fit.final_loss,
        converged: fit.converged,
        stage1_seconds,
        stage2_seconds: stage2_start.elapsed().as_secs_f64(),
        relevance_statistic,
        config_digest: digest,
    })
}

struct Stage2Problem<'a> {
    context: ArrayView2<'a, f64>,
    action: ArrayView1<'a, f64>,
    targets: &'a Array1<f64>,
    mixtures: &'a MixtureBatch,
    folds: &'a [Vec<usize>],
}

struct Stage2Fit {
    model: FittedCounterfactual,
    trace: Vec<TraceEntry>,
    epoch_losses: Vec<f64>,
    final_loss: f64,
    converged: bool,
}

fn mean_sq_residual(targets: ArrayView1<'_, f64>, g: &Array1<f64>) -> f64 {
    targets.iter().zip(g).map(|(y, g)| (y - g) * (y - g)).sum::<f64>() / g.len() as f64
}

fn fit_stage2_network(p: &Stage2Problem<'_>, cfg: &DmlivConfig, dc: usize, seed: u64) -> Result<Stage2Fit> {
    let s2 = &cfg.stage2;
    let m = cfg.mc_samples;
    let mut rng = child_rng(seed, &[1]);
    let mut scalers = fit_scalers(p.context);
    scalers.push(Affine::fit(p.action));
    let mut model = new_counterfactual_model(s2, dc + 1, derive_seed(seed, &[0]))?
        .with_scaling(scalers, Affine::fit(p.targets.view()))?;
    let mut opt = AdamW::new(model.n_params(), s2.learning_rate, s2.weight_decay);

    let monitor_draws = draw_actions(p.mixtures, m, &mut child_rng(seed, &[2]));
    let monitor = |model: &CounterfactualModel| {
        mean_sq_residual(p.targets.view(), &g_hat_frozen(model, p.context, &monitor_draws))
    };

    let mut orders: Vec<Vec<usize>> = p.folds.to_vec();
    let batch = s2.batch_size.max(1);
    let mut trace = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best = monitor(&model);
    let mut stalled = 0;
    let mut converged = false;
    let mut step = 0;
    for _ in 0..s2.epochs {
        for order in &mut orders {
            shuffle(&mut rng, order);
        }
        let rounds = orders.iter().map(|o| o.len().div_ceil(batch)).max().unwrap_or(0);
        for b in 0..rounds {
            for (k, order) in orders.iter().enumerate() {
                let Some(rows) = order.chunks(batch).nth(b) else { continue };
                let loss = stage2_step(&mut model, &mut opt, p, rows, &monitor_draws, cfg, &mut rng);
                if !loss.is_finite() {
                    let losses = trace.iter().map(|e: &TraceEntry| e.loss).collect();
                    return Err(Error::DivergedLoss { step, trace: losses });
                }
                trace.push(TraceEntry { step, fold: Some(k), loss });
                step += 1;
            }
        }
        let loss = monitor(&model);
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { step, trace: epoch_losses });
        }
        epoch_losses.push(loss);
        if loss < best * (1.0 - cfg.tol) {
            best = loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.patience {
                converged = true;
                break;
            }
        }
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(best);
    Ok(Stage2Fit { model: FittedCounterfactual::Network(model), trace, epoch_losses, final_loss, converged })
}

/// One optimiser step on the rows of a mini-batch; returns the batch loss.
fn stage2_step(
    model: &mut CounterfactualModel,
    opt: &mut AdamW,
    p: &Stage2Problem<'_>,
    rows: &[usize],
    fixed_draws: &Array2<f64>,
    cfg: &DmlivConfig,
    rng: &mut crate::rng::Rng,
) -> f64 {
    let m = cfg.mc_samples;
    let ctx = p.context.select(Axis(0), rows);
    let draws = if cfg.resample_draws {
        draw_actions(&p.mixtures.select(rows), m, rng)
    } else {
        fixed_draws.select(Axis(0), rows)
    };
    let x = pseudo_inputs(ctx.view(), &draws);
    let (values, cache) = model.forward(x.view(), model.dropout_rate(), Some(rng));
    let g = draw_means(&values, m);
    let b = rows.len() as f64;
    let mut loss = 0.0;
    let mut d = Array2::zeros((rows.len() * m, 1));
    for (r, &i) in rows.iter().enumerate() {
        let resid = p.targets[i] - g[r];
        loss += resid * resid;
        let coef = -2.0 * resid / (b * m as f64);
        for j in 0..m {
            d[[r * m + j, 0]] = coef;
        }
    }
    let grads = model.backward(&cache, &d);
    opt.step(model.theta_mut(), &grads);
    loss / b
}

/// Functional gradient boosting on the Monte Carlo objective
/// `mean_i (y_i - mean_j h(c_i, a_ij))^2` with one fixed set of draws.
/// Leaf values take a per-leaf Newton step on that objective.
fn fit_stage2_trees(p: &Stage2Problem<'_>, cfg: &DmlivConfig, dc: usize, seed: u64) -> Result<Stage2Fit> {
    let s2 = &cfg.stage2;
    let m = cfg.mc_samples;
    let n = p.targets.len();
    let draws = draw_actions(p.mixtures, m, &mut child_rng(seed, &[2]));
    let x = pseudo_inputs(p.context, &draws);
    let binned = BinnedMatrix::new(x.view());
    let base = p.targets.mean().unwrap_or(0.0);
    let mut model = BoostedTrees::constant(base, s2.shrinkage, dc + 1);
    let mut g = Array1::from_elem(n, base);
    let mut resid = vec![0.0; n * m];
    let mut trace = Vec::with_capacity(s2.n_trees);
    let mut epoch_losses = Vec::with_capacity(s2.n_trees);
    for step in 0..s2.n_trees {
        for i in 0..n {
            let r = p.targets[i] - g[i];
            resid[i * m..(i + 1) * m].fill(r);
        }
        let (mut tree, leaves) = RegressionTree::fit_leaves(&binned, &resid, s2.min_leaf * m, s2.max_depth);
        let n_nodes = leaves.iter().copied().max().unwrap_or(0) + 1;
        let mut num = vec![0.0; n_nodes];
        let mut den = vec![0.0; n_nodes];
        let mut counts = vec![0usize; n_nodes];
        for i in 0..n {
            let row_leaves = &leaves[i * m..(i + 1) * m];
            for &l in row_leaves {
                counts[l] += 1;
            }
            for &l in row_leaves {
                if counts[l] > 0 {
                    let w = counts[l] as f64 / m as f64;
                    num[l] += w * resid[i * m];
                    den[l] += w * w;
                    counts[l] = 0;
                }
            }
        }
        let mut gamma = vec![0.0; n_nodes];
        for l in 0..n_nodes {
            if den[l] > 0.0 {
                gamma[l] = num[l] / den[l];
                tree.set_leaf_value(l, gamma[l]);
            }
        }
        for i in 0..n {
            let shift: f64 = leaves[i * m..(i + 1) * m].iter().map(|&l| gamma[l]).sum::<f64>() / m as f64;
            g[i] += s2.shrinkage * shift;
        }
        model.push_tree(tree);
        let loss = mean_sq_residual(p.targets.view(), &g);
        if !loss.is_finite() {
            return Err(Error::DivergedLoss { step, trace: epoch_losses });
        }
        trace.push(TraceEntry { step, fold: None, loss });
        epoch_losses.push(loss);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or_else(|| mean_sq_residual(p.targets.view(), &g));
    Ok(Stage2Fit { model: FittedCounterfactual::Trees(model), trace, epoch_losses, final_loss, converged: true })
}
