//! Numerical Gateaux derivatives of the stage-2 scores at the true nuisances.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{Affine, ObservationSet, TruthModel};
use crate::error::{invalid, Error, Result};
use crate::estimation::{orthogonal_score, standard_score};
use crate::learners::Mlp;
use crate::rng::{child_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `(s - g)^2`
    Orthogonal,
    /// `(r - g)^2`
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Orthogonal,
    NotOrthogonal,
    Inconclusive,
}

/// How a perturbation direction was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    /// Random feed-forward functions of `(c, z)`.
    Smooth,
    /// The in-sample error of cell-average estimators of `s` and `g` on a
    /// random partition of the `(c, z)` space.
    EstimatorError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrthogonalityConfig {
    pub directions: usize,
    pub r_step: f64,
    /// Draws per row for the oracle `s0`.
    pub oracle_draws: usize,
    /// Draws per row for the Monte Carlo `g0`.
    pub mc_samples: usize,
    /// Hidden widths of the smooth direction networks.
    pub direction_widths: Vec<usize>,
    /// Range of average rows per cell for estimator-error directions.
    pub cell_size: (usize, usize),
}

impl Default for OrthogonalityConfig {
    fn default() -> Self {
        Self {
            directions: 8,
            r_step: 1e-2,
            oracle_draws: 100_000,
            mc_samples: 512,
            direction_widths: vec![16, 16],
            cell_size: (5, 20),
        }
    }
}

/// Central-difference derivative estimate and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    pub estimate: f64,
    pub standard_error: f64,
    /// The same estimate at half the step.
    pub half_step_estimate: f64,
}

impl Derivative {
    /// `|estimate| / SE`, with `0 / 0 = 0`.
    pub fn z_score(&self) -> f64 {
        if self.estimate == 0.0 {
            0.0
        } else if self.standard_error == 0.0 {
            f64::INFINITY
        } else {
            self.estimate.abs() / self.standard_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionProbe {
    pub kind: DirectionKind,
    pub joint: Derivative,
    pub s_only: Derivative,
    pub g_only: Derivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub score: ScoreKind,
    pub directions: usize,
    /// Joint-direction estimates, one per direction.
    pub derivative_estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub r_step: f64,
    /// Verdict over the joint directions.
    pub verdict: Verdict,
    pub s_only_verdict: Verdict,
    pub g_only_verdict: Verdict,
    pub probes: Vec<DirectionProbe>,
    pub n: usize,
    pub oracle_draws: usize,
    pub mc_samples: usize,
}

/// Orthogonal iff every `|est| < 3 SE`; not orthogonal iff some `|est| > 5 SE`.
pub fn verdict(derivatives: &[Derivative]) -> Verdict {
    if derivatives.iter().any(|d| d.z_score() > 5.0) {
        Verdict::NotOrthogonal
    } else if derivatives.iter().all(|d| d.z_score() < 3.0) {
        Verdict::Orthogonal
    } else {
        Verdict::Inconclusive
    }
}

/// True nuisances and observed quantities per row, in stored units.
#[derive(Debug, Clone)]
pub struct TruthNuisances {
    /// Oracle `E[h0(c, A) | c, z]` from `oracle_draws` draws.
    pub s0: Vec<f64>,
    /// Independent Monte Carlo `g0(h0, c, z)` from `mc_samples` draws.
    pub g0: Vec<f64>,
    /// Per-row variance of `h0(c, A)` given `(c, z)` from the `g0` draws.
    pub within_var: Vec<f64>,
    /// `h0` at the observed action.
    pub h0_observed: Vec<f64>,
    pub outcome: Vec<f64>,
}

pub fn truth_nuisances(
    data: &ObservationSet,
    oracle_draws: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<TruthNuisances> {
    let truth = data.truth().ok_or(Error::MissingTruth)?;
    if oracle_draws == 0 || mc_samples < 2 {
        return Err(invalid("need oracle_draws >= 1 and mc_samples >= 2"));
    }
    let n = data.len();
    let mut common = child_rng(seed, &[1]);
    let mut xi: Vec<f64> = (0..oracle_draws).map(|_| common.sample(StandardNormal)).collect();
    // The draws are shared by every row, so match their first two moments
    // exactly; both generators are at most quadratic in the action.
    if oracle_draws > 1 {
        let m = xi.iter().sum::<f64>() / oracle_draws as f64;
        let sd = (xi.iter().map(|x| (x - m).powi(2)).sum::<f64>() / oracle_draws as f64).sqrt();
        xi.iter_mut().for_each(|x| *x = (*x - m) / sd);
    }
    let mut rng = child_rng(seed, &[2]);
    let scale = data.scaling().map(|s| s.outcome).unwrap_or(Affine::IDENTITY);
    let mut buf = vec![0.0; oracle_draws];
    let mut out = TruthNuisances {
        s0: Vec::with_capacity(n),
        g0: Vec::with_capacity(n),
        within_var: Vec::with_capacity(n),
        h0_observed: Vec::with_capacity(n),
        outcome: data.outcome().to_vec(),
    };
    for i in 0..n {
        let c = data.context().row(i).to_vec();
        let z = data.instrument().row(i).to_vec();
        let (mu, sigma) = truth.action_law(&c, &z);
        for (b, x) in buf.iter_mut().zip(&xi) {
            *b = mu + sigma * x;
        }
        out.s0.push(data.outcome_to_stored(truth.h0_mean(&c, &buf)));
        let (mean, var) = mc_moments(truth, &c, mu, sigma, mc_samples, &mut rng);
        out.g0.push(data.outcome_to_stored(mean));
        out.within_var.push(var / (scale.std * scale.std));
        out.h0_observed.push(data.h0_stored(&c, data.action_column()[i])?);
    }
    Ok(out)
}

fn mc_moments(truth: &TruthModel, c: &[f64], mu: f64, sigma: f64, m: usize, rng: &mut Rng) -> (f64, f64) {
    let vals: Vec<f64> = (0..m)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            truth.h0(c, mu + sigma * e)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / m as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, var)
}

/// Central difference of the average score along `(ds, dg)` and its
/// standard error across rows.
pub fn gateaux_derivative(
    kind: ScoreKind,
    nuis: &TruthNuisances,
    ds: &[f64],
    dg: &[f64],
    r_step: f64,
) -> Result<Derivative> {
    if !(r_step > 0.0) {
        return Err(invalid(format!("r_step must be positive, got {r_step}")));
    }
    let (estimate, standard_error) = central_difference(kind, nuis, ds, dg, r_step);
    let (half_step_estimate, _) = central_difference(kind, nuis, ds, dg, 0.5 * r_step);
    Ok(Derivative { estimate, standard_error, half_step_estimate })
}

fn central_difference(kind: ScoreKind, nuis: &TruthNuisances, ds: &[f64], dg: &[f64], r: f64) -> (f64, f64) {
    let n = nuis.s0.len();
    let score = |i: usize, t: f64| match kind {
        ScoreKind::Orthogonal => orthogonal_score(nuis.s0[i] + t * ds[i], nuis.g0[i] + t * dg[i]),
        ScoreKind::Standard => standard_score(nuis.outcome[i], nuis.g0[i] + t * dg[i]),
    };
    let d: Vec<f64> = (0..n).map(|i| (score(i, r) - score(i, -r)) / (2.0 * r)).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1).max(1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn clip(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Random smooth `(ds, dg)`: a two-output network on standardised `[c, z]`.
fn smooth_direction(inputs: &Array2<f64>, widths: &[usize], rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut x = inputs.clone();
    for mut col in x.columns_mut() {
        let a = Affine::fit(col.view());
        col.mapv_inplace(|v| a.apply(v));
    }
    let sizes: Vec<usize> =
        std::iter::once(x.ncols()).chain(widths.iter().copied()).chain(std::iter::once(2)).collect();
    let net = Mlp::new(&sizes, rng);
    let out = net.predict(x.view());
    (out.column(0).iter().map(|&v| clip(v)).collect(), out.column(1).iter().map(|&v| clip(v)).collect())
}

/// Cell ids from per-column quantile bins with about `cells` cells overall.
fn cell_ids(inputs: &Array2<f64>, cells: usize) -> Vec<u64> {
    let (n, d) = inputs.dim();
    let per_dim = ((cells as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let mut ids = vec![0u64; n];
    for col in inputs.columns() {
        let mut sorted = col.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut edges: Vec<f64> = (1..per_dim).map(|q| sorted[q * n / per_dim]).collect();
        edges.dedup();
        for (id, v) in ids.iter_mut().zip(col) {
            *id = *id * (per_dim as u64 + 1) + edges.partition_point(|e| e <= v) as u64;
        }
    }
    ids
}

fn cell_means(ids: &[u64], values: &[f64]) -> Vec<f64> {
    let mut acc: HashMap<u64, (f64, usize)> = HashMap::new();
    for (id, v) in ids.iter().zip(values) {
        let e = acc.entry(*id).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    ids.iter().map(|id| acc[id].0 / acc[id].1 as f64).collect()
}

/// `ds`, `dg` = in-sample error of cell-average estimators of `s0`, `g0`.
/// Both errors are taken against the oracle `s0`, which keeps the direction
/// independent of the Monte Carlo noise inside `g0`.
fn estimator_error_direction(inputs: &Array2<f64>, nuis: &TruthNuisances, cell_size: usize) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.nrows();
    let ids = cell_ids(inputs, (n / cell_size.max(1)).max(1));
    let s_err: Vec<f64> = nuis.outcome.iter().zip(&nuis.s0).map(|(r, s)| r - s).collect();
    let g_err: Vec<f64> = nuis.h0_observed.iter().zip(&nuis.s0).map(|(h, s)| h - s).collect();
    (cell_means(&ids, &s_err).into_iter().map(clip).collect(), cell_means(&ids, &g_err).into_iter().map(clip).collect())
}

/// Probe the Gateaux derivative of the average score at the true nuisances
/// along `cfg.directions` bounded directions. Even-numbered directions are
/// smooth random functions, odd-numbered ones are estimator errors.
pub fn check_orthogonality(
    kind: ScoreKind,
    data: &ObservationSet,
    cfg: &OrthogonalityConfig,
    seed: u64,
) -> Result<OrthogonalityReport> {
    if !(cfg.r_step > 0.0) {
        return Err(invalid(format!("r_step must be positive, got {}", cfg.r_step)));
    }
    if cfg.directions == 0 {
        return Err(invalid("need at least one direction"));
    }
    if cfg.cell_size.0 == 0 || cfg.cell_size.0 > cfg.cell_size.1 {
        return Err(invalid("cell_size must be a nonempty positive range"));
    }
    let nuis = truth_nuisances(data, cfg.oracle_draws, cfg.mc_samples, seed)?;
    probe_directions(kind, data, &nuis, cfg, seed)
}

/// [`check_orthogonality`] with precomputed true nuisances.
pub fn probe_directions(
    kind: ScoreKind,
    data: &ObservationSet,
    nuis: &TruthNuisances,
    cfg: &OrthogonalityConfig,
    seed: u64,
) -> Result<OrthogonalityReport> {
    let inputs = data.context_instrument();
    let mut rng = child_rng(seed, &[3]);
    let zeros = vec![0.0; data.len()];
    let mut probes = Vec::with_capacity(cfg.directions);
    for k in 0..cfg.directions {
        let (dkind, (ds, dg)) = if k % 2 == 0 {
            (DirectionKind::Smooth, smooth_direction(&inputs, &cfg.direction_widths, &mut rng))
        } else {
            let size = rng.random_range(cfg.cell_size.0..=cfg.cell_size.1);
            (DirectionKind::EstimatorError, estimator_error_direction(&inputs, nuis, size))
        };
        probes.push(DirectionProbe {
            kind: dkind,
            joint: gateaux_derivative(kind, nuis, &ds, &dg, cfg.r_step)?,
            s_only: gateaux_derivative(kind, nuis, &ds, &zeros, cfg.r_step)?,
            g_only: gateaux_derivative(kind, nuis, &zeros, &dg, cfg.r_step)?,
        });
    }
    let joint: Vec<Derivative> = probes.iter().map(|p| p.joint).collect();
    let s_only: Vec<Derivative> = probes.iter().map(|p| p.s_only).collect();
    let g_only: Vec<Derivative> = probes.iter().map(|p| p.g_only).collect();
    Ok(OrthogonalityReport {
        score: kind,
        directions: cfg.directions,
        derivative_estimates: joint.iter().map(|d| d.estimate).collect(),
        standard_errors: joint.iter().map(|d| d.standard_error).collect(),
        r_step: cfg.r_step,
        verdict: verdict(&joint),
        s_only_verdict: verdict(&s_only),
        g_only_verdict: verdict(&g_only),
        probes,
        n: data.len(),
        oracle_draws: cfg.oracle_draws,
        mc_samples: cfg.mc_samples,
    })
}

/// Average orthogonal score at the truth and its Monte Carlo yardsticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreValidity {
    /// Mean of `s0 - g0`.
    pub mean_residual: f64,
    /// `5 * sd / sqrt(N * mc_samples)` with `sd` the pooled within-row std of `h0`.
    pub residual_bound: f64,
    /// Mean of `(s0 - g0)^2`.
    pub mean_score: f64,
    /// Expected value of `mean_score` from Monte Carlo error alone.
    pub expected_score: f64,
}

pub fn score_at_truth(nuis: &TruthNuisances, mc_samples: usize) -> ScoreValidity {
    let n = nuis.s0.len() as f64;
    let resid: Vec<f64> = nuis.s0.iter().zip(&nuis.g0).map(|(s, g)| s - g).collect();
    let pooled_var = nuis.within_var.iter().sum::<f64>() / n;
    ScoreValidity {
        mean_residual: resid.iter().sum::<f64>() / n,
        residual_bound: 5.0 * pooled_var.sqrt() / (n * mc_samples as f64).sqrt(),
        mean_score: resid.iter().map(|r| r * r).sum::<f64>() / n,
        expected_score: pooled_var / mc_samples as f64,
    }
}
