//! Greedy policies from fitted counterfactual models and their evaluation
//! against the closed-form oracle policy.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{true_h0_demand, ObservationSet, TruthModel};
use crate::error::{invalid, Result};
use crate::learners::CounterfactualFn;
use crate::rng::{child_rng, derive_seed, rng_from};

/// Grid size used by the oracle policy.
pub const ORACLE_GRID: usize = 4097;

/// A deterministic rule mapping a context to an action (stored units).
pub trait ActionRule {
    fn act(&self, context: &[f64]) -> f64;
}

/// Greedy policy: the best of a fixed set of candidate actions drawn
/// uniformly (one per equal-width stratum) from `bounds`.
#[derive(Debug, Clone)]
pub struct Policy<H> {
    model: H,
    context_dim: usize,
    bounds: (f64, f64),
    /// Sorted ascending so that ties resolve to the lowest action.
    candidates: Vec<f64>,
}

impl<H: CounterfactualFn> Policy<H> {
    pub fn new(model: H, context_dim: usize, bounds: (f64, f64), action_grid: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("action bounds must satisfy low < high, got ({lo}, {hi})")));
        }
        if action_grid < 2 {
            return Err(invalid("action_grid must be at least 2"));
        }
        let mut rng = rng_from(seed);
        let width = (hi - lo) / action_grid as f64;
        let candidates = (0..action_grid).map(|k| lo + width * (k as f64 + rng.random::<f64>())).collect();
        Ok(Self { model, context_dim, bounds, candidates })
    }

    /// Bounds from the training actions, widened by `widen` of their range in total.
    pub fn from_data(model: H, data: &ObservationSet, action_grid: usize, widen: f64, seed: u64) -> Result<Self> {
        let bounds = action_bounds(data, widen)?;
        Self::new(model, data.dims().0, bounds, action_grid, seed)
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn model(&self) -> &H {
        &self.model
    }

    /// Model values of every candidate at `context`.
    pub fn candidate_values(&self, context: &[f64]) -> Vec<f64> {
        let g = self.candidates.len();
        let mut x = Array2::zeros((g, self.context_dim + 1));
        for (k, &a) in self.candidates.iter().enumerate() {
            let mut row = x.row_mut(k);
            for (f, &c) in context.iter().enumerate() {
                row[f] = c;
            }
            row[self.context_dim] = a;
        }
        self.model.value_batch(x.view()).to_vec()
    }
}

impl<H: CounterfactualFn> ActionRule for Policy<H> {
    fn act(&self, context: &[f64]) -> f64 {
        self.candidates[argmax_first(&self.candidate_values(context))]
    }
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `[min, max]` of the stored actions, widened by `widen` of the range in total.
pub fn action_bounds(data: &ObservationSet, widen: f64) -> Result<(f64, f64)> {
    if !(widen >= 0.0) {
        return Err(invalid("widen must be nonnegative"));
    }
    let a = data.action_column();
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(invalid("training actions have no spread"));
    }
    let pad = 0.5 * widen * (hi - lo);
    Ok((lo - pad, hi + pad))
}

/// Uniformly random actions in `bounds`, reproducible per context.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub bounds: (f64, f64),
    pub seed: u64,
}

impl ActionRule for RandomPolicy {
    fn act(&self, context: &[f64]) -> f64 {
        let tags: Vec<u64> = context.iter().map(|c| c.to_bits()).collect();
        let mut rng = rng_from(derive_seed(self.seed, &tags));
        rng.random_range(self.bounds.0..self.bounds.1)
    }
}

/// Best raw price on a regular `ORACLE_GRID`-point grid over `price_bounds`
/// (endpoints included; ties go to the lowest price).
pub fn optimal_action_demand(t: f64, s: f64, price_bounds: (f64, f64)) -> Result<f64> {
    grid_argmax(price_bounds, |p| true_h0_demand(t, s, p))
}

/// The oracle action for any truth model, in raw units.
pub fn optimal_action(truth: &TruthModel, context: &[f64], bounds: (f64, f64)) -> Result<f64> {
    grid_argmax(bounds, |a| truth.h0(context, a))
}

fn grid_argmax(bounds: (f64, f64), f: impl Fn(f64) -> f64) -> Result<f64> {
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(invalid(format!("bounds must satisfy low < high, got ({lo}, {hi})")));
    }
    let step = (hi - lo) / (ORACLE_GRID - 1) as f64;
    let grid: Vec<f64> =
        (0..ORACLE_GRID).map(|k| if k + 1 == ORACLE_GRID { hi } else { lo + step * k as f64 }).collect();
    let values: Vec<f64> = grid.iter().map(|&a| f(a)).collect();
    Ok(grid[argmax_first(&values)])
}

/// The oracle policy in stored units of `data`, searching `bounds` (stored).
pub struct OraclePolicy<'a> {
    data: &'a ObservationSet,
    truth: &'a TruthModel,
    raw_bounds: (f64, f64),
}

impl<'a> OraclePolicy<'a> {
    pub fn new(data: &'a ObservationSet, bounds: (f64, f64)) -> Result<Self> {
        let truth = data.truth().ok_or(crate::Error::MissingTruth)?;
        let (a, b) = (data.action_to_raw(bounds.0), data.action_to_raw(bounds.1));
        Ok(Self { data, truth, raw_bounds: (a.min(b), a.max(b)) })
    }
}

impl ActionRule for OraclePolicy<'_> {
    fn act(&self, context: &[f64]) -> f64 {
        let raw = optimal_action(self.truth, context, self.raw_bounds).expect("bounds validated");
        self.data.action_to_stored(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// Mean true reward of the policy, raw units.
    pub value: f64,
    pub optimal_value: f64,
    pub suboptimality: f64,
    /// Standard error of `suboptimality` from the paired per-context gaps.
    pub suboptimality_se: f64,
    /// The same three quantities in standardised outcome units.
    pub value_std: f64,
    pub optimal_value_std: f64,
    pub suboptimality_std: f64,
    pub n_eval: usize,
    pub context_shift: f64,
}

/// Evaluation outcome; datasets without a truth model cannot be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PolicyValue {
    Known(PolicyEvaluation),
    Unknown,
}

impl PolicyValue {
    pub fn known(&self) -> Option<&PolicyEvaluation> {
        match self {
            PolicyValue::Known(e) => Some(e),
            PolicyValue::Unknown => None,
        }
    }
}

/// Score `policy` on `n_eval` contexts from the generator behind `data`,
/// with `context_shift` added to the shiftable context coordinate. The
/// oracle searches the same stored-unit `bounds` as the policy.
pub fn evaluate_policy(
    policy: &dyn ActionRule,
    data: &ObservationSet,
    bounds: (f64, f64),
    n_eval: usize,
    context_shift: f64,
    seed: u64,
) -> Result<PolicyValue> {
    if n_eval == 0 {
        return Err(invalid("n_eval must be at least 1"));
    }
    let Some(truth) = data.truth() else {
        return Ok(PolicyValue::Unknown);
    };
    let oracle = OraclePolicy::new(data, bounds)?;
    let mut rng = child_rng(seed, &[0xe7a1]);
    let (mut v, mut v_star) = (0.0, 0.0);
    let mut gaps = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let c = truth.sample_context(&mut rng, context_shift);
        let a = data.action_to_raw(policy.act(&c));
        let a_star = data.action_to_raw(oracle.act(&c));
        let (r, r_star) = (truth.h0(&c, a), truth.h0(&c, a_star));
        v += r;
        v_star += r_star;
        gaps.push(r_star - r);
    }
    let n = n_eval as f64;
    let (value, optimal_value) = (v / n, v_star / n);
    let suboptimality = optimal_value - value;
    let se = if n_eval > 1 {
        (gaps.iter().map(|g| (g - suboptimality).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let scale = data.scaling().map(|s| s.outcome.std).unwrap_or(1.0);
    Ok(PolicyValue::Known(PolicyEvaluation {
        value,
        optimal_value,
        suboptimality,
        suboptimality_se: se,
        value_std: data.outcome_to_stored(value),
        optimal_value_std: data.outcome_to_stored(optimal_value),
        suboptimality_std: suboptimality / scale,
        n_eval,
        context_shift,
    }))
}

/// Batch wrapper so a policy can be scored on a matrix of contexts.
pub fn act_batch(policy: &dyn ActionRule, contexts: ArrayView2<'_, f64>) -> Vec<f64> {
    contexts.rows().into_iter().map(|r| policy.act(&r.to_vec())).collect()
}
