use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::demand::{psi_t, true_h0_demand};
use super::semisynth::{f_z, semisynth_h0};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// `x -> (x - mean) / std` and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { mean: 0.0, std: 1.0 };

    /// Population moments of `xs`; a zero spread maps to std 1 so the map stays invertible.
    pub fn fit(xs: ArrayView1<'_, f64>) -> Affine {
        let n = xs.len().max(1) as f64;
        let mean = xs.sum() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Affine { mean, std }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }
}

/// Inverse of the standardisation map.
pub fn destandardize(x: f64, scaling: Affine) -> Result<f64> {
    if !(scaling.std > 0.0) {
        return Err(invalid(format!("scaling std must be positive, got {}", scaling.std)));
    }
    Ok(scaling.invert(x))
}

/// Moments used to standardise the stored action and outcome columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub action: Vec<Affine>,
    pub outcome: Affine,
}

/// Unobserved noise terms, kept for synthetic data so tests can check the
/// sampling scheme directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    /// Outcome confounder.
    pub epsilon: Array1<f64>,
    /// Action noise (demand model only; zeros otherwise).
    pub omega: Array1<f64>,
}

/// Closed-form ground truth of a synthetic generator, in raw (unstandardised) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthModel {
    Demand {
        iv_strength: f64,
        rho: f64,
    },
    SemiSynth {
        /// `weights[i][z - 1]` multiplies context coordinate `i` when the instrument equals `z`.
        weights: Vec<Vec<f64>>,
        k_levels: usize,
    },
}

impl TruthModel {
    pub fn context_dim(&self) -> usize {
        match self {
            TruthModel::Demand { .. } => 2,
            TruthModel::SemiSynth { weights, .. } => weights.len(),
        }
    }

    /// Counterfactual prediction function h0(c, a).
    pub fn h0(&self, context: &[f64], action: f64) -> f64 {
        match self {
            TruthModel::Demand { .. } => true_h0_demand(context[0], context[1], action),
            TruthModel::SemiSynth { .. } => semisynth_h0(context, action),
        }
    }

    /// Mean of `h0(c, a)` over `actions` at a fixed context.
    pub fn h0_mean(&self, context: &[f64], actions: &[f64]) -> f64 {
        let n = actions.len() as f64;
        match self {
            TruthModel::Demand { .. } => {
                // Linear in price: hoist the seasonal term out of the loop.
                let slope = context[1] * psi_t(context[0]) - 2.0;
                let intercept = 100.0 + 10.0 * context[1] * psi_t(context[0]);
                intercept + slope * actions.iter().sum::<f64>() / n
            }
            TruthModel::SemiSynth { .. } => {
                let base = semisynth_h0(context, 0.0);
                base + actions.iter().map(|a| 9.0 * a * a - 1.5 * a).sum::<f64>() / n
            }
        }
    }

    /// The true law of the action given `(c, z)`: both generators produce a
    /// Gaussian, returned as `(mean, std)` in raw units.
    pub fn action_law(&self, context: &[f64], instrument: &[f64]) -> (f64, f64) {
        match self {
            TruthModel::Demand { iv_strength, .. } => {
                let psi = psi_t(context[0]);
                (25.0 + (iv_strength * instrument[0] + 3.0) * psi, 1.0)
            }
            TruthModel::SemiSynth { weights, k_levels } => {
                let z = instrument[0].round() as usize;
                let col = z.clamp(1, *k_levels) - 1;
                let shift = f_z(z as f64, *k_levels);
                let mut mean = 0.0;
                let mut wsum = 0.0;
                for (i, row) in weights.iter().enumerate() {
                    mean += row[col] * (context[i] + shift);
                    wsum += row[col];
                }
                // A = sum_i w (C_i + 0.2 eps + f_z) + delta_A with Var(eps) = 0.1.
                let var = (0.2 * wsum).powi(2) * 0.1 + 1.0;
                (mean, var.sqrt())
            }
        }
    }

    /// Draw a context from the generator's marginal; `shift` is added to the
    /// time-of-year coordinate of the demand model (ignored otherwise).
    pub fn sample_context(&self, rng: &mut Rng, shift: f64) -> Vec<f64> {
        match self {
            TruthModel::Demand { .. } => {
                let s = rng.random_range(1..=7) as f64;
                let t = rng.random_range(0.0..10.0) + shift;
                vec![t, s]
            }
            TruthModel::SemiSynth { weights, .. } => (0..weights.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn sample_instrument(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            TruthModel::Demand { .. } => vec![rng.sample(StandardNormal)],
            TruthModel::SemiSynth { k_levels, .. } => {
                vec![rng.random_range(1..=*k_levels) as f64]
            }
        }
    }

    /// Draw an action from the true conditional law (raw units).
    pub fn sample_action(&self, context: &[f64], instrument: &[f64], rng: &mut Rng) -> f64 {
        let (m, s) = self.action_law(context, instrument);
        let n: f64 = rng.sample(StandardNormal);
        m + s * n
    }
}

/// Immutable columns `(context, instrument, action, outcome)` of an offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    context: Array2<f64>,
    instrument: Array2<f64>,
    action: Array2<f64>,
    outcome: Array1<f64>,
    truth: Option<TruthModel>,
    scaling: Option<Scaling>,
    latent: Option<Latent>,
}

impl ObservationSet {
    pub fn new(
        context: Array2<f64>,
        instrument: Array2<f64>,
        action: Array2<f64>,
        outcome: Array1<f64>,
    ) -> Result<Self> {
        let n = outcome.len();
        for (name, rows) in
            [("context", context.nrows()), ("instrument", instrument.nrows()), ("action", action.nrows())]
        {
            if rows != n {
                return Err(Error::DimensionMismatch(format!("{name} has {rows} rows but outcome has {n}")));
            }
        }
        if action.ncols() == 0 || instrument.ncols() == 0 {
            return Err(Error::DimensionMismatch("action and instrument need at least one column".into()));
        }
        Ok(Self { context, instrument, action, outcome, truth: None, scaling: None, latent: None })
    }

    pub fn with_truth(mut self, truth: TruthModel) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = Some(scaling);
        self
    }

    pub(crate) fn with_latent(mut self, latent: Latent) -> Self {
        self.latent = Some(latent);
        self
    }

    /// Centre and scale the action and outcome columns with their sample
    /// moments, recording the map.
    pub fn standardized(mut self) -> Self {
        if self.scaling.is_some() {
            return self;
        }
        let action: Vec<Affine> = self.action.columns().into_iter().map(Affine::fit).collect();
        let outcome = Affine::fit(self.outcome.view());
        for (mut col, a) in self.action.columns_mut().into_iter().zip(&action) {
            col.mapv_inplace(|x| a.apply(x));
        }
        self.outcome.mapv_inplace(|x| outcome.apply(x));
        self.scaling = Some(Scaling { action, outcome });
        self
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn context(&self) -> &Array2<f64> {
        &self.context
    }
    pub fn instrument(&self) -> &Array2<f64> {
        &self.instrument
    }
    pub fn action(&self) -> &Array2<f64> {
        &self.action
    }
    pub fn outcome(&self) -> &Array1<f64> {
        &self.outcome
    }
    pub fn truth(&self) -> Option<&TruthModel> {
        self.truth.as_ref()
    }
    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }
    pub fn latent(&self) -> Option<&Latent> {
        self.latent.as_ref()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.context.ncols(), self.instrument.ncols(), self.action.ncols())
    }

    /// First action column (all learners in this crate assume a scalar action).
    pub fn action_column(&self) -> ArrayView1<'_, f64> {
        self.action.column(0)
    }

    /// Row-wise concatenation `[c, z]`, the input of the stage-1 nuisances.
    pub fn context_instrument(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.context.view(), self.instrument.view()])
            .expect("row counts validated at construction")
    }

    /// Map a raw action into the stored units.
    pub fn action_to_stored(&self, raw: f64) -> f64 {
        match &self.scaling {
            Some(s) => s.action[0].apply(raw),
            None => raw,
        }
    }

    pub fn action_to_raw(&self, stored: f64) -> f64 {
        match &self.scaling {
            Some(s) => s.action[0].invert(stored),
            None => stored,
        }
    }

    pub fn outcome_to_stored(&self, raw: f64) -> f64 {
        match &self.scaling {
            Some(s) => s.outcome.apply(raw),
            None => raw,
        }
    }

    pub fn outcome_to_raw(&self, stored: f64) -> f64 {
        match &self.scaling {
            Some(s) => s.outcome.invert(stored),
            None => stored,
        }
    }

    /// Ground truth evaluated in the stored units: the action argument is
    /// mapped back to raw units and h0 is mapped into outcome units.
    pub fn h0_stored(&self, context: &[f64], action_stored: f64) -> Result<f64> {
        let truth = self.truth.as_ref().ok_or(Error::MissingTruth)?;
        Ok(self.outcome_to_stored(truth.h0(context, self.action_to_raw(action_stored))))
    }

    /// Select a subset of rows (truth and scaling are shared).
    pub fn select(&self, rows: &[usize]) -> ObservationSet {
        ObservationSet {
            context: self.context.select(Axis(0), rows),
            instrument: self.instrument.select(Axis(0), rows),
            action: self.action.select(Axis(0), rows),
            outcome: self.outcome.select(Axis(0), rows),
            truth: self.truth.clone(),
            scaling: self.scaling.clone(),
            latent: self
                .latent
                .as_ref()
                .map(|l| Latent { epsilon: l.epsilon.select(Axis(0), rows), omega: l.omega.select(Axis(0), rows) }),
        }
    }

    /// Reject NaN or infinite entries anywhere in the observed columns.
    pub fn check_finite(&self) -> Result<()> {
        let finite = self.context.iter().all(|x| x.is_finite())
            && self.instrument.iter().all(|x| x.is_finite())
            && self.action.iter().all(|x| x.is_finite())
            && self.outcome.iter().all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("observation set".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn destandardize_examples() {
        let s = Affine { mean: 5.0, std: 2.0 };
        assert_eq!(destandardize(0.0, s).unwrap(), 5.0);
        assert_eq!(destandardize(1.0, s).unwrap(), 7.0);
        assert!(destandardize(1.0, Affine { mean: 0.0, std: 0.0 }).is_err());
        assert!(destandardize(1.0, Affine { mean: 0.0, std: -1.0 }).is_err());
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let err = ObservationSet::new(array![[1.0], [2.0]], array![[1.0], [2.0]], array![[1.0]], array![1.0, 2.0]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let obs = ObservationSet::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![[0.0], [1.0], [0.0], [1.0]],
            array![[10.0], [12.0], [13.0], [21.0]],
            array![1.0, -4.0, 7.0, 2.5],
        )
        .unwrap()
        .standardized();
        let a = obs.action_column();
        let m = a.sum() / 4.0;
        let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        let raw = obs.action_to_raw(a[3]);
        assert!((raw - 21.0).abs() < 1e-9);
    }
}
