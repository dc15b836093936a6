use ndarray::{Array2, Axis};

use super::config::DmlivConfig;
use crate::datagen::ObservationSet;
use crate::error::Result;
use crate::learners::{fit_conditional_density, fit_regressor, DensityModel, Regressor};
use crate::rng::derive_seed;

/// Stage-1 models fitted on one index set.
#[derive(Debug, Clone)]
pub struct NuisancePair {
    /// `s(c, z)`; absent for the plain two-stage baseline.
    pub s_hat: Option<Regressor>,
    pub density: DensityModel,
    pub mc_samples: usize,
    /// Rows the pair was trained on (sorted).
    pub train_rows: Vec<usize>,
    pub density_nll: f64,
    pub pooled_gaussian_nll: f64,
    /// The training actions had no spread.
    pub degenerate: bool,
}

pub(crate) fn fit_nuisance_pair(
    inputs: &Array2<f64>,
    data: &ObservationSet,
    rows: Vec<usize>,
    cfg: &DmlivConfig,
    with_outcome: bool,
    seed: u64,
) -> Result<NuisancePair> {
    let x = inputs.select(Axis(0), &rows);
    let a = data.action_column().select(Axis(0), &rows);
    let density = fit_conditional_density(x.view(), a.view(), &cfg.density, derive_seed(seed, &[1]))?;
    let s_hat = if with_outcome {
        let r = data.outcome().select(Axis(0), &rows);
        Some(fit_regressor(x.view(), r.view(), &cfg.outcome, derive_seed(seed, &[2]))?.model)
    } else {
        None
    };
    Ok(NuisancePair {
        s_hat,
        density: density.model,
        mc_samples: cfg.mc_samples,
        train_rows: rows,
        density_nll: density.final_nll,
        pooled_gaussian_nll: density.pooled_gaussian_nll,
        degenerate: density.degenerate,
    })
}
