use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::observation::{Latent, ObservationSet, TruthModel};
use crate::error::{invalid, Result};
use crate::rng::rng_from;

/// Seasonal price-sensitivity curve of the ticket-demand model.
pub fn psi_t(t: f64) -> f64 {
    let u = t - 5.0;
    2.0 * (u.powi(4) / 600.0 + (-4.0 * u * u).exp() + t / 10.0 - 2.0)
}

/// Ground-truth sales for time of year `t`, customer type `s` and price `p`.
pub fn true_h0_demand(t: f64, s: f64, p: f64) -> f64 {
    100.0 + (10.0 + p) * s * psi_t(t) - 2.0 * p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    pub n_samples: usize,
    /// Correlation between the price noise and the outcome confounder.
    pub rho: f64,
    /// Multiplier on the instrument inside the price equation.
    pub iv_strength: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self { n_samples: 5000, rho: 0.9, iv_strength: 1.0, seed: 0, standardize: true }
    }
}

impl DemandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        // Zero strength is allowed on purpose: it produces an irrelevant instrument.
        if !(self.iv_strength >= 0.0 && self.iv_strength.is_finite()) {
            return Err(invalid(format!("iv_strength must be finite and non-negative, got {}", self.iv_strength)));
        }
        Ok(())
    }
}

/// Draw a ticket-demand dataset.
///
/// Columns: context `(t, s)`, instrument `z`, action `p`, outcome `r`.
pub fn generate_demand(cfg: &DemandConfig) -> Result<ObservationSet> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let mut rng = rng_from(cfg.seed);
    let mut context = Array2::zeros((n, 2));
    let mut instrument = Array2::zeros((n, 1));
    let mut action = Array2::zeros((n, 1));
    let mut outcome = Array1::zeros(n);
    let mut epsilon = Array1::zeros(n);
    let mut omega = Array1::zeros(n);
    let eps_sd = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();

    for i in 0..n {
        let s = rng.random_range(1..=7) as f64;
        let t: f64 = rng.random_range(0.0..10.0);
        let z: f64 = rng.sample(StandardNormal);
        let w: f64 = rng.sample(StandardNormal);
        let e_raw: f64 = rng.sample(StandardNormal);
        let e = cfg.rho * w + eps_sd * e_raw;
        let p = 25.0 + (cfg.iv_strength * z + 3.0) * psi_t(t) + w;
        context[[i, 0]] = t;
        context[[i, 1]] = s;
        instrument[[i, 0]] = z;
        action[[i, 0]] = p;
        outcome[i] = true_h0_demand(t, s, p) + e;
        epsilon[i] = e;
        omega[i] = w;
    }

    let obs = ObservationSet::new(context, instrument, action, outcome)?
        .with_truth(TruthModel::Demand { iv_strength: cfg.iv_strength, rho: cfg.rho })
        .with_latent(Latent { epsilon, omega });
    Ok(if cfg.standardize { obs.standardized() } else { obs })
}
