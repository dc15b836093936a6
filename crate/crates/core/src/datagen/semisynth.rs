use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::observation::{Latent, ObservationSet, TruthModel};
use crate::error::{invalid, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSynthConfig {
    pub n_samples: usize,
    pub d_c: usize,
    /// Size of the instrument's support `{1..k_levels}`.
    pub k_levels: usize,
    pub seed: u64,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        Self { n_samples: 2000, d_c: 6, k_levels: 4, seed: 0 }
    }
}

/// Instrument-specific offset added to every context coordinate.
pub(crate) fn f_z(z: f64, k_levels: usize) -> f64 {
    z / k_levels as f64
}

/// Structural outcome function of the semi-synthetic model.
pub fn semisynth_h0(context: &[f64], action: f64) -> f64 {
    let d = context.len() as f64;
    let avg: f64 = context.iter().sum::<f64>() / d;
    9.0 * action * action - 1.5 * action + avg + (context[0] * context[1]).abs()
        - (10.0 + context[1] * context[2]).sin()
}

pub fn generate_semisynth(cfg: &SemiSynthConfig) -> Result<ObservationSet> {
    if cfg.n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if cfg.k_levels < 2 {
        return Err(invalid("k_levels must be at least 2 so the instrument varies"));
    }
    if cfg.d_c < 3 {
        return Err(invalid("d_c must be at least 3"));
    }
    let (n, d, k) = (cfg.n_samples, cfg.d_c, cfg.k_levels);
    let mut rng = rng_from(cfg.seed);
    let weights: Vec<Vec<f64>> = (0..d).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let eps_sd = 0.1f64.sqrt();

    let mut context = Array2::zeros((n, d));
    let mut instrument = Array2::zeros((n, 1));
    let mut action = Array2::zeros((n, 1));
    let mut outcome = Array1::zeros(n);
    let mut epsilon = Array1::zeros(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, c) in row.iter_mut().enumerate() {
            *c = rng.random_range(-1.0..1.0);
            context[[i, j]] = *c;
        }
        let z = rng.random_range(1..=k);
        let e = eps_sd * rng.sample::<f64, _>(StandardNormal);
        let delta_a: f64 = rng.sample(StandardNormal);
        let delta_r: f64 = rng.sample(StandardNormal);
        let shift = f_z(z as f64, k);
        let a: f64 = (0..d).map(|j| weights[j][z - 1] * (row[j] + 0.2 * e + shift)).sum::<f64>() + delta_a;
        instrument[[i, 0]] = z as f64;
        action[[i, 0]] = a;
        outcome[i] = semisynth_h0(&row, a) + 2.0 * e + delta_r;
        epsilon[i] = e;
    }
    Ok(ObservationSet::new(context, instrument, action, outcome)?
        .with_truth(TruthModel::SemiSynth { weights, k_levels: k })
        .with_latent(Latent { epsilon, omega: Array1::zeros(n) }))
}
