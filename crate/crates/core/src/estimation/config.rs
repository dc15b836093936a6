use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::learners::{sample_size_dropout, DensityConfig, RegressorConfig, RegressorKind};

/// Everything the two-stage fits need besides the data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmlivConfig {
    pub k_folds: usize,
    /// Learner for `s(c, z) = E[R | c, z]`.
    pub outcome: RegressorConfig,
    /// Conditional density of the action.
    pub density: DensityConfig,
    /// Stage-2 learner. For networks `epochs` is the epoch cap.
    pub stage2: RegressorConfig,
    /// Monte Carlo draws per row during stage-2 training.
    pub mc_samples: usize,
    /// Monte Carlo draws per row for reported losses and diagnostics.
    pub eval_mc_samples: usize,
    /// Redraw Monte Carlo actions for every mini-batch (otherwise reuse one fixed set).
    pub resample_draws: bool,
    /// Relative full-data loss improvement below which an epoch counts as stalled.
    pub tol: f64,
    /// Stop after this many consecutive stalled epochs.
    pub patience: usize,
    /// Replace every network's dropout rate with `1000 / (5000 + N)`.
    pub sample_size_dropout: bool,
    pub allow_weak_instrument: bool,
    pub weak_instrument_threshold: f64,
}

impl Default for DmlivConfig {
    fn default() -> Self {
        Self {
            k_folds: 10,
            outcome: RegressorConfig::default(),
            density: DensityConfig::default(),
            stage2: RegressorConfig { epochs: 300, ..RegressorConfig::default() },
            mc_samples: 32,
            eval_mc_samples: 512,
            resample_draws: true,
            tol: 1e-5,
            patience: 5,
            sample_size_dropout: true,
            allow_weak_instrument: false,
            weak_instrument_threshold: 10.0,
        }
    }
}

impl DmlivConfig {
    /// Boosted trees for both nuisances and for stage 2.
    pub fn trees() -> Self {
        let nuisance = RegressorConfig::trees();
        Self {
            outcome: nuisance.clone(),
            density: DensityConfig { net: nuisance, ..DensityConfig::default() },
            stage2: RegressorConfig { min_leaf: 10, ..RegressorConfig::trees() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(invalid("k_folds must be at least 2"));
        }
        self.outcome.validate()?;
        self.density.net.validate()?;
        self.stage2.validate()?;
        if self.mc_samples == 0 || self.eval_mc_samples == 0 {
            return Err(invalid("Monte Carlo sample counts must be positive"));
        }
        if !(self.tol >= 0.0) || self.patience == 0 {
            return Err(invalid("tol must be nonnegative and patience positive"));
        }
        if !(self.weak_instrument_threshold >= 0.0) {
            return Err(invalid("weak_instrument_threshold must be nonnegative"));
        }
        Ok(())
    }

    /// The configuration actually used for a dataset of `n` rows.
    pub fn resolved(&self, n: usize) -> DmlivConfig {
        let mut cfg = self.clone();
        if cfg.sample_size_dropout {
            let p = sample_size_dropout(n);
            for net in [&mut cfg.outcome, &mut cfg.density.net, &mut cfg.stage2] {
                if net.kind == RegressorKind::FeedForward {
                    net.dropout_rate = p;
                }
            }
        }
        cfg
    }
}

/// Hex SHA-256 of the canonical (sorted-key) JSON form of `value`.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).map(|v| v.to_string()).unwrap_or_default();
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = DmlivConfig::default();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.mc_samples += 1;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn dropout_follows_sample_size() {
        let cfg = DmlivConfig::default().resolved(5000);
        assert!((cfg.stage2.dropout_rate - 0.1).abs() < 1e-12);
        let fixed = DmlivConfig { sample_size_dropout: false, ..DmlivConfig::default() }.resolved(5000);
        assert_eq!(fixed.stage2.dropout_rate, RegressorConfig::default().dropout_rate);
    }

    #[test]
    fn validation() {
        assert!(DmlivConfig::default().validate().is_ok());
        assert!(DmlivConfig::trees().validate().is_ok());
        assert!(DmlivConfig { k_folds: 1, ..DmlivConfig::default() }.validate().is_err());
        assert!(DmlivConfig { mc_samples: 0, ..DmlivConfig::default() }.validate().is_err());
    }
}
