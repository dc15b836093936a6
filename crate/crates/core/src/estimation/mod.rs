//! Two-stage estimation: partitions, scores, DML-IV and its variants.

mod config;
mod evaluate;
mod fit;
mod nuisance;
mod partition;
mod score;

pub use config::{config_digest, DmlivConfig};
pub use evaluate::{counterfactual_mse, mse_on, sample_truth, TruthSample};
pub use fit::{
    fit_ce_dmliv, fit_dmliv, fit_method, fit_naive_twostage, DmlivEstimate, EstimateRecord, Method, TraceEntry,
};
pub use nuisance::NuisancePair;
pub use partition::{make_partition, FoldPartition};
pub use score::{draw_actions, g_hat, g_hat_frozen, g_hat_with_grad, orthogonal_score, pseudo_inputs, standard_score};
