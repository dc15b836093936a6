//! Supervised learners: feed-forward networks, boosted trees, mixture
//! density models and the stage-2 counterfactual network.

mod counterfactual;
mod mixture;
mod mlp;
mod optim;
mod regressor;
mod serialize;
mod trees;

pub use counterfactual::{
    new_counterfactual_model, CounterfactualFn, CounterfactualModel, FittedCounterfactual, FnCounterfactual,
};
pub use mixture::{
    fit_conditional_density, sample_actions, DensityConfig, DensityModel, FittedDensity, GaussianLocation,
    MixtureBatch, MixtureDensityNet,
};
pub use mlp::{ForwardCache, Mlp};
pub use optim::AdamW;
pub(crate) use regressor::fit_scalers;
pub use regressor::{
    fit_regressor, sample_size_dropout, FittedRegressor, NeuralRegressor, Regressor, RegressorConfig, RegressorKind,
};
pub use serialize::{from_blob, to_blob, BLOB_VERSION};
pub use trees::{BinnedMatrix, BoostedTrees, BoostingParams, RegressionTree};
