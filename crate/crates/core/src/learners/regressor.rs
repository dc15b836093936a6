use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::optim::AdamW;
use super::trees::{BoostedTrees, BoostingParams};
use crate::datagen::Affine;
use crate::error::{invalid, Error, Result};
use crate::rng::{child_rng, shuffle, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    #[serde(rename = "feedforward", alias = "feed_forward")]
    FeedForward,
    BoostedTrees,
}

impl std::str::FromStr for RegressorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedforward" | "feed_forward" => Ok(Self::FeedForward),
            "boosted_trees" | "trees" => Ok(Self::BoostedTrees),
            other => Err(invalid(format!("unknown estimator kind {other:?}"))),
        }
    }
}

impl RegressorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FeedForward => "feedforward",
            Self::BoostedTrees => "boosted_trees",
        }
    }
}

/// Hyperparameters for either learner family; each family reads its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    pub layer_widths: Vec<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            kind: RegressorKind::FeedForward,
            layer_widths: vec![128, 64, 32],
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            dropout_rate: 0.1,
            epochs: 100,
            batch_size: 128,
            n_trees: 500,
            min_leaf: 100,
            max_depth: 3,
            shrinkage: 0.1,
        }
    }
}

/// Dropout schedule `1000 / (5000 + n)` used for the demand experiments.
pub fn sample_size_dropout(n: usize) -> f64 {
    1000.0 / (5000.0 + n as f64)
}

impl RegressorConfig {
    pub fn trees() -> Self {
        Self { kind: RegressorKind::BoostedTrees, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RegressorKind::FeedForward => {
                if !(self.learning_rate > 0.0) {
                    return Err(invalid("learning_rate must be positive"));
                }
                if self.layer_widths.contains(&0) {
                    return Err(invalid("layer widths must be positive"));
                }
                if !(0.0..1.0).contains(&self.dropout_rate) {
                    return Err(invalid("dropout_rate must lie in [0, 1)"));
                }
                if self.weight_decay < 0.0 {
                    return Err(invalid("weight_decay must be non-negative"));
                }
                if self.epochs == 0 || self.batch_size == 0 {
                    return Err(invalid("epochs and batch_size must be positive"));
                }
            }
            RegressorKind::BoostedTrees => {
                if self.n_trees == 0 {
                    return Err(invalid("n_trees must be at least 1"));
                }
                if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
                    return Err(invalid("shrinkage must lie in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn boosting(&self) -> BoostingParams {
        BoostingParams {
            n_trees: self.n_trees,
            shrinkage: self.shrinkage,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
        }
    }

    pub(crate) fn network_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        std::iter::once(input).chain(self.layer_widths.iter().copied()).chain(std::iter::once(output)).collect()
    }
}

pub(crate) fn check_inputs(x: ArrayView2<'_, f64>, n_targets: usize) -> Result<()> {
    if x.nrows() != n_targets {
        return Err(Error::DimensionMismatch(format!("{} input rows but {} targets", x.nrows(), n_targets)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regressor inputs".into()));
    }
    Ok(())
}

/// Standardise every column with its own moments.
pub(crate) fn fit_scalers(x: ArrayView2<'_, f64>) -> Vec<Affine> {
    x.columns().into_iter().map(Affine::fit).collect()
}

pub(crate) fn apply_scalers(x: ArrayView2<'_, f64>, scalers: &[Affine]) -> Array2<f64> {
    let mut out = x.to_owned();
    for (mut col, s) in out.columns_mut().into_iter().zip(scalers) {
        col.mapv_inplace(|v| s.apply(v));
    }
    out
}

/// Mini-batch training loop shared by the network learners. `loss_grad`
/// receives the batch rows and the network outputs and returns the batch loss
/// and the gradient w.r.t. the outputs. Returns the mean loss of each epoch.
pub(crate) fn train_network<F>(
    net: &mut Mlp,
    x: &Array2<f64>,
    cfg: &RegressorConfig,
    rng: &mut Rng,
    mut loss_grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &Array2<f64>) -> (f64, Array2<f64>),
{
    let n = x.nrows();
    let mut opt = AdamW::new(net.n_params(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.min(n).max(1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        shuffle(rng, &mut order);
        let mut total = 0.0;
        for rows in order.chunks(batch) {
            let xb = x.select(Axis(0), rows);
            let (out, cache) = net.forward(xb.view(), cfg.dropout_rate, Some(rng));
            let (loss, d_out) = loss_grad(rows, &out);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            total += loss * rows.len() as f64;
            let grads = net.backward_params(&cache, &d_out);
            opt.step(net.params_mut(), &grads);
        }
        trace.push(total / n as f64);
    }
    Ok(trace)
}

/// Feed-forward regressor with standardised inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralRegressor {
    input: Vec<Affine>,
    target: Affine,
    net: Mlp,
}

impl NeuralRegressor {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let xs = apply_scalers(x, &self.input);
        self.net.predict(xs.view()).column(0).mapv(|v| self.target.invert(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    FeedForward(NeuralRegressor),
    BoostedTrees(BoostedTrees),
}

impl Regressor {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            Regressor::FeedForward(m) => m.predict(x),
            Regressor::BoostedTrees(m) => m.predict(x),
        }
    }
}

/// A fitted regressor together with its per-epoch (or per-tree) training MSE.
#[derive(Debug, Clone)]
pub struct FittedRegressor {
    pub model: Regressor,
    pub training_loss: Vec<f64>,
}

pub fn fit_regressor(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &RegressorConfig,
    seed: u64,
) -> Result<FittedRegressor> {
    cfg.validate()?;
    check_inputs(x, y.len())?;
    if y.len() < 2 {
        return Err(invalid("need at least two training rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets".into()));
    }
    match cfg.kind {
        RegressorKind::BoostedTrees => {
            let (model, trace) = BoostedTrees::fit(x, y, &cfg.boosting());
            Ok(FittedRegressor { model: Regressor::BoostedTrees(model), training_loss: trace })
        }
        RegressorKind::FeedForward => {
            let mut rng = child_rng(seed, &[0x5e9]);
            let input = fit_scalers(x);
            let target = Affine::fit(y);
            let xs = apply_scalers(x, &input);
            let ys: Vec<f64> = y.iter().map(|&v| target.apply(v)).collect();
            let mut net = Mlp::new(&cfg.network_sizes(x.ncols(), 1), &mut rng);
            if y.iter().all(|&v| v == y[0]) {
                // A zero output layer reproduces the constant exactly and receives no gradient.
                let last = net.sizes()[net.sizes().len() - 2] + 1;
                let n = net.n_params();
                net.params_mut()[n - last..].fill(0.0);
            }
            let trace = train_network(&mut net, &xs, cfg, &mut rng, |rows, out| {
                let b = rows.len() as f64;
                let mut grad = Array2::zeros(out.raw_dim());
                let mut loss = 0.0;
                for (k, &i) in rows.iter().enumerate() {
                    let e = out[[k, 0]] - ys[i];
                    loss += e * e;
                    grad[[k, 0]] = 2.0 * e / b;
                }
                (loss / b, grad)
            })?;
            // Report the loss in target units.
            let scale = target.std * target.std;
            let trace = trace.into_iter().map(|l| l * scale).collect();
            Ok(FittedRegressor {
                model: Regressor::FeedForward(NeuralRegressor { input, target, net }),
                training_loss: trace,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    }

    fn uniform_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    fn small_net() -> RegressorConfig {
        RegressorConfig {
            layer_widths: vec![32, 32],
            dropout_rate: 0.0,
            weight_decay: 0.0,
            epochs: 60,
            batch_size: 64,
            ..Default::default()
        }
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let x = uniform_inputs(200, 2, 0);
        let y = Array1::from_elem(200, 4.25);
        for cfg in [small_net(), RegressorConfig { n_trees: 20, min_leaf: 5, ..RegressorConfig::trees() }] {
            let m = fit_regressor(x.view(), y.view(), &cfg, 1).unwrap().model;
            assert!(m.predict(x.view()).iter().all(|p| (p - 4.25).abs() < 1e-3));
        }
    }

    #[test]
    fn feedforward_learns_a_line() {
        let x = uniform_inputs(2000, 1, 1);
        let y = x.column(0).mapv(|v| 3.0 * v + 1.0);
        let fit = fit_regressor(x.view(), y.view(), &small_net(), 2).unwrap();
        let xt = uniform_inputs(500, 1, 3);
        let yt = xt.column(0).mapv(|v| 3.0 * v + 1.0);
        let test_mse = mse(&fit.model.predict(xt.view()), &yt);
        assert!(test_mse < 1e-2, "test mse {test_mse}");
        // Full-data-equivalent trend: the last epoch beats the first.
        assert!(fit.training_loss.last().unwrap() < &fit.training_loss[0]);
    }

    #[test]
    fn full_batch_training_loss_is_monotone() {
        let x = uniform_inputs(256, 2, 4);
        let y: Array1<f64> = x.rows().into_iter().map(|r| r[0] - 0.5 * r[1]).collect();
        let cfg = RegressorConfig { batch_size: 256, epochs: 40, learning_rate: 1e-3, ..small_net() };
        let fit = fit_regressor(x.view(), y.view(), &cfg, 5).unwrap();
        assert!(fit.training_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", fit.training_loss);
    }

    #[test]
    fn trees_learn_a_step() {
        let x = uniform_inputs(2000, 2, 6);
        let step = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
        let y = x.column(0).mapv(step);
        let cfg = RegressorConfig { min_leaf: 10, ..RegressorConfig::trees() };
        let fit = fit_regressor(x.view(), y.view(), &cfg, 0).unwrap();
        let xt = uniform_inputs(1000, 2, 7);
        let yt = xt.column(0).mapv(step);
        assert!(mse(&fit.model.predict(xt.view()), &yt) < 0.02);
        assert!(fit.training_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn fits_beat_the_mean_predictor() {
        let x = uniform_inputs(400, 2, 8);
        let y: Array1<f64> = x.rows().into_iter().map(|r| (3.0 * r[0]).sin() + r[1]).collect();
        let mean = y.mean().unwrap();
        let baseline = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0;
        for cfg in [small_net(), RegressorConfig { min_leaf: 10, n_trees: 100, ..RegressorConfig::trees() }] {
            let m = fit_regressor(x.view(), y.view(), &cfg, 9).unwrap().model;
            assert!(mse(&m.predict(x.view()), &y) < baseline);
            assert_eq!(m.predict(x.view()), m.predict(x.view()));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = uniform_inputs(10, 2, 0);
        let y = Array1::zeros(9);
        assert!(matches!(fit_regressor(x.view(), y.view(), &small_net(), 0), Err(Error::DimensionMismatch(_))));
        let mut xn = uniform_inputs(10, 2, 0);
        xn[[3, 1]] = f64::NAN;
        let y = Array1::zeros(10);
        assert!(matches!(fit_regressor(xn.view(), y.view(), &small_net(), 0), Err(Error::NonFinite(_))));
        let bad = RegressorConfig { learning_rate: 0.0, ..small_net() };
        assert!(fit_regressor(x.view(), y.view(), &bad, 0).is_err());
        let bad = RegressorConfig { n_trees: 0, ..RegressorConfig::trees() };
        assert!(fit_regressor(x.view(), y.view(), &bad, 0).is_err());
    }
}
