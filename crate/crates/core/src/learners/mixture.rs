//! Conditional density of the action given `(c, z)` as a Gaussian mixture.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::regressor::{apply_scalers, check_inputs, fit_scalers, train_network, RegressorConfig, RegressorKind};
use super::trees::BoostedTrees;
use crate::datagen::Affine;
use crate::error::{invalid, Error, Result};
use crate::rng::{child_rng, rng_from, Rng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Trunk hyperparameters; `kind = boosted_trees` selects the tree-based location model.
    pub net: RegressorConfig,
    pub n_components: usize,
    /// Lower bound on component standard deviations, in standardised action units.
    pub std_floor: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { net: RegressorConfig::default(), n_components: 10, std_floor: 1e-3 }
    }
}

/// Mixture parameters for a batch of conditioning rows, in data units.
/// Each array is `rows x components`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureBatch {
    pub weights: Array2<f64>,
    pub means: Array2<f64>,
    pub stds: Array2<f64>,
}

impl MixtureBatch {
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn n_components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn mean(&self, row: usize) -> f64 {
        self.weights.row(row).iter().zip(self.means.row(row)).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self, row: usize) -> f64 {
        let mu = self.mean(row);
        (0..self.n_components())
            .map(|k| {
                let (w, m, s) = (self.weights[[row, k]], self.means[[row, k]], self.stds[[row, k]]);
                w * (s * s + (m - mu) * (m - mu))
            })
            .sum()
    }

    pub fn log_density(&self, row: usize, y: f64) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| {
                let (w, m, s) = (self.weights[[row, k]], self.means[[row, k]], self.stds[[row, k]]);
                let u = (y - m) / s;
                w.ln() - HALF_LN_2PI - s.ln() - 0.5 * u * u
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample(&self, row: usize, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let w = self.weights.row(row);
        let mut acc = 0.0;
        let mut k = w.len() - 1;
        for (j, &wj) in w.iter().enumerate() {
            acc += wj;
            if u < acc {
                k = j;
                break;
            }
        }
        let n: f64 = rng.sample(StandardNormal);
        self.means[[row, k]] + self.stds[[row, k]] * n
    }

    pub fn select(&self, rows: &[usize]) -> MixtureBatch {
        let ax = ndarray::Axis(0);
        MixtureBatch {
            weights: self.weights.select(ax, rows),
            means: self.means.select(ax, rows),
            stds: self.stds.select(ax, rows),
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network trunk whose final layer emits `3k` values: mixture logits, means,
/// and pre-softplus standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensityNet {
    input: Vec<Affine>,
    action: Affine,
    net: Mlp,
    n_components: usize,
    std_floor: f64,
}

/// Homoscedastic Gaussian around a boosted-tree conditional mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLocation {
    mean: BoostedTrees,
    std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    Mixture(MixtureDensityNet),
    Location(GaussianLocation),
}

/// Fitted density plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct FittedDensity {
    pub model: DensityModel,
    /// Per-epoch training NLL in standardised action units (empty for trees).
    pub training_nll: Vec<f64>,
    /// Average training NLL (data units) of the fitted model.
    pub final_nll: f64,
    /// Average training NLL of a single Gaussian with the pooled moments.
    pub pooled_gaussian_nll: f64,
    /// Set when the actions had no spread and the stds sit at the floor.
    pub degenerate: bool,
}

impl MixtureDensityNet {
    fn heads(&self, out: &Array2<f64>) -> MixtureBatch {
        let (n, k) = (out.nrows(), self.n_components);
        let mut weights = Array2::zeros((n, k));
        let mut means = Array2::zeros((n, k));
        let mut stds = Array2::zeros((n, k));
        for i in 0..n {
            let logits: Vec<f64> = (0..k).map(|j| out[[i, j]]).collect();
            let lse = log_sum_exp(&logits);
            for j in 0..k {
                weights[[i, j]] = (logits[j] - lse).exp();
                means[[i, j]] = self.action.invert(out[[i, k + j]]);
                stds[[i, j]] = (self.std_floor + softplus(out[[i, 2 * k + j]])) * self.action.std;
            }
        }
        MixtureBatch { weights, means, stds }
    }
}

impl DensityModel {
    /// Mixture parameters at each row of `[c, z]` inputs.
    pub fn mixture(&self, inputs: ArrayView2<'_, f64>) -> MixtureBatch {
        match self {
            DensityModel::Mixture(m) => {
                let xs = apply_scalers(inputs, &m.input);
                m.heads(&m.net.predict(xs.view()))
            }
            DensityModel::Location(g) => {
                let mu = g.mean.predict(inputs);
                let n = mu.len();
                MixtureBatch {
                    weights: Array2::ones((n, 1)),
                    means: mu.into_shape_with_order((n, 1)).unwrap(),
                    stds: Array2::from_elem((n, 1), g.std),
                }
            }
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            DensityModel::Mixture(m) => m.n_components,
            DensityModel::Location(_) => 1,
        }
    }

    pub fn log_density(&self, inputs: ArrayView2<'_, f64>, actions: ArrayView1<'_, f64>) -> Array1<f64> {
        let mix = self.mixture(inputs);
        (0..mix.len()).map(|i| mix.log_density(i, actions[i])).collect()
    }

    pub fn mean(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        let mix = self.mixture(inputs);
        (0..mix.len()).map(|i| mix.mean(i)).collect()
    }
}

fn pooled_gaussian_nll(a: ArrayView1<'_, f64>) -> f64 {
    let s = Affine::fit(a);
    let n = a.len() as f64;
    let var = a.iter().map(|v| (v - s.mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        HALF_LN_2PI + 0.5 * var.ln() + 0.5
    } else {
        f64::NEG_INFINITY
    }
}

/// Fit `P(A | c, z)` by maximum likelihood.
pub fn fit_conditional_density(
    inputs: ArrayView2<'_, f64>,
    actions: ArrayView1<'_, f64>,
    cfg: &DensityConfig,
    seed: u64,
) -> Result<FittedDensity> {
    cfg.net.validate()?;
    check_inputs(inputs, actions.len())?;
    if cfg.n_components == 0 {
        return Err(invalid("n_components must be positive"));
    }
    if !(cfg.std_floor > 0.0) {
        return Err(invalid("std_floor must be positive"));
    }
    if actions.len() < cfg.n_components.max(2) {
        return Err(invalid(format!(
            "need at least {} rows for {} components",
            cfg.n_components.max(2),
            cfg.n_components
        )));
    }
    if actions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("actions".into()));
    }
    let pooled = pooled_gaussian_nll(actions);
    let degenerate = !pooled.is_finite();
    let n = actions.len() as f64;

    match cfg.net.kind {
        RegressorKind::BoostedTrees => {
            let (mean, _) = BoostedTrees::fit(inputs, actions, &cfg.net.boosting());
            let mu = mean.predict(inputs);
            let var = actions.iter().zip(&mu).map(|(a, m)| (a - m).powi(2)).sum::<f64>() / n;
            let floor = cfg.std_floor * Affine::fit(actions).std;
            let std = var.sqrt().max(floor);
            let model = DensityModel::Location(GaussianLocation { mean, std });
            let final_nll = -model.log_density(inputs, actions).mean().unwrap();
            Ok(FittedDensity { model, training_nll: Vec::new(), final_nll, pooled_gaussian_nll: pooled, degenerate })
        }
        RegressorKind::FeedForward => {
            let k = cfg.n_components;
            let mut rng = child_rng(seed, &[0xd3f]);
            let input = fit_scalers(inputs);
            let action = Affine::fit(actions);
            let xs = apply_scalers(inputs, &input);
            let ys: Vec<f64> = actions.iter().map(|&a| action.apply(a)).collect();
            let mut net = Mlp::new(&cfg.net.network_sizes(inputs.ncols(), 3 * k), &mut rng);
            spread_initial_means(&mut net, k);
            let floor = cfg.std_floor;
            let trace = train_network(&mut net, &xs, &cfg.net, &mut rng, |rows, out| {
                mixture_nll_grad(rows, out, &ys, k, floor)
            })?;
            let model =
                DensityModel::Mixture(MixtureDensityNet { input, action, net, n_components: k, std_floor: floor });
            let final_nll = -model.log_density(inputs, actions).mean().unwrap();
            Ok(FittedDensity { model, training_nll: trace, final_nll, pooled_gaussian_nll: pooled, degenerate })
        }
    }
}

/// Start the component means at evenly spaced standard-normal quantiles so
/// the components do not collapse onto one another at initialisation.
fn spread_initial_means(net: &mut Mlp, k: usize) {
    let out = net.output_dim();
    let n = net.n_params();
    let bias = &mut net.params_mut()[n - out..];
    for j in 0..k {
        let q = (j as f64 + 0.5) / k as f64;
        bias[k + j] = 1.5 * (2.0 * q - 1.0);
    }
}

/// Average NLL of a batch and its gradient w.r.t. the raw network outputs.
fn mixture_nll_grad(rows: &[usize], out: &Array2<f64>, ys: &[f64], k: usize, floor: f64) -> (f64, Array2<f64>) {
    let b = rows.len() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    let mut log_w = vec![0.0; k];
    let mut terms = vec![0.0; k];
    for (r, &i) in rows.iter().enumerate() {
        let y = ys[i];
        for j in 0..k {
            log_w[j] = out[[r, j]];
        }
        let lse_w = log_sum_exp(&log_w);
        for j in 0..k {
            let s = floor + softplus(out[[r, 2 * k + j]]);
            let u = (y - out[[r, k + j]]) / s;
            terms[j] = log_w[j] - lse_w - HALF_LN_2PI - s.ln() - 0.5 * u * u;
        }
        let lse = log_sum_exp(&terms);
        total -= lse;
        for j in 0..k {
            let post = (terms[j] - lse).exp();
            let w = (log_w[j] - lse_w).exp();
            let raw_s = out[[r, 2 * k + j]];
            let s = floor + softplus(raw_s);
            let diff = y - out[[r, k + j]];
            grad[[r, j]] = (w - post) / b;
            grad[[r, k + j]] = -post * diff / (s * s) / b;
            grad[[r, 2 * k + j]] = post * (1.0 / s - diff * diff / (s * s * s)) * sigmoid(raw_s) / b;
        }
    }
    (total / b, grad)
}

/// I.i.d. draws from the fitted conditional at a single `(c, z)`.
pub fn sample_actions(
    model: &DensityModel,
    context: &[f64],
    instrument: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(invalid("count must be positive"));
    }
    let row: Vec<f64> = context.iter().chain(instrument).copied().collect();
    let x = Array2::from_shape_vec((1, row.len()), row).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let mix = model.mixture(x.view());
    let mut rng = rng_from(seed);
    Ok((0..count).map(|_| mix.sample(0, &mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let k = 3;
        let out = Array2::from_shape_fn((2, 3 * k), |(i, j)| ((i * 7 + j) as f64 * 0.61).sin());
        let ys = vec![0.3, -1.2];
        let rows = [0usize, 1];
        let (_, g) = mixture_nll_grad(&rows, &out, &ys, k, 1e-3);
        for r in 0..2 {
            for j in 0..3 * k {
                let mut up = out.clone();
                up[[r, j]] += 1e-6;
                let mut dn = out.clone();
                dn[[r, j]] -= 1e-6;
                let fd = (mixture_nll_grad(&rows, &up, &ys, k, 1e-3).0 - mixture_nll_grad(&rows, &dn, &ys, k, 1e-3).0)
                    / 2e-6;
                assert!((fd - g[[r, j]]).abs() <= 1e-4 * fd.abs().max(1e-4), "({r},{j}) {fd} vs {}", g[[r, j]]);
            }
        }
    }

    #[test]
    fn batch_moments_and_sampling() {
        let mix = MixtureBatch { weights: array![[0.5, 0.5]], means: array![[-1.0, 1.0]], stds: array![[0.01, 0.01]] };
        assert_eq!(mix.mean(0), 0.0);
        assert!((mix.variance(0) - (1.0 + 1e-4)).abs() < 1e-12);
        let mut rng = rng_from(4);
        let draws: Vec<f64> = (0..10_000).map(|_| mix.sample(0, &mut rng)).collect();
        assert!(crate::stats::mean(&draws).abs() < 0.05);
    }

    #[test]
    fn log_density_of_standard_normal() {
        let mix = MixtureBatch { weights: array![[1.0]], means: array![[0.0]], stds: array![[1.0]] };
        assert!((mix.log_density(0, 0.0) + HALF_LN_2PI).abs() < 1e-12);
    }
}
