//! Parameterised counterfactual prediction function `h_theta(c, a)`.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use super::regressor::{apply_scalers, RegressorConfig, RegressorKind};
use super::trees::BoostedTrees;
use crate::datagen::Affine;
use crate::error::{invalid, Result};
use crate::rng::{child_rng, Rng};

/// Anything that can score `(c, a)` pairs. Rows of `inputs` are `[c..., a...]`.
pub trait CounterfactualFn {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64>;

    fn value(&self, context: &[f64], action: &[f64]) -> f64 {
        let row: Vec<f64> = context.iter().chain(action).copied().collect();
        let x = ArrayView2::from_shape((1, row.len()), &row).unwrap();
        self.value_batch(x)[0]
    }
}

/// Adapts a closure `(c, a) -> value` to [`CounterfactualFn`].
pub struct FnCounterfactual<F> {
    context_dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &[f64]) -> f64> FnCounterfactual<F> {
    pub fn new(context_dim: usize, f: F) -> Self {
        Self { context_dim, f }
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64> CounterfactualFn for FnCounterfactual<F> {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut row = vec![0.0; inputs.ncols()];
        inputs
            .rows()
            .into_iter()
            .map(|r| {
                row.iter_mut().zip(r).for_each(|(d, s)| *d = *s);
                let (c, a) = row.split_at(self.context_dim);
                (self.f)(c, a)
            })
            .collect()
    }

    fn value(&self, context: &[f64], action: &[f64]) -> f64 {
        (self.f)(context, action)
    }
}

/// Feed-forward `h_theta` over `[c, a]` with fixed input and output affine maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualModel {
    input: Vec<Affine>,
    output: Affine,
    net: Mlp,
    dropout_rate: f64,
}

/// Build an untrained network `h_theta` with `input_dim = dim(c) + dim(a)`.
/// Weights are Glorot-uniform, biases zero; the affine maps start at identity.
pub fn new_counterfactual_model(cfg: &RegressorConfig, input_dim: usize, seed: u64) -> Result<CounterfactualModel> {
    if cfg.kind != RegressorKind::FeedForward {
        return Err(invalid(
            "gradient-based stage 2 needs a feedforward model; boosted trees use the tree stage-2 fit",
        ));
    }
    cfg.validate()?;
    if input_dim == 0 {
        return Err(invalid("input_dim must be positive"));
    }
    let mut rng = child_rng(seed, &[0xcf]);
    Ok(CounterfactualModel {
        input: vec![Affine::IDENTITY; input_dim],
        output: Affine::IDENTITY,
        net: Mlp::new(&cfg.network_sizes(input_dim, 1), &mut rng),
        dropout_rate: cfg.dropout_rate,
    })
}

impl CounterfactualModel {
    /// Set the input and output affine maps (does not touch theta).
    pub fn with_scaling(mut self, input: Vec<Affine>, output: Affine) -> Result<Self> {
        if input.len() != self.input.len() {
            return Err(invalid(format!("expected {} input scalers, got {}", self.input.len(), input.len())));
        }
        if input.iter().chain(std::iter::once(&output)).any(|a| !(a.std > 0.0)) {
            return Err(invalid("scaler std must be positive"));
        }
        self.input = input;
        self.output = output;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.input.len()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn theta(&self) -> &[f64] {
        self.net.params()
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(invalid(format!("theta has {} entries, model has {}", theta.len(), self.n_params())));
        }
        self.net.params_mut().copy_from_slice(theta);
        Ok(())
    }

    /// `dh/dtheta` at a single point.
    pub fn grad_theta(&self, context: &[f64], action: &[f64]) -> Vec<f64> {
        let row: Vec<f64> = context.iter().chain(action).copied().collect();
        let x = ArrayView2::from_shape((1, row.len()), &row).unwrap();
        let (_, cache) = self.forward(x, 0.0, None);
        self.backward(&cache, &Array2::ones((1, 1)))
    }

    /// Training forward pass; returns values in output units.
    pub fn forward(
        &self,
        inputs: ArrayView2<'_, f64>,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> (Array1<f64>, ForwardCache) {
        let xs = apply_scalers(inputs, &self.input);
        let (out, cache) = self.net.forward(xs.view(), dropout, rng);
        (out.column(0).mapv(|v| self.output.invert(v)), cache)
    }

    /// Parameter gradient given the loss gradient w.r.t. each returned value.
    pub fn backward(&self, cache: &ForwardCache, d_values: &Array2<f64>) -> Vec<f64> {
        let d = d_values * self.output.std;
        self.net.backward_params(cache, &d)
    }
}

impl CounterfactualFn for CounterfactualModel {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        let xs = apply_scalers(inputs, &self.input);
        self.net.predict(xs.view()).column(0).mapv(|v| self.output.invert(v))
    }
}

impl CounterfactualFn for BoostedTrees {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        self.predict(inputs)
    }
}

/// A stage-2 model from either the network or the tree path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedCounterfactual {
    Network(CounterfactualModel),
    Trees(BoostedTrees),
}

impl CounterfactualFn for FittedCounterfactual {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            FittedCounterfactual::Network(m) => m.value_batch(inputs),
            FittedCounterfactual::Trees(m) => m.value_batch(inputs),
        }
    }
}

impl<T: CounterfactualFn + ?Sized> CounterfactualFn for &T {
    fn value_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        (**self).value_batch(inputs)
    }

    fn value(&self, context: &[f64], action: &[f64]) -> f64 {
        (**self).value(context, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn model() -> CounterfactualModel {
        let cfg = RegressorConfig { layer_widths: vec![16, 8], ..RegressorConfig::default() };
        new_counterfactual_model(&cfg, 3, 11)
            .unwrap()
            .with_scaling(
                vec![Affine { mean: 5.0, std: 3.0 }, Affine { mean: 4.0, std: 2.0 }, Affine { mean: 0.5, std: 1.5 }],
                Affine { mean: 1.0, std: 4.0 },
            )
            .unwrap()
    }

    #[test]
    fn grad_theta_matches_finite_differences() {
        let mut m = model();
        let mut rng = rng_from(2);
        for _ in 0..10 {
            let c = [rng.random_range(0.0..10.0), rng.random_range(1.0..7.0)];
            let a = [rng.random_range(-2.0..2.0)];
            let g = m.grad_theta(&c, &a);
            for _ in 0..5 {
                let j = rng.random_range(0..m.n_params());
                let orig = m.theta()[j];
                let h = 1e-6;
                m.theta_mut()[j] = orig + h;
                let up = m.value(&c, &a);
                m.theta_mut()[j] = orig - h;
                let dn = m.value(&c, &a);
                m.theta_mut()[j] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-6), "param {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn equal_theta_gives_equal_values() {
        let a = model();
        let mut b = model();
        b.set_theta(a.theta()).unwrap();
        let x = ndarray::array![[1.0, 2.0, 0.3], [7.0, 5.0, -1.0]];
        assert_eq!(a.value_batch(x.view()), b.value_batch(x.view()));
    }

    #[test]
    fn first_order_taylor() {
        let mut m = model();
        let (c, a) = ([3.0, 2.0], [0.7]);
        let g = m.grad_theta(&c, &a);
        let j = (0..m.n_params()).max_by(|&p, &q| g[p].abs().total_cmp(&g[q].abs())).unwrap();
        let before = m.value(&c, &a);
        m.theta_mut()[j] += 1e-5;
        let after = m.value(&c, &a);
        assert!(((after - before) - 1e-5 * g[j]).abs() <= 1e-3 * (1e-5 * g[j]).abs());
    }

    #[test]
    fn rejects_tree_kind() {
        assert!(new_counterfactual_model(&RegressorConfig::trees(), 3, 0).is_err());
    }
}
