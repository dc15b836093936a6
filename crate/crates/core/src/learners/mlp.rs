//! Fully connected ReLU network with a flat parameter vector.
//!
//! Layer `l` stores its weight matrix (`fan_in x fan_out`, row-major) followed
//! by its bias. Hidden layers apply ReLU and then inverted dropout; the output
//! layer is linear.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng as _, RngCore as _};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values kept by a training forward pass.
pub struct ForwardCache {
    /// Input of every layer (after dropout for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Post-ReLU activations of hidden layers, before dropout.
    hidden: Vec<Array2<f64>>,
    /// Inverted-dropout masks (already scaled by 1 / keep).
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let start: usize = self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        (start, start + fi * fo, start + fi * fo + fo)
    }

    fn weight(&self, layer: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (w0, b0, end) = self.offsets(layer);
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = ArrayView2::from_shape((fi, fo), &self.params[w0..b0]).unwrap();
        (w, &self.params[b0..end])
    }

    fn affine(&self, layer: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let (w, b) = self.weight(layer);
        let mut out = Array2::zeros((x.nrows(), w.ncols()));
        for mut row in out.rows_mut() {
            row.as_slice_mut().unwrap().copy_from_slice(b);
        }
        general_mat_mul(1.0, x, &w, 1.0, &mut out);
        out
    }

    /// Deterministic forward pass (no dropout).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.input_dim());
        let mut h = self.affine(0, &x);
        for l in 1..self.n_layers() {
            h.mapv_inplace(|v| v.max(0.0));
            h = self.affine(l, &h.view());
        }
        h
    }

    /// Training forward pass. Dropout is applied when `dropout > 0` and an RNG is given.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        dropout: f64,
        mut rng: Option<&mut Rng>,
    ) -> (Array2<f64>, ForwardCache) {
        let mut cache = ForwardCache { inputs: Vec::new(), hidden: Vec::new(), masks: Vec::new() };
        let mut cur = x.to_owned();
        for l in 0..self.n_layers() {
            let z = self.affine(l, &cur.view());
            cache.inputs.push(cur);
            if l + 1 == self.n_layers() {
                return (z, cache);
            }
            let mut act = z;
            act.mapv_inplace(|v| v.max(0.0));
            let (next, mask) = match rng.as_deref_mut() {
                Some(r) if dropout > 0.0 => {
                    let keep = 1.0 - dropout;
                    let threshold = (keep * 4_294_967_296.0) as u64;
                    let scale = 1.0 / keep;
                    let mut mask = Array2::zeros(act.raw_dim());
                    for m in mask.iter_mut() {
                        if u64::from(r.next_u32()) < threshold {
                            *m = scale;
                        }
                    }
                    (&act * &mask, Some(mask))
                }
                _ => (act.clone(), None),
            };
            cache.hidden.push(act);
            cache.masks.push(mask);
            cur = next;
        }
        unreachable!("network has at least one layer")
    }

    /// Back-propagate `d_out` (gradient of the loss w.r.t. the outputs).
    /// Returns the flat parameter gradient and the gradient w.r.t. the inputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let (grads, d_in) = self.backprop(cache, d_out, true);
        (grads, d_in.expect("input gradient requested"))
    }

    /// Parameter gradient only.
    pub fn backward_params(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Vec<f64> {
        self.backprop(cache, d_out, false).0
    }

    fn backprop(&self, cache: &ForwardCache, d_out: &Array2<f64>, input_grad: bool) -> (Vec<f64>, Option<Array2<f64>>) {
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.clone();
        for l in (0..self.n_layers()).rev() {
            let (w0, b0, end) = self.offsets(l);
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.inputs[l];
            {
                let mut gw = ArrayViewMut2::from_shape((fi, fo), &mut grads[w0..b0]).unwrap();
                general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut gw);
            }
            for (g, s) in grads[b0..end].iter_mut().zip(delta.sum_axis(Axis(0))) {
                *g = s;
            }
            if l == 0 && !input_grad {
                return (grads, None);
            }
            let (w, _) = self.weight(l);
            let mut d_in = Array2::zeros((delta.nrows(), fi));
            general_mat_mul(1.0, &delta, &w.t(), 0.0, &mut d_in);
            if l > 0 {
                if let Some(mask) = &cache.masks[l - 1] {
                    d_in *= mask;
                }
                ndarray::Zip::from(&mut d_in).and(&cache.hidden[l - 1]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = d_in;
        }
        (grads, Some(delta))
    }
}
