use ndarray::Array2;

use crate::datagen::ObservationSet;
use crate::error::{invalid, Error, Result};
use crate::learners::CounterfactualFn;
use crate::rng::rng_from;

/// Fresh `(c, a, h0(c, a))` triples from the generator behind `data`, in the
/// stored units of `data`.
#[derive(Debug, Clone)]
pub struct TruthSample {
    /// Rows `[c..., a]`.
    pub inputs: Array2<f64>,
    pub h0: Vec<f64>,
}

pub fn sample_truth(data: &ObservationSet, n: usize, seed: u64) -> Result<TruthSample> {
    let truth = data.truth().ok_or(Error::MissingTruth)?;
    if n == 0 {
        return Err(invalid("need at least one evaluation sample"));
    }
    let dc = truth.context_dim();
    let mut rng = rng_from(seed);
    let mut inputs = Array2::zeros((n, dc + 1));
    let mut h0 = Vec::with_capacity(n);
    for i in 0..n {
        let c = truth.sample_context(&mut rng, 0.0);
        let z = truth.sample_instrument(&mut rng);
        let a = truth.sample_action(&c, &z, &mut rng);
        for (f, v) in c.iter().enumerate() {
            inputs[[i, f]] = *v;
        }
        inputs[[i, dc]] = data.action_to_stored(a);
        h0.push(data.outcome_to_stored(truth.h0(&c, a)));
    }
    Ok(TruthSample { inputs, h0 })
}

/// Mean squared error of `model` against `h0` on `n` fresh draws from the
/// observational law, in the stored (standardised) units of `data`.
pub fn counterfactual_mse<H: CounterfactualFn + ?Sized>(
    model: &H,
    data: &ObservationSet,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let sample = sample_truth(data, n, seed)?;
    Ok(mse_on(model, &sample))
}

pub fn mse_on<H: CounterfactualFn + ?Sized>(model: &H, sample: &TruthSample) -> f64 {
    let pred = model.value_batch(sample.inputs.view());
    pred.iter().zip(&sample.h0).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / sample.h0.len() as f64
}
