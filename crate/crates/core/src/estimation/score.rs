use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::learners::{CounterfactualFn, CounterfactualModel, DensityModel, MixtureBatch};
use crate::rng::{rng_from, Rng};

/// `(s - g)^2`: the orthogonal score.
#[inline]
pub fn orthogonal_score(s_val: f64, g_val: f64) -> f64 {
    (s_val - g_val) * (s_val - g_val)
}

/// `(r - g)^2`: the plain two-stage loss.
#[inline]
pub fn standard_score(r: f64, g_val: f64) -> f64 {
    (r - g_val) * (r - g_val)
}

/// `count` draws for every row of `mix`, as a `rows x count` array.
pub fn draw_actions(mix: &MixtureBatch, count: usize, rng: &mut Rng) -> Array2<f64> {
    let mut out = Array2::zeros((mix.len(), count));
    for i in 0..mix.len() {
        for j in 0..count {
            out[[i, j]] = mix.sample(i, rng);
        }
    }
    out
}

/// Stack `(c_i, a_ij)` into `rows * count` network inputs, row-major in `(i, j)`.
pub fn pseudo_inputs(context: ArrayView2<'_, f64>, draws: &Array2<f64>) -> Array2<f64> {
    let (n, m) = draws.dim();
    let dc = context.ncols();
    let mut x = Array2::zeros((n * m, dc + 1));
    for i in 0..n {
        for j in 0..m {
            let mut row = x.row_mut(i * m + j);
            for f in 0..dc {
                row[f] = context[[i, f]];
            }
            row[dc] = draws[[i, j]];
        }
    }
    x
}

/// Row means of `values` reshaped to `rows x count`.
pub(crate) fn draw_means(values: &Array1<f64>, count: usize) -> Array1<f64> {
    values.as_slice().expect("contiguous values").chunks(count).map(|c| c.iter().sum::<f64>() / count as f64).collect()
}

/// `g(h, c, z)` for many rows with fixed draws, evaluated in chunks.
pub fn g_hat_frozen<H: CounterfactualFn + ?Sized>(
    model: &H,
    context: ArrayView2<'_, f64>,
    draws: &Array2<f64>,
) -> Array1<f64> {
    const CHUNK: usize = 2048;
    let (n, m) = draws.dim();
    let rows_per = (CHUNK / m).max(1);
    let mut out = Array1::zeros(n);
    let mut start = 0;
    while start < n {
        let end = (start + rows_per).min(n);
        let sub = draws.slice(ndarray::s![start..end, ..]).to_owned();
        let x = pseudo_inputs(context.slice(ndarray::s![start..end, ..]), &sub);
        let g = draw_means(&model.value_batch(x.view()), m);
        out.slice_mut(ndarray::s![start..end]).assign(&g);
        start = end;
    }
    out
}

fn single_mixture(density: &DensityModel, context: &[f64], instrument: &[f64]) -> Result<MixtureBatch> {
    let row: Vec<f64> = context.iter().chain(instrument).copied().collect();
    let x = ArrayView2::from_shape((1, row.len()), &row).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Ok(density.mixture(x))
}

/// Monte Carlo estimate of `E[h(c, A) | c, z]` under the fitted conditional.
pub fn g_hat<H: CounterfactualFn + ?Sized>(
    model: &H,
    density: &DensityModel,
    context: &[f64],
    instrument: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(invalid("mc_samples must be positive"));
    }
    let mix = single_mixture(density, context, instrument)?;
    let draws = draw_actions(&mix, mc_samples, &mut rng_from(seed));
    let c = ArrayView2::from_shape((1, context.len()), context).unwrap();
    Ok(g_hat_frozen(model, c, &draws)[0])
}

/// [`g_hat`] and its gradient in theta, using the same draws as `g_hat` with this seed.
pub fn g_hat_with_grad(
    model: &CounterfactualModel,
    density: &DensityModel,
    context: &[f64],
    instrument: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if mc_samples == 0 {
        return Err(invalid("mc_samples must be positive"));
    }
    let mix = single_mixture(density, context, instrument)?;
    let draws = draw_actions(&mix, mc_samples, &mut rng_from(seed));
    let c = ArrayView2::from_shape((1, context.len()), context).unwrap();
    let x = pseudo_inputs(c, &draws);
    let (vals, cache) = model.forward(x.view(), 0.0, None);
    let d = Array2::from_elem((mc_samples, 1), 1.0 / mc_samples as f64);
    Ok((vals.mean().unwrap(), model.backward(&cache, &d)))
}
