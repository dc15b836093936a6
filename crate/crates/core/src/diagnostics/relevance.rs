use serde::{Deserialize, Serialize};

use crate::datagen::ObservationSet;
use crate::error::{invalid, Error, Result};

/// F statistic for the instrument terms in a linear first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub statistic: f64,
    pub threshold: f64,
    pub weak: bool,
    /// Numerator and denominator degrees of freedom.
    pub df: (usize, usize),
    pub n: usize,
}

/// Regress the action on `[1, c, z, z * c]` and on `[1, c]` and compare
/// residual sums of squares with an F test. Below `threshold` the
/// instrument is flagged weak.
pub fn relevance_check(data: &ObservationSet, threshold: f64) -> Result<RelevanceReport> {
    let n = data.len();
    if n < 100 {
        return Err(invalid(format!("relevance check needs at least 100 rows, got {n}")));
    }
    let (dc, dz, _) = data.dims();
    let mut restricted: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for f in 0..dc {
        restricted.push(data.context().column(f).to_vec());
    }
    let mut full = restricted.clone();
    for g in 0..dz {
        let z = data.instrument().column(g);
        full.push(z.to_vec());
        for f in 0..dc {
            let c = data.context().column(f);
            full.push(z.iter().zip(c).map(|(a, b)| a * b).collect());
        }
    }
    let y = data.action_column().to_vec();
    let rss_r = ols_rss(&restricted, &y)?;
    let rss_f = ols_rss(&full, &y)?;
    let q = full.len() - restricted.len();
    let dof = n - full.len();
    let statistic = if rss_f > 0.0 {
        ((rss_r - rss_f).max(0.0) / q as f64) / (rss_f / dof as f64)
    } else if rss_r > 0.0 {
        f64::INFINITY
    } else {
        return Err(Error::Degenerate("action is an exact function of the context".into()));
    };
    Ok(RelevanceReport { statistic, threshold, weak: statistic < threshold, df: (q, dof), n })
}

/// Residual sum of squares of a least-squares fit of `y` on `cols`.
/// Non-constant columns are standardised first; a constant column other
/// than the leading intercept is rejected.
fn ols_rss(cols: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for (j, col) in cols.iter().enumerate() {
        if j == 0 {
            x.push(col.clone());
            continue;
        }
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 1e-300) {
            return Err(Error::Degenerate(format!("design column {j} has no variation")));
        }
        let sd = var.sqrt();
        x.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let p = x.len();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for a in 0..p {
        xty[a] = x[a].iter().zip(y).map(|(u, v)| u * v).sum();
        for b in 0..=a {
            let v: f64 = x[a].iter().zip(&x[b]).map(|(u, w)| u * w).sum();
            xtx[a * p + b] = v;
            xtx[b * p + a] = v;
        }
    }
    let beta = cholesky_solve(&mut xtx, &xty, p)
        .ok_or_else(|| Error::Degenerate("collinear design in relevance regression".into()))?;
    let mut rss = 0.0;
    for i in 0..y.len() {
        let fit: f64 = (0..p).map(|j| beta[j] * x[j][i]).sum();
        rss += (y[i] - fit).powi(2);
    }
    Ok(rss)
}

/// Solve `A x = b` for symmetric positive-definite `A` (row-major, overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let scale = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 1e-12 * scale) {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| a[i * p + k] * z[k]).sum();
        z[i] = (b[i] - s) / a[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[k * p + i] * x[k]).sum();
        x[i] = (z[i] - s) / a[i * p + i];
    }
    Some(x)
}
