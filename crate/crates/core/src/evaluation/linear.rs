//! Least-squares probes from latents to ground truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const RIDGE: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub per_axis_mse: Vec<f64>,
    pub aggregate_mse: f64,
    pub r2: Vec<f64>,
    /// Per truth axis: `d` slopes followed by the intercept.
    pub coefficients: Vec<Vec<f64>>,
    /// The design was rank deficient and a small ridge was added.
    pub ridge: bool,
}

/// Ordinary least squares with intercept from `z [N, d]` to each column of
/// `truth [N, k]`.
pub fn linear_fit(z: &[f64], d: usize, truth: &[f64], k: usize) -> Result<LinearFit> {
    if d == 0 || k == 0 || z.len() % d != 0 || truth.len() % k != 0 {
        return Err(CoreError::Contract("linear fit needs [N, d] latents and [N, k] targets".into()));
    }
    let n = z.len() / d;
    if truth.len() / k != n {
        return Err(CoreError::Contract(format!("{n} latents but {} targets", truth.len() / k)));
    }
    if n <= d + 1 {
        return Err(CoreError::Contract(format!("linear fit needs more than {} samples, got {n}", d + 1)));
    }
    let zm: Vec<f64> = (0..d).map(|j| (0..n).map(|i| z[i * d + j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| z[i * d + j] - zm[j]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ridge = !(smax > 0.0) || smin <= RANK_TOL * smax;
    let ridged = if ridge {
        log::warn!("rank-deficient probe design, solving with ridge {RIDGE}");
        let xtx = x.transpose() * &x + DMatrix::identity(d, d) * RIDGE;
        Some(xtx.cholesky().ok_or_else(|| CoreError::NonFinite("ridge system is not positive definite".into()))?)
    } else {
        None
    };

    let mut fit = LinearFit {
        per_axis_mse: Vec::with_capacity(k),
        aggregate_mse: 0.0,
        r2: Vec::with_capacity(k),
        coefficients: Vec::with_capacity(k),
        ridge,
    };
    for a in 0..k {
        let ym = (0..n).map(|i| truth[i * k + a]).sum::<f64>() / n as f64;
        let y = DVector::from_fn(n, |i, _| truth[i * k + a] - ym);
        let w = match &ridged {
            Some(ch) => ch.solve(&(x.transpose() * &y)),
            None => svd.solve(&y, 0.0).map_err(|e| CoreError::NonFinite(e.into()))?,
        };
        let resid = &y - &x * &w;
        let ss_res = resid.norm_squared();
        let ss_tot = y.norm_squared();
        fit.per_axis_mse.push(ss_res / n as f64);
        fit.r2.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 });
        let intercept = ym - (0..d).map(|j| w[j] * zm[j]).sum::<f64>();
        let mut c: Vec<f64> = w.iter().copied().collect();
        c.push(intercept);
        fit.coefficients.push(c);
    }
    fit.aggregate_mse = fit.per_axis_mse.iter().sum::<f64>() / k as f64;
    Ok(fit)
}

/// R² of a one-dimensional fit of `y` on `x`.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(linear_fit(x, 1, y, 1)?.r2[0])
}
