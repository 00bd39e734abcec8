use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lime::MaskMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² against the weighted mean response.
    pub r2: f64,
    pub alpha: f64,
}

impl SurrogateFit {
    pub fn predict(&self, mask: &[u8]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(mask)
                .filter(|(_, &z)| z == 1)
                .map(|(c, _)| c)
                .sum::<f64>()
    }
}

/// Weighted ridge regression of `y` on the mask columns plus an intercept.
///
/// Solves `(XᵀWX + αD)β = XᵀWy` with `X = [1 | Z]` and `D` the identity
/// except for a zero in the intercept position.
pub fn fit_surrogate(masks: &MaskMatrix, y: &[f64], weights: &[f64], alpha: f64) -> Result<SurrogateFit> {
    let (n, s) = (masks.rows(), masks.cols());
    for (what, len) in [("responses vs mask rows", y.len()), ("weights vs mask rows", weights.len())] {
        if len != n {
            return Err(Error::LengthMismatch { what, left: len, right: n });
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("surrogate fit needs at least one sample".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("kernel weights must be positive and finite".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("responses must be finite".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument("ridge alpha must be non-negative".into()));
    }

    let p = s + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut active = Vec::with_capacity(p);
    for i in 0..n {
        active.clear();
        active.push(0);
        active.extend((0..s).filter(|&j| masks.get(i, j) == 1).map(|j| j + 1));
        let (w, wy) = (weights[i], weights[i] * y[i]);
        for (k, &r) in active.iter().enumerate() {
            b[r] += wy;
            for &c in &active[k..] {
                a[(r, c)] += w;
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    for j in 1..p {
        a[(j, j)] += alpha;
    }

    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular(format!("{p}x{p} normal equations with alpha={alpha}")))?,
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite surrogate solution".into()));
    }

    let fit = SurrogateFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        r2: 0.0,
        alpha,
    };
    let sw: f64 = weights.iter().sum();
    // A constant response has zero spread; the weighted mean would carry rounding noise.
    let mean = if y.iter().all(|&v| v == y[0]) {
        y[0]
    } else {
        weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / sw
    };
    let (mut ss_tot, mut ss_res) = (0.0, 0.0);
    for i in 0..n {
        ss_tot += weights[i] * (y[i] - mean).powi(2);
        ss_res += weights[i] * (y[i] - fit.predict(masks.row(i))).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON * sw {
        1.0
    } else {
        0.0
    };
    Ok(SurrogateFit { r2, ..fit })
}
