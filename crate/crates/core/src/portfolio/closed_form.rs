//! Closed forms of the low-vol Markowitz book under the one-spike model with
//! a flat market mode, in terms of the moments of `y = 1/sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::correlation::MAX_SPIKE_FRACTION;

/// Cross-sectional moments of `y = 1/sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeMoments {
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub y4: f64,
    /// `< y |y^2 - <y^2>| >`
    pub y_abs_dev: f64,
}

impl SpikeMoments {
    pub fn from_sigma(sigma: &[f64]) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::insufficient("no volatilities"));
        }
        if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(format!("volatility {s} is not positive")));
        }
        let n = sigma.len() as f64;
        let avg = |f: &dyn Fn(f64) -> f64| sigma.iter().map(|s| f(1.0 / s)).sum::<f64>() / n;
        let y2 = avg(&|y| y * y);
        Ok(Self {
            y1: avg(&|y| y),
            y2,
            y3: avg(&|y| y * y * y),
            y4: avg(&|y| y * y * y * y),
            y_abs_dev: avg(&|y| y * (y * y - y2).abs()),
        })
    }
}

/// Net over gross of the low-vol Markowitz book:
/// `(<y^3> - <y><y^2>) / <y |y^2 - <y^2>|>`.
///
/// `None` when the volatilities are (numerically) all equal.
pub fn closed_form_ratio(m: &SpikeMoments) -> Option<f64> {
    let num = m.y3 - m.y1 * m.y2;
    let den = m.y_abs_dev;
    (den > 1e-12 * m.y3).then(|| num / den)
}

/// Market-mode risk exposure of the un-projected low-vol book with target
/// risk `target_risk`, for a spike model with flat eigenvector:
/// `R eps <y^2> / sqrt(lambda0 (<y^4> - <y^2>^2) + eps^2 <y^2>^2)`,
/// `eps^2 = (N - lambda0) / (N - 1)`.
pub fn closed_form_market_exposure(m: &SpikeMoments, target_risk: f64, lambda0: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    if n < 2 || !(lambda0 >= 1.0) || lambda0 > MAX_SPIKE_FRACTION * nf {
        return Err(Error::param(format!(
            "market eigenvalue {lambda0} outside [1, {MAX_SPIKE_FRACTION} N] for N = {n}"
        )));
    }
    let eps2 = (nf - lambda0) / (nf - 1.0);
    let var_y2 = m.y4 - m.y2 * m.y2;
    Ok(target_risk * eps2.sqrt() * m.y2 / (lambda0 * var_y2 + eps2 * m.y2 * m.y2).sqrt())
}
