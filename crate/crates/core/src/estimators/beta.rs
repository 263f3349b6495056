use super::EstimatorConfig;
use crate::data::{PoolCalendar, ReturnPanel};
use crate::error::{Error, Result};
use crate::stats::{covariance, variance};

/// Equi-weighted mean return of the pool members on each day.
///
/// `NaN` on days where no member has a defined return.
pub fn index_returns(panel: &ReturnPanel, pool: &PoolCalendar) -> Vec<f64> {
    (0..panel.n_days())
        .map(|t| {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in pool.members(t) {
                let r = panel.get(t, i);
                if r.is_finite() {
                    sum += r;
                    count += 1;
                }
            }
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// Compounded `horizon`-day return ending on day `end`.
pub fn horizon_returns(daily: &[f64], end: usize, horizon: usize) -> f64 {
    if end + 1 < horizon {
        return f64::NAN;
    }
    daily[end + 1 - horizon..=end].iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

/// Lagged rolling beta of every instrument against `index` on day `t`.
///
/// Betas are `Cov(R_i, R_idx) / Var(R_idx)` over `beta_window` overlapping
/// `beta_horizon`-day compounded returns, the last one ending `lag` days
/// before `t`. Instruments with an incomplete window get `None`.
pub fn rolling_beta(panel: &ReturnPanel, index: &[f64], t: usize, cfg: &EstimatorConfig) -> Result<Vec<Option<f64>>> {
    let n = panel.n_instruments();
    let Some(end) = cfg.window_end(t) else {
        return Ok(vec![None; n]);
    };
    if end >= panel.n_days() || end + 1 < cfg.beta_window + cfg.beta_horizon {
        return Ok(vec![None; n]);
    }
    let first = end + 1 - cfg.beta_window;
    let idx: Vec<f64> = (first..=end).map(|s| horizon_returns(index, s, cfg.beta_horizon)).collect();
    if idx.iter().any(|r| !r.is_finite()) {
        return Ok(vec![None; n]);
    }
    let var_idx = variance(&idx);
    if !(var_idx > 0.0) {
        return Err(Error::Degenerate(format!("zero index variance in beta window ending {}", panel.calendar()[end])));
    }
    let lo = first + 1 - cfg.beta_horizon;
    Ok((0..n)
        .map(|i| {
            let daily = panel.column_slice(i, 0..end + 1);
            if daily[lo..].iter().any(|r| !r.is_finite()) {
                return None;
            }
            let own: Vec<f64> = (first..=end).map(|s| horizon_returns(daily, s, cfg.beta_horizon)).collect();
            Some(covariance(&own, &idx) / var_idx)
        })
        .collect())
}
