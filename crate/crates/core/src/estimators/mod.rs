//! Rolling risk estimators and cross-sectional rank signals.

mod beta;
pub(crate) mod correlation;
mod rank;
mod volatility;

use serde::{Deserialize, Serialize};

pub use beta::{horizon_returns, index_returns, rolling_beta};
pub use correlation::{estimate_correlation, spike_inverse, spike_inverse_large_n, spike_matrix, CorrelationModel, Regularization};
pub use rank::{rank_signal, sector_rank_signal, Direction, SignalVector};
pub use volatility::{rolling_volatility, VolEstimate};

/// Windows and lag shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Daily total returns in the volatility window.
    pub vol_window: usize,
    /// Overlapping multi-day returns in the beta window.
    pub beta_window: usize,
    /// Length in days of each beta return.
    pub beta_horizon: usize,
    /// Trading days between the last return used and the signal date.
    pub lag: usize,
    /// Daily returns in the correlation window (4 years).
    pub corr_window: usize,
    /// Minimum fraction of the correlation window an instrument must cover.
    pub min_coverage: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            vol_window: 100,
            beta_window: 100,
            beta_horizon: 3,
            lag: 20,
            corr_window: 1008,
            min_coverage: 0.6,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.vol_window < 2 || self.beta_window < 2 || self.beta_horizon == 0 || self.corr_window < 2 {
            return Err(crate::Error::param("estimator windows must be positive (and >= 2 observations)"));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(crate::Error::param("min_coverage must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Last return index usable for a signal on day `t`, if any.
    pub fn window_end(&self, t: usize) -> Option<usize> {
        t.checked_sub(self.lag)
    }

    /// Earliest day on which both the volatility and beta windows are full.
    pub fn first_signal_day(&self) -> usize {
        // return index 0 is undefined, so windows start at 1
        self.lag + self.vol_window.max(self.beta_window + self.beta_horizon - 1)
    }
}
