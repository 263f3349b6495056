use super::EstimatorConfig;
use crate::data::ReturnPanel;
use crate::stats::{std_dev, TRADING_DAYS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolEstimate {
    /// Annualized volatility; `None` when the window is incomplete or degenerate.
    pub sigma: Option<f64>,
    /// The window contains stale (carried-forward) days.
    pub stale: bool,
}

/// Lagged rolling volatility of every instrument on day `t`.
///
/// Uses the `vol_window` daily returns ending `lag` days before `t`.
pub fn rolling_volatility(panel: &ReturnPanel, t: usize, cfg: &EstimatorConfig) -> Vec<VolEstimate> {
    let n = panel.n_instruments();
    let Some(end) = cfg.window_end(t) else {
        return vec![VolEstimate { sigma: None, stale: false }; n];
    };
    if end + 1 < cfg.vol_window + 1 || end >= panel.n_days() {
        return vec![VolEstimate { sigma: None, stale: false }; n];
    }
    let range = end + 1 - cfg.vol_window..end + 1;
    (0..n)
        .map(|i| {
            let window = panel.column_slice(i, range.clone());
            let stale = range.clone().any(|s| panel.is_stale(s, i));
            if window.iter().any(|r| !r.is_finite()) {
                return VolEstimate { sigma: None, stale };
            }
            let sd = std_dev(window);
            let sigma = (sd > 0.0).then(|| sd * TRADING_DAYS.sqrt());
            VolEstimate { sigma, stale }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ReturnMode;
    use chrono::NaiveDate;
    use nalgebra::DMatrix;

    fn panel(cols: Vec<Vec<f64>>) -> ReturnPanel {
        let t = cols[0].len();
        let n = cols.len();
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        let cal = (0..t).map(|k| start + chrono::Days::new(k as u64)).collect();
        let m = DMatrix::from_fn(t, n, |r, c| cols[c][r]);
        ReturnPanel::from_matrix(cal, (0..n).map(|i| format!("I{i}")).collect(), ReturnMode::Total, m).unwrap()
    }

    fn cfg() -> EstimatorConfig {
        EstimatorConfig { vol_window: 4, lag: 2, ..Default::default() }
    }

    #[test]
    fn constant_returns_are_excluded() {
        let mut col = vec![0.01; 10];
        col[0] = f64::NAN;
        let est = rolling_volatility(&panel(vec![col]), 9, &cfg());
        assert_eq!(est[0].sigma, None);
    }

    #[test]
    fn uses_lagged_window_only() {
        let mut col: Vec<f64> = (0..12).map(|k| 0.01 * ((k * 7 % 5) as f64 - 2.0)).collect();
        col[0] = f64::NAN;
        let base = rolling_volatility(&panel(vec![col.clone()]), 10, &cfg())[0].sigma.unwrap();
        let window = &col[5..9];
        let expected = std_dev(window) * 252f64.sqrt();
        assert!((base - expected).abs() < 1e-15);
        col[9] = 5.0;
        col[10] = -5.0;
        assert_eq!(rolling_volatility(&panel(vec![col]), 10, &cfg())[0].sigma.unwrap(), base);
    }

    #[test]
    fn insufficient_history_is_none() {
        let col = vec![f64::NAN, 0.01, 0.02, -0.01, 0.0, 0.03];
        assert_eq!(rolling_volatility(&panel(vec![col]), 5, &cfg())[0].sigma, None);
    }
}
