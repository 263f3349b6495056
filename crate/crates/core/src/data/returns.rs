use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MarketPanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnMode {
    /// `(close(t) + dividend(t)) / close(t-1) - 1`
    Total,
    /// `close(t) / close(t-1) - 1`
    Price,
}

/// Daily returns by `(date, instrument)`; `NaN` where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    calendar: Vec<NaiveDate>,
    ids: Vec<String>,
    mode: ReturnMode,
    returns: DMatrix<f64>,
    stale: DMatrix<bool>,
}

impl ReturnPanel {
    /// Wrap a precomputed `T x N` return matrix (no stale flags).
    pub fn from_matrix(calendar: Vec<NaiveDate>, ids: Vec<String>, mode: ReturnMode, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() != calendar.len() || returns.ncols() != ids.len() {
            return Err(Error::invalid("return matrix shape does not match calendar/ids"));
        }
        let stale = DMatrix::from_element(returns.nrows(), returns.ncols(), false);
        Ok(Self {
            calendar,
            ids,
            mode,
            returns,
            stale,
        })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mode(&self) -> ReturnMode {
        self.mode
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.returns[(t, i)]
    }

    pub fn is_stale(&self, t: usize, i: usize) -> bool {
        self.stale[(t, i)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Contiguous return history of instrument `i` over `range`.
    pub fn column_slice(&self, i: usize, range: std::ops::Range<usize>) -> &[f64] {
        let t_len = self.returns.nrows();
        &self.returns.as_slice()[i * t_len..(i + 1) * t_len][range]
    }

    pub fn set(&mut self, t: usize, i: usize, value: f64) {
        self.returns[(t, i)] = value;
    }
}

/// Build the return panel of `panel` in the requested mode.
pub fn compute_returns(panel: &MarketPanel, mode: ReturnMode) -> Result<ReturnPanel> {
    let (t_len, n) = (panel.n_days(), panel.n_instruments());
    if t_len < 2 {
        return Err(Error::insufficient("at least two days are needed to compute returns"));
    }
    let mut returns = DMatrix::from_element(t_len, n, f64::NAN);
    let mut stale = DMatrix::from_element(t_len, n, false);
    for i in 0..n {
        for t in 1..t_len {
            if let Some((price, _)) = panel.return_legs(t, i) {
                returns[(t, i)] = match mode {
                    ReturnMode::Total => (panel.close(t, i) + panel.dividend(t, i)) / panel.close(t - 1, i) - 1.0,
                    ReturnMode::Price => price,
                };
            }
            stale[(t, i)] = panel.is_stale(t, i);
        }
    }
    Ok(ReturnPanel {
        calendar: panel.calendar().to_vec(),
        ids: panel.ids().to_vec(),
        mode,
        returns,
        stale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InstrumentSeries;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 3, 2).unwrap();
        (0..n).map(|k| start + chrono::Days::new(k as u64)).collect()
    }

    #[test]
    fn simple_total_return() {
        let s = InstrumentSeries::new("A", "S", "USD", dates(2), vec![100.0, 110.0], vec![0.0, 0.0]).unwrap();
        let p = MarketPanel::from_series(&[s]).unwrap();
        let r = compute_returns(&p, ReturnMode::Total).unwrap();
        assert!(r.get(0, 0).is_nan());
        assert!((r.get(1, 0) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn dividend_decomposition() {
        let s = InstrumentSeries::new("A", "S", "USD", dates(2), vec![100.0, 99.0], vec![0.0, 2.0]).unwrap();
        let p = MarketPanel::from_series(&[s]).unwrap();
        let total = compute_returns(&p, ReturnMode::Total).unwrap();
        let price = compute_returns(&p, ReturnMode::Price).unwrap();
        assert!((total.get(1, 0) - 0.01).abs() < 1e-15);
        assert!((price.get(1, 0) + 0.01).abs() < 1e-15);
        assert!((total.get(1, 0) - price.get(1, 0) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_dividends_give_identical_modes() {
        let series: Vec<_> = (0..3)
            .map(|k| {
                let close = (0..5).map(|t| 10.0 + (k * 5 + t) as f64).collect();
                InstrumentSeries::new(format!("S{k}"), "X", "USD", dates(5), close, vec![0.0; 5]).unwrap()
            })
            .collect();
        let p = MarketPanel::from_series(&series).unwrap();
        let total = compute_returns(&p, ReturnMode::Total).unwrap();
        let price = compute_returns(&p, ReturnMode::Price).unwrap();
        for i in 0..3 {
            for t in 1..5 {
                assert_eq!(total.get(t, i), price.get(t, i));
            }
        }
    }

    #[test]
    fn single_day_is_insufficient() {
        let s = InstrumentSeries::new("A", "S", "USD", dates(1), vec![1.0], vec![0.0]).unwrap();
        let p = MarketPanel::from_series(&[s]).unwrap();
        assert!(compute_returns(&p, ReturnMode::Total).is_err());
    }
}
