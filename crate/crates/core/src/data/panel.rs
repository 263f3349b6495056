use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Consecutive forward-filled days after which an instrument is flagged stale.
pub const STALE_AFTER_DAYS: u32 = 10;

/// Daily closes and cash dividends of a single instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub id: String,
    pub sector: String,
    pub currency: String,
    pub dates: Vec<NaiveDate>,
    pub close: Vec<f64>,
    pub dividend: Vec<f64>,
}

impl InstrumentSeries {
    pub fn new(
        id: impl Into<String>,
        sector: impl Into<String>,
        currency: impl Into<String>,
        dates: Vec<NaiveDate>,
        close: Vec<f64>,
        dividend: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if dates.len() != close.len() || dates.len() != dividend.len() {
            return Err(Error::invalid(format!("{id}: dates/close/dividend length mismatch")));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{id}: dates not strictly increasing at {}", w[1])));
        }
        if let Some((d, c)) = dates.iter().zip(&close).find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::invalid(format!("{id}: non-positive close {c} on {d}")));
        }
        if let Some((d, v)) = dates.iter().zip(&dividend).find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("{id}: negative dividend {v} on {d}")));
        }
        Ok(Self {
            id,
            sector: sector.into(),
            currency: currency.into(),
            dates,
            close,
            dividend,
        })
    }
}

/// Instruments aligned on a common trading calendar.
///
/// The calendar is the union of every observed date. A missing close is
/// carried forward from the previous observation (zero price return) and
/// the run length of such gaps is tracked so long gaps can be flagged
/// stale. Before an instrument's first observation its close is `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    calendar: Vec<NaiveDate>,
    ids: Vec<String>,
    sectors: Vec<String>,
    currencies: Vec<String>,
    close: DMatrix<f64>,
    dividend: DMatrix<f64>,
    gap_run: DMatrix<u32>,
}

impl MarketPanel {
    pub fn from_series(series: &[InstrumentSeries]) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::insufficient("no instruments"));
        }
        let mut calendar: Vec<NaiveDate> = series.iter().flat_map(|s| s.dates.iter().copied()).collect();
        calendar.sort_unstable();
        calendar.dedup();
        let t_len = calendar.len();
        let n = series.len();
        let mut close = DMatrix::from_element(t_len, n, f64::NAN);
        let mut dividend = DMatrix::zeros(t_len, n);
        let mut gap_run = DMatrix::zeros(t_len, n);
        for (i, s) in series.iter().enumerate() {
            let mut k = 0;
            let mut last = f64::NAN;
            let mut run = 0u32;
            for (t, date) in calendar.iter().enumerate() {
                if k < s.dates.len() && s.dates[k] == *date {
                    last = s.close[k];
                    dividend[(t, i)] = s.dividend[k];
                    run = 0;
                    k += 1;
                } else if last.is_finite() {
                    run += 1;
                }
                close[(t, i)] = last;
                gap_run[(t, i)] = run;
            }
        }
        Ok(Self {
            calendar,
            ids: series.iter().map(|s| s.id.clone()).collect(),
            sectors: series.iter().map(|s| s.sector.clone()).collect(),
            currencies: series.iter().map(|s| s.currency.clone()).collect(),
            close,
            dividend,
            gap_run,
        })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn sectors(&self) -> &[String] {
        &self.sectors
    }

    pub fn currencies(&self) -> &[String] {
        &self.currencies
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// Close at `(t, i)`; `NaN` before the first observation.
    pub fn close(&self, t: usize, i: usize) -> f64 {
        self.close[(t, i)]
    }

    pub fn dividend(&self, t: usize, i: usize) -> f64 {
        self.dividend[(t, i)]
    }

    /// Whether the close at `(t, i)` was actually observed (not carried forward).
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.close[(t, i)].is_finite() && self.gap_run[(t, i)] == 0
    }

    /// More than [`STALE_AFTER_DAYS`] consecutive carried-forward closes.
    pub fn is_stale(&self, t: usize, i: usize) -> bool {
        self.gap_run[(t, i)] > STALE_AFTER_DAYS
    }

    /// `(price return, dividend leg)` earned over day `t`, i.e. from close
    /// `t - 1` to close `t`. `None` when either close is undefined.
    pub fn return_legs(&self, t: usize, i: usize) -> Option<(f64, f64)> {
        if t == 0 {
            return None;
        }
        let prev = self.close[(t - 1, i)];
        let cur = self.close[(t, i)];
        if !(prev.is_finite() && cur.is_finite()) {
            return None;
        }
        Some((cur / prev - 1.0, self.dividend[(t, i)] / prev))
    }

    /// Rebuild the per-instrument observed series (the inverse of
    /// [`MarketPanel::from_series`]).
    pub fn to_series(&self) -> Vec<InstrumentSeries> {
        (0..self.n_instruments())
            .map(|i| {
                let mut dates = Vec::new();
                let mut close = Vec::new();
                let mut dividend = Vec::new();
                for t in 0..self.n_days() {
                    if self.is_observed(t, i) {
                        dates.push(self.calendar[t]);
                        close.push(self.close[(t, i)]);
                        dividend.push(self.dividend[(t, i)]);
                    }
                }
                InstrumentSeries {
                    id: self.ids[i].clone(),
                    sector: self.sectors[i].clone(),
                    currency: self.currencies[i].clone(),
                    dates,
                    close,
                    dividend,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, day).unwrap()
    }

    #[test]
    fn rejects_non_positive_close() {
        let err = InstrumentSeries::new("A", "S", "USD", vec![d(1), d(2)], vec![10.0, -1.0], vec![0.0, 0.0]);
        assert!(matches!(err, Err(Error::InvalidData(_))));
    }

    #[test]
    fn rejects_unsorted_dates() {
        let err = InstrumentSeries::new("A", "S", "USD", vec![d(2), d(1)], vec![10.0, 11.0], vec![0.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn gaps_are_carried_forward_and_flagged() {
        let a_dates: Vec<_> = (1..=20).map(d).collect();
        let a = InstrumentSeries::new("A", "S", "USD", a_dates.clone(), vec![1.0; 20], vec![0.0; 20]).unwrap();
        let b = InstrumentSeries::new("B", "S", "USD", vec![d(2), d(3)], vec![5.0, 6.0], vec![0.0, 0.0]).unwrap();
        let p = MarketPanel::from_series(&[a, b]).unwrap();
        assert_eq!(p.n_days(), 20);
        assert!(p.close(0, 1).is_nan());
        assert_eq!(p.close(10, 1), 6.0);
        assert_eq!(p.return_legs(5, 1), Some((0.0, 0.0)));
        assert!(!p.is_stale(12, 1));
        assert!(p.is_stale(13, 1));
        assert_eq!(p.to_series()[1].dates, vec![d(2), d(3)]);
    }
}
