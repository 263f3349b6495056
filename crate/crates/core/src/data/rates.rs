use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::stats::TRADING_DAYS;

/// Longest run of calendar days (trading days) a rate may be carried forward.
pub const MAX_RATE_GAP_DAYS: usize = 10;

/// Annualized risk-free rates, accrued Act/252 per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskFreeCurve {
    dates: Vec<NaiveDate>,
    annual: Vec<f64>,
}

impl RiskFreeCurve {
    pub fn new(dates: Vec<NaiveDate>, annual: Vec<f64>) -> Result<Self> {
        if dates.len() != annual.len() {
            return Err(Error::invalid("rate dates/values length mismatch"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("rate dates not strictly increasing"));
        }
        if let Some(r) = annual.iter().find(|r| !r.is_finite()) {
            return Err(Error::invalid(format!("non-finite rate {r}")));
        }
        Ok(Self { dates, annual })
    }

    pub fn constant(calendar: &[NaiveDate], annual: f64) -> Self {
        Self {
            dates: calendar.to_vec(),
            annual: vec![annual; calendar.len()],
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn annual(&self) -> &[f64] {
        &self.annual
    }

    /// Daily rate on every calendar day in `range`, forward-filling gaps of
    /// at most [`MAX_RATE_GAP_DAYS`] trading days. Days outside `range` are 0.
    pub fn daily_rates(&self, calendar: &[NaiveDate], range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; calendar.len()];
        let mut k = 0;
        let mut last: Option<f64> = None;
        let mut gap = 0usize;
        for (t, date) in calendar.iter().enumerate() {
            let mut fresh = false;
            while k < self.dates.len() && self.dates[k] <= *date {
                if self.dates[k] == *date {
                    fresh = true;
                }
                last = Some(self.annual[k]);
                k += 1;
            }
            if fresh {
                gap = 0;
            } else if last.is_some() {
                gap += 1;
            }
            if range.contains(&t) {
                let Some(rate) = last else {
                    return Err(Error::insufficient(format!("no risk-free rate on or before {date}")));
                };
                if gap > MAX_RATE_GAP_DAYS {
                    return Err(Error::insufficient(format!(
                        "risk-free rate gap of {gap} trading days ending {date}"
                    )));
                }
                out[t] = rate / TRADING_DAYS;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        (0..n).map(|k| start + chrono::Days::new(k as u64)).collect()
    }

    #[test]
    fn forward_fills_short_gaps() {
        let c = cal(12);
        let curve = RiskFreeCurve::new(vec![c[0], c[11]], vec![0.0252, 0.0504]).unwrap();
        let daily = curve.daily_rates(&c, 0..12).unwrap();
        assert!((daily[5] - 0.0001).abs() < 1e-15);
        assert!((daily[11] - 0.0002).abs() < 1e-15);
    }

    #[test]
    fn long_gap_is_an_error() {
        let c = cal(13);
        let curve = RiskFreeCurve::new(vec![c[0]], vec![0.01]).unwrap();
        assert!(curve.daily_rates(&c, 0..11).is_ok());
        assert!(curve.daily_rates(&c, 0..12).is_err());
    }

    #[test]
    fn missing_start_is_an_error() {
        let c = cal(5);
        let curve = RiskFreeCurve::new(vec![c[2]], vec![0.01]).unwrap();
        assert!(curve.daily_rates(&c, 0..5).is_err());
        assert!(curve.daily_rates(&c, 2..5).is_ok());
    }
}
