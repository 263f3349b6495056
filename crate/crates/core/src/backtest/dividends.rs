use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::{MarketPanel, PoolCalendar, ReturnPanel};
use crate::error::{Error, Result};
use crate::stats::{mean, pearson, std_dev, TRADING_DAYS};

/// Points per bin of the binned dividend-yield profile.
pub const DY_BIN_SIZE: usize = 2000;
const SIGMA_DAYS: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyVolPoint {
    pub date: NaiveDate,
    pub instrument: usize,
    pub sigma: f64,
    pub dividend_yield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyVolReport {
    /// Pooled Pearson correlation; `None` with fewer than two points.
    pub correlation: Option<f64>,
    pub points: Vec<DyVolPoint>,
    /// `(mean sigma, mean dividend yield)` of consecutive bins sorted on sigma.
    pub bins: Vec<(f64, f64)>,
}

/// Pools, at every year end with a full year of history, the trailing
/// 12-month dividend yield (dividends / current close) and trailing
/// 250-day annualized volatility of each pool member.
pub fn dy_vol_correlation(panel: &MarketPanel, returns: &ReturnPanel, pool: &PoolCalendar) -> Result<DyVolReport> {
    let cal = panel.calendar();
    if returns.calendar() != cal || pool.n_days() != cal.len() {
        return Err(Error::invalid("panel, returns and pool calendars differ"));
    }
    let mut points = Vec::new();
    for t in 0..cal.len() {
        let year_end = t + 1 == cal.len() || cal[t + 1].year() != cal[t].year();
        if !year_end || t < SIGMA_DAYS {
            continue;
        }
        let Some(from) = cal[t].checked_sub_months(Months::new(12)) else { continue };
        if from < cal[0] {
            continue;
        }
        let first = cal.partition_point(|d| *d <= from);
        for i in pool.members(t) {
            let close = panel.close(t, i);
            let window = returns.column_slice(i, t + 1 - SIGMA_DAYS..t + 1);
            if !close.is_finite() || window.iter().any(|r| !r.is_finite()) {
                continue;
            }
            let sigma = std_dev(window) * TRADING_DAYS.sqrt();
            let dividends: f64 = (first..=t).map(|s| panel.dividend(s, i)).sum();
            points.push(DyVolPoint { date: cal[t], instrument: i, sigma, dividend_yield: dividends / close });
        }
    }
    let sig: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let dy: Vec<f64> = points.iter().map(|p| p.dividend_yield).collect();
    let correlation = if points.len() >= 2 { pearson(&sig, &dy) } else { None };
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| sig[a].total_cmp(&sig[b]));
    let bins = order
        .chunks(DY_BIN_SIZE)
        .map(|c| {
            let s: Vec<f64> = c.iter().map(|&k| sig[k]).collect();
            let d: Vec<f64> = c.iter().map(|&k| dy[k]).collect();
            (mean(&s), mean(&d))
        })
        .collect();
    Ok(DyVolReport { correlation, points, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_returns, InstrumentSeries, ReturnMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn independent_yield_and_vol_are_uncorrelated() {
        let n = 400;
        let days: Vec<NaiveDate> = (0..600).map(|k| NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let series: Vec<InstrumentSeries> = (0..n)
            .map(|i| {
                let vol = rng.random_range(0.005..0.03);
                let dy = rng.random_range(0.0..0.06);
                let mut close = vec![100.0];
                let mut div = vec![0.0];
                for k in 1..days.len() {
                    let r = vol * (rng.random::<f64>() - 0.5) * 3.4;
                    let prev = close[k - 1];
                    close.push(prev * (1.0 + r));
                    div.push(if k % 90 == 0 { dy / 4.0 * prev } else { 0.0 });
                }
                InstrumentSeries::new(format!("I{i}"), "S", "USD", days.clone(), close, div).unwrap()
            })
            .collect();
        let panel = MarketPanel::from_series(&series).unwrap();
        let r = compute_returns(&panel, ReturnMode::Total).unwrap();
        let pool = PoolCalendar::full("p", days.len(), n);
        let rep = dy_vol_correlation(&panel, &r, &pool).unwrap();
        assert_eq!(rep.points.len(), n);
        assert!(rep.correlation.unwrap().abs() < 0.15);
        assert_eq!(rep.bins.len(), 1);
    }
}
