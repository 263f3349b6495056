//! Daily P&L accounting, performance statistics and decile analyses.

mod compounding;
mod deciles;
mod dividends;
mod perf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{MarketPanel, PoolCalendar, RiskFreeCurve};
use crate::error::{Error, Result};
use crate::strategy::PositionSeries;

pub use compounding::{compound, compounding_ratio, recoup, CompoundingMeasure, COMPOUNDING_HORIZONS};
pub use deciles::{decile_assignment, decile_portfolios, updown_differential, DecileReport, DecileStats, N_DECILES};
pub use dividends::{dy_vol_correlation, DyVolReport, DY_BIN_SIZE};
pub use perf::{perf_stats, series_stats, PerfStats, SeriesStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestOptions {
    /// Fraction of dividends lost on long positions.
    pub dividend_tax: f64,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self { dividend_tax: 0.0 }
    }
}

/// Daily strategy P&L and its legs; `total = price + dividend + financing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSeries {
    pub dates: Vec<NaiveDate>,
    pub total: Vec<f64>,
    pub price: Vec<f64>,
    pub dividend: Vec<f64>,
    pub financing: Vec<f64>,
}

impl PnlSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// P&L before financing costs.
    pub fn unfinanced(&self) -> Vec<f64> {
        self.price.iter().zip(&self.dividend).map(|(p, d)| p + d).collect()
    }

    pub fn cumulative(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    /// Series with only the total leg populated (e.g. a residual).
    pub fn from_total(dates: Vec<NaiveDate>, total: Vec<f64>) -> Self {
        let zeros = vec![0.0; total.len()];
        Self { dates, price: total.clone(), total, dividend: zeros.clone(), financing: zeros }
    }
}

/// Accounts the positions held at each close against the next day's
/// returns: `pnl(t+1) = sum_i x_i(t) (r_i(t+1) - rf(t+1))`, split into price,
/// dividend and financing (`-NMV rf`) legs.
///
/// Positions in instruments outside the pool are rejected, except on the exit
/// day itself where the previous position is carried until liquidation.
pub fn run_backtest(
    positions: &PositionSeries,
    panel: &MarketPanel,
    pool: &PoolCalendar,
    rates: &RiskFreeCurve,
    options: &BacktestOptions,
) -> Result<PnlSeries> {
    if !(0.0..=1.0).contains(&options.dividend_tax) {
        return Err(Error::param(format!("dividend tax {} outside [0, 1]", options.dividend_tax)));
    }
    let (t_len, n) = (panel.n_days(), panel.n_instruments());
    if positions.dollars.shape() != (t_len, n) || pool.n_days() != t_len || pool.n_instruments() != n {
        return Err(Error::invalid("positions, pool and panel dimensions differ"));
    }
    if positions.calendar.as_slice() != panel.calendar() {
        return Err(Error::invalid("positions and panel calendars differ"));
    }
    let first = positions.start;
    if first + 1 >= t_len {
        return Err(Error::insufficient("no day left to earn returns after the first position"));
    }
    let rf = rates.daily_rates(panel.calendar(), first + 1..t_len)?;
    let mut out = PnlSeries {
        dates: Vec::with_capacity(t_len - first - 1),
        total: Vec::new(),
        price: Vec::new(),
        dividend: Vec::new(),
        financing: Vec::new(),
    };
    for t in first..t_len - 1 {
        let (mut price, mut dividend, mut nmv) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = positions.dollars[(t, i)];
            if x == 0.0 {
                continue;
            }
            if !pool.is_member(t, i) && !pool.exits_on(t, i) {
                return Err(Error::Membership(format!(
                    "position in {} on {} outside pool {}",
                    panel.ids()[i],
                    panel.calendar()[t],
                    pool.name()
                )));
            }
            let (pr, dv) = panel.return_legs(t + 1, i).ok_or_else(|| {
                Error::InvalidData(format!("no return for held {} on {}", panel.ids()[i], panel.calendar()[t + 1]))
            })?;
            price += x * pr;
            dividend += if x > 0.0 { x * dv * (1.0 - options.dividend_tax) } else { x * dv };
            nmv += x;
        }
        let financing = -nmv * rf[t + 1];
        out.dates.push(panel.calendar()[t + 1]);
        out.price.push(price);
        out.dividend.push(dividend);
        out.financing.push(financing);
        out.total.push(price + dividend + financing);
    }
    Ok(out)
}

/// Share of the cumulative P&L earned through dividends. `financed` selects
/// the total after financing costs as denominator.
pub fn dividend_attribution(pnl: &PnlSeries, financed: bool) -> Option<f64> {
    let div: f64 = pnl.dividend.iter().sum();
    let total: f64 = if financed { pnl.total.iter().sum() } else { pnl.unfinanced().iter().sum() };
    let scale: f64 = pnl.price.iter().chain(&pnl.dividend).chain(&pnl.financing).map(|v| v.abs()).sum();
    (total.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)).then(|| div / total)
}
