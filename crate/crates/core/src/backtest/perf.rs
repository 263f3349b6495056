use serde::{Deserialize, Serialize};

use super::PnlSeries;
use crate::error::{Error, Result};
use crate::stats::{mean, median, rms, std_dev, TRADING_DAYS};

/// Minimum number of daily observations for performance statistics.
pub const MIN_PERF_DAYS: usize = 252;

/// Annualized statistics of one daily return series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    /// `mean / std * sqrt(252)`
    pub ratio: f64,
    /// `(mean - median) / rms`
    pub skewness: f64,
    pub years: f64,
}

/// Strategy performance: Sharpe on financed P&L, Information Ratio on
/// un-financed P&L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfStats {
    pub sharpe: f64,
    pub information_ratio: f64,
    pub skewness: f64,
    pub t_stat: f64,
    pub years: f64,
}

pub fn series_stats(daily: &[f64]) -> Result<SeriesStats> {
    if daily.len() < 2 {
        return Err(Error::insufficient("fewer than two observations"));
    }
    if let Some(v) = daily.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite daily value {v}")));
    }
    let m = mean(daily);
    let sd = std_dev(daily);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("zero variance series".into()));
    }
    Ok(SeriesStats {
        mean: m,
        std: sd,
        ratio: m / sd * TRADING_DAYS.sqrt(),
        skewness: (m - median(daily)) / rms(daily),
        years: daily.len() as f64 / TRADING_DAYS,
    })
}

pub fn perf_stats(pnl: &PnlSeries) -> Result<PerfStats> {
    if pnl.len() < MIN_PERF_DAYS {
        return Err(Error::insufficient(format!("{} daily observations, need {MIN_PERF_DAYS}", pnl.len())));
    }
    let financed = series_stats(&pnl.total)?;
    let unfinanced = series_stats(&pnl.unfinanced())?;
    Ok(PerfStats {
        sharpe: financed.ratio,
        information_ratio: unfinanced.ratio,
        skewness: financed.skewness,
        t_stat: financed.ratio * financed.years.sqrt(),
        years: financed.years,
    })
}
