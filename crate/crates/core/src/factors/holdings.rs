//! Aggregated fund holdings versus factor signals.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::io::{field, parse_date, parse_err, parse_f64, Rows};
use crate::data::MarketPanel;
use crate::error::{Error, Result};
use crate::stats::pearson;

/// Days covered by the running average of the bias series.
pub const SMOOTHING_DAYS: u64 = 365;

/// `holdings.csv` rows: `(date, fund, instrument, dollar value)`, with dates
/// mapped onto the panel calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdings {
    pub rows: Vec<(usize, String, usize, f64)>,
}

pub fn load_holdings(path: &Path, panel: &MarketPanel) -> Result<Holdings> {
    let mut rows = Vec::new();
    Rows::open(path, &["date", "fund", "instrument", "dollar_value"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let fund = field(file, line, rec, 1)?;
        let id = field(file, line, rec, 2)?;
        let value = parse_f64(file, line, field(file, line, rec, 3)?)?;
        if value < 0.0 {
            return Err(parse_err(file, line, "negative holding"));
        }
        let t = panel.date_index(date).ok_or_else(|| parse_err(file, line, format!("{date} is not a trading day")))?;
        let i = panel.index_of(id).ok_or_else(|| parse_err(file, line, format!("unknown instrument '{id}'")))?;
        rows.push((t, fund.to_owned(), i, value));
        Ok(())
    })?;
    Ok(Holdings { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldingsNormalization {
    /// Aggregate dollars divided by market capitalization (over/under-weight).
    ByMarketCap,
    /// Each fund's dollars divided by the fund total, then summed.
    ByFundTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingsBiasPoint {
    pub date: NaiveDate,
    pub factor: String,
    /// Cross-sectional correlation (0 when either side is constant).
    pub correlation: f64,
    /// Running one-year average of `correlation`.
    pub smoothed: f64,
}

/// Correlates aggregated holdings with each signal (`T x N`, `NaN` =
/// unavailable) on every holdings date.
pub fn holdings_bias(
    holdings: &Holdings,
    calendar: &[NaiveDate],
    signals: &[(&str, &DMatrix<f64>)],
    caps: Option<&DMatrix<f64>>,
    normalization: HoldingsNormalization,
) -> Result<Vec<HoldingsBiasPoint>> {
    let mut by_date: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut fund_totals: BTreeMap<(usize, &str), f64> = BTreeMap::new();
    for (t, fund, _, v) in &holdings.rows {
        *fund_totals.entry((*t, fund.as_str())).or_default() += v;
    }
    for (t, fund, i, v) in &holdings.rows {
        let w = match normalization {
            HoldingsNormalization::ByFundTotal => {
                let total = fund_totals[&(*t, fund.as_str())];
                if total > 0.0 {
                    v / total
                } else {
                    0.0
                }
            }
            HoldingsNormalization::ByMarketCap => *v,
        };
        *by_date.entry(*t).or_default().entry(*i).or_default() += w;
    }
    if normalization == HoldingsNormalization::ByMarketCap {
        let caps = caps.ok_or_else(|| Error::invalid("market-cap normalization needs capitalization data"))?;
        for (t, weights) in by_date.iter_mut() {
            for (i, w) in weights.iter_mut() {
                let cap = caps.get((*t, *i)).copied().unwrap_or(f64::NAN);
                if !(cap.is_finite() && cap > 0.0) {
                    return Err(Error::InvalidData(format!("no capitalization for instrument {i} on {}", calendar[*t])));
                }
                *w /= cap;
            }
        }
    }
    let mut out = Vec::new();
    for (name, signal) in signals {
        let mut points: Vec<HoldingsBiasPoint> = Vec::new();
        for (t, weights) in &by_date {
            let (mut w, mut s) = (Vec::new(), Vec::new());
            for (i, x) in weights {
                let v = signal.get((*t, *i)).copied().unwrap_or(f64::NAN);
                if v.is_finite() {
                    w.push(*x);
                    s.push(v);
                }
            }
            let correlation = if w.len() >= 2 { pearson(&w, &s).unwrap_or(0.0) } else { 0.0 };
            let date = calendar[*t];
            let from = date.checked_sub_days(Days::new(SMOOTHING_DAYS)).unwrap_or(NaiveDate::MIN);
            let window: Vec<f64> = points
                .iter()
                .filter(|p| p.date > from)
                .map(|p| p.correlation)
                .chain(std::iter::once(correlation))
                .collect();
            let smoothed = window.iter().sum::<f64>() / window.len() as f64;
            points.push(HoldingsBiasPoint { date, factor: name.to_string(), correlation, smoothed });
        }
        out.extend(points);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calendar(n: usize) -> Vec<NaiveDate> {
        (0..n).map(|k| NaiveDate::from_ymd_opt(2000, 1, 3).unwrap() + Days::new(k as u64 * 30)).collect()
    }

    #[test]
    fn cap_proportional_holdings_have_no_tilt() {
        let (t_len, n) = (20, 8);
        let caps = DMatrix::from_fn(t_len, n, |_, i| 10.0 + i as f64);
        let signal = DMatrix::from_fn(t_len, n, |t, i| ((i * 7 + t) % 5) as f64);
        let rows = [0usize, 6, 12, 18]
            .iter()
            .flat_map(|&t| (0..n).map(move |i| (t, "F".to_string(), i, 0.01 * (10.0 + i as f64))))
            .collect();
        let h = Holdings { rows };
        let pts = holdings_bias(&h, &calendar(t_len), &[("LOWVOL", &signal)], Some(&caps), HoldingsNormalization::ByMarketCap).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.correlation.abs() < 1e-12));
        assert!(holdings_bias(&h, &calendar(t_len), &[("LOWVOL", &signal)], None, HoldingsNormalization::ByMarketCap).is_err());
    }

    #[test]
    fn overweight_volatile_names_is_short_low_vol() {
        let (t_len, n) = (20, 10);
        // low-vol signal: +1 for the calmest names
        let signal = DMatrix::from_fn(t_len, n, |_, i| 1.0 - 2.0 * i as f64 / (n - 1) as f64);
        let caps = DMatrix::from_element(t_len, n, 100.0);
        let rows = [0usize, 6, 12]
            .iter()
            .flat_map(|&t| (0..n).map(move |i| (t, "F".to_string(), i, 1.0 + i as f64)))
            .collect();
        let pts = holdings_bias(&Holdings { rows }, &calendar(t_len), &[("LOWVOL", &signal)], Some(&caps), HoldingsNormalization::ByMarketCap).unwrap();
        assert!(pts.iter().all(|p| p.correlation < -0.9 && p.smoothed < -0.9));
    }

    #[test]
    fn fund_total_normalization_weights_funds_equally() {
        let n = 4;
        let signal = DMatrix::from_fn(1, n, |_, i| i as f64);
        let rows = vec![(0, "big".to_string(), 0, 1000.0), (0, "small".to_string(), 3, 1.0), (0, "small".to_string(), 2, 1.0)];
        let pts = holdings_bias(&Holdings { rows }, &calendar(1), &[("S", &signal)], None, HoldingsNormalization::ByFundTotal).unwrap();
        // weights: i0 = 1, i2 = 0.5, i3 = 0.5
        let expected = pearson(&[1.0, 0.5, 0.5], &[0.0, 2.0, 3.0]).unwrap();
        assert!((pts[0].correlation - expected).abs() < 1e-12);
    }
}
