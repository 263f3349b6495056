use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compounding::COMPOUNDING_HORIZONS;
use super::perf::series_stats;
use crate::data::{PoolCalendar, ReturnPanel};
use crate::error::{Error, Result};

pub const N_DECILES: usize = 10;

/// Splits `(instrument, sigma)` pairs into deciles, 1 = most volatile.
/// Sizes differ by at most one; ties are broken by instrument index.
pub fn decile_assignment(values: &[(usize, f64)]) -> Result<Vec<(usize, usize)>> {
    let n = values.len();
    if n < N_DECILES {
        return Err(Error::insufficient(format!("{n} instruments cannot fill {N_DECILES} deciles")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sorted.into_iter().enumerate().map(|(p, (i, _))| (i, 1 + p * N_DECILES / n)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileStats {
    pub decile: usize,
    /// Annualized mean / std of the un-financed daily returns.
    pub information_ratio: f64,
    /// Same on returns in excess of the risk-free rate.
    pub sharpe: f64,
    pub skewness: f64,
    /// `(n, mean n-day compounded return)` over overlapping windows.
    pub mean_nday: Vec<(usize, f64)>,
}

/// Equal-weight long-only portfolios of past-volatility deciles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileReport {
    /// Dates on which the daily returns are earned.
    pub dates: Vec<NaiveDate>,
    /// Calendar index of each entry of `dates`.
    pub day_index: Vec<usize>,
    /// `returns[d][k]`: return of decile `d + 1` on `dates[k]`.
    pub returns: Vec<Vec<f64>>,
    pub stats: Vec<DecileStats>,
    /// Rebalance days and the decile (1..=10, 0 = none) of every instrument.
    pub rebalances: Vec<(usize, Vec<u8>)>,
}

/// Builds decile portfolios rebalanced every `rebalance` days from `start`,
/// sorting pool members on `sigma` (`T x N`, `NaN` = unavailable). Weights
/// are reset to equal every day among constituents still in the pool.
/// `rf` holds daily risk-free rates on the full calendar (zero if `None`).
pub fn decile_portfolios(
    sigma: &DMatrix<f64>,
    returns: &ReturnPanel,
    pool: &PoolCalendar,
    start: usize,
    rebalance: usize,
    rf: Option<&[f64]>,
) -> Result<DecileReport> {
    let (t_len, n) = (returns.n_days(), returns.n_instruments());
    if sigma.shape() != (t_len, n) || pool.n_days() != t_len || pool.n_instruments() != n {
        return Err(Error::invalid("sigma, pool and returns dimensions differ"));
    }
    if rebalance == 0 {
        return Err(Error::param("rebalance interval must be positive"));
    }
    if let Some(r) = rf {
        if r.len() != t_len {
            return Err(Error::invalid("risk-free rates do not cover the calendar"));
        }
    }
    if n < N_DECILES {
        return Err(Error::insufficient(format!("{n} instruments cannot fill {N_DECILES} deciles")));
    }
    let mut labels = vec![0u8; n];
    let mut rebalances = Vec::new();
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); N_DECILES];
    let (mut dates, mut day_index) = (Vec::new(), Vec::new());
    let mut active = false;
    for t in start..t_len.saturating_sub(1) {
        if (t - start).is_multiple_of(rebalance) {
            let values: Vec<(usize, f64)> = pool
                .members(t)
                .into_iter()
                .filter(|&i| sigma[(t, i)].is_finite())
                .map(|i| (i, sigma[(t, i)]))
                .collect();
            if values.len() >= N_DECILES {
                labels = vec![0u8; n];
                for (i, d) in decile_assignment(&values)? {
                    labels[i] = d as u8;
                }
                rebalances.push((t, labels.clone()));
                active = true;
            }
        }
        if !active {
            continue;
        }
        let mut sums = [0.0; N_DECILES];
        let mut counts = [0usize; N_DECILES];
        for i in 0..n {
            let d = labels[i] as usize;
            if d == 0 || !pool.is_member(t, i) {
                continue;
            }
            let r = returns.get(t + 1, i);
            if r.is_finite() {
                sums[d - 1] += r;
                counts[d - 1] += 1;
            }
        }
        for d in 0..N_DECILES {
            out[d].push(if counts[d] > 0 { sums[d] / counts[d] as f64 } else { 0.0 });
        }
        dates.push(returns.calendar()[t + 1]);
        day_index.push(t + 1);
    }
    if dates.is_empty() {
        return Err(Error::insufficient("no decile portfolio could be formed"));
    }
    let stats = out
        .par_iter()
        .enumerate()
        .map(|(d, series)| {
            let ir = series_stats(series)?;
            let excess: Vec<f64> = match rf {
                Some(r) => series.iter().zip(&day_index).map(|(x, &t)| x - r[t]).collect(),
                None => series.clone(),
            };
            let sharpe = series_stats(&excess)?.ratio;
            let mean_nday = COMPOUNDING_HORIZONS
                .iter()
                .filter(|&&h| h <= series.len())
                .map(|&h| {
                    let windows: Vec<f64> =
                        series.windows(h).map(|w| w.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0).collect();
                    (h, crate::stats::mean(&windows))
                })
                .collect();
            Ok(DecileStats { decile: d + 1, information_ratio: ir.ratio, sharpe, skewness: ir.skewness, mean_nday })
        })
        .collect::<Result<_>>()?;
    Ok(DecileReport { dates, day_index, returns: out, stats, rebalances })
}

/// `|mean gap on down days| / |mean gap on up days|`, where the gap is the
/// decile 1 minus decile 10 return and days are split on the strict sign of
/// `index` (full calendar). `None` without up or down days.
pub fn updown_differential(report: &DecileReport, index: &[f64]) -> Option<f64> {
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for (k, &t) in report.day_index.iter().enumerate() {
        let gap = report.returns[0][k] - report.returns[N_DECILES - 1][k];
        match index.get(t) {
            Some(&x) if x > 0.0 => up.push(gap),
            Some(&x) if x < 0.0 => down.push(gap),
            _ => {}
        }
    }
    if up.is_empty() || down.is_empty() {
        return None;
    }
    let mu = crate::stats::mean(&up).abs();
    (mu > 0.0).then(|| crate::stats::mean(&down).abs() / mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ReturnMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cal(t: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2005, 1, 3).unwrap();
        (0..t).map(|k| start + chrono::Days::new(k as u64)).collect()
    }

    #[test]
    fn assignment_matches_naive_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [10usize, 11, 37, 503] {
            let values: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.random::<f64>())).collect();
            let got = decile_assignment(&values).unwrap();
            // oracle: rank by counting strictly larger values
            for (i, d) in &got {
                let rank = values.iter().filter(|(_, v)| *v > values[*i].1).count();
                assert_eq!(*d, 1 + rank * 10 / n);
            }
            let mut sizes = [0usize; 10];
            for (_, d) in &got {
                sizes[d - 1] += 1;
            }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1);
            assert_eq!(sizes.iter().sum::<usize>(), n);
        }
        assert!(decile_assignment(&[(0, 1.0); 9]).is_err());
    }

    #[test]
    fn identical_stocks_give_identical_deciles() {
        let (t_len, n) = (400, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let common: Vec<f64> = (0..t_len).map(|_| rng.random_range(-0.02..0.021)).collect();
        let m = DMatrix::from_fn(t_len, n, |t, _| if t == 0 { f64::NAN } else { common[t] });
        let r = ReturnPanel::from_matrix(cal(t_len), (0..n).map(|i| i.to_string()).collect(), ReturnMode::Total, m).unwrap();
        let sigma = DMatrix::from_fn(t_len, n, |_, i| 0.2 + i as f64 * 1e-3);
        let pool = PoolCalendar::full("p", t_len, n);
        let rep = decile_portfolios(&sigma, &r, &pool, 1, 21, None).unwrap();
        let ir0 = rep.stats[0].information_ratio;
        assert!(rep.stats.iter().all(|s| s.information_ratio == ir0));
        assert_eq!(rep.rebalances[0].1[n - 1], 1);
        assert_eq!(rep.rebalances[0].1[0], 10);
        assert!(decile_portfolios(&sigma.columns(0, 9).into_owned(), &r, &pool, 1, 21, None).is_err());
    }

    #[test]
    fn updown_ratio() {
        let report = DecileReport {
            dates: cal(4),
            day_index: vec![0, 1, 2, 3],
            returns: {
                let mut r = vec![vec![0.0; 4]; 10];
                r[0] = vec![0.02, -0.03, 0.02, -0.03];
                r[9] = vec![0.01, -0.015, 0.01, -0.015];
                r
            },
            stats: Vec::new(),
            rebalances: Vec::new(),
        };
        let index = [0.01, -0.01, 0.01, -0.01];
        assert!((updown_differential(&report, &index).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(updown_differential(&report, &[0.01; 4]), None);
    }
}
