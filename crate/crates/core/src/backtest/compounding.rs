use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::deciles::{decile_assignment, N_DECILES};
use crate::data::{PoolCalendar, ReturnPanel};
use crate::error::{Error, Result};

pub const COMPOUNDING_HORIZONS: [usize; 4] = [1, 5, 10, 20];

/// Two successive returns compounded.
pub fn compound(first: f64, second: f64) -> f64 {
    (1.0 + first) * (1.0 + second) - 1.0
}

/// Return needed to recover from `loss`.
pub fn recoup(loss: f64) -> f64 {
    1.0 / (1.0 + loss) - 1.0
}

/// How n-day returns are compared across horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompoundingMeasure {
    /// `(prod(1 + r))^(1/n) - 1`: per-day growth rate, equal to the
    /// arithmetic mean at `n = 1`.
    PerDayGeometric,
    /// `prod(1 + r) - 1`.
    Cumulative,
}

/// Ratio of the mean n-day return of the most volatile decile to that of the
/// least volatile one, for each horizon. Stocks are re-sorted every day on
/// `sigma`; a horizon whose low-vol mean is (numerically) zero gives `None`.
pub fn compounding_ratio(
    returns: &ReturnPanel,
    sigma: &DMatrix<f64>,
    pool: &PoolCalendar,
    start: usize,
    horizons: &[usize],
    measure: CompoundingMeasure,
) -> Result<Vec<(usize, Option<f64>)>> {
    let (t_len, n) = (returns.n_days(), returns.n_instruments());
    if sigma.shape() != (t_len, n) || pool.n_days() != t_len {
        return Err(Error::invalid("sigma, pool and returns dimensions differ"));
    }
    if horizons.contains(&0) {
        return Err(Error::param("horizons must be positive"));
    }
    let mut acc = vec![[(0.0, 0usize); 2]; horizons.len()];
    for t in start..t_len.saturating_sub(1) {
        let values: Vec<(usize, f64)> = pool
            .members(t)
            .into_iter()
            .filter(|&i| sigma[(t, i)].is_finite())
            .map(|i| (i, sigma[(t, i)]))
            .collect();
        if values.len() < N_DECILES {
            continue;
        }
        for (i, d) in decile_assignment(&values)? {
            let side = match d {
                1 => 0,
                N_DECILES => 1,
                _ => continue,
            };
            for (k, &h) in horizons.iter().enumerate() {
                if t + h >= t_len {
                    continue;
                }
                let window = &returns.column_slice(i, t + 1..t + h + 1);
                if window.iter().any(|r| !r.is_finite()) {
                    continue;
                }
                let growth = window.iter().fold(1.0, |g, r| g * (1.0 + r));
                let value = match measure {
                    _ if h == 1 => window[0],
                    CompoundingMeasure::PerDayGeometric => growth.powf(1.0 / h as f64) - 1.0,
                    CompoundingMeasure::Cumulative => growth - 1.0,
                };
                acc[k][side].0 += value;
                acc[k][side].1 += 1;
            }
        }
    }
    Ok(horizons
        .iter()
        .zip(acc)
        .map(|(&h, [(s_hi, c_hi), (s_lo, c_lo)])| {
            if c_hi == 0 || c_lo == 0 {
                return (h, None);
            }
            let (hi, lo) = (s_hi / c_hi as f64, s_lo / c_lo as f64);
            (h, (lo.abs() > 1e-14).then(|| hi / lo))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ReturnMode;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn primitives() {
        assert!((compound(-0.20, 0.20) + 0.04).abs() < 1e-15);
        assert_eq!(recoup(-0.20), 0.25);
    }

    proptest! {
        #[test]
        fn growth_never_beats_arithmetic_mean(path in proptest::collection::vec(-0.5f64..0.5, 1..40)) {
            let n = path.len() as f64;
            let growth: f64 = path.iter().map(|r| 1.0 + r).product();
            let am = 1.0 + path.iter().sum::<f64>() / n;
            prop_assert!(growth <= am.powf(n) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn one_day_ratio_is_ratio_of_daily_means() {
        let (t_len, n) = (60, 10);
        let m = DMatrix::from_fn(t_len, n, |t, i| {
            if t == 0 {
                f64::NAN
            } else {
                0.001 * (i as f64 + 1.0) + if t % 2 == 0 { 0.01 } else { -0.01 } * i as f64
            }
        });
        let cal: Vec<NaiveDate> = (0..t_len).map(|k| NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(k as u64)).collect();
        let r = ReturnPanel::from_matrix(cal, (0..n).map(|i| i.to_string()).collect(), ReturnMode::Price, m.clone()).unwrap();
        let sigma = DMatrix::from_fn(t_len, n, |_, i| i as f64 + 1.0);
        let pool = PoolCalendar::full("p", t_len, n);
        let got = compounding_ratio(&r, &sigma, &pool, 1, &[1], CompoundingMeasure::PerDayGeometric).unwrap();
        let hi: f64 = (2..t_len).map(|t| m[(t, 9)]).sum::<f64>() / (t_len - 2) as f64;
        let lo: f64 = (2..t_len).map(|t| m[(t, 0)]).sum::<f64>() / (t_len - 2) as f64;
        assert!((got[0].1.unwrap() - hi / lo).abs() < 1e-12);
    }
}
