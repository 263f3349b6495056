//! Monthly P&L aggregation, correlation tables and residualization.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::PnlSeries;
use crate::error::{Error, Result};
use crate::stats::{mean, pearson, std_dev};

/// Minimum overlapping months for correlations and regressions.
pub const MIN_MONTHS: usize = 24;
/// Largest accepted condition number of the regression design.
pub const MAX_CONDITION: f64 = 1e8;

/// Calendar-month sums of a daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    /// `(year, month)` of each entry.
    pub months: Vec<(i32, u32)>,
    pub values: Vec<f64>,
}

impl MonthlySeries {
    pub fn from_daily(dates: &[NaiveDate], values: &[f64]) -> Self {
        let mut months: Vec<(i32, u32)> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for (d, v) in dates.iter().zip(values) {
            let key = (d.year(), d.month());
            if months.last() != Some(&key) {
                months.push(key);
                sums.push(0.0);
            }
            *sums.last_mut().expect("pushed above") += v;
        }
        Self { months, values: sums }
    }

    pub fn from_pnl(pnl: &PnlSeries) -> Self {
        Self::from_daily(&pnl.dates, &pnl.total)
    }

    /// Annualized mean / std of the monthly values.
    pub fn sharpe(&self) -> Option<f64> {
        let sd = std_dev(&self.values);
        (self.values.len() >= 2 && sd > 0.0).then(|| mean(&self.values) / sd * 12f64.sqrt())
    }
}

/// Restricts the series to the months they all cover.
pub fn align_months(series: &[MonthlySeries]) -> (Vec<(i32, u32)>, Vec<Vec<f64>>) {
    let Some(first) = series.first() else { return (Vec::new(), Vec::new()) };
    let common: Vec<(i32, u32)> =
        first.months.iter().copied().filter(|m| series.iter().all(|s| s.months.binary_search(m).is_ok())).collect();
    let values = series
        .iter()
        .map(|s| common.iter().map(|m| s.values[s.months.binary_search(m).expect("common month")]).collect())
        .collect();
    (common, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub months: usize,
}

/// Pearson correlations of calendar-month P&L sums over common months.
pub fn pnl_correlation(series: &[(&str, &PnlSeries)]) -> Result<CorrelationTable> {
    let monthly: Vec<MonthlySeries> = series.iter().map(|(_, p)| MonthlySeries::from_pnl(p)).collect();
    let (months, values) = align_months(&monthly);
    if months.len() < MIN_MONTHS {
        return Err(Error::insufficient(format!("{} overlapping months, need {MIN_MONTHS}", months.len())));
    }
    let k = series.len();
    let mut matrix = vec![vec![1.0; k]; k];
    for a in 0..k {
        for b in 0..a {
            let c = pearson(&values[a], &values[b])
                .ok_or_else(|| Error::Degenerate(format!("{} or {} has constant monthly P&L", series[a].0, series[b].0)))?;
            matrix[a][b] = c;
            matrix[b][a] = c;
        }
    }
    Ok(CorrelationTable { names: series.iter().map(|(n, _)| n.to_string()).collect(), matrix, months: months.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ResidualMode {
    /// One regression over the whole sample.
    FullSample,
    /// Coefficients from the trailing `window` months, applied out of sample.
    Rolling { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub names: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub months: Vec<(i32, u32)>,
    /// `target - sum_k b_k x_k`; the intercept (unexplained drift) is kept.
    pub residual: Vec<f64>,
    pub target_sharpe: Option<f64>,
    pub residual_sharpe: Option<f64>,
    /// In-sample correlation of the residual with each regressor.
    pub residual_correlations: Vec<f64>,
}

fn design(regressors: &[Vec<f64>], rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let len = rows.len();
    DMatrix::from_fn(len, regressors.len() + 1, |r, c| if c == 0 { 1.0 } else { regressors[c - 1][rows.start + r] })
}

/// Condition number of the design with unit-norm columns; on failure, names
/// the most collinear pair of columns.
fn check_collinearity(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut scaled = x.clone();
    for mut c in scaled.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
    let sv = scaled.singular_values();
    let cond = sv.max() / sv.min();
    if cond.is_finite() && cond <= MAX_CONDITION {
        return Ok(());
    }
    let label = |c: usize| if c == 0 { "intercept".to_string() } else { names[c - 1].clone() };
    let k = scaled.ncols();
    let (mut worst, mut pair) = (-1.0, (0, 1.min(k - 1)));
    for a in 0..k {
        for b in 0..a {
            let two = DMatrix::from_columns(&[scaled.column(b), scaled.column(a)]).singular_values();
            let c = if two.min() > 0.0 { two.max() / two.min() } else { f64::INFINITY };
            if c > worst {
                worst = c;
                pair = (b, a);
            }
        }
    }
    Err(Error::Collinear { first: label(pair.0), second: label(pair.1), condition: cond })
}

/// Ordinary least squares with intercept; returns `[intercept, b_1, ..]`.
pub fn ols(target: &[f64], regressors: &[Vec<f64>], names: &[String]) -> Result<Vec<f64>> {
    let n = target.len();
    if regressors.iter().any(|r| r.len() != n) || names.len() != regressors.len() {
        return Err(Error::invalid("regressors and target lengths differ"));
    }
    if n < regressors.len() + 2 {
        return Err(Error::insufficient("fewer observations than coefficients"));
    }
    let x = design(regressors, 0..n);
    check_collinearity(&x, names)?;
    let qr = x.qr();
    let y = DVector::from_column_slice(target);
    let qty = qr.q().tr_mul(&y);
    let coef = qr.r().solve_upper_triangular(&qty).ok_or_else(|| Error::Singular("regression design is singular".into()))?;
    Ok(coef.iter().copied().collect())
}

/// Regresses monthly target P&L on monthly factor P&Ls.
pub fn residualize(target: &(&str, &PnlSeries), regressors: &[(&str, &PnlSeries)], mode: ResidualMode) -> Result<ResidualReport> {
    let mut all = vec![MonthlySeries::from_pnl(target.1)];
    all.extend(regressors.iter().map(|(_, p)| MonthlySeries::from_pnl(p)));
    let (months, mut values) = align_months(&all);
    if months.len() < MIN_MONTHS {
        return Err(Error::insufficient(format!("{} overlapping months, need {MIN_MONTHS}", months.len())));
    }
    let y = values.remove(0);
    let names: Vec<String> = regressors.iter().map(|(n, _)| n.to_string()).collect();
    residualize_monthly(&months, &y, &values, &names, mode)
}

pub fn residualize_monthly(
    months: &[(i32, u32)],
    y: &[f64],
    x: &[Vec<f64>],
    names: &[String],
    mode: ResidualMode,
) -> Result<ResidualReport> {
    let coef = ols(y, x, names)?;
    let (months, y, x, residual) = match mode {
        ResidualMode::FullSample => {
            let residual = (0..y.len()).map(|m| y[m] - (0..x.len()).map(|k| coef[k + 1] * x[k][m]).sum::<f64>()).collect();
            (months.to_vec(), y.to_vec(), x.to_vec(), residual)
        }
        ResidualMode::Rolling { window } => {
            if window < x.len() + 2 || window >= y.len() {
                return Err(Error::param(format!("rolling window {window} incompatible with {} months", y.len())));
            }
            let mut residual = Vec::with_capacity(y.len() - window);
            for m in window..y.len() {
                let ys = &y[m - window..m];
                let xs: Vec<Vec<f64>> = x.iter().map(|r| r[m - window..m].to_vec()).collect();
                let b = ols(ys, &xs, names)?;
                residual.push(y[m] - (0..x.len()).map(|k| b[k + 1] * x[k][m]).sum::<f64>());
            }
            let tail = |v: &[f64]| v[window..].to_vec();
            (months[window..].to_vec(), tail(y), x.iter().map(|r| tail(r)).collect(), residual)
        }
    };
    let residual_correlations = x.iter().map(|r| pearson(&residual, r).unwrap_or(0.0)).collect();
    let sharpe = |v: &[f64]| MonthlySeries { months: months.clone(), values: v.to_vec() }.sharpe();
    Ok(ResidualReport {
        names: names.to_vec(),
        intercept: coef[0],
        coefficients: coef[1..].to_vec(),
        target_sharpe: sharpe(&y),
        residual_sharpe: sharpe(&residual),
        residual_correlations,
        months,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn months(n: usize) -> Vec<(i32, u32)> {
        (0..n).map(|k| (2000 + (k / 12) as i32, (k % 12) as u32 + 1)).collect()
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("F{i}")).collect()
    }

    #[test]
    fn matches_normal_equations() {
        let n = 120;
        let x = vec![noise(n, 1), noise(n, 2), noise(n, 3)];
        let y: Vec<f64> = (0..n).map(|m| 0.1 + 0.5 * x[0][m] - 0.2 * x[1][m] + 0.3 * noise(n, 4)[m]).collect();
        let coef = ols(&y, &x, &names(3)).unwrap();
        let xm = DMatrix::from_fn(n, 4, |r, c| if c == 0 { 1.0 } else { x[c - 1][r] });
        let xtx = xm.tr_mul(&xm);
        let xty = xm.tr_mul(&DVector::from_vec(y.clone()));
        let oracle = xtx.lu().solve(&xty).unwrap();
        for (a, b) in coef.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rep = residualize_monthly(&months(n), &y, &x, &names(3), ResidualMode::FullSample).unwrap();
        assert!(rep.residual_correlations.iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn passthrough_span_and_orthogonal_cases() {
        let n = 60;
        let y = noise(n, 5);
        let empty = residualize_monthly(&months(n), &y, &[], &[], ResidualMode::FullSample).unwrap();
        assert_eq!(empty.residual, y);
        let x = vec![noise(n, 6), noise(n, 7)];
        let in_span: Vec<f64> = (0..n).map(|m| 2.0 * x[0][m] - x[1][m]).collect();
        let rep = residualize_monthly(&months(n), &in_span, &x, &names(2), ResidualMode::FullSample).unwrap();
        assert!(rep.residual.iter().all(|r| r.abs() < 1e-12));
        // self-regression
        let rep = residualize_monthly(&months(n), &y, std::slice::from_ref(&y), &names(1), ResidualMode::FullSample).unwrap();
        assert!(rep.residual.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn collinear_pair_is_named() {
        let n = 50;
        let a = noise(n, 8);
        let b = noise(n, 9);
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        let err = residualize_monthly(&months(n), &noise(n, 10), &[a, b, a2], &names(3), ResidualMode::FullSample).unwrap_err();
        match err {
            Error::Collinear { first, second, .. } => assert_eq!((first.as_str(), second.as_str()), ("F0", "F2")),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn rolling_mode_is_out_of_sample() {
        let n = 80;
        let x = vec![noise(n, 11)];
        let y: Vec<f64> = x[0].iter().map(|v| 0.7 * v).collect();
        let rep = residualize_monthly(&months(n), &y, &x, &names(1), ResidualMode::Rolling { window: 36 }).unwrap();
        assert_eq!(rep.residual.len(), n - 36);
        assert!(rep.residual.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn monthly_sums_and_correlation_table() {
        let days: Vec<NaiveDate> = (0..900).map(|k| NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(k)).collect();
        let a = PnlSeries::from_total(days.clone(), noise(900, 12));
        let b = PnlSeries::from_total(days.clone(), noise(900, 13));
        let t = pnl_correlation(&[("a", &a), ("b", &b), ("a2", &a)]).unwrap();
        assert_eq!(t.matrix[0][0], 1.0);
        assert!((t.matrix[0][2] - 1.0).abs() < 1e-12);
        assert_eq!(t.matrix[0][1], t.matrix[1][0]);
        let short = PnlSeries::from_total(days[..300].to_vec(), noise(300, 14));
        assert!(pnl_correlation(&[("a", &a), ("s", &short)]).is_err());
        let m = MonthlySeries::from_pnl(&a);
        assert_eq!(m.months[0], (2001, 1));
        assert!((m.values[0] - a.total[..31].iter().sum::<f64>()).abs() < 1e-12);
    }
}
