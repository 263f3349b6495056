//! Comparison factors built through the strategy pipeline, P&L correlation
//! tables, residualization and holdings analysis.

mod holdings;
mod metrics;
mod regression;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backtest::{decile_portfolios, run_backtest, BacktestOptions, DecileReport, PnlSeries, N_DECILES};
use crate::data::{MarketPanel, PoolCalendar, ReturnPanel, RiskFreeCurve};
use crate::error::{Error, Result};
use crate::estimators::Direction;
use crate::stats::{covariance, pearson, variance};
use crate::strategy::{build_positions, PositionSeries, SignalSpec, StrategyConfig, StrategyInput};

pub use holdings::{holdings_bias, load_holdings, Holdings, HoldingsBiasPoint, HoldingsNormalization, SMOOTHING_DAYS};
pub use metrics::{load_metrics, write_metrics, MetricTable};
pub use regression::{
    align_months, ols, pnl_correlation, residualize, residualize_monthly, CorrelationTable, MonthlySeries, ResidualMode,
    ResidualReport, MAX_CONDITION, MIN_MONTHS,
};

/// Minimum share of pool members with a metric value on every day.
pub const MIN_METRIC_COVERAGE: f64 = 0.5;
const MOMENTUM_LOOKBACK: usize = 252;
const MOMENTUM_SKIP: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FactorName {
    Mkt,
    Umd,
    Smb,
    Hml,
    Ep,
    Dp,
    Lowvol,
    Lowbeta,
}

impl FactorName {
    pub const ALL: [FactorName; 8] = [
        FactorName::Mkt,
        FactorName::Umd,
        FactorName::Smb,
        FactorName::Hml,
        FactorName::Ep,
        FactorName::Dp,
        FactorName::Lowvol,
        FactorName::Lowbeta,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FactorName::Mkt => "MKT",
            FactorName::Umd => "UMD",
            FactorName::Smb => "SMB",
            FactorName::Hml => "HML",
            FactorName::Ep => "EP",
            FactorName::Dp => "DP",
            FactorName::Lowvol => "LOWVOL",
            FactorName::Lowbeta => "LOWBETA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for FactorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a factor's predictor is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactorSource {
    /// Equal-weight long book of the pool.
    Market,
    LowVol,
    LowBeta,
    /// Trailing 12-month return skipping the last month.
    Momentum,
    /// Metric column of `metrics.csv`; `neg_log` ranks `-ln(value)`.
    Metric { metric: String, neg_log: bool },
    /// `dividend_to_price` metric if supplied, else trailing 12-month
    /// dividends over the current close.
    DividendYield,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDefinition {
    pub name: String,
    pub source: FactorSource,
    pub direction: Direction,
}

impl FactorDefinition {
    pub fn standard(name: FactorName) -> Self {
        let metric = |m: &str, neg_log| FactorSource::Metric { metric: m.to_string(), neg_log };
        let source = match name {
            FactorName::Mkt => FactorSource::Market,
            FactorName::Umd => FactorSource::Momentum,
            FactorName::Smb => metric("market_cap", true),
            FactorName::Hml => metric("book_to_price", false),
            FactorName::Ep => metric("earnings_to_price", false),
            FactorName::Dp => FactorSource::DividendYield,
            FactorName::Lowvol => FactorSource::LowVol,
            FactorName::Lowbeta => FactorSource::LowBeta,
        };
        Self { name: name.as_str().to_string(), source, direction: Direction::Ascending }
    }
}

/// Everything a factor build needs.
#[derive(Debug, Clone, Copy)]
pub struct FactorContext<'a> {
    pub input: StrategyInput<'a>,
    pub panel: &'a MarketPanel,
    pub rates: &'a RiskFreeCurve,
    pub metrics: &'a MetricTable,
    pub config: &'a StrategyConfig,
    pub backtest: BacktestOptions,
}

#[derive(Debug, Clone)]
pub struct FactorRun {
    pub pnl: PnlSeries,
    pub positions: PositionSeries,
}

/// Builds a factor through the shared construction (rank, Markowitz,
/// market-mode projection) and accounts its P&L.
pub fn build_factor(def: &FactorDefinition, ctx: &FactorContext) -> Result<FactorRun> {
    let spec_values: Option<DMatrix<f64>> = match &def.source {
        FactorSource::Market => None,
        FactorSource::LowVol | FactorSource::LowBeta => None,
        FactorSource::Momentum => Some(momentum(ctx.input.returns)),
        FactorSource::Metric { metric, neg_log } => {
            let raw = ctx
                .metrics
                .get(metric)
                .ok_or_else(|| Error::InvalidData(format!("factor {} needs metric '{metric}'", def.name)))?;
            Some(if *neg_log { raw.map(|v| if v > 0.0 { -v.ln() } else { f64::NAN }) } else { raw.clone() })
        }
        FactorSource::DividendYield => Some(match ctx.metrics.get("dividend_to_price") {
            Some(m) => m.clone(),
            None => trailing_dividend_yield(ctx.panel),
        }),
    };
    let positions = match (&def.source, &spec_values) {
        (FactorSource::Market, _) => market_positions(ctx)?,
        (FactorSource::LowVol, _) => build_positions(&ctx.input, SignalSpec::LowVol, ctx.config)?,
        (FactorSource::LowBeta, _) => build_positions(&ctx.input, SignalSpec::LowBeta, ctx.config)?,
        (_, Some(values)) => {
            let start = ctx.config.first_position_day();
            let from = check_coverage(&def.name, values, ctx.input.pool, start, ctx.panel)?;
            // metric warm-up (e.g. a trailing year) delays the factor start
            let mut masked = values.clone();
            masked.rows_mut(0, from).fill(f64::NAN);
            let spec = SignalSpec::Metric { values: &masked, direction: def.direction, by_sector: false };
            let mut positions = build_positions(&ctx.input, spec, ctx.config)?;
            let skip = from.saturating_sub(positions.start);
            positions.diagnostics.drain(..skip.min(positions.diagnostics.len()));
            positions.start = positions.start.max(from);
            positions
        }
        (_, None) => unreachable!("metric factors always carry values"),
    };
    let pnl = run_backtest(&positions, ctx.panel, ctx.input.pool, ctx.rates, &ctx.backtest)?;
    Ok(FactorRun { pnl, positions })
}

/// First day from `start` on where the metric covers enough of the pool;
/// coverage must then hold to the end of the panel.
fn check_coverage(name: &str, values: &DMatrix<f64>, pool: &PoolCalendar, start: usize, panel: &MarketPanel) -> Result<usize> {
    if values.shape() != (panel.n_days(), panel.n_instruments()) {
        return Err(Error::invalid(format!("metric for {name} does not match the panel")));
    }
    let covered = |t: usize| {
        let members = pool.members(t);
        let k = members.iter().filter(|&&i| values[(t, i)].is_finite()).count();
        (k, members.len(), (k as f64) >= MIN_METRIC_COVERAGE * members.len() as f64 && k > 0)
    };
    let t_len = panel.n_days();
    let from = (start..t_len)
        .find(|&t| covered(t).2)
        .ok_or_else(|| Error::InsufficientData(format!("factor {name}: metric never covers half of the pool")))?;
    for t in from..t_len {
        let (k, m, ok) = covered(t);
        if !ok {
            return Err(Error::InsufficientData(format!(
                "factor {name}: metric covers {k} of {m} pool members on {}",
                panel.calendar()[t]
            )));
        }
    }
    Ok(from)
}

fn market_positions(ctx: &FactorContext) -> Result<PositionSeries> {
    let returns = ctx.input.returns;
    let (t_len, n) = (returns.n_days(), returns.n_instruments());
    let start = ctx.config.first_position_day().min(t_len);
    let mut dollars = DMatrix::zeros(t_len, n);
    for t in start..t_len {
        let members = ctx.input.pool.members(t);
        let live: Vec<usize> = members.into_iter().filter(|&i| ctx.panel.close(t, i).is_finite()).collect();
        for &i in &live {
            dollars[(t, i)] = 1.0 / live.len() as f64;
        }
    }
    Ok(PositionSeries {
        calendar: returns.calendar().to_vec(),
        ids: returns.ids().to_vec(),
        dollars,
        signals: DMatrix::from_element(t_len, n, f64::NAN),
        diagnostics: Vec::new(),
        start,
    })
}

/// Compounded return from `t - 252` to `t - 21` (12-month minus 1-month).
pub fn momentum(returns: &ReturnPanel) -> DMatrix<f64> {
    let (t_len, n) = (returns.n_days(), returns.n_instruments());
    let mut out = DMatrix::from_element(t_len, n, f64::NAN);
    for i in 0..n {
        let col = returns.column_slice(i, 0..t_len);
        for t in MOMENTUM_LOOKBACK..t_len {
            let window = &col[t + 1 - MOMENTUM_LOOKBACK..=t - MOMENTUM_SKIP];
            if window.iter().all(|r| r.is_finite()) {
                out[(t, i)] = window.iter().fold(1.0, |g, r| g * (1.0 + r)) - 1.0;
            }
        }
    }
    out
}

/// Trailing 12-month dividends over the current close (`NaN` during the
/// first year).
pub fn trailing_dividend_yield(panel: &MarketPanel) -> DMatrix<f64> {
    let cal = panel.calendar();
    let (t_len, n) = (panel.n_days(), panel.n_instruments());
    let mut out = DMatrix::from_element(t_len, n, f64::NAN);
    for t in 0..t_len {
        let Some(from) = cal[t].checked_sub_months(chrono::Months::new(12)) else { continue };
        if from < cal[0] {
            continue;
        }
        let first = cal.partition_point(|d| *d <= from);
        for i in 0..n {
            let close = panel.close(t, i);
            if close.is_finite() {
                out[(t, i)] = (first..=t).map(|s| panel.dividend(s, i)).sum::<f64>() / close;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyBetaReport {
    /// Index beta of each dividend-yield decile, lowest yield first.
    pub betas: Vec<f64>,
    /// Correlation of the highest-minus-lowest yield decile with the index.
    pub long_short_index_corr: Option<f64>,
    pub deciles: DecileReport,
}

/// Betas of equal-weight dividend-yield decile portfolios against the
/// equi-weighted index (`index` on the full calendar).
pub fn dy_decile_betas(
    returns: &ReturnPanel,
    dividend_yield: &DMatrix<f64>,
    pool: &PoolCalendar,
    start: usize,
    rebalance: usize,
    index: &[f64],
) -> Result<DyBetaReport> {
    // deciles are sorted on descending value: negate for lowest yield first
    let neg = -dividend_yield;
    let deciles = decile_portfolios(&neg, returns, pool, start, rebalance, None)?;
    let idx: Vec<f64> = deciles.day_index.iter().map(|&t| index[t]).collect();
    if idx.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("index return missing on a decile date".into()));
    }
    let var = variance(&idx);
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero index variance".into()));
    }
    let betas = deciles.returns.iter().map(|r| covariance(r, &idx) / var).collect();
    let ls: Vec<f64> = deciles.returns[N_DECILES - 1].iter().zip(&deciles.returns[0]).map(|(h, l)| h - l).collect();
    Ok(DyBetaReport { betas, long_short_index_corr: pearson(&ls, &idx), deciles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_returns, ReturnMode};
    use crate::estimators::index_returns;
    use crate::stats::linear_fit;
    use crate::strategy::RiskTable;
    use crate::synthetic::{generate, DividendSpec, MarketSpec};

    fn setup(spec: &MarketSpec) -> (crate::synthetic::SyntheticMarket, ReturnPanel) {
        let m = generate(spec).unwrap();
        let r = compute_returns(&m.panel, ReturnMode::Total).unwrap();
        (m, r)
    }

    fn cfg() -> StrategyConfig {
        let mut c = StrategyConfig::default();
        c.estimators.corr_window = 250;
        c.estimators.vol_window = 60;
        c.estimators.beta_window = 60;
        c
    }

    #[test]
    fn names_round_trip() {
        for f in FactorName::ALL {
            assert_eq!(FactorName::parse(f.as_str()), Some(f));
        }
        assert_eq!(FactorName::parse("lowvol"), Some(FactorName::Lowvol));
        assert_eq!(FactorName::parse("XYZ"), None);
    }

    #[test]
    fn minus_sigma_metric_is_bit_identical_to_low_vol() {
        let (m, r) = setup(&MarketSpec { n: 40, days: 700, seed: 3, ..Default::default() });
        let config = cfg();
        let risk = RiskTable::compute(&r, &m.pool, &config.estimators, false).unwrap();
        let mut metrics = MetricTable::default();
        metrics.insert("minus_sigma", -risk.sigma.clone());
        let ctx = FactorContext {
            input: StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk },
            panel: &m.panel,
            rates: &m.rates,
            metrics: &metrics,
            config: &config,
            backtest: BacktestOptions::default(),
        };
        let lv = build_factor(&FactorDefinition::standard(FactorName::Lowvol), &ctx).unwrap();
        let def = FactorDefinition {
            name: "NEG_SIGMA".into(),
            source: FactorSource::Metric { metric: "minus_sigma".into(), neg_log: false },
            direction: Direction::Ascending,
        };
        let mv = build_factor(&def, &ctx).unwrap();
        assert_eq!(lv.pnl, mv.pnl);
        // missing metric and poor coverage are errors
        let missing = FactorDefinition::standard(FactorName::Hml);
        assert!(build_factor(&missing, &ctx).is_err());
        let mut sparse = -risk.sigma.clone();
        for t in 0..sparse.nrows() {
            for i in 0..30 {
                sparse[(t, i)] = f64::NAN;
            }
        }
        let mut sparse_metrics = MetricTable::default();
        sparse_metrics.insert("minus_sigma", sparse);
        let ctx2 = FactorContext { metrics: &sparse_metrics, ..ctx };
        assert!(matches!(build_factor(&def, &ctx2), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn market_factor_earns_the_index() {
        let (m, r) = setup(&MarketSpec { n: 30, days: 500, seed: 5, ..Default::default() });
        let config = cfg();
        let risk = RiskTable::compute(&r, &m.pool, &config.estimators, false).unwrap();
        let metrics = MetricTable::default();
        let ctx = FactorContext {
            input: StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk },
            panel: &m.panel,
            rates: &m.rates,
            metrics: &metrics,
            config: &config,
            backtest: BacktestOptions::default(),
        };
        let mkt = build_factor(&FactorDefinition::standard(FactorName::Mkt), &ctx).unwrap();
        // momentum needs a trailing year, so it starts later
        let umd = build_factor(&FactorDefinition::standard(FactorName::Umd), &ctx).unwrap();
        assert_eq!(umd.positions.start, MOMENTUM_LOOKBACK);
        assert_eq!(umd.pnl.dates[0], m.panel.calendar()[MOMENTUM_LOOKBACK + 1]);
        assert!((0..MOMENTUM_LOOKBACK).all(|t| umd.positions.gmv(t) == 0.0));
        let index = index_returns(&r, &m.pool);
        let start = config.first_position_day();
        for (k, v) in mkt.pnl.total.iter().enumerate() {
            assert!((v - index[start + 1 + k]).abs() < 1e-12);
        }
    }

    #[test]
    fn dy_betas_match_direct_regression() {
        let spec = MarketSpec { n: 100, days: 800, seed: 9, dividends: Some(DividendSpec::default()), ..Default::default() };
        let (m, r) = setup(&spec);
        let dy = DMatrix::from_fn(r.n_days(), r.n_instruments(), |_, i| m.dividend_yield[i]);
        let index = index_returns(&r, &m.pool);
        let rep = dy_decile_betas(&r, &dy, &m.pool, 1, 21, &index).unwrap();
        let idx: Vec<f64> = rep.deciles.day_index.iter().map(|&t| index[t]).collect();
        for (d, b) in rep.betas.iter().enumerate() {
            let (slope, _) = linear_fit(&idx, &rep.deciles.returns[d]).unwrap();
            assert!((slope - b).abs() < 1e-10);
        }
    }

    #[test]
    fn momentum_window() {
        let (m, r) = setup(&MarketSpec { n: 3, days: 300, seed: 1, ..Default::default() });
        let mom = momentum(&r);
        assert!(mom[(251, 0)].is_nan());
        let t = 280;
        let expected = (t - 251..=t - 21).fold(1.0, |g, s| g * (1.0 + r.get(s, 1))) - 1.0;
        assert!((mom[(t, 1)] - expected).abs() < 1e-12);
        // trailing yield is defined after one year only
        let dy = trailing_dividend_yield(&m.panel);
        assert!(dy[(10, 0)].is_nan());
        assert!(dy[(290, 0)].is_finite());
    }
}
