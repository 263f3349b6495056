//! Daily strategy construction: lagged risk estimates, rank signal,
//! Markowitz positions and market-mode neutralization.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PoolCalendar, ReturnPanel};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_correlation, index_returns, rank_signal, rolling_beta, rolling_volatility, sector_rank_signal,
    CorrelationModel, Direction, EstimatorConfig, Regularization, SignalVector,
};
use crate::portfolio::{market_risk_exposure, markowitz_positions, neutralize_sectors, project_market_mode};

/// Predictor driving a strategy.
#[derive(Debug, Clone, Copy)]
pub enum SignalSpec<'a> {
    /// Long low volatility, short high volatility.
    LowVol,
    /// Long low beta, short high beta.
    LowBeta,
    /// Low volatility ranked within each sector.
    SectorLowVol,
    /// Arbitrary per-day metric (`T x N`, `NaN` = unavailable).
    Metric {
        values: &'a DMatrix<f64>,
        direction: Direction,
        by_sector: bool,
    },
}

impl SignalSpec<'_> {
    fn by_sector(&self) -> bool {
        match self {
            SignalSpec::SectorLowVol => true,
            SignalSpec::Metric { by_sector, .. } => *by_sector,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub estimators: EstimatorConfig,
    /// Annualized dollar risk of the book before market-mode projection.
    pub target_risk: f64,
    /// Trading days between correlation model re-estimations.
    pub corr_refresh: usize,
    pub regularization: Regularization,
    /// Remove the market mode from the risk-space positions.
    pub project_market: bool,
    /// For sector-ranked signals, also remove each sector's net dollars.
    pub sector_neutral_dollars: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            estimators: EstimatorConfig::default(),
            target_risk: 1.0,
            corr_refresh: 21,
            regularization: Regularization::Spike,
            project_market: true,
            sector_neutral_dollars: true,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimators.validate()?;
        if !(self.target_risk > 0.0 && self.target_risk.is_finite()) {
            return Err(Error::param("target_risk must be positive"));
        }
        if self.corr_refresh == 0 {
            return Err(Error::param("corr_refresh must be positive"));
        }
        Ok(())
    }

    /// First day on which positions can be formed.
    pub fn first_position_day(&self) -> usize {
        let e = &self.estimators;
        let corr_obs = (e.min_coverage * e.corr_window as f64).ceil() as usize;
        e.first_signal_day().max(corr_obs.max(2))
    }
}

/// Lagged volatility and beta of every instrument on every day (`NaN` when
/// unavailable).
#[derive(Debug, Clone)]
pub struct RiskTable {
    pub sigma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// Equi-weighted pool index returns.
    pub index: Vec<f64>,
}

impl RiskTable {
    pub fn compute(returns: &ReturnPanel, pool: &PoolCalendar, cfg: &EstimatorConfig, with_beta: bool) -> Result<Self> {
        cfg.validate()?;
        check_pool(returns, pool)?;
        let (t_len, n) = (returns.n_days(), returns.n_instruments());
        let index = index_returns(returns, pool);
        let start = cfg.first_signal_day().min(t_len);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (start..t_len)
            .into_par_iter()
            .map(|t| {
                let sigma = rolling_volatility(returns, t, cfg).into_iter().map(|v| v.sigma.unwrap_or(f64::NAN)).collect();
                let beta = if with_beta {
                    rolling_beta(returns, &index, t, cfg)?.into_iter().map(|b| b.unwrap_or(f64::NAN)).collect()
                } else {
                    vec![f64::NAN; n]
                };
                Ok((sigma, beta))
            })
            .collect::<Result<_>>()?;
        let mut sigma = DMatrix::from_element(t_len, n, f64::NAN);
        let mut beta = DMatrix::from_element(t_len, n, f64::NAN);
        for (k, (s, b)) in rows.into_iter().enumerate() {
            for i in 0..n {
                sigma[(start + k, i)] = s[i];
                beta[(start + k, i)] = b[i];
            }
        }
        Ok(Self { sigma, beta, index })
    }
}

fn check_pool(returns: &ReturnPanel, pool: &PoolCalendar) -> Result<()> {
    if pool.n_days() != returns.n_days() || pool.n_instruments() != returns.n_instruments() {
        return Err(Error::Membership(format!("pool {} does not match the panel dimensions", pool.name())));
    }
    Ok(())
}

/// Per-day construction diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub date: NaiveDate,
    pub n_instruments: usize,
    pub nmv: f64,
    pub gmv: f64,
    pub nmv_over_gmv: Option<f64>,
    pub market_exposure_pre: f64,
    pub market_exposure_post: f64,
    pub lambda0: f64,
    /// Overlap between the flat vector and the market mode.
    pub flat_overlap: f64,
    /// Largest `|sector NMV| / GMV` across sectors.
    pub max_sector_net: f64,
}

/// Dollar positions held at each close.
#[derive(Debug, Clone)]
pub struct PositionSeries {
    pub calendar: Vec<NaiveDate>,
    pub ids: Vec<String>,
    /// `T x N`, position held from the close of `t` to the close of `t + 1`.
    pub dollars: DMatrix<f64>,
    /// Signal scores (`NaN` when not traded).
    pub signals: DMatrix<f64>,
    /// Diagnostics for every day from `start` on.
    pub diagnostics: Vec<Diagnostics>,
    pub start: usize,
}

impl PositionSeries {
    pub fn nmv(&self, t: usize) -> f64 {
        self.dollars.row(t).sum()
    }

    pub fn gmv(&self, t: usize) -> f64 {
        self.dollars.row(t).iter().map(|x| x.abs()).sum()
    }
}

/// Inputs shared by every strategy on one pool.
#[derive(Debug, Clone, Copy)]
pub struct StrategyInput<'a> {
    pub returns: &'a ReturnPanel,
    pub pool: &'a PoolCalendar,
    pub sectors: &'a [String],
    pub risk: &'a RiskTable,
}

struct DayResult {
    t: usize,
    positions: Vec<(usize, f64, f64)>,
    diag: Diagnostics,
}

/// Builds daily positions from `cfg.first_position_day()` to the end of the
/// panel. Correlation models are refreshed every `corr_refresh` days and
/// whenever a new instrument becomes eligible. Instruments leaving the pool
/// keep their previous position on the exit day and are flat the day after.
pub fn build_positions(input: &StrategyInput, signal: SignalSpec, cfg: &StrategyConfig) -> Result<PositionSeries> {
    cfg.validate()?;
    let returns = input.returns;
    check_pool(returns, input.pool)?;
    let (t_len, n) = (returns.n_days(), returns.n_instruments());
    if input.sectors.len() != n {
        return Err(Error::invalid("sector labels do not match the panel"));
    }
    if let SignalSpec::Metric { values, .. } = signal {
        if values.shape() != (t_len, n) {
            return Err(Error::invalid("metric table does not match the panel"));
        }
    }
    let start = cfg.first_position_day().min(t_len);
    let blocks: Vec<std::ops::Range<usize>> = (start..t_len)
        .step_by(cfg.corr_refresh)
        .map(|b| b..(b + cfg.corr_refresh).min(t_len))
        .collect();
    let days: Vec<Vec<DayResult>> = blocks
        .into_par_iter()
        .map(|block| build_block(input, signal, cfg, block))
        .collect::<Result<_>>()?;

    let mut dollars = DMatrix::zeros(t_len, n);
    let mut signals = DMatrix::from_element(t_len, n, f64::NAN);
    let mut diagnostics = Vec::with_capacity(t_len - start);
    for day in days.into_iter().flatten() {
        for (i, x, s) in day.positions {
            dollars[(day.t, i)] = x;
            signals[(day.t, i)] = s;
        }
        diagnostics.push(day.diag);
    }
    // exits: hold through the exit-day close, flat at the next close
    for t in start.max(1)..t_len {
        for i in 0..n {
            if input.pool.exits_on(t, i) {
                dollars[(t, i)] = dollars[(t - 1, i)];
            }
        }
    }
    Ok(PositionSeries {
        calendar: returns.calendar().to_vec(),
        ids: returns.ids().to_vec(),
        dollars,
        signals,
        diagnostics,
        start,
    })
}

struct ModelState {
    day: usize,
    considered: Vec<bool>,
    model: Option<CorrelationModel>,
    restricted: Option<CorrelationModel>,
}

fn build_block(
    input: &StrategyInput,
    signal: SignalSpec,
    cfg: &StrategyConfig,
    block: std::ops::Range<usize>,
) -> Result<Vec<DayResult>> {
    let returns = input.returns;
    let n = returns.n_instruments();
    let mut state: Option<ModelState> = None;
    let mut out = Vec::with_capacity(block.len());
    for t in block {
        let members = input.pool.members(t);
        let eligible: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| input.risk.sigma[(t, i)].is_finite() && signal_value(input, signal, t, i).is_finite())
            .collect();
        let stale_model = match &state {
            None => true,
            Some(s) => eligible.iter().any(|&i| !s.considered[i]),
        };
        if stale_model {
            let mut considered = vec![false; n];
            for &i in &members {
                considered[i] = true;
            }
            let model = match estimate_correlation(returns, t, &cfg.estimators, &members, cfg.regularization) {
                Ok(m) => Some(m),
                Err(Error::InsufficientData(_)) => None,
                Err(e) => return Err(e),
            };
            state = Some(ModelState { day: t, considered, model, restricted: None });
        }
        let st = state.as_mut().expect("model state initialized");
        debug_assert!(t >= st.day);
        let tradable: Vec<usize> = match &st.model {
            Some(m) => {
                let mut in_model = vec![false; n];
                for &i in m.instruments() {
                    in_model[i] = true;
                }
                eligible.iter().copied().filter(|&i| in_model[i]).collect()
            }
            None => Vec::new(),
        };
        let date = returns.calendar()[t];
        if tradable.len() < 2 {
            out.push(DayResult { t, positions: Vec::new(), diag: empty_diag(date) });
            continue;
        }
        let reuse = matches!(&st.restricted, Some(r) if r.instruments() == tradable.as_slice());
        if !reuse {
            let model = st.model.as_ref().expect("tradable implies a model");
            st.restricted = Some(model.restrict(&tradable)?);
        }
        let corr = st.restricted.as_ref().expect("restricted model set");
        out.push(build_day(input, signal, cfg, t, &tradable, corr)?);
    }
    Ok(out)
}

fn signal_value(input: &StrategyInput, signal: SignalSpec, t: usize, i: usize) -> f64 {
    match signal {
        SignalSpec::LowVol | SignalSpec::SectorLowVol => input.risk.sigma[(t, i)],
        SignalSpec::LowBeta => input.risk.beta[(t, i)],
        SignalSpec::Metric { values, .. } => values[(t, i)],
    }
}

fn empty_diag(date: NaiveDate) -> Diagnostics {
    Diagnostics {
        date,
        n_instruments: 0,
        nmv: 0.0,
        gmv: 0.0,
        nmv_over_gmv: None,
        market_exposure_pre: 0.0,
        market_exposure_post: 0.0,
        lambda0: f64::NAN,
        flat_overlap: f64::NAN,
        max_sector_net: 0.0,
    }
}

fn build_day(
    input: &StrategyInput,
    signal: SignalSpec,
    cfg: &StrategyConfig,
    t: usize,
    tradable: &[usize],
    corr: &CorrelationModel,
) -> Result<DayResult> {
    let values: Vec<f64> = tradable.iter().map(|&i| signal_value(input, signal, t, i)).collect();
    let sigma: Vec<f64> = tradable.iter().map(|&i| input.risk.sigma[(t, i)]).collect();
    let sectors: Vec<&str> = tradable.iter().map(|&i| input.sectors[i].as_str()).collect();
    let direction = match signal {
        SignalSpec::Metric { direction, .. } => direction,
        _ => Direction::Descending,
    };
    let scores = if signal.by_sector() {
        sector_rank_signal(&values, &sectors, direction)?
    } else {
        rank_signal(&values, direction)?
    };
    let sv = SignalVector::new(tradable.to_vec(), scores);
    let raw = markowitz_positions(&sv, &sigma, corr, cfg.target_risk)?;
    let pre = market_risk_exposure(&raw, corr, &sigma)?;
    let mut pos = raw;
    if signal.by_sector() && cfg.sector_neutral_dollars {
        pos = neutralize_sectors(&pos, corr, &sigma, &sectors)?;
    } else if cfg.project_market {
        pos = project_market_mode(&pos, corr, &sigma)?;
    }
    let post = market_risk_exposure(&pos, corr, &sigma)?;
    let gmv = pos.gmv();
    let mut sector_net: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    for (x, s) in pos.dollars.iter().zip(&sectors) {
        *sector_net.entry(s).or_default() += x;
    }
    let max_sector_net = if gmv > 0.0 {
        sector_net.values().map(|v| v.abs() / gmv).fold(0.0, f64::max)
    } else {
        0.0
    };
    let k = corr.n() as f64;
    let diag = Diagnostics {
        date: input.returns.calendar()[t],
        n_instruments: tradable.len(),
        nmv: pos.nmv(),
        gmv,
        nmv_over_gmv: pos.ratio(),
        market_exposure_pre: pre,
        market_exposure_post: post,
        lambda0: corr.lambda0(),
        flat_overlap: corr.v0().sum() / k.sqrt(),
        max_sector_net,
    };
    let positions = tradable
        .iter()
        .zip(pos.dollars.iter().zip(&sv.scores))
        .map(|(&i, (&x, &s))| (i, x, s))
        .collect();
    Ok(DayResult { t, positions, diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ReturnMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn market(t_len: usize, n: usize, seed: u64) -> ReturnPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vols: Vec<f64> = (0..n).map(|i| 0.005 + 0.02 * i as f64 / n as f64).collect();
        let mut m = DMatrix::from_element(t_len, n, f64::NAN);
        for t in 1..t_len {
            let f: f64 = StandardNormal.sample(&mut rng);
            for i in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                m[(t, i)] = vols[i] * (0.55 * f + 0.835 * e);
            }
        }
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let cal = (0..t_len).map(|k| start + chrono::Days::new(k as u64)).collect();
        ReturnPanel::from_matrix(cal, (0..n).map(|i| format!("I{i}")).collect(), ReturnMode::Total, m).unwrap()
    }

    fn small_cfg() -> StrategyConfig {
        StrategyConfig {
            estimators: EstimatorConfig { vol_window: 40, beta_window: 40, lag: 5, corr_window: 120, ..Default::default() },
            corr_refresh: 10,
            ..Default::default()
        }
    }

    #[test]
    fn positions_are_market_neutral_and_net_long() {
        let (t_len, n) = (300, 30);
        let r = market(t_len, n, 1);
        let pool = PoolCalendar::full("all", t_len, n);
        let cfg = small_cfg();
        let risk = RiskTable::compute(&r, &pool, &cfg.estimators, true).unwrap();
        let sectors = vec!["S".to_string(); n];
        let input = StrategyInput { returns: &r, pool: &pool, sectors: &sectors, risk: &risk };
        let ps = build_positions(&input, SignalSpec::LowVol, &cfg).unwrap();
        assert_eq!(ps.start, cfg.first_position_day());
        for d in &ps.diagnostics {
            assert!(d.n_instruments == n);
            assert!(d.market_exposure_post.abs() <= 1e-8 * d.market_exposure_pre.abs());
        }
        let avg_nmv: f64 = (ps.start..t_len).map(|t| ps.nmv(t)).sum::<f64>();
        assert!(avg_nmv > 0.0);
        assert!((0..ps.start).all(|t| ps.gmv(t) == 0.0));
    }

    fn lookahead_check(signal: SignalSpec, perturb: impl Fn(usize, usize) -> f64) {
        let (t_len, n) = (260, 20);
        let r = market(t_len, n, 2);
        let pool = PoolCalendar::full("all", t_len, n);
        let cfg = small_cfg();
        let sectors = vec!["S".to_string(); n];
        let with_beta = matches!(signal, SignalSpec::LowBeta);
        let risk = RiskTable::compute(&r, &pool, &cfg.estimators, with_beta).unwrap();
        let input = StrategyInput { returns: &r, pool: &pool, sectors: &sectors, risk: &risk };
        let base = build_positions(&input, signal, &cfg).unwrap();
        let cut = 200;
        let mut r2 = r.clone();
        for t in cut + 1..t_len {
            for i in 0..n {
                r2.set(t, i, perturb(t, i));
            }
        }
        let risk2 = RiskTable::compute(&r2, &pool, &cfg.estimators, with_beta).unwrap();
        let input2 = StrategyInput { returns: &r2, pool: &pool, sectors: &sectors, risk: &risk2 };
        let other = build_positions(&input2, signal, &cfg).unwrap();
        assert!(base.gmv(cut) > 0.0);
        for t in 0..=cut {
            for i in 0..n {
                assert_eq!(base.dollars[(t, i)], other.dollars[(t, i)]);
            }
        }
    }

    #[test]
    fn zeroed_future_returns_do_not_change_positions() {
        lookahead_check(SignalSpec::LowVol, |_, _| 0.0);
    }

    #[test]
    fn perturbed_future_returns_do_not_change_positions() {
        lookahead_check(SignalSpec::LowBeta, |t, i| ((t * 31 + i * 17) % 13) as f64 * 0.003 - 0.018);
    }

    #[test]
    fn exiting_instrument_is_held_one_day_then_flat() {
        let (t_len, n) = (260, 12);
        let r = market(t_len, n, 3);
        let exit = 230;
        let pool = PoolCalendar::from_snapshots("p", t_len, n, &[(0, (0..n).collect()), (exit, (1..n).collect())], None).unwrap();
        let cfg = small_cfg();
        let sectors = vec!["S".to_string(); n];
        let risk = RiskTable::compute(&r, &pool, &cfg.estimators, false).unwrap();
        let input = StrategyInput { returns: &r, pool: &pool, sectors: &sectors, risk: &risk };
        let ps = build_positions(&input, SignalSpec::LowVol, &cfg).unwrap();
        assert!(ps.dollars[(exit - 1, 0)] != 0.0);
        assert_eq!(ps.dollars[(exit, 0)], ps.dollars[(exit - 1, 0)]);
        assert_eq!(ps.dollars[(exit + 1, 0)], 0.0);
    }

    #[test]
    fn metric_equal_to_minus_sigma_reproduces_low_vol() {
        let (t_len, n) = (260, 15);
        let r = market(t_len, n, 4);
        let pool = PoolCalendar::full("all", t_len, n);
        let cfg = small_cfg();
        let sectors = vec!["S".to_string(); n];
        let risk = RiskTable::compute(&r, &pool, &cfg.estimators, false).unwrap();
        let input = StrategyInput { returns: &r, pool: &pool, sectors: &sectors, risk: &risk };
        let lv = build_positions(&input, SignalSpec::LowVol, &cfg).unwrap();
        let metric = -risk.sigma.clone();
        let spec = SignalSpec::Metric { values: &metric, direction: Direction::Ascending, by_sector: false };
        let mv = build_positions(&input, spec, &cfg).unwrap();
        assert_eq!(lv.dollars, mv.dollars);
    }

    #[test]
    fn sector_variant_has_no_sector_nets() {
        let (t_len, n) = (260, 24);
        let r = market(t_len, n, 5);
        let pool = PoolCalendar::full("all", t_len, n);
        let cfg = small_cfg();
        let sectors: Vec<String> = (0..n).map(|i| format!("S{}", i % 3)).collect();
        let risk = RiskTable::compute(&r, &pool, &cfg.estimators, false).unwrap();
        let input = StrategyInput { returns: &r, pool: &pool, sectors: &sectors, risk: &risk };
        let ps = build_positions(&input, SignalSpec::SectorLowVol, &cfg).unwrap();
        assert!(ps.diagnostics.iter().all(|d| d.max_sector_net <= 0.05));
        assert!(ps.diagnostics.iter().all(|d| d.market_exposure_post.abs() <= 1e-8 * d.market_exposure_pre.abs()));
    }
}
