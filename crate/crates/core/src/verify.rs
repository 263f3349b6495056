//! Acceptance suite: closed-form oracles, accounting identities and
//! planted-effect recovery on synthetic markets.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{
    compound, compounding_ratio, dividend_attribution, dy_vol_correlation, perf_stats, recoup, run_backtest,
    BacktestOptions, CompoundingMeasure, PnlSeries, COMPOUNDING_HORIZONS,
};
use crate::data::{compute_returns, ReturnMode, ReturnPanel};
use crate::error::{Error, Result};
use crate::estimators::correlation::spike_inverse_with_bulk;
use crate::estimators::{
    index_returns, spike_inverse, spike_matrix, CorrelationModel, SignalVector,
};
use crate::factors::{
    build_factor, dy_decile_betas, ols, residualize, residualize_monthly, trailing_dividend_yield, FactorContext,
    FactorDefinition, FactorName, MetricTable, MonthlySeries, ResidualMode,
};
use crate::portfolio::{closed_form_ratio, markowitz_positions, SpikeMoments};
use crate::stats::{linear_fit, mean, pearson, variance, TRADING_DAYS};
use crate::strategy::{build_positions, PositionSeries, RiskTable, SignalSpec, StrategyConfig, StrategyInput};
use crate::synthetic::{
    draw_sigma, generate, oracle_beta, oracle_idio_var, DividendSpec, MarketSpec, SigmaDistribution, SyntheticMarket,
};

/// Seeds per stochastic criterion and the passes required among them.
pub const STOCHASTIC_SEEDS: u64 = 20;
pub const MIN_SEED_PASSES: usize = 18;

pub const SPIKE_INVERSE_TOL: f64 = 1e-10;
pub const RATIO_TOL: f64 = 0.05;
pub const RATIO_MEAN_RANGE: (f64, f64) = (0.25, 0.45);
pub const RATIO_DRAWS: u64 = 200;
pub const BETA_FIT_TOL: f64 = 0.05;
pub const VARIANCE_REL_TOL: f64 = 0.02;
pub const MIN_PAIR_CORRELATION: f64 = 0.8;
pub const PAIR_SEEDS: u64 = 10;
pub const LEG_TOL: f64 = 1e-12;
pub const PROJECTION_TOL: f64 = 1e-8;
pub const AM_GM_PATHS: usize = 10_000;
pub const DY_LINK: f64 = -0.2;
pub const DY_LINK_TOL: f64 = 0.03;
pub const MIN_DIVIDEND_ATTRIBUTION: f64 = 0.3;
pub const OLS_TOL: f64 = 1e-10;
pub const RESIDUAL_MAX_SHARPE: f64 = 0.2;
pub const RAW_MIN_SHARPE: f64 = 0.5;
pub const LAG_MAX_REL_CHANGE: f64 = 0.2;

/// Criterion identifiers in report order.
pub const CRITERIA: [&str; 10] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"];

/// Deliberate defects used to check that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Perturbs the bulk eigenvalue of the closed-form spike inverse.
    SpikeInverseConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// First seed of every Monte-Carlo criterion.
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 42, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{} {status} {} ({:.1} s): {}", self.id, self.title, self.seconds, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Runs every criterion in order.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    VerifyReport { criteria: CRITERIA.iter().map(|id| run_criterion(id, opts).expect("known id")).collect() }
}

/// Runs one criterion; domain errors are reported as failures.
pub fn run_criterion(id: &str, opts: &VerifyOptions) -> Result<CriterionResult> {
    let (title, check): (&str, fn(&VerifyOptions) -> Result<Outcome>) = match id {
        "A1" => ("spike inverse", a1_spike_inverse),
        "A2" => ("NMV/GMV closed form", a2_ratio),
        "A3" => ("one-factor beta oracle", a3_beta_oracle),
        "A4" => ("low-vol / low-beta correlation", a4_pair_correlation),
        "A5" => ("accounting identities", a5_accounting),
        "A6" => ("compounding primitives", a6_compounding),
        "A7" => ("dividend mechanism recovery", a7_dividends),
        "A8" => ("residualization", a8_residualization),
        "A9" => ("lag robustness", a9_lag),
        "A10" => ("determinism", a10_determinism),
        other => return Err(Error::param(format!("unknown criterion '{other}'"))),
    };
    let clock = Instant::now();
    let outcome = check(opts);
    let seconds = clock.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(o) => {
            let within = o.time_limit.is_none_or(|limit| seconds < limit);
            let timing = match o.time_limit {
                Some(limit) if !within => format!("; exceeded {limit} s"),
                _ => String::new(),
            };
            (o.passed && within, format!("{}{timing}", o.detail))
        }
        Err(e) => (false, format!("error: {e}")),
    };
    Ok(CriterionResult { id: id.to_string(), title: title.to_string(), passed, detail, seconds })
}

struct Outcome {
    passed: bool,
    detail: String,
    time_limit: Option<f64>,
}

fn outcome(passed: bool, detail: String, time_limit: Option<f64>) -> Result<Outcome> {
    Ok(Outcome { passed, detail, time_limit })
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    // mostly positive entries, like a market mode
    let v = DVector::from_fn(n, |_, _| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal));
    v.normalize()
}

fn a1_spike_inverse(opts: &VerifyOptions) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for n in [50usize, 200] {
        for frac in [0.2, 0.5] {
            let lambda0 = frac * n as f64;
            let v0 = random_unit(n, &mut rng);
            let c = spike_matrix(lambda0, &v0);
            let dense = c.clone().try_inverse().ok_or_else(|| Error::Singular("spike matrix".into()))?;
            let closed = match opts.fault {
                Some(Fault::SpikeInverseConstant) => {
                    let eps2 = (n as f64 - lambda0) / (n as f64 - 1.0);
                    spike_inverse_with_bulk(lambda0, eps2 * (1.0 + 1e-3), &v0)
                }
                None => spike_inverse(lambda0, &v0),
            };
            worst = worst.max(max_abs_diff(&closed, &dense));
        }
    }
    outcome(worst <= SPIKE_INVERSE_TOL, format!("max |closed - dense| = {worst:.2e} (tol {SPIKE_INVERSE_TOL:e})"), Some(1.0))
}

/// Constant-correlation world: flat market mode with `lambda0 = 1 + (N-1) rho0`.
fn flat_spike(n: usize, rho0: f64) -> Result<CorrelationModel> {
    let lambda0 = 1.0 + (n as f64 - 1.0) * rho0;
    CorrelationModel::spike((0..n).collect(), lambda0, DVector::from_element(n, 1.0 / (n as f64).sqrt()))
}

fn a2_ratio(opts: &VerifyOptions) -> Result<Outcome> {
    let n = 500;
    let dist = MarketSpec::default().sigma;
    let corr = flat_spike(n, MarketSpec::default().rho0)?;
    let draws: Vec<(f64, f64)> = (0..RATIO_DRAWS)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let sigma = draw_sigma(&dist, n, opts.seed.wrapping_add(k))?;
            let closed = closed_form_ratio(&SpikeMoments::from_sigma(&sigma)?)
                .ok_or_else(|| Error::Degenerate("closed-form ratio undefined".into()))?;
            // predictor proportional to 1/sigma
            let signal = SignalVector::new((0..n).collect(), sigma.iter().map(|s| 1.0 / s).collect());
            let book = markowitz_positions(&signal, &sigma, &corr, 1.0)?;
            let built = book.ratio().ok_or_else(|| Error::Degenerate("empty book".into()))?;
            Ok((closed, built))
        })
        .collect::<Result<_>>()?;
    let worst = draws.iter().map(|(c, b)| (c - b).abs()).fold(0.0, f64::max);
    let built: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let closed: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let m = mean(&built);
    let passed = worst <= RATIO_TOL && (RATIO_MEAN_RANGE.0..=RATIO_MEAN_RANGE.1).contains(&m);
    outcome(
        passed,
        format!(
            "{RATIO_DRAWS} draws: max |closed - built| = {worst:.4}; mean built {m:.4}, mean closed {:.4} (range [{}, {}])",
            mean(&closed),
            RATIO_MEAN_RANGE.0,
            RATIO_MEAN_RANGE.1
        ),
        Some(30.0),
    )
}

fn returns_of(m: &SyntheticMarket) -> Result<ReturnPanel> {
    compute_returns(&m.panel, ReturnMode::Total)
}

fn a3_beta_oracle(opts: &VerifyOptions) -> Result<Outcome> {
    let spec = MarketSpec { seed: opts.seed, ..Default::default() };
    let m = generate(&spec)?;
    let r = returns_of(&m)?;
    let index = index_returns(&r, &m.pool);
    let phi = &index[1..];
    let var_phi = variance(phi);
    let (betas, idio): (Vec<f64>, Vec<f64>) = (0..r.n_instruments())
        .into_par_iter()
        .map(|i| {
            let ri = r.column_slice(i, 1..r.n_days());
            let (b, a) = linear_fit(phi, ri).expect("index varies");
            let resid: Vec<f64> = ri.iter().zip(phi).map(|(y, x)| y - a - b * x).collect();
            (b, variance(&resid) * TRADING_DAYS)
        })
        .unzip();
    let predicted = oracle_beta(&m.sigma);
    let (slope, intercept) = linear_fit(&predicted, &betas).ok_or_else(|| Error::Degenerate("constant sigma".into()))?;
    let sigma_av = mean(&m.sigma);
    let phi_rel = var_phi * TRADING_DAYS / (spec.rho0 * sigma_av * sigma_av) - 1.0;
    let oracle_idio = oracle_idio_var(&m.sigma, spec.rho0);
    let idio_rel = mean(&idio.iter().zip(&oracle_idio).map(|(a, b)| a / b).collect::<Vec<_>>()) - 1.0;
    let passed = (slope - 1.0).abs() <= BETA_FIT_TOL
        && intercept.abs() <= BETA_FIT_TOL
        && phi_rel.abs() <= VARIANCE_REL_TOL
        && idio_rel.abs() <= VARIANCE_REL_TOL;
    outcome(
        passed,
        format!(
            "beta fit slope {slope:.4}, intercept {intercept:.4}; index variance rel. err {:.2}%; idiosyncratic variance rel. err {:.2}%",
            100.0 * phi_rel,
            100.0 * idio_rel
        ),
        Some(60.0),
    )
}

struct StrategyRun {
    low_vol: PnlSeries,
    low_beta: Option<PnlSeries>,
}

fn run_strategies(m: &SyntheticMarket, cfg: &StrategyConfig, with_beta: bool) -> Result<StrategyRun> {
    let r = returns_of(m)?;
    let risk = RiskTable::compute(&r, &m.pool, &cfg.estimators, with_beta)?;
    let input = StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk };
    let opts = BacktestOptions::default();
    let lv = build_positions(&input, SignalSpec::LowVol, cfg)?;
    let low_vol = run_backtest(&lv, &m.panel, &m.pool, &m.rates, &opts)?;
    let low_beta = if with_beta {
        let lb = build_positions(&input, SignalSpec::LowBeta, cfg)?;
        Some(run_backtest(&lb, &m.panel, &m.pool, &m.rates, &opts)?)
    } else {
        None
    };
    Ok(StrategyRun { low_vol, low_beta })
}

fn a4_pair_correlation(opts: &VerifyOptions) -> Result<Outcome> {
    let cfg = StrategyConfig::default();
    let mut corrs = Vec::new();
    for k in 0..PAIR_SEEDS {
        let m = generate(&MarketSpec { seed: opts.seed.wrapping_add(k), ..Default::default() })?;
        let run = run_strategies(&m, &cfg, true)?;
        let a = MonthlySeries::from_pnl(&run.low_vol);
        let b = MonthlySeries::from_pnl(run.low_beta.as_ref().expect("computed"));
        corrs.push(pearson(&a.values, &b.values).unwrap_or(f64::NAN));
    }
    let min = corrs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        corrs.iter().all(|c| *c > MIN_PAIR_CORRELATION),
        format!("monthly correlation over {PAIR_SEEDS} seeds: min {min:.3}, mean {:.3}", mean(&corrs)),
        Some(300.0),
    )
}

fn a5_accounting(opts: &VerifyOptions) -> Result<Outcome> {
    let spec = MarketSpec {
        n: 100,
        days: 2000,
        seed: opts.seed,
        rate: 0.03,
        dividends: Some(DividendSpec::default()),
        innovations: crate::synthetic::Innovations::StudentT { df: 4.0 },
        ..Default::default()
    };
    let m = generate(&spec)?;
    let r = returns_of(&m)?;
    let cfg = StrategyConfig::default();
    let risk = RiskTable::compute(&r, &m.pool, &cfg.estimators, false)?;
    let input = StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk };
    let pos = build_positions(&input, SignalSpec::LowVol, &cfg)?;
    let pnl = run_backtest(&pos, &m.panel, &m.pool, &m.rates, &BacktestOptions::default())?;

    // legs recomputed from closes, dividends and rates
    let rf = m.rates.daily_rates(m.panel.calendar(), 0..m.panel.n_days())?;
    let mut leg_err = 0.0f64;
    for (k, t1) in (pos.start + 1..m.panel.n_days()).enumerate() {
        let t = t1 - 1;
        let (mut price, mut div, mut fin) = (0.0, 0.0, 0.0);
        for i in 0..m.panel.n_instruments() {
            let x = pos.dollars[(t, i)];
            if x == 0.0 {
                continue;
            }
            let (p0, p1) = (m.panel.close(t, i), m.panel.close(t1, i));
            price += x * (p1 / p0 - 1.0);
            div += x * m.panel.dividend(t1, i) / p0;
            fin -= x * rf[t1];
        }
        let expected = price + div + fin;
        leg_err = leg_err
            .max((pnl.total[k] - expected).abs())
            .max((pnl.price[k] - price).abs())
            .max((pnl.dividend[k] - div).abs())
            .max((pnl.financing[k] - fin).abs())
            .max((pnl.total[k] - pnl.price[k] - pnl.dividend[k] - pnl.financing[k]).abs());
    }
    let projection = pos
        .diagnostics
        .iter()
        .map(|d| if d.market_exposure_pre > 0.0 { d.market_exposure_post.abs() / d.market_exposure_pre.abs() } else { 0.0 })
        .fold(0.0, f64::max);

    // positions up to a cut date ignore any later return
    let cut = pos.start + (m.panel.n_days() - pos.start) / 2;
    let mut shifted = r.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, 0.02).expect("valid");
    for t in cut + 1..r.n_days() {
        for i in 0..r.n_instruments() {
            shifted.set(t, i, r.get(t, i) * 1.5 + noise.sample(&mut rng));
        }
    }
    let risk2 = RiskTable::compute(&shifted, &m.pool, &cfg.estimators, false)?;
    let input2 = StrategyInput { returns: &shifted, risk: &risk2, ..input };
    let pos2 = build_positions(&input2, SignalSpec::LowVol, &cfg)?;
    let same = (0..=cut).all(|t| pos.dollars.row(t) == pos2.dollars.row(t));
    let changed = (cut + 1..r.n_days()).any(|t| pos.dollars.row(t) != pos2.dollars.row(t));

    outcome(
        leg_err <= LEG_TOL && projection <= PROJECTION_TOL && same && changed,
        format!(
            "max leg error {leg_err:.2e}; max post/pre market exposure {projection:.2e}; positions through cut unchanged: {same}, after cut changed: {changed}"
        ),
        None,
    )
}

fn two_group_sigma(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i < n / 2 { 0.15 } else { 0.5 }).collect()
}

/// Common daily drift of the compounding market (no decile differential).
const COMPOUNDING_DRIFT: f64 = 5e-4;

fn a6_compounding(opts: &VerifyOptions) -> Result<Outcome> {
    let c = compound(-0.20, 0.20);
    let rc = recoup(-0.20);
    // exact to the last bit of the decimal targets
    let exact = (c - -0.04).abs() <= 4.0 * f64::EPSILON * 0.04 && (rc - 0.25).abs() <= 4.0 * f64::EPSILON * 0.25;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut am_gm_violations = 0;
    for _ in 0..AM_GM_PATHS {
        let len = rng.random_range(2..50);
        let path: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
        let growth: f64 = path.iter().map(|r| 1.0 + r).product();
        let geometric = growth.powf(1.0 / len as f64) - 1.0;
        if geometric > mean(&path) + 1e-14 {
            am_gm_violations += 1;
        }
    }

    let (n, days) = (100, 2520);
    let sigma = two_group_sigma(n);
    let monotone: Vec<bool> = (0..STOCHASTIC_SEEDS)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let spec = MarketSpec {
                n,
                days,
                seed: opts.seed.wrapping_add(k),
                sigma: SigmaDistribution::Explicit { values: sigma.clone() },
                drift: COMPOUNDING_DRIFT,
                ..Default::default()
            };
            let m = generate(&spec)?;
            let r = returns_of(&m)?;
            let sig = DMatrix::from_fn(days, n, |_, i| m.sigma[i]);
            let ratios = compounding_ratio(&r, &sig, &m.pool, 1, &COMPOUNDING_HORIZONS, CompoundingMeasure::PerDayGeometric)?;
            let vals: Vec<f64> = ratios.iter().map(|(_, v)| v.unwrap_or(f64::NAN)).collect();
            Ok(vals.windows(2).all(|w| w[1] < w[0]))
        })
        .collect::<Result<_>>()?;
    let passes = monotone.iter().filter(|b| **b).count();
    outcome(
        exact && am_gm_violations == 0 && passes >= MIN_SEED_PASSES,
        format!(
            "compound(-0.2, 0.2) = {c:.17}, recoup(-0.2) = {rc:.17}; AM-GM violations {am_gm_violations}/{AM_GM_PATHS}; ratio decreasing in n on {passes}/{STOCHASTIC_SEEDS} seeds"
        ),
        None,
    )
}

struct DividendSeed {
    dy_corr: f64,
    sharpe: f64,
    attribution: f64,
    beta_slope: f64,
    beta_ends: (f64, f64),
    ls_index_corr: f64,
}

fn dividend_market(seed: u64) -> MarketSpec {
    MarketSpec { seed, dividends: Some(DividendSpec { link: DY_LINK, ..Default::default() }), ..Default::default() }
}

fn dividend_seed(seed: u64) -> Result<DividendSeed> {
    let m = generate(&dividend_market(seed))?;
    let r = returns_of(&m)?;
    let dy_corr = dy_vol_correlation(&m.panel, &r, &m.pool)?.correlation.unwrap_or(f64::NAN);
    let run = run_strategies(&m, &StrategyConfig::default(), false)?;
    let sharpe = perf_stats(&run.low_vol)?.sharpe;
    let attribution = dividend_attribution(&run.low_vol, true).unwrap_or(f64::NAN);
    let dy = trailing_dividend_yield(&m.panel);
    let index = index_returns(&r, &m.pool);
    let first = dy.row_iter().position(|row| row.iter().any(|v| v.is_finite())).unwrap_or(0);
    let report = dy_decile_betas(&r, &dy, &m.pool, first, 21, &index)?;
    let deciles: Vec<f64> = (1..=report.betas.len()).map(|d| d as f64).collect();
    let (beta_slope, _) = linear_fit(&deciles, &report.betas).unwrap_or((f64::NAN, f64::NAN));
    Ok(DividendSeed {
        dy_corr,
        sharpe,
        attribution,
        beta_slope,
        beta_ends: (report.betas[0], *report.betas.last().expect("ten deciles")),
        ls_index_corr: report.long_short_index_corr.unwrap_or(f64::NAN),
    })
}

fn a7_dividends(opts: &VerifyOptions) -> Result<Outcome> {
    let seeds: Vec<DividendSeed> = (0..STOCHASTIC_SEEDS)
        .map(|k| dividend_seed(opts.seed.wrapping_add(k)))
        .collect::<Result<_>>()?;
    let corrs: Vec<f64> = seeds.iter().map(|s| s.dy_corr).collect();
    let mean_corr = mean(&corrs);
    let corr_ok = (mean_corr - DY_LINK).abs() <= DY_LINK_TOL;
    let carry = seeds.iter().filter(|s| s.sharpe > 0.0 && s.attribution > MIN_DIVIDEND_ATTRIBUTION).count();
    let decreasing = seeds.iter().filter(|s| s.beta_slope < 0.0 && s.beta_ends.0 > s.beta_ends.1).count();
    let ls = seeds.iter().filter(|s| s.ls_index_corr < 0.0).count();
    outcome(
        corr_ok && carry >= MIN_SEED_PASSES && decreasing >= MIN_SEED_PASSES,
        format!(
            "DY-sigma correlation mean {mean_corr:.3} (range {:.3}..{:.3}, target {DY_LINK} +- {DY_LINK_TOL}); Sharpe > 0 and dividend share > {MIN_DIVIDEND_ATTRIBUTION} on {carry}/{STOCHASTIC_SEEDS}; median Sharpe {:.2}; DY-decile beta decreasing on {decreasing}/{STOCHASTIC_SEEDS}; high-minus-low DY index correlation < 0 on {ls}/{STOCHASTIC_SEEDS}",
            corrs.iter().copied().fold(f64::INFINITY, f64::min),
            corrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            crate::stats::median(&seeds.iter().map(|s| s.sharpe).collect::<Vec<_>>()),
        ),
        None,
    )
}

/// Dividend link of the market where the dividend-yield factor drives the
/// low-volatility strategy.
const PLANTED_DP_LINK: f64 = -0.8;

fn a8_residualization(opts: &VerifyOptions) -> Result<Outcome> {
    // random regression against an independent normal-equations solve
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (rows, k) = (240, 4);
    let x: Vec<Vec<f64>> = (0..k).map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let truth = [0.3, -1.2, 0.7, 2.0];
    let y: Vec<f64> = (0..rows)
        .map(|r| 0.1 + (0..k).map(|j| truth[j] * x[j][r]).sum::<f64>() + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let names: Vec<String> = (0..k).map(|j| format!("X{j}")).collect();
    let coef = ols(&y, &x, &names)?;
    let design = DMatrix::from_fn(rows, k + 1, |r, j| if j == 0 { 1.0 } else { x[j - 1][r] });
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_vec(y.clone());
    let oracle = xtx.lu().solve(&xty).ok_or_else(|| Error::Singular("normal equations".into()))?;
    let coef_err = coef.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let months: Vec<(i32, u32)> = (0..rows).map(|r| (2000 + (r / 12) as i32, (r % 12) as u32 + 1)).collect();
    let rep = residualize_monthly(&months, &y, &x, &names, ResidualMode::FullSample)?;
    let resid_corr = rep.residual_correlations.iter().fold(0.0f64, |a, c| a.max(c.abs()));

    // dividend-yield factor driving the low-volatility strategy
    // cash earns the average yield, so only the cross-sectional yield tilt pays
    let dividends = DividendSpec { link: PLANTED_DP_LINK, ..Default::default() };
    let spec = MarketSpec { seed: opts.seed, rate: dividends.mean_yield, dividends: Some(dividends), ..Default::default() };
    let m = generate(&spec)?;
    let r = returns_of(&m)?;
    let cfg = StrategyConfig::default();
    let risk = RiskTable::compute(&r, &m.pool, &cfg.estimators, false)?;
    // the planted yield plays the role of a vendor dividend-to-price metric
    let mut metrics = MetricTable::default();
    metrics.insert("dividend_to_price", DMatrix::from_fn(r.n_days(), r.n_instruments(), |_, i| m.dividend_yield[i]));
    let ctx = FactorContext {
        input: StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk },
        panel: &m.panel,
        rates: &m.rates,
        metrics: &metrics,
        config: &cfg,
        backtest: BacktestOptions::default(),
    };
    let lv = build_factor(&FactorDefinition::standard(FactorName::Lowvol), &ctx)?;
    let dp = build_factor(&FactorDefinition::standard(FactorName::Dp), &ctx)?;
    let mkt = build_factor(&FactorDefinition::standard(FactorName::Mkt), &ctx)?;
    let planted = residualize(&("LOWVOL", &lv.pnl), &[("MKT", &mkt.pnl), ("DP", &dp.pnl)], ResidualMode::FullSample)?;
    let dp_only = residualize(&("LOWVOL", &lv.pnl), &[("DP", &dp.pnl)], ResidualMode::FullSample)?;
    let raw = planted.target_sharpe.unwrap_or(f64::NAN);
    let res = planted.residual_sharpe.unwrap_or(f64::NAN);
    outcome(
        coef_err <= OLS_TOL && resid_corr <= OLS_TOL && raw > RAW_MIN_SHARPE && res.abs() < RESIDUAL_MAX_SHARPE,
        format!(
            "max |coef - normal equations| {coef_err:.2e}; max |corr(residual, regressor)| {resid_corr:.2e}; planted DP: LOWVOL Sharpe {raw:.3} -> residual on MKT + DP {res:.3} (coefficients {:.3}, {:.3}), on DP alone {:.3}",
            planted.coefficients[0],
            planted.coefficients[1],
            dp_only.residual_sharpe.unwrap_or(f64::NAN)
        ),
        None,
    )
}

fn a9_lag(opts: &VerifyOptions) -> Result<Outcome> {
    let m = generate(&dividend_market(opts.seed))?;
    let base = StrategyConfig::default();
    let mut lagged = base;
    lagged.estimators.lag = 2 * base.estimators.lag;
    let s20 = perf_stats(&run_strategies(&m, &base, false)?.low_vol)?.sharpe;
    let s40 = perf_stats(&run_strategies(&m, &lagged, false)?.low_vol)?.sharpe;
    let rel = (s40 - s20).abs() / s20.abs();
    outcome(
        rel < LAG_MAX_REL_CHANGE,
        format!("Sharpe lag {}: {s20:.3}, lag {}: {s40:.3}, relative change {:.1}%", base.estimators.lag, lagged.estimators.lag, 100.0 * rel),
        None,
    )
}

fn pipeline_bits(seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    let spec = MarketSpec { n: 80, days: 900, seed, dividends: Some(DividendSpec::default()), ..Default::default() };
    let m = generate(&spec)?;
    let mut cfg = StrategyConfig::default();
    cfg.estimators.corr_window = 250;
    let r = returns_of(&m)?;
    let risk = RiskTable::compute(&r, &m.pool, &cfg.estimators, true)?;
    let input = StrategyInput { returns: &r, pool: &m.pool, sectors: m.panel.sectors(), risk: &risk };
    let pos: PositionSeries = build_positions(&input, SignalSpec::LowBeta, &cfg)?;
    let pnl = run_backtest(&pos, &m.panel, &m.pool, &m.rates, &BacktestOptions::default())?;
    let closes = m.panel.to_series().iter().flat_map(|s| s.close.clone()).map(f64::to_bits).collect();
    let pnl_bits = pnl.total.iter().chain(pos.dollars.iter()).map(|v| v.to_bits()).collect();
    Ok((closes, pnl_bits))
}

fn a10_determinism(opts: &VerifyOptions) -> Result<Outcome> {
    let first = pipeline_bits(opts.seed)?;
    let again = pipeline_bits(opts.seed)?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::param(e.to_string()))?
        .install(|| pipeline_bits(opts.seed))?;
    let other = pipeline_bits(opts.seed.wrapping_add(1))?;
    let passed = first == again && first == single && first != other;
    outcome(
        passed,
        format!(
            "re-run identical: {}; single-thread identical: {}; other seed differs: {}",
            first == again,
            first == single,
            first != other
        ),
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_inverse_criterion_detects_fault() {
        let ok = run_criterion("A1", &VerifyOptions::default()).unwrap();
        assert!(ok.passed, "{ok}");
        let bad = run_criterion("A1", &VerifyOptions { fault: Some(Fault::SpikeInverseConstant), ..Default::default() }).unwrap();
        assert!(!bad.passed, "{bad}");
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        assert!(run_criterion("A11", &VerifyOptions::default()).is_err());
    }
}
