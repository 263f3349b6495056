//! One-factor Monte-Carlo market with a controllable volatility
//! distribution, common pairwise correlation and dividend-yield linkage.

use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{
    write_dividends, write_membership, write_prices, write_rates, write_sectors, InstrumentSeries, MarketPanel,
    PoolCalendar, RiskFreeCurve,
};
use crate::error::{Error, Result};
use crate::stats::{mean, pearson, std_dev, TRADING_DAYS};

/// Trading days between two dividend payments of an instrument.
pub const DIVIDEND_PERIOD: usize = 63;
/// Floor on a simulated daily price return.
const MIN_DAILY_RETURN: f64 = -0.95;
const INITIAL_CLOSE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SigmaDistribution {
    /// Annualized volatilities drawn from an inverse gamma law
    /// (mean `scale / (shape - 1)`).
    InverseGamma { shape: f64, scale: f64 },
    /// Fixed annualized volatilities, one per instrument.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Innovations {
    Gaussian,
    /// Unit-variance Student-t with `df > 2` degrees of freedom.
    StudentT { df: f64 },
}

/// Dividend yields `DY_i = mean (1 + spread (2 Phi(z_i) - 1))`, uniform on
/// `mean (1 +- spread)`, with `z_i` a noisy normal score of `1/sigma_i`
/// tuned so that `corr(DY, sigma) = link` on the drawn sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DividendSpec {
    pub mean_yield: f64,
    pub spread: f64,
    pub link: f64,
}

impl Default for DividendSpec {
    fn default() -> Self {
        Self { mean_yield: 0.03, spread: 0.9, link: -0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSpec {
    pub n: usize,
    pub days: usize,
    /// Common pairwise correlation.
    pub rho0: f64,
    pub sigma: SigmaDistribution,
    pub dividends: Option<DividendSpec>,
    /// Daily ex-dividend drift common to every instrument.
    pub drift: f64,
    /// Extra daily drift per volatility decile (first = most volatile).
    pub drift_by_decile: Option<Vec<f64>>,
    pub innovations: Innovations,
    pub seed: u64,
    /// Constant annual risk-free rate.
    pub rate: f64,
    pub sectors: usize,
    pub start: NaiveDate,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            n: 500,
            days: 5000,
            rho0: 0.3,
            sigma: SigmaDistribution::InverseGamma { shape: 6.0, scale: 1.5 },
            dividends: None,
            drift: 0.0,
            drift_by_decile: None,
            innovations: Innovations::Gaussian,
            seed: 42,
            rate: 0.0,
            sectors: 10,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        }
    }
}

impl MarketSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.days < 2 {
            return Err(Error::param("synthetic market needs n >= 2 and days >= 2"));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return Err(Error::param(format!("rho0 = {} outside (0, 1)", self.rho0)));
        }
        match &self.sigma {
            SigmaDistribution::InverseGamma { shape, scale } => {
                if !(*shape > 4.0 && *scale > 0.0) {
                    return Err(Error::param("inverse gamma needs shape > 4 and scale > 0"));
                }
            }
            SigmaDistribution::Explicit { values } => {
                if values.len() != self.n || values.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::param("explicit volatilities must be n positive values"));
                }
            }
        }
        if let Some(d) = &self.dividends {
            if !(d.mean_yield >= 0.0 && (0.0..=1.0).contains(&d.spread) && (-1.0..=1.0).contains(&d.link)) {
                return Err(Error::param("dividend spec needs mean_yield >= 0, spread in [0, 1], link in [-1, 1]"));
            }
        }
        if let Some(d) = &self.drift_by_decile {
            if d.len() != 10 {
                return Err(Error::param("drift_by_decile needs 10 values"));
            }
        }
        if let Innovations::StudentT { df } = self.innovations {
            if !(df > 2.0) {
                return Err(Error::param("student-t innovations need df > 2"));
            }
        }
        if self.sectors == 0 {
            return Err(Error::param("at least one sector is required"));
        }
        if !self.rate.is_finite() || !self.drift.is_finite() {
            return Err(Error::param("rate and drift must be finite"));
        }
        Ok(())
    }
}

/// A generated market and the parameters behind it.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub spec: MarketSpec,
    pub panel: MarketPanel,
    pub pool: PoolCalendar,
    pub rates: RiskFreeCurve,
    /// Annualized volatility of each instrument.
    pub sigma: Vec<f64>,
    /// Annual dividend yield of each instrument.
    pub dividend_yield: Vec<f64>,
    /// Daily ex-dividend drift of each instrument.
    pub drift: Vec<f64>,
    /// Unit-variance common factor (sample mean 0, variance 1).
    pub factor: Vec<f64>,
}

impl SyntheticMarket {
    /// Writes the market in the standard CSV layout (prices, dividends,
    /// membership, sectors, rates).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_prices(&self.panel, &dir.join("prices.csv"))?;
        write_dividends(&self.panel, &dir.join("dividends.csv"))?;
        write_membership(&self.panel, &[&self.pool], &dir.join("membership.csv"))?;
        write_sectors(&self.panel, &dir.join("sectors.csv"))?;
        write_rates(&self.rates, &dir.join("rates.csv"))?;
        Ok(())
    }
}

/// Monday-to-Friday calendar of `days` dates from `start` on.
pub fn business_days(start: NaiveDate, days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(days);
    let mut d = start;
    while out.len() < days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const SIGMA_STREAM: u64 = 1;
const FACTOR_STREAM: u64 = 2;
const DIVIDEND_STREAM: u64 = 3;
const INSTRUMENT_STREAM: u64 = 16;

/// Annualized volatilities of `n` instruments, as drawn by [`generate`] for
/// `seed`.
pub fn draw_sigma(dist: &SigmaDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    match dist {
        SigmaDistribution::InverseGamma { shape, scale } => {
            let gamma = Gamma::new(*shape, 1.0).map_err(|e| Error::param(e.to_string()))?;
            let mut rng = stream(seed, SIGMA_STREAM);
            Ok((0..n).map(|_| scale / gamma.sample(&mut rng)).collect())
        }
        SigmaDistribution::Explicit { values } if values.len() == n => Ok(values.clone()),
        SigmaDistribution::Explicit { .. } => Err(Error::param("explicit volatilities must be n values")),
    }
}

/// Generates the market described by `spec`; deterministic per seed and
/// independent of the number of threads.
pub fn generate(spec: &MarketSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let (n, days) = (spec.n, spec.days);
    let sigma = draw_sigma(&spec.sigma, n, spec.seed)?;
    let dividend_yield = match &spec.dividends {
        Some(d) => dividend_yields(&sigma, d, &mut stream(spec.seed, DIVIDEND_STREAM))?,
        None => vec![0.0; n],
    };
    let drift = instrument_drifts(spec, &sigma);

    let mut rng = stream(spec.seed, FACTOR_STREAM);
    let raw: Vec<f64> = (0..days).map(|_| innovation(spec.innovations, &mut rng)).collect();
    let (m, sd) = (mean(&raw[1..]), std_dev(&raw[1..]));
    // day 0 carries the initial price only
    let factor: Vec<f64> = raw.iter().enumerate().map(|(t, f)| if t == 0 { 0.0 } else { (f - m) / sd }).collect();

    let calendar = business_days(spec.start, days);
    let (load, idio) = (spec.rho0.sqrt(), (1.0 - spec.rho0).sqrt());
    let series: Vec<InstrumentSeries> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, INSTRUMENT_STREAM + i as u64);
            let daily_sigma = sigma[i] / TRADING_DAYS.sqrt();
            let mut close = Vec::with_capacity(days);
            let mut dividend = vec![0.0; days];
            close.push(INITIAL_CLOSE);
            for t in 1..days {
                let e = innovation(spec.innovations, &mut rng);
                let r = (drift[i] + daily_sigma * (load * factor[t] + idio * e)).max(MIN_DAILY_RETURN);
                let prev = close[t - 1];
                close.push(prev * (1.0 + r));
                if (t + i) % DIVIDEND_PERIOD == 0 {
                    dividend[t] = dividend_yield[i] / 4.0 * prev;
                }
            }
            InstrumentSeries::new(
                format!("SYN{i:04}"),
                format!("SEC{:02}", i % spec.sectors),
                "USD",
                calendar.clone(),
                close,
                dividend,
            )
        })
        .collect::<Result<_>>()?;
    let panel = MarketPanel::from_series(&series)?;
    let pool = PoolCalendar::full("SYN", days, n);
    let rates = RiskFreeCurve::constant(&calendar, spec.rate);
    Ok(SyntheticMarket { spec: spec.clone(), panel, pool, rates, sigma, dividend_yield, drift, factor })
}

fn innovation(kind: Innovations, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        Innovations::Gaussian => StandardNormal.sample(rng),
        Innovations::StudentT { df } => {
            let t: f64 = StudentT::new(df).expect("validated df").sample(rng);
            t * ((df - 2.0) / df).sqrt()
        }
    }
}

fn instrument_drifts(spec: &MarketSpec, sigma: &[f64]) -> Vec<f64> {
    let mut drift = vec![spec.drift; sigma.len()];
    if let Some(extra) = &spec.drift_by_decile {
        let n = sigma.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        for (p, &i) in order.iter().enumerate() {
            drift[i] += extra[p * 10 / n];
        }
    }
    drift
}

/// Normal scores of the ranks of `values` (average ranks on ties).
fn normal_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let std = Normal::standard();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && values[order[j + 1]] == values[order[k]] {
            j += 1;
        }
        let r = (k + j) as f64 / 2.0 + 1.0;
        for &o in &order[k..=j] {
            ranks[o] = r;
        }
        k = j + 1;
    }
    ranks.iter().map(|r| std.inverse_cdf(r / (n as f64 + 1.0))).collect()
}

fn standardize(xs: &[f64]) -> Vec<f64> {
    let (m, sd) = (mean(xs), std_dev(xs));
    xs.iter().map(|x| (x - m) / sd).collect()
}

fn dividend_yields(sigma: &[f64], spec: &DividendSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = sigma.len();
    if spec.mean_yield == 0.0 || spec.spread == 0.0 {
        if spec.link != 0.0 {
            return Err(Error::param("a non-zero dividend link needs dispersed yields"));
        }
        return Ok(vec![spec.mean_yield; n]);
    }
    let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
    let signal = standardize(&normal_scores(&inv));
    let noise_raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let noise = standardize(&noise_raw);
    let std = Normal::standard();
    let yields = |a: f64| -> Vec<f64> {
        let b = (1.0 - a * a).max(0.0).sqrt();
        signal
            .iter()
            .zip(&noise)
            .map(|(u, e)| spec.mean_yield * (1.0 + spec.spread * (2.0 * std.cdf(a * u + b * e) - 1.0)))
            .collect()
    };
    let corr = |a: f64| pearson(&yields(a), sigma).unwrap_or(0.0);
    // corr decreases as the weight on 1/sigma grows
    let (mut lo, mut hi) = (-1.0, 1.0);
    let (c_lo, c_hi) = (corr(lo), corr(hi));
    if spec.link > c_lo || spec.link < c_hi {
        return Err(Error::param(format!(
            "dividend link {} not attainable: range [{c_hi:.4}, {c_lo:.4}] for this volatility sample",
            spec.link
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if corr(mid) > spec.link {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(yields(0.5 * (lo + hi)))
}

/// Betas implied by the constant-correlation world: `sigma_i / sigma_av`.
pub fn oracle_beta(sigma: &[f64]) -> Vec<f64> {
    let av = mean(sigma);
    sigma.iter().map(|s| s / av).collect()
}

/// Idiosyncratic variance implied by the constant-correlation world:
/// `sigma_i^2 (1 - rho0)`.
pub fn oracle_idio_var(sigma: &[f64], rho0: f64) -> Vec<f64> {
    sigma.iter().map(|s| s * s * (1.0 - rho0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_returns, ReturnMode};

    fn small(seed: u64) -> MarketSpec {
        MarketSpec { n: 60, days: 400, seed, dividends: Some(DividendSpec::default()), ..Default::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(7)).unwrap();
        let b = generate(&small(7)).unwrap();
        let c = generate(&small(8)).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| generate(&small(3)).unwrap());
        let b = generate(&small(3)).unwrap();
        assert_eq!(a.panel, b.panel);
    }

    #[test]
    fn dividend_link_is_hit_exactly() {
        let m = generate(&small(1)).unwrap();
        let c = pearson(&m.dividend_yield, &m.sigma).unwrap();
        assert!((c + 0.2).abs() < 1e-9, "{c}");
        let d = DividendSpec::default();
        assert!(m.dividend_yield.iter().all(|y| *y >= d.mean_yield * (1.0 - d.spread) && *y <= d.mean_yield * (1.0 + d.spread)));
    }

    #[test]
    fn infeasible_link_is_an_error() {
        let spec = MarketSpec { dividends: Some(DividendSpec { link: -0.999, ..Default::default() }), ..small(1) };
        assert!(matches!(generate(&spec), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn factor_is_moment_matched_and_dividends_quarterly() {
        let m = generate(&small(2)).unwrap();
        assert!(mean(&m.factor[1..]).abs() < 1e-12);
        assert!((std_dev(&m.factor[1..]) - 1.0).abs() < 1e-12);
        let paid = (0..m.panel.n_days()).filter(|&t| m.panel.dividend(t, 0) > 0.0).count();
        assert_eq!(paid, (m.panel.n_days() - 1) / DIVIDEND_PERIOD);
        let r = compute_returns(&m.panel, ReturnMode::Price).unwrap();
        assert!(r.get(1, 0).is_finite());
    }

    #[test]
    fn tiny_rho_gives_near_identity_correlations() {
        let spec = MarketSpec { n: 20, days: 3000, rho0: 1e-6, ..Default::default() };
        let m = generate(&spec).unwrap();
        let r = compute_returns(&m.panel, ReturnMode::Price).unwrap();
        let cols: Vec<Vec<f64>> = (0..20).map(|i| r.column_slice(i, 1..3000).to_vec()).collect();
        for i in 0..20 {
            for j in 0..i {
                assert!(pearson(&cols[i], &cols[j]).unwrap().abs() < 4.0 / 3000f64.sqrt());
            }
        }
    }

    #[test]
    fn oracles() {
        assert_eq!(oracle_beta(&[0.2, 0.2]), vec![1.0, 1.0]);
        let b = oracle_beta(&[0.1, 0.2, 0.6]);
        assert!((b.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!(oracle_idio_var(&[0.3], 1.0)[0] == 0.0);
    }

    #[test]
    fn business_calendar_skips_weekends() {
        let cal = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(), 6);
        assert_eq!(cal[5], NaiveDate::from_ymd_opt(2000, 1, 10).unwrap());
    }
}
