//! CSV ingestion and canonical emission.
//!
//! All files are UTF-8 with a header row:
//! `prices.csv` (date,instrument,close), `dividends.csv` (date,instrument,amount),
//! `membership.csv` (date,pool,instrument), `sectors.csv` (instrument,sector),
//! `rates.csv` (date,annual_rate).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{InstrumentSeries, MarketPanel, PoolCalendar, RiskFreeCurve};
use crate::error::{Error, Result};
use crate::output::AtomicWriter;

const DEFAULT_CURRENCY: &str = "XXX";

#[derive(Debug, Clone)]
pub struct DataFiles {
    pub prices: PathBuf,
    pub dividends: PathBuf,
    pub membership: PathBuf,
    pub sectors: PathBuf,
}

/// A loaded, calendar-aligned data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub panel: MarketPanel,
    pub pools: BTreeMap<String, PoolCalendar>,
}

impl Dataset {
    pub fn pool(&self, name: Option<&str>) -> Result<&PoolCalendar> {
        match name {
            Some(n) => self.pools.get(n).ok_or_else(|| Error::invalid(format!("unknown pool '{n}'"))),
            None if self.pools.len() == 1 => Ok(self.pools.values().next().expect("one pool")),
            None => Err(Error::param(format!(
                "{} pools present; a pool name is required",
                self.pools.len()
            ))),
        }
    }
}

pub(crate) struct Rows {
    file: String,
    reader: csv::Reader<std::fs::File>,
}

impl Rows {
    pub(crate) fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let found: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if found != header {
            return Err(Error::Parse {
                file,
                line: 1,
                message: format!("expected header {}, found {}", header.join(","), found.join(",")),
            });
        }
        Ok(Self { file, reader })
    }

    pub(crate) fn for_each(mut self, mut f: impl FnMut(&str, u64, &csv::StringRecord) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(&self.file, line, &record)?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(Error::Parse {
                        file: self.file.clone(),
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
}

pub(crate) fn parse_err(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_owned(),
        line,
        message: message.into(),
    }
}

pub(crate) fn field<'a>(file: &str, line: u64, rec: &'a csv::StringRecord, k: usize) -> Result<&'a str> {
    match rec.get(k) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(parse_err(file, line, format!("missing field {}", k + 1))),
    }
}

pub(crate) fn parse_date(file: &str, line: u64, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| parse_err(file, line, format!("bad date '{s}': {e}")))
}

pub(crate) fn parse_f64(file: &str, line: u64, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|e| parse_err(file, line, format!("bad number '{s}': {e}")))?;
    if !v.is_finite() {
        return Err(parse_err(file, line, format!("non-finite number '{s}'")));
    }
    Ok(v)
}

/// Load prices, dividends, pool membership and sectors into an aligned panel.
pub fn load_panel(files: &DataFiles) -> Result<Dataset> {
    let mut sectors: HashMap<String, String> = HashMap::new();
    Rows::open(&files.sectors, &["instrument", "sector"])?.for_each(|file, line, rec| {
        let id = field(file, line, rec, 0)?;
        let sector = field(file, line, rec, 1)?;
        if sectors.insert(id.to_owned(), sector.to_owned()).is_some() {
            return Err(parse_err(file, line, format!("duplicate sector row for {id}")));
        }
        Ok(())
    })?;

    let mut prices: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    Rows::open(&files.prices, &["date", "instrument", "close"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let id = field(file, line, rec, 1)?;
        let close = parse_f64(file, line, field(file, line, rec, 2)?)?;
        if close <= 0.0 {
            return Err(parse_err(file, line, format!("non-positive close {close} for {id}")));
        }
        if prices.entry(id.to_owned()).or_default().insert(date, close).is_some() {
            return Err(Error::Duplicate {
                file: file.to_owned(),
                line,
                date: date.to_string(),
                instrument: id.to_owned(),
            });
        }
        Ok(())
    })?;
    if prices.is_empty() {
        return Err(Error::insufficient(format!("{}: no price rows", files.prices.display())));
    }

    let mut dividends: HashMap<(String, NaiveDate), f64> = HashMap::new();
    Rows::open(&files.dividends, &["date", "instrument", "amount"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let id = field(file, line, rec, 1)?;
        let amount = parse_f64(file, line, field(file, line, rec, 2)?)?;
        if amount < 0.0 {
            return Err(parse_err(file, line, format!("negative dividend {amount} for {id}")));
        }
        if !prices.get(id).is_some_and(|p| p.contains_key(&date)) {
            return Err(parse_err(file, line, format!("dividend for {id} on {date} has no matching close")));
        }
        if dividends.insert((id.to_owned(), date), amount).is_some() {
            return Err(Error::Duplicate {
                file: file.to_owned(),
                line,
                date: date.to_string(),
                instrument: id.to_owned(),
            });
        }
        Ok(())
    })?;

    let mut series = Vec::with_capacity(prices.len());
    for (id, rows) in &prices {
        let sector = sectors
            .get(id)
            .ok_or_else(|| Error::invalid(format!("{}: no sector for {id}", files.sectors.display())))?;
        let dates: Vec<NaiveDate> = rows.keys().copied().collect();
        let close: Vec<f64> = rows.values().copied().collect();
        let dividend = dates
            .iter()
            .map(|d| dividends.get(&(id.clone(), *d)).copied().unwrap_or(0.0))
            .collect();
        series.push(InstrumentSeries::new(id.clone(), sector.clone(), DEFAULT_CURRENCY, dates, close, dividend)?);
    }
    let panel = MarketPanel::from_series(&series)?;

    let mut snapshots: BTreeMap<String, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    let mut seen: std::collections::HashSet<(String, NaiveDate, String)> = Default::default();
    Rows::open(&files.membership, &["date", "pool", "instrument"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let pool = field(file, line, rec, 1)?;
        let id = field(file, line, rec, 2)?;
        let t = panel
            .date_index(date)
            .ok_or_else(|| parse_err(file, line, format!("membership date {date} is not a trading day")))?;
        let i = panel
            .index_of(id)
            .ok_or_else(|| parse_err(file, line, format!("member {id} has no prices")))?;
        if !seen.insert((pool.to_owned(), date, id.to_owned())) {
            return Err(Error::Duplicate {
                file: file.to_owned(),
                line,
                date: date.to_string(),
                instrument: id.to_owned(),
            });
        }
        snapshots.entry(pool.to_owned()).or_default().entry(t).or_default().push(i);
        Ok(())
    })?;
    if snapshots.is_empty() {
        return Err(Error::Membership(format!("{}: no membership rows", files.membership.display())));
    }

    let mut pools = BTreeMap::new();
    for (name, snaps) in snapshots {
        let snaps: Vec<(usize, Vec<usize>)> = snaps.into_iter().collect();
        let pool = PoolCalendar::from_snapshots(name.clone(), panel.n_days(), panel.n_instruments(), &snaps, None)?;
        let first = pool.first_active_day().expect("pool has at least one snapshot");
        pool.check_non_empty(first..panel.n_days(), panel.calendar())?;
        pools.insert(name, pool);
    }
    Ok(Dataset { panel, pools })
}

/// Load `rates.csv` (date,annual_rate).
pub fn load_rates(path: &Path) -> Result<RiskFreeCurve> {
    let mut rows: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    Rows::open(path, &["date", "annual_rate"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let rate = parse_f64(file, line, field(file, line, rec, 1)?)?;
        if rows.insert(date, rate).is_some() {
            return Err(Error::Duplicate {
                file: file.to_owned(),
                line,
                date: date.to_string(),
                instrument: "-".into(),
            });
        }
        Ok(())
    })?;
    RiskFreeCurve::new(rows.keys().copied().collect(), rows.values().copied().collect())
}

pub(crate) fn writer(path: &Path, header: &str) -> Result<AtomicWriter> {
    let mut w = AtomicWriter::create(path)?;
    writeln!(w, "{header}")?;
    Ok(w)
}

/// Emit every observed close, date-major then in instrument order.
pub fn write_prices(panel: &MarketPanel, path: &Path) -> Result<()> {
    let mut w = writer(path, "date,instrument,close")?;
    for t in 0..panel.n_days() {
        for i in 0..panel.n_instruments() {
            if panel.is_observed(t, i) {
                writeln!(w, "{},{},{}", panel.calendar()[t], panel.ids()[i], panel.close(t, i))?;
            }
        }
    }
    w.finish()
}

/// Emit non-zero dividends only.
pub fn write_dividends(panel: &MarketPanel, path: &Path) -> Result<()> {
    let mut w = writer(path, "date,instrument,amount")?;
    for t in 0..panel.n_days() {
        for i in 0..panel.n_instruments() {
            let d = panel.dividend(t, i);
            if d != 0.0 {
                writeln!(w, "{},{},{}", panel.calendar()[t], panel.ids()[i], d)?;
            }
        }
    }
    w.finish()
}

/// Emit one snapshot per membership change.
pub fn write_membership(panel: &MarketPanel, pools: &[&PoolCalendar], path: &Path) -> Result<()> {
    let mut w = writer(path, "date,pool,instrument")?;
    for pool in pools {
        let mut prev: Option<Vec<usize>> = None;
        for t in 0..pool.n_days() {
            let members = pool.members(t);
            if members.is_empty() || prev.as_ref() == Some(&members) {
                prev = Some(members);
                continue;
            }
            for &i in &members {
                writeln!(w, "{},{},{}", panel.calendar()[t], pool.name(), panel.ids()[i])?;
            }
            prev = Some(members);
        }
    }
    w.finish()
}

pub fn write_sectors(panel: &MarketPanel, path: &Path) -> Result<()> {
    let mut w = writer(path, "instrument,sector")?;
    for (id, sector) in panel.ids().iter().zip(panel.sectors()) {
        writeln!(w, "{id},{sector}")?;
    }
    w.finish()
}

pub fn write_rates(curve: &RiskFreeCurve, path: &Path) -> Result<()> {
    let mut w = writer(path, "date,annual_rate")?;
    for (d, r) in curve.dates().iter().zip(curve.annual()) {
        writeln!(w, "{d},{r}")?;
    }
    w.finish()
}
