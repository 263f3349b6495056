//! Per-instrument fundamental metrics: `metrics.csv` (date,instrument,metric,value).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::data::io::{field, parse_date, parse_err, parse_f64, writer, Rows};
use crate::data::MarketPanel;
use crate::error::{Error, Result};

/// Metric name -> `T x N` table on the panel calendar, forward-filled from
/// each observation (`NaN` before the first one).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub tables: BTreeMap<String, DMatrix<f64>>,
}

impl MetricTable {
    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.tables.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, values: DMatrix<f64>) {
        self.tables.insert(name.into(), values);
    }
}

pub fn load_metrics(path: &Path, panel: &MarketPanel) -> Result<MetricTable> {
    let (t_len, n) = (panel.n_days(), panel.n_instruments());
    let mut raw: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    let mut seen: BTreeMap<(String, usize, usize), u64> = BTreeMap::new();
    Rows::open(path, &["date", "instrument", "metric", "value"])?.for_each(|file, line, rec| {
        let date = parse_date(file, line, field(file, line, rec, 0)?)?;
        let id = field(file, line, rec, 1)?;
        let metric = field(file, line, rec, 2)?;
        let value = parse_f64(file, line, field(file, line, rec, 3)?)?;
        let i = panel.index_of(id).ok_or_else(|| parse_err(file, line, format!("unknown instrument '{id}'")))?;
        let t = first_on_or_after(panel.calendar(), date)
            .ok_or_else(|| parse_err(file, line, format!("date {date} after the end of the price calendar")))?;
        if let Some(prev) = seen.insert((metric.to_owned(), t, i), line) {
            return Err(parse_err(file, line, format!("duplicate {metric} for {id} on {date} (first at line {prev})")));
        }
        raw.entry(metric.to_owned()).or_insert_with(|| DMatrix::from_element(t_len, n, f64::NAN))[(t, i)] = value;
        Ok(())
    })?;
    let tables = raw
        .into_iter()
        .map(|(name, mut m)| {
            for i in 0..n {
                for t in 1..t_len {
                    if m[(t, i)].is_nan() {
                        m[(t, i)] = m[(t - 1, i)];
                    }
                }
            }
            (name, m)
        })
        .collect();
    Ok(MetricTable { tables })
}

/// Values reported on non-trading days become effective on the next trading day.
fn first_on_or_after(calendar: &[NaiveDate], date: NaiveDate) -> Option<usize> {
    let k = calendar.partition_point(|d| *d < date);
    (k < calendar.len()).then_some(k)
}

/// Emits every change of every metric (the inverse of [`load_metrics`]).
pub fn write_metrics(metrics: &MetricTable, panel: &MarketPanel, path: &Path) -> Result<()> {
    let mut w = writer(path, "date,instrument,metric,value")?;
    for t in 0..panel.n_days() {
        for (name, m) in &metrics.tables {
            if m.shape() != (panel.n_days(), panel.n_instruments()) {
                return Err(Error::invalid(format!("metric {name} does not match the panel")));
            }
            for i in 0..panel.n_instruments() {
                let v = m[(t, i)];
                let changed = if t == 0 { v.is_finite() } else { v.is_finite() && v.to_bits() != m[(t - 1, i)].to_bits() };
                if changed {
                    writeln!(w, "{},{},{},{}", panel.calendar()[t], panel.ids()[i], name, v)?;
                }
            }
        }
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InstrumentSeries;

    fn panel() -> MarketPanel {
        let d = |k| NaiveDate::from_ymd_opt(2020, 1, 6).unwrap() + chrono::Days::new(k);
        let dates: Vec<NaiveDate> = (0..5).map(d).collect();
        let a = InstrumentSeries::new("A", "S", "USD", dates.clone(), vec![1.0; 5], vec![0.0; 5]).unwrap();
        let b = InstrumentSeries::new("B", "S", "USD", dates, vec![2.0; 5], vec![0.0; 5]).unwrap();
        MarketPanel::from_series(&[a, b]).unwrap()
    }

    #[test]
    fn load_forward_fill_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        std::fs::write(&path, "date,instrument,metric,value\n2020-01-07,A,book_to_price,0.5\n2020-01-09,A,book_to_price,0.7\n2020-01-06,B,market_cap,10\n").unwrap();
        let p = panel();
        let m = load_metrics(&path, &p).unwrap();
        let bp = m.get("book_to_price").unwrap();
        assert!(bp[(0, 0)].is_nan());
        assert_eq!(bp[(2, 0)], 0.5);
        assert_eq!(bp[(4, 0)], 0.7);
        assert_eq!(m.get("market_cap").unwrap()[(4, 1)], 10.0);
        let out = dir.path().join("again.csv");
        write_metrics(&m, &p, &out).unwrap();
        let again = load_metrics(&out, &p).unwrap();
        for name in ["book_to_price", "market_cap"] {
            let bits = |t: &MetricTable| t.get(name).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&again), bits(&m));
        }
    }

    #[test]
    fn rejects_unknown_instrument_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        std::fs::write(&path, "date,instrument,metric,value\n2020-01-07,Z,cap,1\n").unwrap();
        assert!(matches!(load_metrics(&path, &panel()), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "date,instrument,metric,value\n2020-01-07,A,cap,1\n2020-01-07,A,cap,2\n").unwrap();
        assert!(matches!(load_metrics(&path, &panel()), Err(Error::Parse { line: 3, .. })));
    }
}
