use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Largest value gets the highest score (+1).
    Ascending,
    /// Smallest value gets the highest score (+1).
    Descending,
}

/// Cross-sectional scores in `[-1, 1]` over a set of instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    pub instruments: Vec<usize>,
    pub scores: Vec<f64>,
}

impl SignalVector {
    pub fn new(instruments: Vec<usize>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(instruments.len(), scores.len());
        Self { instruments, scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Midrank numerators `2 * rank - (N + 1)` (integers, ties averaged),
/// ranking ascending in `values`.
fn midrank_numerators(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && values[order[j + 1]] == values[order[k]] {
            j += 1;
        }
        // positions k..=j (0-based) share rank ((k+1) + (j+1)) / 2
        let twice_rank = (k + 1 + j + 1) as f64;
        for &idx in &order[k..=j] {
            out[idx] = twice_rank - (n + 1) as f64;
        }
        k = j + 1;
    }
    out
}

/// Rank scores `s_i = 2 (rank_i - (N+1)/2) / (N-1)` with average ranks on ties.
///
/// With [`Direction::Descending`] the smallest value scores +1, so passing
/// volatilities with `Descending` is the same as ranking `1/sigma` ascending.
pub fn rank_signal(values: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::insufficient(format!("rank signal needs at least 2 instruments, got {n}")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite rank input {v}")));
    }
    let denom = (n - 1) as f64;
    let sign = match direction {
        Direction::Ascending => 1.0,
        Direction::Descending => -1.0,
    };
    Ok(midrank_numerators(values).into_iter().map(|num| sign * num / denom).collect())
}

/// [`rank_signal`] applied independently inside each sector. Sectors with a
/// single member get a zero score.
pub fn sector_rank_signal<S: AsRef<str>>(values: &[f64], sectors: &[S], direction: Direction) -> Result<Vec<f64>> {
    if values.len() != sectors.len() {
        return Err(Error::invalid("values and sectors differ in length"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, s) in sectors.iter().enumerate() {
        groups.entry(s.as_ref()).or_default().push(k);
    }
    let mut out = vec![0.0; values.len()];
    for members in groups.values() {
        if members.len() < 2 {
            continue;
        }
        let sub: Vec<f64> = members.iter().map(|&k| values[k]).collect();
        for (&k, s) in members.iter().zip(rank_signal(&sub, direction)?) {
            out[k] = s;
        }
    }
    Ok(out)
}
