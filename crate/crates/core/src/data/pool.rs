use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Per-date pool membership on the panel calendar.
///
/// Membership snapshots apply from their date until the next snapshot.
/// An instrument that leaves the pool on day `t` keeps its position through
/// the close of `t` and is liquidated at the close of `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCalendar {
    name: String,
    max_size: usize,
    n_instruments: usize,
    members: Vec<Vec<bool>>,
}

impl PoolCalendar {
    /// Build from snapshots given as `(calendar index, member indices)`,
    /// sorted by date. Dates before the first snapshot have no members.
    pub fn from_snapshots(
        name: impl Into<String>,
        n_days: usize,
        n_instruments: usize,
        snapshots: &[(usize, Vec<usize>)],
        max_size: Option<usize>,
    ) -> Result<Self> {
        let name = name.into();
        let mut members = vec![vec![false; n_instruments]; n_days];
        for (k, (start, ids)) in snapshots.iter().enumerate() {
            if *start >= n_days {
                return Err(Error::invalid(format!("pool {name}: snapshot index {start} beyond calendar")));
            }
            if k > 0 && snapshots[k - 1].0 >= *start {
                return Err(Error::invalid(format!("pool {name}: snapshots not sorted by date")));
            }
            let end = snapshots.get(k + 1).map_or(n_days, |s| s.0);
            for row in &mut members[*start..end] {
                for &i in ids {
                    if i >= n_instruments {
                        return Err(Error::invalid(format!("pool {name}: instrument index {i} out of range")));
                    }
                    row[i] = true;
                }
            }
        }
        let largest = members.iter().map(|r| r.iter().filter(|m| **m).count()).max().unwrap_or(0);
        let max_size = max_size.unwrap_or(largest);
        if largest > max_size {
            return Err(Error::invalid(format!("pool {name}: {largest} members exceed max size {max_size}")));
        }
        Ok(Self {
            name,
            max_size,
            n_instruments,
            members,
        })
    }

    /// Every instrument a member on every day.
    pub fn full(name: impl Into<String>, n_days: usize, n_instruments: usize) -> Self {
        Self {
            name: name.into(),
            max_size: n_instruments,
            n_instruments,
            members: vec![vec![true; n_instruments]; n_days],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn n_days(&self) -> usize {
        self.members.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.n_instruments
    }

    pub fn is_member(&self, t: usize, i: usize) -> bool {
        self.members[t][i]
    }

    pub fn members(&self, t: usize) -> Vec<usize> {
        (0..self.n_instruments).filter(|&i| self.members[t][i]).collect()
    }

    pub fn size(&self, t: usize) -> usize {
        self.members[t].iter().filter(|m| **m).count()
    }

    /// First day on which `i` is no longer a member.
    pub fn exits_on(&self, t: usize, i: usize) -> bool {
        t > 0 && self.members[t - 1][i] && !self.members[t][i]
    }

    /// Instrument left the pool on `t - 1`: its position must be zero at the close of `t`.
    pub fn liquidate_at(&self, t: usize, i: usize) -> bool {
        t > 0 && self.exits_on(t - 1, i)
    }

    /// First calendar index with a non-empty membership.
    pub fn first_active_day(&self) -> Option<usize> {
        (0..self.n_days()).find(|&t| self.size(t) > 0)
    }

    /// Error if any day in `range` has an empty membership.
    pub fn check_non_empty(&self, range: std::ops::Range<usize>, calendar: &[NaiveDate]) -> Result<()> {
        for t in range {
            if self.size(t) == 0 {
                return Err(Error::Membership(format!("pool {} has no members on {}", self.name, calendar[t])));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_and_liquidation_flags() {
        // instrument 1 leaves on day 3
        let pool = PoolCalendar::from_snapshots("p", 6, 3, &[(0, vec![0, 1, 2]), (3, vec![0, 2])], None).unwrap();
        assert!(pool.is_member(2, 1));
        assert!(!pool.is_member(3, 1));
        assert!(pool.exits_on(3, 1));
        assert!(pool.liquidate_at(4, 1));
        assert!(!pool.liquidate_at(5, 1));
        assert_eq!(pool.max_size(), 3);
    }

    #[test]
    fn max_size_enforced() {
        let r = PoolCalendar::from_snapshots("p", 2, 3, &[(0, vec![0, 1, 2])], Some(2));
        assert!(r.is_err());
    }
}
