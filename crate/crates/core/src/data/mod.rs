//! Canonical market data model: per-instrument price/dividend series,
//! calendar-aligned panels, pool membership and financing rates.

pub(crate) mod io;
mod panel;
mod pool;
mod rates;
mod returns;

pub use io::{load_panel, load_rates, write_dividends, write_membership, write_prices, write_rates, write_sectors, DataFiles, Dataset};
pub use panel::{InstrumentSeries, MarketPanel, STALE_AFTER_DAYS};
pub use pool::PoolCalendar;
pub use rates::{RiskFreeCurve, MAX_RATE_GAP_DAYS};
pub use returns::{compute_returns, ReturnMode, ReturnPanel};
