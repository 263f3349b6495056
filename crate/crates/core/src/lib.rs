//! Research engine for low-volatility and low-beta equity strategies.
//!
//! The crate covers the whole pipeline: data ingestion ([`data`]), rolling
//! risk estimators and rank signals ([`estimators`]), market-neutral
//! Markowitz construction ([`portfolio`]), financed P&L accounting and
//! performance analytics ([`backtest`]), comparison factors and regressions
//! ([`factors`]), a one-factor synthetic market ([`synthetic`]) and the
//! verification suite tying it all together ([`verify`]).

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod data;
pub mod estimators;
pub mod error;
pub mod factors;
pub mod output;
pub mod portfolio;
pub mod stats;
pub mod strategy;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
