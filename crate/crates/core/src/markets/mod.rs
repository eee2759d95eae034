//! Venue models: constant-product pools (DEX side) and static depth ladders
//! (CEX side), plus closed-form arbitrage sizing between them.

mod amm;
mod arb;
mod cex;

pub use amm::{settle_amm_swap, AmmPool};
pub use arb::{arb_profit, optimal_arb_size, ArbDirection, ArbOpportunity};
pub use cex::{CexBook, CexFill, LadderShape, Level};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{AssetId, LedgerError};
use crate::num::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VenueRef {
    Amm(u32),
    Cex(u32),
}

/// Taker side against a CEX ladder, in terms of the base asset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quote {
    pub venue: VenueRef,
    pub side: Side,
    pub amount_in: u128,
    pub amount_out: u128,
    /// Venue price (quote per base, base units) before the trade.
    pub spot_before: Rational,
    pub spot_after: Rational,
    pub slippage_bps: u32,
    pub fee_paid: u128,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("{0} is not traded by this pool")]
    UnknownAsset(AssetId),
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("trader holds {available}, needs {needed}")]
    InsufficientTraderBalance { needed: u128, available: u128 },
    #[error("ladder exhausted after {} of {} units", .0.filled, .0.requested)]
    InsufficientDepth(Box<CexFill>),
    #[error("invalid ladder: {0}")]
    InvalidBook(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
