use num_traits::{ToPrimitive, Zero};

use super::{MarketError, Quote, Side, VenueRef};
use crate::num::{ceil_u128, floor_u128, from_bps, from_u128, ratio, Rational};

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    /// Quote base units per base base unit.
    pub price: Rational,
    pub size: u128,
}

/// Ladder geometry used when the book is refreshed around a new mid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LadderShape {
    pub half_spread_bps: u32,
    pub levels: u32,
    pub step_bps: u32,
    /// Base units per level.
    pub level_size: u128,
}

/// Static depth ladder for one symbol pair. Refreshed by the price process,
/// never matched against resting orders.
#[derive(Clone, Debug, PartialEq)]
pub struct CexBook {
    pub id: u32,
    pub base: String,
    pub quote: String,
    pub bids: Vec<Level>,
    pub asks: Vec<Level>,
    pub taker_fee_bps: u32,
}

/// Outcome of walking the ladder. `filled < requested` only inside
/// [`MarketError::InsufficientDepth`].
#[derive(Clone, Debug, PartialEq)]
pub struct CexFill {
    pub quote: Quote,
    pub book: CexBook,
    pub filled: u128,
    pub requested: u128,
}

impl CexBook {
    pub fn new(
        id: u32,
        base: impl Into<String>,
        quote: impl Into<String>,
        bids: Vec<Level>,
        asks: Vec<Level>,
        taker_fee_bps: u32,
    ) -> Result<Self, MarketError> {
        let book = Self {
            id,
            base: base.into(),
            quote: quote.into(),
            bids,
            asks,
            taker_fee_bps,
        };
        book.validate()?;
        Ok(book)
    }

    /// Rebuilds both sides around `mid`; level `i` sits at
    /// `mid * (1 ± (half_spread + i * step))`.
    pub fn refresh(&mut self, mid: &Rational, shape: &LadderShape) -> Result<(), MarketError> {
        let one = ratio(1, 1);
        self.bids.clear();
        self.asks.clear();
        for i in 0..shape.levels {
            let off = from_bps(shape.half_spread_bps + i * shape.step_bps);
            self.bids.push(Level {
                price: mid * (&one - &off),
                size: shape.level_size,
            });
            self.asks.push(Level {
                price: mid * (&one + &off),
                size: shape.level_size,
            });
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let strictly = |levels: &[Level], descending: bool| {
            levels.windows(2).all(|w| {
                if descending {
                    w[0].price > w[1].price
                } else {
                    w[0].price < w[1].price
                }
            })
        };
        if !strictly(&self.bids, true) {
            return Err(MarketError::InvalidBook("bids not strictly descending".into()));
        }
        if !strictly(&self.asks, false) {
            return Err(MarketError::InvalidBook("asks not strictly ascending".into()));
        }
        if self.bids.iter().chain(&self.asks).any(|l| l.price <= Rational::zero()) {
            return Err(MarketError::InvalidBook("non-positive price".into()));
        }
        if let (Some(b), Some(a)) = (self.bids.first(), self.asks.first()) {
            if b.price >= a.price {
                return Err(MarketError::InvalidBook("crossed book".into()));
            }
        }
        Ok(())
    }

    pub fn best_bid(&self) -> Option<&Rational> {
        self.bids.first().map(|l| &l.price)
    }

    pub fn best_ask(&self) -> Option<&Rational> {
        self.asks.first().map(|l| &l.price)
    }

    pub fn mid(&self) -> Option<Rational> {
        match (self.best_bid(), self.best_ask()) {
            (Some(b), Some(a)) => Some((b + a) / from_u128(2)),
            (Some(b), None) => Some(b.clone()),
            (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        }
    }

    pub fn depth(&self, side: Side) -> u128 {
        self.levels(side).iter().map(|l| l.size).sum()
    }

    fn levels(&self, side: Side) -> &Vec<Level> {
        match side {
            Side::Buy => &self.asks,
            Side::Sell => &self.bids,
        }
    }

    /// Walks the ladder best-first for `amount` base units. Buys pay quote
    /// (ceil) and receive base less the taker fee (floor); sells pay base and
    /// receive quote less the fee (floor). Pure: the consumed ladder comes back
    /// in the result.
    pub fn fill(&self, side: Side, amount: u128) -> Result<CexFill, MarketError> {
        if amount == 0 {
            return Err(MarketError::ZeroAmount);
        }
        let mut book = self.clone();
        let best = self.levels(side).first().map(|l| l.price.clone());
        let levels = match side {
            Side::Buy => &mut book.asks,
            Side::Sell => &mut book.bids,
        };
        let mut remaining = amount;
        let mut notional = Rational::zero();
        let mut consumed = 0;
        for level in levels.iter_mut() {
            if remaining == 0 {
                break;
            }
            let take = remaining.min(level.size);
            notional += &level.price * from_u128(take);
            level.size -= take;
            remaining -= take;
            if level.size == 0 {
                consumed += 1;
            }
        }
        levels.drain(..consumed);
        let filled = amount - remaining;
        let keep = from_bps(10_000 - self.taker_fee_bps);
        let (amount_in, amount_out, fee_paid) = match side {
            Side::Buy => {
                let paid = ceil_u128(&notional).ok_or(MarketError::Overflow)?;
                let out = floor_u128(&(from_u128(filled) * &keep)).ok_or(MarketError::Overflow)?;
                (paid, out, filled - out)
            }
            Side::Sell => {
                let gross = floor_u128(&notional).ok_or(MarketError::Overflow)?;
                let out = floor_u128(&(&notional * &keep)).ok_or(MarketError::Overflow)?;
                (filled, out, gross - out)
            }
        };
        let slippage_bps = match (&best, filled) {
            (Some(best), f) if f > 0 => {
                let avg = &notional / from_u128(f);
                let rel = match side {
                    Side::Buy => (avg - best) / best,
                    Side::Sell => (best - avg) / best,
                };
                (rel * from_u128(10_000)).floor().to_integer().to_u32().unwrap_or(u32::MAX)
            }
            _ => 0,
        };
        let quote = Quote {
            venue: VenueRef::Cex(self.id),
            side,
            amount_in,
            amount_out,
            spot_before: self.mid().unwrap_or_else(Rational::zero),
            spot_after: book.mid().unwrap_or_else(Rational::zero),
            slippage_bps,
            fee_paid,
        };
        let fill = CexFill {
            quote,
            book,
            filled,
            requested: amount,
        };
        if remaining > 0 {
            Err(MarketError::InsufficientDepth(Box::new(fill)))
        } else {
            Ok(fill)
        }
    }
}
