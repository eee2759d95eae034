use num_traits::ToPrimitive;

use super::{MarketError, Quote, Side, VenueRef};
use crate::ledger::{AssetId, ChainId, Ledger, Owner, Tick};
use crate::num::{from_u128, Rational};

/// Two-asset constant-product pool. The fee is taken from the input and left
/// in the reserves, so `reserve_x * reserve_y` never decreases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmmPool {
    pub id: u32,
    pub chain: ChainId,
    pub asset_x: AssetId,
    pub asset_y: AssetId,
    pub reserve_x: u128,
    pub reserve_y: u128,
    pub fee_bps: u32,
}

impl AmmPool {
    pub fn new(
        id: u32,
        chain: ChainId,
        asset_x: AssetId,
        asset_y: AssetId,
        reserve_x: u128,
        reserve_y: u128,
        fee_bps: u32,
    ) -> Result<Self, MarketError> {
        if reserve_x == 0 || reserve_y == 0 {
            return Err(MarketError::InvalidPool("reserves must be positive".into()));
        }
        if fee_bps > 1000 {
            return Err(MarketError::InvalidPool(format!("fee {fee_bps} bps above 1000")));
        }
        if asset_x == asset_y {
            return Err(MarketError::InvalidPool("identical assets".into()));
        }
        Ok(Self {
            id,
            chain,
            asset_x,
            asset_y,
            reserve_x,
            reserve_y,
            fee_bps,
        })
    }

    /// Marginal price of X in units of Y.
    pub fn spot_price(&self) -> Rational {
        Rational::new(self.reserve_y.into(), self.reserve_x.into())
    }

    pub fn k(&self) -> num_bigint::BigInt {
        num_bigint::BigInt::from(self.reserve_x) * num_bigint::BigInt::from(self.reserve_y)
    }

    /// `(reserve_in, reserve_out, side)` for a trade paying `asset_in`.
    fn orient(&self, asset_in: AssetId) -> Result<(u128, u128, Side), MarketError> {
        if asset_in == self.asset_x {
            Ok((self.reserve_x, self.reserve_y, Side::Sell))
        } else if asset_in == self.asset_y {
            Ok((self.reserve_y, self.reserve_x, Side::Buy))
        } else {
            Err(MarketError::UnknownAsset(asset_in))
        }
    }

    pub fn other(&self, asset: AssetId) -> Result<AssetId, MarketError> {
        if asset == self.asset_x {
            Ok(self.asset_y)
        } else if asset == self.asset_y {
            Ok(self.asset_x)
        } else {
            Err(MarketError::UnknownAsset(asset))
        }
    }

    /// Exact-input quote, floor on the output. Pure.
    pub fn quote_exact_in(&self, asset_in: AssetId, amount_in: u128) -> Result<Quote, MarketError> {
        let (r_in, r_out, side) = self.orient(asset_in)?;
        let amount_out = amount_out(r_in, r_out, amount_in, self.fee_bps)?;
        let (new_in, new_out) = (r_in + amount_in, r_out - amount_out);
        let (nx, ny) = match side {
            Side::Sell => (new_in, new_out),
            Side::Buy => (new_out, new_in),
        };
        let slippage_bps = if amount_in == 0 {
            0
        } else {
            // 1 - (out/in) / (r_out/r_in), in bps, floored.
            let eff = Rational::new(amount_out.into(), amount_in.into());
            let spot = Rational::new(r_out.into(), r_in.into());
            let rel = (Rational::from_integer(1.into()) - eff / spot) * from_u128(10_000);
            rel.floor().to_integer().to_u32().unwrap_or(10_000)
        };
        let fee_paid = {
            let f = amount_in
                .checked_mul(self.fee_bps as u128)
                .ok_or(MarketError::Overflow)?;
            f.div_ceil(10_000)
        };
        Ok(Quote {
            venue: VenueRef::Amm(self.id),
            side,
            amount_in,
            amount_out,
            spot_before: self.spot_price(),
            spot_after: Rational::new(ny.into(), nx.into()),
            slippage_bps,
            fee_paid,
        })
    }

    /// Smallest input that yields at least `out` of the other asset, or `None`
    /// when `out` drains the reserve.
    pub fn min_input_for_output(&self, asset_in: AssetId, out: u128) -> Result<Option<u128>, MarketError> {
        let (r_in, r_out, _) = self.orient(asset_in)?;
        if out >= r_out {
            return Ok(None);
        }
        if out == 0 {
            return Ok(Some(0));
        }
        let gamma = 10_000 - self.fee_bps as u128;
        // out <= r_out*a*g / (r_in*1e4 + a*g)  <=>  a >= out*r_in*1e4 / ((r_out-out)*g)
        let num = out
            .checked_mul(r_in)
            .and_then(|v| v.checked_mul(10_000))
            .ok_or(MarketError::Overflow)?;
        let den = (r_out - out).checked_mul(gamma).ok_or(MarketError::Overflow)?;
        if den == 0 {
            return Ok(None);
        }
        let mut a = num.div_ceil(den);
        while amount_out(r_in, r_out, a, self.fee_bps)? < out {
            a += 1;
        }
        while a > 0 && amount_out(r_in, r_out, a - 1, self.fee_bps)? >= out {
            a -= 1;
        }
        Ok(Some(a))
    }

    /// Executes a swap on a copy of the pool; the receiver is untouched.
    pub fn swap(&self, asset_in: AssetId, amount_in: u128) -> Result<(AmmPool, Quote), MarketError> {
        let mut next = self.clone();
        let q = next.swap_in_place(asset_in, amount_in)?;
        Ok((next, q))
    }

    pub fn swap_in_place(&mut self, asset_in: AssetId, amount_in: u128) -> Result<Quote, MarketError> {
        if amount_in == 0 {
            return Err(MarketError::ZeroAmount);
        }
        let q = self.quote_exact_in(asset_in, amount_in)?;
        if asset_in == self.asset_x {
            self.reserve_x = self.reserve_x.checked_add(amount_in).ok_or(MarketError::Overflow)?;
            self.reserve_y -= q.amount_out;
        } else {
            self.reserve_y = self.reserve_y.checked_add(amount_in).ok_or(MarketError::Overflow)?;
            self.reserve_x -= q.amount_out;
        }
        Ok(q)
    }
}

/// floor(r_out * a * (1 - fee) / (r_in + a * (1 - fee))), computed in
/// integers scaled by 1e4.
fn amount_out(r_in: u128, r_out: u128, amount_in: u128, fee_bps: u32) -> Result<u128, MarketError> {
    if amount_in == 0 {
        return Ok(0);
    }
    let gamma = 10_000 - fee_bps as u128;
    let a_g = amount_in.checked_mul(gamma).ok_or(MarketError::Overflow)?;
    let num = r_out.checked_mul(a_g).ok_or(MarketError::Overflow)?;
    let den = r_in
        .checked_mul(10_000)
        .and_then(|v| v.checked_add(a_g))
        .ok_or(MarketError::Overflow)?;
    Ok(num / den)
}

/// Swap against `pool` with ledger settlement: the trader pays `amount_in`
/// into the pool account and receives the quoted output. Reserves and the
/// pool's ledger account move together.
pub fn settle_amm_swap(
    pool: &mut AmmPool,
    ledger: &mut Ledger,
    trader: Owner,
    asset_in: AssetId,
    amount_in: u128,
    tick: Tick,
) -> Result<Quote, MarketError> {
    if amount_in == 0 {
        return Err(MarketError::ZeroAmount);
    }
    let asset_out = pool.other(asset_in)?;
    let available = ledger.balance(trader, asset_in);
    if available < amount_in {
        return Err(MarketError::InsufficientTraderBalance {
            needed: amount_in,
            available,
        });
    }
    let (next, q) = pool.swap(asset_in, amount_in)?;
    ledger.transfer(trader, Owner::Pool(pool.id), asset_in, amount_in, tick)?;
    if q.amount_out > 0 {
        ledger.transfer(Owner::Pool(pool.id), trader, asset_out, q.amount_out, tick)?;
    }
    *pool = next;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::ratio;

    const BTC: AssetId = AssetId(0);
    const USDT: AssetId = AssetId(1);

    fn pool(x: u128, y: u128, fee: u32) -> AmmPool {
        AmmPool::new(1, ChainId(1), BTC, USDT, x, y, fee).unwrap()
    }

    #[test]
    fn zero_input_quotes_zero() {
        let q = pool(1000, 1000, 30).quote_exact_in(BTC, 0).unwrap();
        assert_eq!(q.amount_out, 0);
        assert_eq!(q.slippage_bps, 0);
    }

    #[test]
    fn btc_usdt_reference_quote() {
        // 100 BTC / 6,000,000 USDT, both at 0 decimals scaled by 1e6 to keep
        // the sub-unit part visible.
        let p = pool(100_000_000, 6_000_000_000_000, 30);
        let q = p.quote_exact_in(BTC, 1_000_000).unwrap();
        // exact: 6e12 * 1e6 * 0.997 / (1e8 + 0.997e6) = 59229482063.8...
        assert_eq!(q.amount_out, 59_229_482_063);
        assert!(q.slippage_bps > 30);
    }

    #[test]
    fn symmetric_pool_floor() {
        let q = pool(1000, 1000, 0).quote_exact_in(BTC, 1).unwrap();
        assert_eq!(q.amount_out, 0);
        assert_eq!(q.slippage_bps, 10_000);
    }

    #[test]
    fn unknown_asset_and_overflow() {
        let p = pool(1000, 1000, 0);
        assert_eq!(p.quote_exact_in(AssetId(9), 1), Err(MarketError::UnknownAsset(AssetId(9))));
        let big = pool(u128::MAX / 2, u128::MAX / 2, 0);
        assert_eq!(big.quote_exact_in(BTC, u128::MAX / 4), Err(MarketError::Overflow));
    }

    #[test]
    fn quote_matches_swap() {
        let p = pool(5_000, 7_000_000, 25);
        let q = p.quote_exact_in(USDT, 12_345).unwrap();
        let (next, s) = p.swap(USDT, 12_345).unwrap();
        assert_eq!(q, s);
        assert_eq!(next.reserve_y, 7_012_345);
        assert_eq!(next.reserve_x, 5_000 - q.amount_out);
        assert!(next.k() > p.k());
    }

    #[test]
    fn round_trip_loses_with_fee() {
        let p = pool(1_000_000, 1_000_000, 30);
        let (p1, q1) = p.swap(BTC, 10_000).unwrap();
        let (_, q2) = p1.swap(USDT, q1.amount_out).unwrap();
        assert!(q2.amount_out < 10_000);
    }

    #[test]
    fn small_trades_approach_spot() {
        let p = pool(1_000_000_000_000, 3_000_000_000_000, 0);
        let spot = p.spot_price();
        let mut last_gap = None;
        for size in [1_000_000_000u128, 100_000_000, 10_000_000, 1_000_000] {
            let q = p.quote_exact_in(BTC, size).unwrap();
            let eff = Rational::new(q.amount_out.into(), size.into());
            let gap = (&spot - eff) / &spot;
            if let Some(prev) = last_gap {
                assert!(gap < prev);
            }
            last_gap = Some(gap);
        }
        assert!(last_gap.unwrap() < ratio(2, 1_000_000));
    }

    #[test]
    fn min_input_inverts_quote() {
        let p = pool(100_000_000, 6_000_000_000_000, 30);
        for out in [1u128, 7, 1_000, 82_306_000] {
            let a = p.min_input_for_output(USDT, out).unwrap().unwrap();
            assert!(p.quote_exact_in(USDT, a).unwrap().amount_out >= out);
            assert!(p.quote_exact_in(USDT, a - 1).unwrap().amount_out < out);
        }
        assert_eq!(p.min_input_for_output(USDT, 100_000_000).unwrap(), None);
    }
}
