use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use super::{AmmPool, MarketError};
use crate::num::{floor_u128, from_bps, from_u128, sqrt_floor, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum ArbDirection {
    None,
    /// Pool is cheap: pay Y into the pool, sell the X received externally.
    BuyX,
    /// Pool is rich: buy X externally, sell it into the pool for Y.
    SellX,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArbOpportunity {
    pub direction: ArbDirection,
    /// Input to the pool leg: Y for `BuyX`, X for `SellX`.
    pub amount_in: u128,
    /// In Y base units, at the given external price, after the pool fee.
    pub expected_profit: Rational,
}

impl ArbOpportunity {
    pub fn none() -> Self {
        Self {
            direction: ArbDirection::None,
            amount_in: 0,
            expected_profit: Rational::zero(),
        }
    }
}

/// Realized profit (Y units) of routing `amount_in` through the pool and
/// closing the other leg at `external_price` (Y per X), using the exact
/// integer quote.
pub fn arb_profit(
    pool: &AmmPool,
    direction: ArbDirection,
    external_price: &Rational,
    amount_in: u128,
) -> Result<Rational, MarketError> {
    match direction {
        ArbDirection::None => Ok(Rational::zero()),
        ArbDirection::BuyX => {
            let q = pool.quote_exact_in(pool.asset_y, amount_in)?;
            Ok(external_price * from_u128(q.amount_out) - from_u128(amount_in))
        }
        ArbDirection::SellX => {
            let q = pool.quote_exact_in(pool.asset_x, amount_in)?;
            Ok(from_u128(q.amount_out) - external_price * from_u128(amount_in))
        }
    }
}

/// Profit-maximizing pool trade against an external price (Y per X).
///
/// With input `u` into reserve `r_in`, fee factor `g` and the output valued
/// at `w` input units, profit `w * r_out * g * u / (r_in + g * u) - u` peaks
/// at `u* = (sqrt(w * r_in * r_out * g) - r_in) / g`. The integer answer is
/// the best of the neighbours of `u*` in both input and output space, scored
/// with the exact floored quote.
pub fn optimal_arb_size(pool: &AmmPool, external_price: &Rational) -> ArbOpportunity {
    if !external_price.is_positive() {
        return ArbOpportunity::none();
    }
    let gamma = from_bps(10_000 - pool.fee_bps);
    let x = from_u128(pool.reserve_x);
    let y = from_u128(pool.reserve_y);
    let (direction, r_in, r_out, w) = if external_price * &x * &gamma > y {
        (ArbDirection::BuyX, y, x, external_price.clone())
    } else if &y * &gamma > external_price * &x {
        (ArbDirection::SellX, x, y, external_price.recip())
    } else {
        return ArbOpportunity::none();
    };
    let scale = BigInt::from(1_000_000u32);
    let root = sqrt_floor(&(&w * &r_in * &r_out * &gamma), &scale);
    let u_star = (root - &r_in) / &gamma;
    if !u_star.is_positive() {
        return ArbOpportunity::none();
    }
    let asset_in = match direction {
        ArbDirection::BuyX => pool.asset_y,
        _ => pool.asset_x,
    };
    let out_star = &r_out * &gamma * &u_star / (&r_in + &gamma * &u_star);

    let mut candidates = Vec::with_capacity(10);
    let u0 = floor_u128(&u_star).unwrap_or(0);
    for d in 0..=4u128 {
        candidates.push((u0 + d).saturating_sub(2));
    }
    let q0 = floor_u128(&out_star).unwrap_or(0);
    for d in 0..=4u128 {
        let q = (q0 + d).saturating_sub(2);
        if let Ok(Some(u)) = pool.min_input_for_output(asset_in, q) {
            candidates.push(u);
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let mut best = ArbOpportunity::none();
    for u in candidates.into_iter().filter(|&u| u > 0) {
        let Ok(p) = arb_profit(pool, direction, external_price, u) else { continue };
        if p > best.expected_profit {
            best = ArbOpportunity {
                direction,
                amount_in: u,
                expected_profit: p,
            };
        }
    }
    if best.direction == ArbDirection::None {
        // Sub-unit gain: rounding can leave every neighbour of u* at a loss
        // while some smaller trade lands just above an output unit.
        let upto = floor_u128(&(u_star * from_u128(2))).unwrap_or(u128::MAX).saturating_add(2);
        if upto <= SUB_UNIT_SCAN {
            if let Some(u) = scan_small(pool, direction, external_price, upto) {
                if let Ok(p) = arb_profit(pool, direction, external_price, u) {
                    best = ArbOpportunity {
                        direction,
                        amount_in: u,
                        expected_profit: p,
                    };
                }
            }
        }
    }
    best
}

const SUB_UNIT_SCAN: u128 = 1 << 16;

/// Most profitable input in `1..=upto` by exact integer comparison, if any
/// is profitable. Gives up (None) when the price does not fit in i128.
fn scan_small(pool: &AmmPool, direction: ArbDirection, external_price: &Rational, upto: u128) -> Option<u128> {
    let num = i128::try_from(external_price.numer()).ok()?;
    let den = i128::try_from(external_price.denom()).ok()?;
    let (asset_in, r_out) = match direction {
        ArbDirection::BuyX => (pool.asset_y, pool.reserve_x),
        _ => (pool.asset_x, pool.reserve_y),
    };
    let mut best: Option<(i128, u128)> = None;
    for u in 1..=upto.min(r_out) {
        let out = pool.quote_exact_in(asset_in, u).ok()?.amount_out;
        let (out, ui) = (i128::try_from(out).ok()?, i128::try_from(u).ok()?);
        // profit * den
        let scaled = match direction {
            ArbDirection::BuyX => num.checked_mul(out)?.checked_sub(den.checked_mul(ui)?)?,
            _ => den.checked_mul(out)?.checked_sub(num.checked_mul(ui)?)?,
        };
        if scaled > 0 && best.is_none_or(|(b, _)| scaled > b) {
            best = Some((scaled, u));
        }
    }
    best.map(|(_, u)| u)
}
