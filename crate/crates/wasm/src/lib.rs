//! Browser bindings. Each export takes plain arguments and returns a JSON
//! string; the `*_json` functions behind them are ordinary Rust so they can be
//! tested natively.

use fluxlayer::ledger::{AssetId, ChainId};
use fluxlayer::markets::{arb_profit, optimal_arb_size, AmmPool, ArbDirection};
use fluxlayer::num::{format_decimal, from_u128, parse_units, to_f64, Rational};
use fluxlayer::sim::{self, reference_scenario, RunOutput, SeriesRow};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const PRICE_DIGITS: u8 = 9;
const CURVE_POINTS: u32 = 120;
const SERIES_POINTS: usize = 400;

fn int(label: &str, s: &str) -> Result<u128, String> {
    parse_units(s.trim(), 0).map_err(|e| format!("{label}: {e}"))
}

fn price(s: &str) -> Result<Rational, String> {
    let scaled = parse_units(s.trim(), PRICE_DIGITS).map_err(|e| format!("external price: {e}"))?;
    Ok(from_u128(scaled) / from_u128(10u128.pow(PRICE_DIGITS as u32)))
}

fn pool(reserve_x: &str, reserve_y: &str, fee_bps: u32) -> Result<AmmPool, String> {
    let (x, y) = (int("reserve x", reserve_x)?, int("reserve y", reserve_y)?);
    AmmPool::new(1, ChainId(1), AssetId(0), AssetId(1), x, y, fee_bps).map_err(|e| e.to_string())
}

fn dec(r: &Rational, digits: u32) -> String {
    format_decimal(r, digits)
}

/// Exact swap of `amount_in` of X (or Y when `x_in` is false).
pub fn swap_quote_json(reserve_x: &str, reserve_y: &str, fee_bps: u32, amount_in: &str, x_in: bool) -> Result<String, String> {
    let p = pool(reserve_x, reserve_y, fee_bps)?;
    let a = int("amount in", amount_in)?;
    let asset = if x_in { p.asset_x } else { p.asset_y };
    let q = p.quote_exact_in(asset, a).map_err(|e| e.to_string())?;
    Ok(json!({
        "amount_in": q.amount_in.to_string(),
        "amount_out": q.amount_out.to_string(),
        "fee_paid": q.fee_paid.to_string(),
        "spot_before": dec(&q.spot_before, 6),
        "spot_after": dec(&q.spot_after, 6),
        "slippage_bps": q.slippage_bps,
    })
    .to_string())
}

/// Best arbitrage against an external price plus the profit curve around it.
pub fn arb_profile_json(reserve_x: &str, reserve_y: &str, fee_bps: u32, external: &str) -> Result<String, String> {
    let p = pool(reserve_x, reserve_y, fee_bps)?;
    let ext = price(external)?;
    let best = optimal_arb_size(&p, &ext);
    let (dir, reach) = match best.direction {
        ArbDirection::None => {
            // show both sides around zero so the flat region is visible
            let spot = p.spot_price();
            let d = if ext > spot { ArbDirection::BuyX } else { ArbDirection::SellX };
            let r = if d == ArbDirection::BuyX { p.reserve_y } else { p.reserve_x };
            (d, (r / 100).max(10))
        }
        d => (d, best.amount_in.saturating_mul(2).max(10)),
    };
    let curve: Vec<Value> = (0..=CURVE_POINTS)
        .map(|i| {
            let u = reach * i as u128 / CURVE_POINTS as u128;
            let profit = arb_profit(&p, dir, &ext, u).map(|r| to_f64(&r)).unwrap_or(f64::NAN);
            json!([u.to_string(), profit])
        })
        .collect();
    let name = |d: ArbDirection| match d {
        ArbDirection::None => "none",
        ArbDirection::BuyX => "buy_x",
        ArbDirection::SellX => "sell_x",
    };
    Ok(json!({
        "direction": name(best.direction),
        "curve_direction": name(dir),
        "amount_in": best.amount_in.to_string(),
        "expected_profit": dec(&best.expected_profit, 6),
        "spot": dec(&p.spot_price(), 9),
        "curve": curve,
    })
    .to_string())
}

fn thin(rows: &[SeriesRow]) -> Value {
    let step = rows.len().div_ceil(SERIES_POINTS).max(1);
    let picked: Vec<&SeriesRow> = rows.iter().step_by(step).chain(rows.last()).collect();
    json!({
        "tick": picked.iter().map(|r| r.tick).collect::<Vec<_>>(),
        "mev_cum": picked.iter().map(|r| to_f64(&r.mev_cum)).collect::<Vec<_>>(),
        "settled": picked.iter().map(|r| r.settlements_finalized).collect::<Vec<_>>(),
        "share_price": picked.iter().map(|r| to_f64(&r.share_price)).collect::<Vec<_>>(),
    })
}

fn report(run: &RunOutput) -> Value {
    let r = &run.report;
    json!({
        "mev_captured_total": dec(&r.mev_captured_total, 2),
        "opportunities_detected": r.opportunities_detected,
        "opportunities_captured": r.opportunities_captured,
        "intents_submitted": r.intents_submitted,
        "settlements_finalized": r.settlements_finalized,
        "settlements_refunded": r.settlements_refunded,
        "latency_mean_ticks": dec(&r.latency_mean_ticks, 2),
        "total_fees_paid": dec(&r.total_fees_paid, 2),
        "share_price_final": dec(&r.share_price_final, 8),
        "positions_opened": r.positions_opened,
        "liquidations": r.liquidations,
        "series": thin(&run.series),
    })
}

/// Reference market under quorum settlement and under the slow bridge.
pub fn compare_json(seed: u64, horizon: u64, vault: bool) -> Result<String, String> {
    let mut s = reference_scenario();
    s.seed = seed;
    s.horizon_ticks = horizon;
    s.vault.enabled = vault;
    let out = sim::paired_compare(&s).map_err(|e| e.to_string())?;
    Ok(json!({
        "fluxlayer": report(&out.flux),
        "baseline": report(&out.baseline),
        "latency_reduction_fraction": dec(&out.deltas.latency_reduction_fraction, 4),
        "additional_mev": dec(&out.deltas.additional_mev, 2),
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn swap_quote(reserve_x: &str, reserve_y: &str, fee_bps: u32, amount_in: &str, x_in: bool) -> Result<String, JsError> {
    js(swap_quote_json(reserve_x, reserve_y, fee_bps, amount_in, x_in))
}

#[wasm_bindgen]
pub fn arb_profile(reserve_x: &str, reserve_y: &str, fee_bps: u32, external: &str) -> Result<String, JsError> {
    js(arb_profile_json(reserve_x, reserve_y, fee_bps, external))
}

#[wasm_bindgen]
pub fn compare(seed: u64, horizon: u64, vault: bool) -> Result<String, JsError> {
    js(compare_json(seed, horizon, vault))
}
