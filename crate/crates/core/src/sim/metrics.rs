//! Run metrics, per-tick series, and their fixed-format rendering
//! (decimals with 9 fractional digits, half-even).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_traits::{ToPrimitive, Zero};

use super::scenario::RunMode;
use crate::ledger::Tick;
use crate::num::{format_decimal, format_f64, from_u128, Rational};
use crate::vault::Vault;

pub const DIGITS: u32 = 9;

pub const SERIES_HEADER: &str = "tick,mev_cum,settlements_finalized,mean_latency,utilization,share_price,slippage_mean_bps";

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(u64),
    Dec(Rational),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Dec(r) => format_decimal(r, DIGITS),
            Value::Float(f) => format_f64(*f, DIGITS),
            Value::Text(s) => serde_json::to_string(s).expect("string serializes"),
        }
    }

    /// Numeric view for aggregation; text has none.
    pub fn as_rational(&self) -> Option<Rational> {
        match self {
            Value::Int(v) => Some(Rational::from_integer((*v).into())),
            Value::Dec(r) => Some(r.clone()),
            Value::Float(f) => Rational::from_float(*f).or_else(|| Some(Rational::zero())),
            Value::Text(_) => None,
        }
    }
}

/// Renders `(key, value)` pairs as a JSON object in the given order.
pub fn render_object(fields: &[(&str, Value)], indent: usize) -> String {
    let pad = " ".repeat(indent + 2);
    let mut out = String::from("{\n");
    for (i, (k, v)) in fields.iter().enumerate() {
        let sep = if i + 1 == fields.len() { "" } else { "," };
        let _ = writeln!(out, "{pad}{}: {}{sep}", serde_json::to_string(k).expect("key"), v.render());
    }
    out.push_str(&" ".repeat(indent));
    out.push('}');
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub tick: Tick,
    pub mev_cum: Rational,
    pub settlements_finalized: u64,
    pub mean_latency: Rational,
    pub utilization: Rational,
    pub share_price: Rational,
    pub slippage_mean_bps: Rational,
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 96);
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.tick,
            format_decimal(&r.mev_cum, DIGITS),
            r.settlements_finalized,
            format_decimal(&r.mean_latency, DIGITS),
            format_decimal(&r.utilization, DIGITS),
            format_decimal(&r.share_price, DIGITS),
            format_decimal(&r.slippage_mean_bps, DIGITS),
        );
    }
    out
}

fn mean(sum: u128, n: u64) -> Rational {
    if n == 0 {
        Rational::zero()
    } else {
        Rational::new(sum.into(), n.into())
    }
}

/// Running totals kept by the world while it steps.
#[derive(Clone, Debug)]
pub(crate) struct Accumulator {
    scale: Rational,
    pub capital: u128,
    pub fees: u128,
    pub detected: BTreeSet<(Tick, u32)>,
    pub captured: BTreeSet<(Tick, u32)>,
    pub intents_submitted: u64,
    pub finalized: u64,
    pub refunded: u64,
    pub latencies: Vec<u64>,
    latency_sum: u128,
    latency_seen: usize,
    pub slippage: Vec<u32>,
    slippage_seen: usize,
    slippage_sum: u128,
    pub positions_opened: u64,
    pub liquidations: u64,
    pub interest_paid: u128,
    pub lp_loss: Rational,
    pub slashed: u64,
    /// Home base units.
    pub mev: Rational,
    pub maker_realized: Rational,
    trades_closed: u64,
    fill_rate_sum: Rational,
    filled_orders: u64,
    fragments: u64,
}

impl Accumulator {
    pub fn new(home_decimals: u8, capital: u128) -> Self {
        Self {
            scale: Rational::new(1.into(), num_bigint::BigInt::from(10u32).pow(home_decimals as u32)),
            capital,
            fees: 0,
            detected: BTreeSet::new(),
            captured: BTreeSet::new(),
            intents_submitted: 0,
            finalized: 0,
            refunded: 0,
            latencies: Vec::new(),
            latency_sum: 0,
            latency_seen: 0,
            slippage: Vec::new(),
            slippage_seen: 0,
            slippage_sum: 0,
            positions_opened: 0,
            liquidations: 0,
            interest_paid: 0,
            lp_loss: Rational::zero(),
            slashed: 0,
            mev: Rational::zero(),
            maker_realized: Rational::zero(),
            trades_closed: 0,
            fill_rate_sum: Rational::zero(),
            filled_orders: 0,
            fragments: 0,
        }
    }

    pub fn close_trade(&mut self, pnl: Rational, maker_change: Rational, fills: u32, filled: u128, amount: u128) {
        self.mev += pnl;
        self.maker_realized += maker_change;
        self.trades_closed += 1;
        if amount > 0 {
            self.fill_rate_sum += Rational::new(filled.into(), amount.into());
        }
        if fills > 0 {
            self.filled_orders += 1;
            self.fragments += fills as u64;
        }
    }

    fn display(&self, base_units: &Rational) -> Rational {
        base_units * &self.scale
    }

    pub fn sample(&mut self, tick: Tick, vault: Option<&Vault>) -> SeriesRow {
        for l in &self.latencies[self.latency_seen..] {
            self.latency_sum += *l as u128;
        }
        self.latency_seen = self.latencies.len();
        for s in &self.slippage[self.slippage_seen..] {
            self.slippage_sum += *s as u128;
        }
        self.slippage_seen = self.slippage.len();
        SeriesRow {
            tick,
            mev_cum: self.display(&self.mev),
            settlements_finalized: self.finalized,
            mean_latency: mean(self.latency_sum, self.latencies.len() as u64),
            utilization: vault.map_or_else(Rational::zero, |v| v.utilization()),
            share_price: vault.map_or_else(|| Rational::from_integer(1.into()), |v| v.share_price()),
            slippage_mean_bps: mean(self.slippage_sum, self.slippage.len() as u64),
        }
    }

    pub fn report(&self, mode: RunMode, seed: u64, horizon: u64, ticks_per_year: u64, vault: Option<&Vault>) -> MetricsReport {
        let mut lat = self.latencies.clone();
        lat.sort_unstable();
        let n = lat.len();
        let median = match n {
            0 => Rational::zero(),
            _ if n % 2 == 1 => Rational::from_integer(lat[n / 2].into()),
            _ => Rational::new((lat[n / 2 - 1] as u128 + lat[n / 2] as u128).into(), 2.into()),
        };
        let p95 = if n == 0 { 0 } else { lat[(95 * n).div_ceil(100) - 1] };
        let latency_sum: u128 = lat.iter().map(|&l| l as u128).sum();
        let slip_sum: u128 = self.slippage.iter().map(|&s| s as u128).sum();
        let share_price = vault.map_or_else(|| Rational::from_integer(1.into()), |v| v.share_price());
        let lp_apy = match vault {
            // simple annualization; compounding over a short horizon explodes
            Some(_) if horizon > 0 => {
                (&share_price - Rational::from_integer(1.into())) * Rational::new(ticks_per_year.into(), horizon.into())
            }
            _ => Rational::zero(),
        };
        MetricsReport {
            mode,
            seed,
            horizon_ticks: horizon,
            mev_captured_total: self.display(&self.mev),
            opportunities_detected: self.detected.len() as u64,
            opportunities_captured: self.captured.len() as u64,
            intents_submitted: self.intents_submitted,
            settlements_finalized: self.finalized,
            settlements_refunded: self.refunded,
            latency_mean_ticks: mean(latency_sum, n as u64),
            latency_median_ticks: median,
            latency_p95_ticks: p95,
            total_fees_paid: self.display(&from_u128(self.fees)),
            mean_slippage_bps: mean(slip_sum, self.slippage.len() as u64),
            fill_rate: if self.trades_closed == 0 {
                Rational::zero()
            } else {
                &self.fill_rate_sum / Rational::from_integer(self.trades_closed.into())
            },
            fragments_per_order: mean(self.fragments as u128, self.filled_orders),
            lp_apy,
            maker_roi: if self.capital == 0 {
                Rational::zero()
            } else {
                &self.maker_realized / from_u128(self.capital)
            },
            share_price_final: share_price,
            utilization_final: vault.map_or_else(Rational::zero, |v| v.utilization()),
            positions_opened: self.positions_opened,
            liquidations: self.liquidations,
            interest_paid: self.display(&from_u128(self.interest_paid)),
            lp_loss: self.display(&self.lp_loss),
            validators_slashed: self.slashed,
        }
    }
}

/// Monetary fields are in display units of the home asset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mode: RunMode,
    pub seed: u64,
    pub horizon_ticks: u64,
    /// Realized arbitrage PnL net of every fee, before vault interest.
    pub mev_captured_total: Rational,
    pub opportunities_detected: u64,
    pub opportunities_captured: u64,
    pub intents_submitted: u64,
    pub settlements_finalized: u64,
    pub settlements_refunded: u64,
    pub latency_mean_ticks: Rational,
    pub latency_median_ticks: Rational,
    pub latency_p95_ticks: u64,
    pub total_fees_paid: Rational,
    pub mean_slippage_bps: Rational,
    pub fill_rate: Rational,
    pub fragments_per_order: Rational,
    pub lp_apy: Rational,
    pub maker_roi: Rational,
    pub share_price_final: Rational,
    pub utilization_final: Rational,
    pub positions_opened: u64,
    pub liquidations: u64,
    pub interest_paid: Rational,
    pub lp_loss: Rational,
    pub validators_slashed: u64,
}

impl MetricsReport {
    pub fn fields(&self) -> Vec<(&'static str, Value)> {
        use Value::*;
        let mode = match self.mode {
            RunMode::Fluxlayer => "fluxlayer",
            RunMode::Baseline => "baseline",
        };
        vec![
            ("mode", Text(mode.into())),
            ("seed", Int(self.seed)),
            ("horizon_ticks", Int(self.horizon_ticks)),
            ("mev_captured_total", Dec(self.mev_captured_total.clone())),
            ("opportunities_detected", Int(self.opportunities_detected)),
            ("opportunities_captured", Int(self.opportunities_captured)),
            ("intents_submitted", Int(self.intents_submitted)),
            ("settlements_finalized", Int(self.settlements_finalized)),
            ("settlements_refunded", Int(self.settlements_refunded)),
            ("latency_mean_ticks", Dec(self.latency_mean_ticks.clone())),
            ("latency_median_ticks", Dec(self.latency_median_ticks.clone())),
            ("latency_p95_ticks", Int(self.latency_p95_ticks)),
            ("total_fees_paid", Dec(self.total_fees_paid.clone())),
            ("mean_slippage_bps", Dec(self.mean_slippage_bps.clone())),
            ("fill_rate", Dec(self.fill_rate.clone())),
            ("fragments_per_order", Dec(self.fragments_per_order.clone())),
            ("lp_apy", Dec(self.lp_apy.clone())),
            ("maker_roi", Dec(self.maker_roi.clone())),
            ("share_price_final", Dec(self.share_price_final.clone())),
            ("utilization_final", Dec(self.utilization_final.clone())),
            ("positions_opened", Int(self.positions_opened)),
            ("liquidations", Int(self.liquidations)),
            ("interest_paid", Dec(self.interest_paid.clone())),
            ("lp_loss", Dec(self.lp_loss.clone())),
            ("validators_slashed", Int(self.validators_slashed)),
        ]
    }

    pub fn to_json(&self) -> String {
        render_object(&self.fields(), 0) + "\n"
    }
}

/// Flux minus baseline on the same seed and price path.
#[derive(Clone, Debug, PartialEq)]
pub struct Deltas {
    pub latency_reduction_ticks: Rational,
    /// Share of baseline mean latency saved; zero when baseline settled nothing.
    pub latency_reduction_fraction: Rational,
    pub additional_mev: Rational,
    pub additional_captured: i64,
    pub additional_intents: i64,
    /// Flux fees minus baseline fees.
    pub cost_difference: Rational,
}

impl Deltas {
    pub fn between(flux: &MetricsReport, baseline: &MetricsReport) -> Self {
        let red = &baseline.latency_mean_ticks - &flux.latency_mean_ticks;
        let frac = if baseline.latency_mean_ticks.is_zero() {
            Rational::zero()
        } else {
            &red / &baseline.latency_mean_ticks
        };
        Self {
            latency_reduction_ticks: red,
            latency_reduction_fraction: frac,
            additional_mev: &flux.mev_captured_total - &baseline.mev_captured_total,
            additional_captured: flux.opportunities_captured as i64 - baseline.opportunities_captured as i64,
            additional_intents: flux.intents_submitted as i64 - baseline.intents_submitted as i64,
            cost_difference: &flux.total_fees_paid - &baseline.total_fees_paid,
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, Value)> {
        use Value::*;
        let int = |v: i64| Dec(Rational::from_integer(v.into()));
        vec![
            ("latency_reduction_ticks", Dec(self.latency_reduction_ticks.clone())),
            ("latency_reduction_fraction", Dec(self.latency_reduction_fraction.clone())),
            ("additional_mev", Dec(self.additional_mev.clone())),
            ("additional_captured", int(self.additional_captured)),
            ("additional_intents", int(self.additional_intents)),
            ("cost_difference", Dec(self.cost_difference.clone())),
        ]
    }

    pub fn to_json(&self) -> String {
        render_object(&self.fields(), 0) + "\n"
    }
}

/// Mean and population standard deviation of every numeric field.
pub fn aggregate(reports: &[MetricsReport]) -> String {
    let Some(first) = reports.first() else { return "{}\n".into() };
    let n = Rational::from_integer((reports.len() as u64).into());
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"runs\": {},", reports.len());
    let seeds: Vec<String> = reports.iter().map(|r| r.seed.to_string()).collect();
    let _ = writeln!(out, "  \"seeds\": [{}],", seeds.join(", "));
    let names: Vec<&str> = first.fields().iter().filter(|(_, v)| v.as_rational().is_some()).map(|(k, _)| *k).collect();
    let names: Vec<&str> = names.into_iter().filter(|k| *k != "seed").collect();
    let columns: Vec<Vec<Rational>> = names
        .iter()
        .map(|k| {
            reports
                .iter()
                .map(|r| {
                    r.fields()
                        .into_iter()
                        .find(|(name, _)| name == k)
                        .and_then(|(_, v)| v.as_rational())
                        .unwrap_or_else(Rational::zero)
                })
                .collect()
        })
        .collect();
    for (i, (k, col)) in names.iter().zip(&columns).enumerate() {
        let mean = col.iter().fold(Rational::zero(), |a, b| a + b) / &n;
        let var = col.iter().fold(Rational::zero(), |a, b| {
            let d = b - &mean;
            a + &d * &d
        }) / &n;
        let std = var.to_f64().unwrap_or(0.0).sqrt();
        let sep = if i + 1 == names.len() { "" } else { "," };
        let _ = writeln!(
            out,
            "  {}: {{\"mean\": {}, \"stddev\": {}}}{sep}",
            serde_json::to_string(k).expect("key"),
            format_decimal(&mean, DIGITS),
            format_f64(std, DIGITS)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::ratio;

    #[test]
    fn nine_digit_half_even() {
        assert_eq!(Value::Dec(ratio(1, 3)).render(), "0.333333333");
        assert_eq!(Value::Dec(ratio(5, 10_000_000_000)).render(), "0.000000000");
        assert_eq!(Value::Dec(ratio(15, 10_000_000_000)).render(), "0.000000002");
        assert_eq!(Value::Dec(ratio(-3, 2)).render(), "-1.500000000");
        assert_eq!(Value::Text("a\"b".into()).render(), "\"a\\\"b\"");
    }

    #[test]
    fn objects_keep_field_order() {
        let s = render_object(&[("z", Value::Int(1)), ("a", Value::Int(2))], 0);
        assert_eq!(s, "{\n  \"z\": 1,\n  \"a\": 2\n}");
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["a"], 2);
    }

    #[test]
    fn csv_header() {
        assert_eq!(series_csv(&[]), format!("{SERIES_HEADER}\n"));
    }
}
