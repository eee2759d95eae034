//! Scenario file schema and its resolution into typed, base-unit config.
//!
//! Amounts are decimal strings in display units of the asset they refer to;
//! assets are referenced as `SYMBOL@chain`. Fees and gas are in the home asset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Asset, AssetId, Chain, ChainId};
use crate::markets::{AmmPool, LadderShape};
use crate::num::{parse_units, Rational};
use crate::settlement::{Behavior, MpcPolicy, QuorumRule, SignerId, Validator, ValidatorStatus};
use crate::vault::VaultParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Fluxlayer,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon_ticks: u64,
    #[serde(default)]
    pub mode: RunMode,
    /// Only used to annualize LP yield.
    #[serde(default = "default_ticks_per_year")]
    pub ticks_per_year: u64,
    pub chains: Vec<ChainSpec>,
    pub assets: Vec<AssetSpec>,
    pub pools: Vec<PoolSpec>,
    pub cex_books: Vec<CexSpec>,
    pub validators: Vec<ValidatorSpec>,
    #[serde(default)]
    pub quorum: QuorumSpec,
    #[serde(default)]
    pub mpc_policies: Vec<MpcSpec>,
    #[serde(default)]
    pub vault: VaultSpec,
    pub agents: AgentsSpec,
    #[serde(default)]
    pub fees: FeeSpec,
}

fn default_ticks_per_year() -> u64 {
    31_536_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: u16,
    pub name: String,
    pub block_interval_ticks: u64,
    pub native_finality_blocks: u64,
    #[serde(default = "yes")]
    pub smart_contracts: bool,
    #[serde(default = "zero_amount")]
    pub gas_per_tx: String,
}

fn yes() -> bool {
    true
}

fn zero_amount() -> String {
    "0".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub chain: String,
    pub symbol: String,
    pub decimals: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub id: u32,
    pub base: String,
    pub quote: String,
    pub reserve_base: String,
    pub reserve_quote: String,
    pub fee_bps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CexSpec {
    pub id: u32,
    /// Symbols; the book converts any chain's copy of them.
    pub base: String,
    pub quote: String,
    pub taker_fee_bps: u32,
    pub half_spread_bps: u32,
    pub levels: u32,
    pub step_bps: u32,
    /// Display units of base per level.
    pub level_size: String,
    pub price: PriceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSpec {
    /// Quote per base, display units.
    pub initial: String,
    #[serde(default)]
    pub drift_per_tick: f64,
    #[serde(default)]
    pub volatility_per_tick: f64,
    #[serde(default)]
    pub jump_prob: f64,
    /// Log-size of a jump; sign is drawn fairly.
    #[serde(default)]
    pub jump_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorSpec {
    pub id: u32,
    pub restake: u64,
    #[serde(default = "honest")]
    pub behavior: Behavior,
    #[serde(default = "one_tick")]
    pub attest_delay_ticks: u64,
}

fn honest() -> Behavior {
    Behavior::Honest
}

fn one_tick() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuorumSpec {
    pub threshold_num: u64,
    pub threshold_den: u64,
    pub timeout_ticks: u64,
    #[serde(default = "one")]
    pub slash_fraction: String,
}

fn one() -> String {
    "1".into()
}

impl Default for QuorumSpec {
    fn default() -> Self {
        let r = QuorumRule::default();
        Self {
            threshold_num: r.threshold_num,
            threshold_den: r.threshold_den,
            timeout_ticks: r.timeout_ticks,
            slash_fraction: one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub chain: String,
    pub signers: Vec<SignerId>,
    pub t: usize,
    /// Signers reachable during the run; all of them when omitted.
    #[serde(default)]
    pub online: Option<Vec<SignerId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaultSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "ten")]
    pub max_leverage: String,
    #[serde(default = "d_margin")]
    pub maintenance_margin_bps: u32,
    #[serde(default = "d_rate")]
    pub interest_rate_bps_per_epoch: u32,
    #[serde(default = "d_epoch")]
    pub epoch_ticks: u64,
    #[serde(default)]
    pub profit_share_bps: u32,
    /// One LP per entry, home-asset display units.
    #[serde(default)]
    pub lp_deposits: Vec<String>,
}

fn ten() -> String {
    "10".into()
}
fn d_margin() -> u32 {
    VaultParams::default().maintenance_margin_bps
}
fn d_rate() -> u32 {
    VaultParams::default().interest_rate_bps_per_epoch
}
fn d_epoch() -> u64 {
    VaultParams::default().epoch_ticks
}

impl Default for VaultSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            max_leverage: ten(),
            maintenance_margin_bps: d_margin(),
            interest_rate_bps_per_epoch: d_rate(),
            epoch_ticks: d_epoch(),
            profit_share_bps: 0,
            lp_deposits: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSpec {
    /// Searcher capital, fees and the vault are all in this asset.
    pub home_asset: String,
    pub searchers: Vec<SearcherSpec>,
    #[serde(default)]
    pub intent: IntentSpec,
    pub takers: Vec<TakerSpec>,
    #[serde(default)]
    pub background: BackgroundSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearcherSpec {
    #[serde(default = "one_u32")]
    pub count: u32,
    pub capital: String,
    pub min_profit: String,
    #[serde(default)]
    pub uses_vault: bool,
    /// Shrink a trade to what the searcher can fund instead of skipping it.
    #[serde(default)]
    pub size_to_budget: bool,
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    /// Worst accepted conversion of the sell leg into its same-symbol copy.
    #[serde(default = "d_limit")]
    pub limit_bps: u32,
    /// Fragmentable with this share of the order as minimum fragment;
    /// all-or-nothing when absent.
    #[serde(default)]
    pub min_fragment_bps: Option<u32>,
    #[serde(default = "d_deadline")]
    pub deadline_ticks: u64,
}

fn d_limit() -> u32 {
    9_980
}
fn d_deadline() -> u64 {
    20
}

impl Default for IntentSpec {
    fn default() -> Self {
        Self {
            limit_bps: d_limit(),
            min_fragment_bps: None,
            deadline_ticks: d_deadline(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TakerSpec {
    #[serde(default = "one_u32")]
    pub count: u32,
    pub spread_bps: u32,
    /// Largest share of current inventory committed to one offer.
    #[serde(default = "full")]
    pub offer_share_bps: u32,
    pub inventory: Vec<Holding>,
}

fn full() -> u32 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holding {
    pub asset: String,
    pub amount: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Other arbitrageurs close a pool/CEX gap with this half-life; off when
    /// absent.
    #[serde(default)]
    pub gap_half_life_ticks: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeeSpec {
    #[serde(default = "zero_amount")]
    pub settlement_fee: String,
    /// Per-settlement fee of the slow bridge; defaults to `settlement_fee`.
    #[serde(default)]
    pub bridge_fee: Option<String>,
    #[serde(default = "d_bridge_delay")]
    pub bridge_delay_ticks: u64,
}

fn d_bridge_delay() -> u64 {
    10
}

impl Default for FeeSpec {
    fn default() -> Self {
        Self {
            settlement_fee: zero_amount(),
            bridge_fee: None,
            bridge_delay_ticks: d_bridge_delay(),
        }
    }
}

// ---------------------------------------------------------------------------
// Resolved form

#[derive(Clone, Debug)]
pub struct PriceParams {
    /// Quote per base in display units.
    pub initial: f64,
    pub drift: f64,
    pub volatility: f64,
    pub jump_prob: f64,
    pub jump_size: f64,
}

#[derive(Clone, Debug)]
pub struct BookConfig {
    pub id: u32,
    pub base: String,
    pub quote: String,
    pub taker_fee_bps: u32,
    pub shape: LadderShape,
    pub price: PriceParams,
    /// Multiplier from display price to base-unit price.
    pub unit_scale: Rational,
}

#[derive(Clone, Debug)]
pub struct SearcherConfig {
    pub capital: u128,
    pub min_profit: u128,
    pub uses_vault: bool,
    pub size_to_budget: bool,
}

#[derive(Clone, Debug)]
pub struct TakerConfig {
    pub spread_bps: u32,
    pub offer_share_bps: u32,
    pub inventory: Vec<(AssetId, u128)>,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub horizon_ticks: u64,
    pub mode: RunMode,
    pub ticks_per_year: u64,
    pub chains: Vec<Chain>,
    pub assets: Vec<Asset>,
    pub pools: Vec<AmmPool>,
    pub books: Vec<BookConfig>,
    pub validators: Vec<Validator>,
    pub rule: QuorumRule,
    pub slash_fraction: Rational,
    pub mpc: Vec<(ChainId, MpcPolicy, Vec<SignerId>)>,
    pub vault_enabled: bool,
    pub vault_params: VaultParams,
    pub lp_deposits: Vec<u128>,
    pub home_asset: AssetId,
    pub searchers: Vec<SearcherConfig>,
    pub limit_bps: u32,
    pub min_fragment_bps: Option<u32>,
    pub deadline_ticks: u64,
    pub takers: Vec<TakerConfig>,
    pub gap_half_life: Option<f64>,
    pub settlement_fee: u128,
    pub bridge_fee: u128,
    pub bridge_delay_ticks: u64,
}

fn parse_ratio(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let digits = s.split_once('.').map_or(0, |(_, f)| f.len());
    if digits > 30 {
        return Err(format!("too many fractional digits in '{s}'"));
    }
    let units = parse_units(s, digits as u8)?;
    Ok(Rational::new(units.into(), num_bigint::BigInt::from(10u32).pow(digits as u32)))
}

fn bps(field: &str, v: u32, max: u32) -> Result<(), ValidationError> {
    if v > max {
        return Err(invalid(field, format!("{v} exceeds {max} bps")));
    }
    Ok(())
}

struct Resolver<'a> {
    chain_by_name: BTreeMap<&'a str, ChainId>,
    assets: Vec<Asset>,
}

impl<'a> Resolver<'a> {
    fn asset(&self, field: &str, r: &str) -> Result<&Asset, ValidationError> {
        let (symbol, chain) = r
            .split_once('@')
            .ok_or_else(|| invalid(field, format!("'{r}' is not SYMBOL@chain")))?;
        let chain = self
            .chain_by_name
            .get(chain)
            .ok_or_else(|| invalid(field, format!("unknown chain '{chain}'")))?;
        self.assets
            .iter()
            .find(|a| a.chain == *chain && a.symbol == symbol)
            .ok_or_else(|| invalid(field, format!("unknown asset '{r}'")))
    }

    fn amount(&self, field: &str, asset: &Asset, s: &str) -> Result<u128, ValidationError> {
        parse_units(s, asset.decimals).map_err(|e| invalid(field, e))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.resolve().map(|_| ())
    }

    /// Checks every field and cross-reference, converting to base units.
    pub fn resolve(&self) -> Result<Config, ValidationError> {
        let s = self;
        if s.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", s.schema_version),
            ));
        }
        if s.ticks_per_year == 0 {
            return Err(invalid("ticks_per_year", "must be positive"));
        }
        if s.chains.is_empty() {
            return Err(invalid("chains", "at least one chain required"));
        }

        let mut chain_by_name = BTreeMap::new();
        let mut ids = BTreeSet::new();
        let mut chains = Vec::new();
        for (i, c) in s.chains.iter().enumerate() {
            let f = |k: &str| format!("chains[{i}].{k}");
            if !ids.insert(c.id) {
                return Err(invalid(f("id"), format!("duplicate chain id {}", c.id)));
            }
            if chain_by_name.insert(c.name.as_str(), ChainId(c.id)).is_some() {
                return Err(invalid(f("name"), format!("duplicate chain name '{}'", c.name)));
            }
            if c.block_interval_ticks == 0 {
                return Err(invalid(f("block_interval_ticks"), "must be at least 1"));
            }
            chains.push(Chain {
                id: ChainId(c.id),
                name: c.name.clone(),
                block_interval_ticks: c.block_interval_ticks,
                native_finality_blocks: c.native_finality_blocks,
                smart_contracts: c.smart_contracts,
                gas_per_tx: 0,
            });
        }

        let mut assets: Vec<Asset> = Vec::new();
        for (i, a) in s.assets.iter().enumerate() {
            let f = |k: &str| format!("assets[{i}].{k}");
            let chain = *chain_by_name
                .get(a.chain.as_str())
                .ok_or_else(|| invalid(f("chain"), format!("unknown chain '{}'", a.chain)))?;
            if a.decimals > 18 {
                return Err(invalid(f("decimals"), "must lie in [0, 18]"));
            }
            if a.symbol.is_empty() || a.symbol.contains('@') {
                return Err(invalid(f("symbol"), "must be non-empty without '@'"));
            }
            if assets.iter().any(|b| b.chain == chain && b.symbol == a.symbol) {
                return Err(invalid(f("symbol"), format!("duplicate asset {}@{}", a.symbol, a.chain)));
            }
            if let Some(b) = assets.iter().find(|b| b.symbol == a.symbol && b.decimals != a.decimals) {
                return Err(invalid(
                    f("decimals"),
                    format!("{} has {} decimals elsewhere; same-symbol copies convert at par", a.symbol, b.decimals),
                ));
            }
            assets.push(Asset {
                id: AssetId(assets.len() as u16),
                chain,
                symbol: a.symbol.clone(),
                decimals: a.decimals,
            });
        }
        let r = Resolver {
            chain_by_name,
            assets,
        };

        let home = r.asset("agents.home_asset", &s.agents.home_asset)?.clone();
        for (i, c) in s.chains.iter().enumerate() {
            chains[i].gas_per_tx = r.amount(&format!("chains[{i}].gas_per_tx"), &home, &c.gas_per_tx)?;
        }

        let mut pools = Vec::new();
        let mut pool_ids = BTreeSet::new();
        for (i, p) in s.pools.iter().enumerate() {
            let f = |k: &str| format!("pools[{i}].{k}");
            if !pool_ids.insert(p.id) {
                return Err(invalid(f("id"), format!("duplicate pool id {}", p.id)));
            }
            let base = r.asset(&f("base"), &p.base)?.clone();
            let quote = r.asset(&f("quote"), &p.quote)?.clone();
            if base.chain != quote.chain {
                return Err(invalid(f("quote"), "pool assets must share a chain"));
            }
            if quote.symbol != home.symbol {
                return Err(invalid(f("quote"), format!("must be a copy of the home asset {}", home.symbol)));
            }
            if !r.assets.iter().any(|a| a.chain == home.chain && a.symbol == base.symbol) {
                return Err(invalid(f("base"), format!("no {}@home-chain copy to route through", base.symbol)));
            }
            if !s.cex_books.iter().any(|b| b.base == base.symbol && b.quote == quote.symbol) {
                return Err(invalid(f("base"), format!("no CEX book quotes {}/{}", base.symbol, quote.symbol)));
            }
            let rx = r.amount(&f("reserve_base"), &base, &p.reserve_base)?;
            let ry = r.amount(&f("reserve_quote"), &quote, &p.reserve_quote)?;
            let pool = AmmPool::new(p.id, base.chain, base.id, quote.id, rx, ry, p.fee_bps)
                .map_err(|e| invalid(f("reserve_base"), e.to_string()))?;
            pools.push(pool);
        }

        let mut books = Vec::new();
        let mut book_ids = BTreeSet::new();
        for (i, b) in s.cex_books.iter().enumerate() {
            let f = |k: &str| format!("cex_books[{i}].{k}");
            if !book_ids.insert(b.id) {
                return Err(invalid(f("id"), format!("duplicate book id {}", b.id)));
            }
            let base = r
                .assets
                .iter()
                .find(|a| a.symbol == b.base)
                .ok_or_else(|| invalid(f("base"), format!("unknown symbol '{}'", b.base)))?;
            let quote = r
                .assets
                .iter()
                .find(|a| a.symbol == b.quote)
                .ok_or_else(|| invalid(f("quote"), format!("unknown symbol '{}'", b.quote)))?;
            bps(&f("taker_fee_bps"), b.taker_fee_bps, 1_000)?;
            if b.levels == 0 {
                return Err(invalid(f("levels"), "must be at least 1"));
            }
            if b.half_spread_bps as u64 + (b.levels as u64 - 1) * b.step_bps as u64 >= 10_000 {
                return Err(invalid(f("step_bps"), "deepest bid would be non-positive"));
            }
            if b.levels > 1 && b.step_bps == 0 {
                return Err(invalid(f("step_bps"), "must be positive with several levels"));
            }
            let level_size = parse_units(&b.level_size, base.decimals).map_err(|e| invalid(f("level_size"), e))?;
            if level_size == 0 {
                return Err(invalid(f("level_size"), "must be positive"));
            }
            let initial = parse_ratio(&b.price.initial).map_err(|e| invalid(f("price.initial"), e))?;
            if initial <= Rational::from_integer(0.into()) {
                return Err(invalid(f("price.initial"), "must be positive"));
            }
            let p = &b.price;
            for (k, v) in [
                ("price.drift_per_tick", p.drift_per_tick),
                ("price.volatility_per_tick", p.volatility_per_tick),
                ("price.jump_size", p.jump_size),
            ] {
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(invalid(f(k), "must be finite with magnitude at most 1"));
                }
            }
            if p.volatility_per_tick < 0.0 {
                return Err(invalid(f("price.volatility_per_tick"), "must be non-negative"));
            }
            if !(0.0..=1.0).contains(&p.jump_prob) {
                return Err(invalid(f("price.jump_prob"), "must lie in [0, 1]"));
            }
            let unit_scale = Rational::new(
                num_bigint::BigInt::from(10u32).pow(quote.decimals as u32),
                num_bigint::BigInt::from(10u32).pow(base.decimals as u32),
            );
            books.push(BookConfig {
                id: b.id,
                base: b.base.clone(),
                quote: b.quote.clone(),
                taker_fee_bps: b.taker_fee_bps,
                shape: LadderShape {
                    half_spread_bps: b.half_spread_bps,
                    levels: b.levels,
                    step_bps: b.step_bps,
                    level_size,
                },
                price: PriceParams {
                    initial: crate::num::to_f64(&initial),
                    drift: p.drift_per_tick,
                    volatility: p.volatility_per_tick,
                    jump_prob: p.jump_prob,
                    jump_size: p.jump_size,
                },
                unit_scale,
            });
        }
        let pairs: BTreeSet<_> = books.iter().map(|b| (b.base.clone(), b.quote.clone())).collect();
        if pairs.len() != books.len() {
            return Err(invalid("cex_books", "at most one book per symbol pair"));
        }

        if s.validators.is_empty() {
            return Err(invalid("validators", "at least one validator required"));
        }
        let mut validators = Vec::new();
        let mut vids = BTreeSet::new();
        for (i, v) in s.validators.iter().enumerate() {
            if !vids.insert(v.id) {
                return Err(invalid(format!("validators[{i}].id"), format!("duplicate validator id {}", v.id)));
            }
            if v.restake == 0 {
                return Err(invalid(format!("validators[{i}].restake"), "must be positive"));
            }
            validators.push(Validator {
                id: v.id,
                restake: v.restake as u128,
                status: ValidatorStatus::Active,
                behavior: v.behavior,
                attest_delay_ticks: v.attest_delay_ticks,
            });
        }
        let rule = QuorumRule {
            threshold_num: s.quorum.threshold_num,
            threshold_den: s.quorum.threshold_den,
            timeout_ticks: s.quorum.timeout_ticks,
        };
        rule.validate().map_err(|e| invalid("quorum", e.to_string()))?;
        let slash_fraction = parse_ratio(&s.quorum.slash_fraction).map_err(|e| invalid("quorum.slash_fraction", e))?;
        if slash_fraction > Rational::from_integer(1.into()) {
            return Err(invalid("quorum.slash_fraction", "must lie in [0, 1]"));
        }

        let mut mpc = Vec::new();
        for (i, m) in s.mpc_policies.iter().enumerate() {
            let f = |k: &str| format!("mpc_policies[{i}].{k}");
            let chain = *r
                .chain_by_name
                .get(m.chain.as_str())
                .ok_or_else(|| invalid(f("chain"), format!("unknown chain '{}'", m.chain)))?;
            if mpc.iter().any(|(c, _, _)| *c == chain) {
                return Err(invalid(f("chain"), "one policy per chain"));
            }
            let policy = MpcPolicy {
                signers: m.signers.clone(),
                t: m.t,
            };
            policy.validate().map_err(|e| invalid(f("t"), e.to_string()))?;
            let online = m.online.clone().unwrap_or_else(|| m.signers.clone());
            if let Some(x) = online.iter().find(|x| !m.signers.contains(x)) {
                return Err(invalid(f("online"), format!("signer {x} not in policy")));
            }
            mpc.push((chain, policy, online));
        }
        for c in &chains {
            let used = s.pools.iter().any(|p| r.asset("", &p.base).map(|a| a.chain) == Ok(c.id)) || c.id == home.chain;
            if used && !c.smart_contracts && !mpc.iter().any(|(id, _, _)| *id == c.id) {
                return Err(invalid("mpc_policies", format!("chain '{}' has no contracts and no MPC policy", c.name)));
            }
        }

        let v = &s.vault;
        let max_leverage = parse_ratio(&v.max_leverage).map_err(|e| invalid("vault.max_leverage", e))?;
        if max_leverage < Rational::from_integer(1.into()) {
            return Err(invalid("vault.max_leverage", "must be at least 1"));
        }
        bps("vault.maintenance_margin_bps", v.maintenance_margin_bps, 10_000)?;
        bps("vault.profit_share_bps", v.profit_share_bps, 10_000)?;
        if v.epoch_ticks == 0 {
            return Err(invalid("vault.epoch_ticks", "must be positive"));
        }
        let lp_deposits = v
            .lp_deposits
            .iter()
            .enumerate()
            .map(|(i, a)| r.amount(&format!("vault.lp_deposits[{i}]"), &home, a))
            .collect::<Result<Vec<_>, _>>()?;

        let a = &s.agents;
        let mut searchers = Vec::new();
        for (i, sp) in a.searchers.iter().enumerate() {
            let f = |k: &str| format!("agents.searchers[{i}].{k}");
            let capital = r.amount(&f("capital"), &home, &sp.capital)?;
            let min_profit = r.amount(&f("min_profit"), &home, &sp.min_profit)?;
            for _ in 0..sp.count {
                searchers.push(SearcherConfig {
                    capital,
                    min_profit,
                    uses_vault: sp.uses_vault,
                    size_to_budget: sp.size_to_budget,
                });
            }
        }
        if a.intent.limit_bps == 0 || a.intent.limit_bps > 10_000 {
            return Err(invalid("agents.intent.limit_bps", "must lie in 1..=10000"));
        }
        if let Some(m) = a.intent.min_fragment_bps {
            if m == 0 || m > 10_000 {
                return Err(invalid("agents.intent.min_fragment_bps", "must lie in 1..=10000"));
            }
        }
        if a.intent.deadline_ticks == 0 {
            return Err(invalid("agents.intent.deadline_ticks", "must be positive"));
        }
        let mut takers = Vec::new();
        for (i, t) in a.takers.iter().enumerate() {
            let f = |k: &str| format!("agents.takers[{i}].{k}");
            bps(&f("spread_bps"), t.spread_bps, 9_999)?;
            bps(&f("offer_share_bps"), t.offer_share_bps, 10_000)?;
            let mut inventory = Vec::new();
            for (j, h) in t.inventory.iter().enumerate() {
                let asset = r.asset(&f(&format!("inventory[{j}].asset")), &h.asset)?;
                let amount = r.amount(&f(&format!("inventory[{j}].amount")), asset, &h.amount)?;
                inventory.push((asset.id, amount));
            }
            for _ in 0..t.count {
                takers.push(TakerConfig {
                    spread_bps: t.spread_bps,
                    offer_share_bps: t.offer_share_bps,
                    inventory: inventory.clone(),
                });
            }
        }
        if let Some(h) = a.background.gap_half_life_ticks {
            if !(h.is_finite() && h > 0.0) {
                return Err(invalid("agents.background.gap_half_life_ticks", "must be positive"));
            }
        }

        let settlement_fee = r.amount("fees.settlement_fee", &home, &s.fees.settlement_fee)?;
        let bridge_fee = match &s.fees.bridge_fee {
            Some(b) => r.amount("fees.bridge_fee", &home, b)?,
            None => settlement_fee,
        };

        Ok(Config {
            seed: s.seed,
            horizon_ticks: s.horizon_ticks,
            mode: s.mode,
            ticks_per_year: s.ticks_per_year,
            chains,
            assets: r.assets.clone(),
            pools,
            books,
            validators,
            rule,
            slash_fraction,
            mpc,
            vault_enabled: v.enabled,
            vault_params: VaultParams {
                max_leverage,
                maintenance_margin_bps: v.maintenance_margin_bps,
                interest_rate_bps_per_epoch: v.interest_rate_bps_per_epoch,
                epoch_ticks: v.epoch_ticks,
                profit_share_bps: v.profit_share_bps,
            },
            lp_deposits,
            home_asset: home.id,
            searchers,
            limit_bps: a.intent.limit_bps,
            min_fragment_bps: a.intent.min_fragment_bps,
            deadline_ticks: a.intent.deadline_ticks,
            takers,
            gap_half_life: a.background.gap_half_life_ticks,
            settlement_fee,
            bridge_fee,
            bridge_delay_ticks: s.fees.bridge_delay_ticks,
        })
    }
}

/// A small two-chain market used by examples, tests and the demo: a hub
/// chain holding the home asset and a faster pool chain.
pub fn reference_scenario() -> Scenario {
    let json = include_str!("reference_scenario.json");
    Scenario::from_json(json).expect("bundled scenario parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_resolves() {
        let c = reference_scenario().resolve().unwrap();
        assert_eq!(c.chains.len(), 2);
        assert_eq!(c.pools[0].reserve_x, 10_000_000_000);
        assert_eq!(c.pools[0].reserve_y, 6_000_000_000_000);
        assert_eq!(c.books[0].unit_scale, Rational::new(1.into(), 100.into()));
    }

    #[test]
    fn unknown_pool_asset_names_the_field() {
        let mut s = reference_scenario();
        s.pools[0].base = "ETH@dex".into();
        let e = s.validate().unwrap_err();
        assert_eq!(e.field, "pools[0].base");
    }

    #[test]
    fn duplicate_chain_id() {
        let mut s = reference_scenario();
        s.chains[1].id = s.chains[0].id;
        assert_eq!(s.validate().unwrap_err().field, "chains[1].id");
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&reference_scenario().to_json()).unwrap();
        v["pools"][0]["colour"] = "blue".into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn excess_precision_is_an_error() {
        let mut s = reference_scenario();
        s.pools[0].reserve_quote = "1.0000001".into();
        assert_eq!(s.validate().unwrap_err().field, "pools[0].reserve_quote");
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("61000").unwrap(), Rational::from_integer(61_000.into()));
        assert_eq!(parse_ratio("0.25").unwrap(), Rational::new(1.into(), 4.into()));
        assert!(parse_ratio("x").is_err());
    }
}
