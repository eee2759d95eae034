//! The simulated world and its fixed per-tick phase order.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;

use super::metrics::{Accumulator, SeriesRow};
use super::price::PriceProcess;
use super::scenario::{BookConfig, Config, RunMode};
use super::SimError;
use crate::intent::{FillPolicy, Funding, Intent, IntentBook, IntentId, IntentState, FillOffer};
use crate::ledger::{advance_clock, AssetId, ChainClock, ChainId, Ledger, Owner, ParticipantId, Tick};
use crate::markets::{optimal_arb_size, settle_amm_swap, AmmPool, ArbDirection, CexBook, CexFill, MarketError, Side};
use crate::num::{ceil_u128, floor_u128, from_bps, from_f64_rounded, from_u128, Rational};
use crate::settlement::{FillSpec, LegSpec, RecordId, RecordState, SettlementEngine, SettlementEvent, SettlementMode};
use crate::vault::{PositionId, Vault, VaultError};

const TAKER_BASE: ParticipantId = 1_000;
const LP_BASE: ParticipantId = 2_000;
const BACKGROUND: ParticipantId = 9_001;
/// Display units minted to the CEX and background desks per asset.
const DESK_INVENTORY: u128 = 1_000_000_000_000;

/// A price gap worth acting on, as seen at the current tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Opportunity {
    pub pool: u32,
    pub direction: ArbDirection,
    /// `BuyX`: home units sold through the intent. `SellX`: base units bought
    /// on the CEX.
    pub size: u128,
    /// Home-asset base units, after pool fee, CEX fee, conversion limit, gas
    /// on both chains and the settlement fee.
    pub expected_net: Rational,
    /// Home-asset capital the full-size trade ties up.
    pub cost: u128,
}

#[derive(Clone, Debug)]
struct Market {
    cfg: BookConfig,
    book: CexBook,
    process: PriceProcess,
}

#[derive(Clone, Debug)]
struct Trade {
    pool: u32,
    direction: ArbDirection,
    detection: (Tick, u32),
    funding: Owner,
    position: Option<PositionId>,
    intent: IntentId,
    records: Vec<RecordId>,
    /// Home-asset flows out of and back into the funding account.
    spent: u128,
    received: u128,
    fills_finalized: u32,
    finalized_amount: u128,
}

#[derive(Clone, Debug)]
struct Searcher {
    id: ParticipantId,
    min_profit: u128,
    uses_vault: bool,
    size_to_budget: bool,
}

#[derive(Clone, Debug)]
struct Taker {
    id: ParticipantId,
    spread_bps: u32,
    offer_share_bps: u32,
    target: Vec<(AssetId, u128)>,
}

pub struct World {
    cfg: Config,
    pub tick: Tick,
    pub ledger: Ledger,
    pub clock: ChainClock,
    pub pools: BTreeMap<u32, AmmPool>,
    markets: BTreeMap<u32, Market>,
    pool_market: BTreeMap<u32, u32>,
    pub intents: IntentBook,
    pub engine: SettlementEngine,
    pub vault: Option<Vault>,
    searchers: Vec<Searcher>,
    takers: Vec<Taker>,
    trades: BTreeMap<IntentId, Trade>,
    offered: BTreeSet<(ParticipantId, IntentId)>,
    pub(crate) acc: Accumulator,
    pub series: Vec<SeriesRow>,
    home: AssetId,
    limit: Rational,
}

fn partial_fill(book: &CexBook, side: Side, amount: u128) -> Option<CexFill> {
    match book.fill(side, amount) {
        Ok(f) => Some(f),
        Err(MarketError::InsufficientDepth(f)) => Some(*f),
        Err(_) => None,
    }
}

fn rt<E: std::fmt::Display>(ctx: &'static str) -> impl Fn(E) -> SimError {
    move |e| SimError::Runtime(format!("{ctx}: {e}"))
}

impl World {
    pub fn new(cfg: Config) -> Result<Self, SimError> {
        let mut ledger = Ledger::new(cfg.chains.clone(), cfg.assets.clone());
        let home = cfg.home_asset;
        let home_decimals = cfg.assets[home.0 as usize].decimals;
        let desk = |decimals: u8| DESK_INVENTORY * 10u128.pow(decimals as u32);

        let mut pools = BTreeMap::new();
        for p in &cfg.pools {
            ledger.mint(Owner::Pool(p.id), p.asset_x, p.reserve_x).map_err(rt("pool reserves"))?;
            ledger.mint(Owner::Pool(p.id), p.asset_y, p.reserve_y).map_err(rt("pool reserves"))?;
            if cfg.gap_half_life.is_some() {
                for a in [p.asset_x, p.asset_y] {
                    let d = cfg.assets[a.0 as usize].decimals;
                    ledger.mint(Owner::Participant(BACKGROUND), a, desk(d)).map_err(rt("background desk"))?;
                }
            }
            pools.insert(p.id, p.clone());
        }

        let mut markets = BTreeMap::new();
        for (i, b) in cfg.books.iter().enumerate() {
            for a in cfg.assets.iter().filter(|a| a.symbol == b.base || a.symbol == b.quote) {
                ledger.mint(Owner::Cex(b.id), a.id, desk(a.decimals)).map_err(rt("cex desk"))?;
            }
            let process = PriceProcess::new(b.price.clone(), cfg.seed, i as u64);
            let mut book = CexBook::new(b.id, b.base.clone(), b.quote.clone(), vec![], vec![], b.taker_fee_bps)
                .map_err(rt("cex book"))?;
            book.refresh(&Self::mid_of(b, process.price()), &b.shape).map_err(rt("cex book"))?;
            markets.insert(b.id, Market { cfg: b.clone(), book, process });
        }
        let mut pool_market = BTreeMap::new();
        for p in &cfg.pools {
            let base = &cfg.assets[p.asset_x.0 as usize].symbol;
            let quote = &cfg.assets[p.asset_y.0 as usize].symbol;
            let m = cfg
                .books
                .iter()
                .find(|b| &b.base == base && &b.quote == quote)
                .ok_or_else(|| SimError::Runtime(format!("no book for pool {}", p.id)))?;
            pool_market.insert(p.id, m.id);
        }

        let mode = match cfg.mode {
            RunMode::Fluxlayer => SettlementMode::Quorum,
            RunMode::Baseline => SettlementMode::Baseline {
                bridge_delay_ticks: cfg.bridge_delay_ticks,
            },
        };
        let mut engine = SettlementEngine::new(cfg.validators.clone(), cfg.rule.clone(), mode).map_err(rt("settlement"))?;
        engine.slash_fraction = cfg.slash_fraction.clone();
        for (chain, policy, online) in &cfg.mpc {
            engine.set_mpc_policy(*chain, policy.clone(), online.clone()).map_err(rt("mpc policy"))?;
        }

        let mut searchers = Vec::new();
        for (i, s) in cfg.searchers.iter().enumerate() {
            let id = i as ParticipantId + 1;
            if s.capital > 0 {
                ledger.mint(Owner::Participant(id), home, s.capital).map_err(rt("searcher capital"))?;
            }
            searchers.push(Searcher {
                id,
                min_profit: s.min_profit,
                uses_vault: s.uses_vault,
                size_to_budget: s.size_to_budget,
            });
        }
        let mut takers = Vec::new();
        for (i, t) in cfg.takers.iter().enumerate() {
            let id = TAKER_BASE + i as ParticipantId + 1;
            for &(a, amt) in &t.inventory {
                if amt > 0 {
                    ledger.mint(Owner::Participant(id), a, amt).map_err(rt("taker inventory"))?;
                }
            }
            takers.push(Taker {
                id,
                spread_bps: t.spread_bps,
                offer_share_bps: t.offer_share_bps,
                target: t.inventory.clone(),
            });
        }

        let vault = if cfg.vault_enabled {
            let mut v = Vault::new(home, cfg.vault_params.clone());
            ledger
                .open_account(Owner::Vault, cfg.assets[home.0 as usize].chain)
                .map_err(rt("vault"))?;
            for (i, &amt) in cfg.lp_deposits.iter().enumerate() {
                let lp = LP_BASE + i as ParticipantId + 1;
                if amt > 0 {
                    ledger.mint(Owner::Participant(lp), home, amt).map_err(rt("lp"))?;
                    v.deposit(&mut ledger, lp, amt, 0).map_err(rt("lp deposit"))?;
                }
            }
            Some(v)
        } else {
            None
        };

        let clock = ChainClock::new(ledger.chains());
        let capital: u128 = cfg.searchers.iter().map(|s| s.capital).sum();
        let limit = from_bps(cfg.limit_bps);
        Ok(Self {
            acc: Accumulator::new(home_decimals, capital),
            tick: 0,
            ledger,
            clock,
            pools,
            markets,
            pool_market,
            intents: IntentBook::new(),
            engine,
            vault,
            searchers,
            takers,
            trades: BTreeMap::new(),
            offered: BTreeSet::new(),
            series: Vec::new(),
            home,
            limit,
            cfg,
        })
    }

    fn mid_of(cfg: &BookConfig, display_price: f64) -> Rational {
        from_f64_rounded(display_price, 6) * &cfg.unit_scale
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn book(&self, id: u32) -> Option<&CexBook> {
        self.markets.get(&id).map(|m| &m.book)
    }

    fn home_chain(&self) -> ChainId {
        self.cfg.assets[self.home.0 as usize].chain
    }

    fn gas(&self, chain: ChainId) -> u128 {
        self.ledger.chain(chain).map(|c| c.gas_per_tx).unwrap_or(0)
    }

    fn settle_fee(&self) -> u128 {
        match self.cfg.mode {
            RunMode::Fluxlayer => self.cfg.settlement_fee,
            RunMode::Baseline => self.cfg.bridge_fee,
        }
    }

    /// Gas on both chains plus one settlement, charged to a one-fill trade.
    fn fixed_fees(&self, pool: &AmmPool) -> u128 {
        self.gas(self.home_chain()) + self.gas(pool.chain) + self.settle_fee()
    }

    /// Same-symbol copy of `asset` on `chain`.
    fn copy_on(&self, asset: AssetId, chain: ChainId) -> Option<AssetId> {
        let sym = &self.cfg.assets[asset.0 as usize].symbol;
        self.ledger.find_asset(chain, sym)
    }

    // -- pricing ------------------------------------------------------------

    /// Exact expected net of a trade of `size` against the current pool and
    /// book, and its home-asset cost.
    fn simulate(&self, pool: &AmmPool, book: &CexBook, dir: ArbDirection, size: u128) -> Option<(Rational, u128)> {
        if size == 0 {
            return None;
        }
        let fees = from_u128(self.fixed_fees(pool));
        match dir {
            ArbDirection::BuyX => {
                let pool_in = ceil_u128(&(from_u128(size) * &self.limit))?;
                let q = pool.quote_exact_in(pool.asset_y, pool_in).ok()?;
                let proceeds = if q.amount_out == 0 {
                    0
                } else {
                    partial_fill(book, Side::Sell, q.amount_out)?.quote.amount_out
                };
                Some((from_u128(proceeds) - from_u128(size) - fees, size))
            }
            ArbDirection::SellX => {
                let f = partial_fill(book, Side::Buy, size)?;
                let pool_in = ceil_u128(&(from_u128(f.quote.amount_out) * &self.limit))?;
                let q = pool.quote_exact_in(pool.asset_x, pool_in).ok()?;
                Some((from_u128(q.amount_out) - from_u128(f.quote.amount_in) - fees, f.quote.amount_in))
            }
            ArbDirection::None => None,
        }
    }

    /// Every pool/CEX pair with a positive expected net, best first.
    pub fn detect_opportunities(&self) -> Vec<Opportunity> {
        let mut out = Vec::new();
        for (id, pool) in &self.pools {
            let book = &self.markets[&self.pool_market[id]].book;
            let (Some(bid), Some(ask)) = (book.best_bid(), book.best_ask()) else { continue };
            let keep = from_bps(10_000 - book.taker_fee_bps);
            let buy = optimal_arb_size(pool, &(bid * &keep * &self.limit));
            let sell = optimal_arb_size(pool, &(ask / (&keep * &self.limit)));
            let candidate = if buy.direction == ArbDirection::BuyX {
                // pool input u' = ceil(u * limit)
                Some((ArbDirection::BuyX, floor_u128(&(from_u128(buy.amount_in) / &self.limit)).unwrap_or(0)))
            } else if sell.direction == ArbDirection::SellX {
                // CEX gross g with floor(g * keep) * limit ~ pool input
                let x = floor_u128(&(from_u128(sell.amount_in) / &self.limit)).unwrap_or(0);
                Some((ArbDirection::SellX, ceil_u128(&(from_u128(x) / &keep)).unwrap_or(0)))
            } else {
                None
            };
            if let Some((dir, size)) = candidate {
                if let Some((net, cost)) = self.simulate(pool, book, dir, size) {
                    if net > Rational::zero() {
                        out.push(Opportunity {
                            pool: *id,
                            direction: dir,
                            size,
                            expected_net: net,
                            cost,
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| b.expected_net.cmp(&a.expected_net).then(a.pool.cmp(&b.pool)));
        out
    }

    /// Largest size whose home cost fits `budget`.
    fn fit_budget(&self, book: &CexBook, dir: ArbDirection, full: u128, budget: u128) -> u128 {
        match dir {
            ArbDirection::BuyX => full.min(budget),
            _ => {
                let cost = |g: u128| partial_fill(book, Side::Buy, g).map_or(0, |f| f.quote.amount_in);
                if cost(full) <= budget {
                    return full;
                }
                let (mut lo, mut hi) = (0u128, full);
                while lo < hi {
                    let mid = lo + (hi - lo + 1) / 2;
                    if cost(mid) <= budget {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                lo
            }
        }
    }

    // -- ledger helpers -----------------------------------------------------

    fn pay_fee(&mut self, from: Owner, amount: u128) -> Result<u128, SimError> {
        let amount = amount.min(self.ledger.balance(from, self.home));
        if amount > 0 {
            self.ledger
                .transfer(from, Owner::FeeSink, self.home, amount, self.tick)
                .map_err(rt("fee"))?;
        }
        self.acc.fees += amount;
        Ok(amount)
    }

    /// Sells any chain's copy of the pool base on the CEX for home asset.
    fn cex_sell(&mut self, market: u32, trader: Owner, asset: AssetId, amount: u128) -> Result<u128, SimError> {
        if amount == 0 {
            return Ok(0);
        }
        let m = self.markets.get_mut(&market).expect("known market");
        let Some(f) = partial_fill(&m.book, Side::Sell, amount) else { return Ok(0) };
        m.book = f.book;
        let now = self.tick;
        if f.filled > 0 {
            self.ledger
                .transfer(trader, Owner::Cex(market), asset, f.filled, now)
                .map_err(rt("cex sell"))?;
        }
        if f.quote.amount_out > 0 {
            self.ledger
                .transfer(Owner::Cex(market), trader, self.home, f.quote.amount_out, now)
                .map_err(rt("cex sell"))?;
        }
        Ok(f.quote.amount_out)
    }

    /// Buys `gross` base units, delivered as `asset`; returns (cost, received).
    fn cex_buy(&mut self, market: u32, trader: Owner, asset: AssetId, gross: u128) -> Result<(u128, u128), SimError> {
        let m = self.markets.get_mut(&market).expect("known market");
        let f = partial_fill(&m.book, Side::Buy, gross).ok_or_else(|| SimError::Runtime("cex buy".into()))?;
        m.book = f.book;
        let now = self.tick;
        self.ledger
            .transfer(trader, Owner::Cex(market), self.home, f.quote.amount_in, now)
            .map_err(rt("cex buy"))?;
        if f.quote.amount_out > 0 {
            self.ledger
                .transfer(Owner::Cex(market), trader, asset, f.quote.amount_out, now)
                .map_err(rt("cex buy"))?;
        }
        Ok((f.quote.amount_in, f.quote.amount_out))
    }

    /// Moves `amount` of one chain's copy into another's through the CEX desk.
    fn convert_at_par(&mut self, market: u32, who: Owner, from: AssetId, to: AssetId, amount: u128) -> Result<(), SimError> {
        if amount == 0 || from == to {
            return Ok(());
        }
        let now = self.tick;
        self.ledger
            .transfer(who, Owner::Cex(market), from, amount, now)
            .map_err(rt("par conversion"))?;
        self.ledger
            .transfer(Owner::Cex(market), who, to, amount, now)
            .map_err(rt("par conversion"))?;
        Ok(())
    }

    /// Turns returned sell-leg funds back into home asset.
    fn absorb_return(&mut self, intent: IntentId, asset: AssetId, amount: u128) -> Result<(), SimError> {
        let Some(t) = self.trades.get(&intent) else { return Ok(()) };
        let (funding, market) = (t.funding, self.pool_market[&t.pool]);
        let got = if asset == self.home {
            amount
        } else {
            self.cex_sell(market, funding, asset, amount)?
        };
        self.trades.get_mut(&intent).expect("present").received += got;
        Ok(())
    }

    // -- phases -------------------------------------------------------------

    fn phase_prices(&mut self) -> Result<(), SimError> {
        for m in self.markets.values_mut() {
            let p = m.process.step();
            let mid = Self::mid_of(&m.cfg, p);
            m.book.refresh(&mid, &m.cfg.shape).map_err(rt("ladder refresh"))?;
        }
        let Some(h) = self.cfg.gap_half_life else { return Ok(()) };
        let phi = 1.0 - 0.5f64.powf(1.0 / h);
        let ids: Vec<u32> = self.pools.keys().copied().collect();
        for id in ids {
            let Some(mid) = self.markets[&self.pool_market[&id]].book.mid() else { continue };
            let pool = &self.pools[&id];
            let (x, y) = (pool.reserve_x as f64, pool.reserve_y as f64);
            let (spot, target) = (y / x, crate::num::to_f64(&mid));
            let next = spot * (target / spot).powf(phi);
            let k = x * y;
            let gamma = 1.0 - pool.fee_bps as f64 / 10_000.0;
            let (asset_in, amount) = if next > spot {
                (pool.asset_y, ((k * next).sqrt() - y) / gamma)
            } else {
                (pool.asset_x, ((k / next).sqrt() - x) / gamma)
            };
            let amount = amount.floor();
            if amount >= 1.0 && amount < 1e30 {
                let pool = self.pools.get_mut(&id).expect("listed");
                settle_amm_swap(pool, &mut self.ledger, Owner::Participant(BACKGROUND), asset_in, amount as u128, self.tick)
                    .map_err(rt("background arbitrage"))?;
            }
        }
        Ok(())
    }

    fn phase_searchers(&mut self) -> Result<(), SimError> {
        let opps = self.detect_opportunities();
        for o in &opps {
            self.acc.detected.insert((self.tick, o.pool));
        }
        let n = self.searchers.len();
        for o in opps {
            // pending far-leg swaps are public; nobody stacks on top of them
            if self.trades.values().any(|t| t.pool == o.pool) {
                continue;
            }
            for k in 0..n {
                let s = self.searchers[(self.tick as usize + k) % n].clone();
                if self.try_open_trade(&s, &o)? {
                    break;
                }
            }
        }
        Ok(())
    }

    fn try_open_trade(&mut self, s: &Searcher, o: &Opportunity) -> Result<bool, SimError> {
        let pool = self.pools[&o.pool].clone();
        let market = self.pool_market[&o.pool];
        let book = self.markets[&market].book.clone();
        let gas_home = self.gas(self.home_chain());
        let own = self.ledger.balance(Owner::Participant(s.id), self.home);
        let Some((_, full_cost)) = self.simulate(&pool, &book, o.direction, o.size) else { return Ok(false) };
        let need = full_cost + gas_home;

        let vault_usable = s.uses_vault && self.vault.is_some();
        let (size, borrow) = if own >= need {
            (o.size, None)
        } else if vault_usable {
            let v = self.vault.as_ref().expect("usable");
            let lev = &v.params.max_leverage;
            let want = ceil_u128(&(from_u128(need) / lev)).unwrap_or(u128::MAX);
            let collateral = own.min(want);
            let cap = floor_u128(&(from_u128(collateral) * lev))
                .unwrap_or(0)
                .min(collateral + v.cash())
                .min(need);
            let size = self.fit_budget(&book, o.direction, o.size, cap.saturating_sub(gas_home));
            (size, Some(collateral))
        } else {
            (self.fit_budget(&book, o.direction, o.size, own.saturating_sub(gas_home)), None)
        };
        if size < o.size && !s.size_to_budget {
            return Ok(false);
        }
        let Some((net, cost)) = self.simulate(&pool, &book, o.direction, size) else { return Ok(false) };
        if net <= Rational::zero() || net < from_u128(s.min_profit) {
            return Ok(false);
        }

        let now = self.tick;
        let total = cost + gas_home;
        let (funding, position) = match borrow {
            Some(max_collateral) => {
                let v = self.vault.as_mut().expect("usable");
                let collateral = ceil_u128(&(from_u128(total) / &v.params.max_leverage))
                    .unwrap_or(u128::MAX)
                    .min(max_collateral)
                    .max(1);
                let principal = total.saturating_sub(collateral);
                if principal == 0 {
                    (Owner::Participant(s.id), None)
                } else {
                    match v.borrow(&mut self.ledger, s.id, collateral, principal, now) {
                        Ok(pos) => {
                            self.acc.positions_opened += 1;
                            (Owner::LoanFunding(pos), Some(pos))
                        }
                        Err(VaultError::LeverageExceeded { .. } | VaultError::InsufficientVaultLiquidity { .. }) => {
                            return Ok(false)
                        }
                        Err(e) => return Err(rt("borrow")(e)),
                    }
                }
            }
            None => (Owner::Participant(s.id), None),
        };

        let mut spent = self.pay_fee(funding, gas_home)?;
        let home_chain = self.home_chain();
        let (sell_asset, amount) = match o.direction {
            ArbDirection::BuyX => (self.home, size),
            _ => {
                let base_home = self.copy_on(pool.asset_x, home_chain).expect("validated");
                let (paid, got) = self.cex_buy(market, funding, base_home, size)?;
                spent += paid;
                (base_home, got)
            }
        };
        let buy_asset = self.copy_on(sell_asset, pool.chain).expect("validated");
        let policy = match self.cfg.min_fragment_bps {
            Some(b) => FillPolicy::Fragmentable {
                min_fragment: (amount * b as u128 / 10_000).max(1),
            },
            None => FillPolicy::AllOrNothing,
        };
        let funding_kind = position.map_or(Funding::OwnFunds, Funding::VaultLoan);
        let intent = Intent::new(
            s.id,
            home_chain,
            sell_asset,
            amount,
            pool.chain,
            buy_asset,
            self.limit.clone(),
            policy,
            now + self.cfg.deadline_ticks,
            funding_kind,
        );
        let id = self
            .intents
            .submit_intent(intent, &mut self.ledger, self.vault.as_ref(), now)
            .map_err(rt("submit intent"))?;
        if sell_asset == self.home {
            spent += amount;
        }
        self.acc.intents_submitted += 1;
        self.trades.insert(
            id,
            Trade {
                pool: o.pool,
                direction: o.direction,
                detection: (now, o.pool),
                funding,
                position,
                intent: id,
                records: vec![],
                spent,
                received: 0,
                fills_finalized: 0,
                finalized_amount: 0,
            },
        );
        Ok(true)
    }

    fn phase_takers(&mut self) -> Result<(), SimError> {
        self.rebalance_takers()?;
        let now = self.tick;
        let live: Vec<Intent> = self.intents.live_intents().cloned().collect();
        for intent in live {
            for t in self.takers.clone() {
                if self.offered.contains(&(t.id, intent.id)) {
                    continue;
                }
                let price = from_bps(10_000 - t.spread_bps);
                if price < intent.limit_price {
                    continue;
                }
                let inv = self.ledger.balance(Owner::Participant(t.id), intent.buy.asset);
                let budget = from_u128(inv) * from_bps(t.offer_share_bps);
                let mut take = floor_u128(&(budget / &price)).unwrap_or(0).min(intent.remaining());
                if let FillPolicy::Fragmentable { min_fragment } = intent.fill_policy {
                    let left = intent.remaining() - take;
                    if take < min_fragment {
                        continue;
                    }
                    if left > 0 && left < min_fragment {
                        take = intent.remaining() - min_fragment;
                        if take < min_fragment {
                            continue;
                        }
                    }
                }
                if take == 0 {
                    continue;
                }
                let offer = FillOffer {
                    taker: t.id,
                    intent_id: intent.id,
                    take_amount: take,
                    price,
                    offered_tick: now,
                };
                if self.intents.submit_offer(offer, now).is_ok() {
                    self.offered.insert((t.id, intent.id));
                }
            }
        }
        Ok(())
    }

    /// Market makers top each inventory copy back up from surplus copies of
    /// the same symbol.
    fn rebalance_takers(&mut self) -> Result<(), SimError> {
        let Some(&market) = self.markets.keys().next() else { return Ok(()) };
        for t in self.takers.clone() {
            let who = Owner::Participant(t.id);
            for &(asset, target) in &t.target {
                let have = self.ledger.balance(who, asset);
                if have >= target {
                    continue;
                }
                let sym = self.cfg.assets[asset.0 as usize].symbol.clone();
                let mut short = target - have;
                for &(other, other_target) in &t.target {
                    if short == 0 {
                        break;
                    }
                    if other == asset || self.cfg.assets[other.0 as usize].symbol != sym {
                        continue;
                    }
                    let surplus = self.ledger.balance(who, other).saturating_sub(other_target);
                    let mv = surplus.min(short);
                    self.convert_at_par(market, who, other, asset, mv)?;
                    short -= mv;
                }
            }
        }
        Ok(())
    }

    fn phase_match(&mut self) -> Result<(), SimError> {
        let now = self.tick;
        for m in self.intents.match_tick(now) {
            let intent = self.intents.intent(m.intent_id).expect("matched").clone();
            for f in &m.fills {
                let spec = FillSpec {
                    id: f.settlement_id,
                    intent_id: intent.id,
                    taker: f.taker,
                    maker_account: intent.funding_account(),
                    sell: LegSpec {
                        chain: intent.sell.chain,
                        asset: intent.sell.asset,
                        amount: f.amount,
                    },
                    buy: LegSpec {
                        chain: intent.buy.chain,
                        asset: intent.buy.asset,
                        amount: f.buy_amount,
                    },
                };
                let state = self.engine.open(spec, &mut self.ledger, now).map_err(rt("lock"))?.state;
                if let Some(t) = self.trades.get_mut(&intent.id) {
                    t.records.push(f.settlement_id);
                }
                if state == RecordState::Refunded {
                    self.acc.refunded += 1;
                    self.absorb_return(intent.id, intent.sell.asset, f.amount)?;
                }
            }
        }
        Ok(())
    }

    fn phase_settle(&mut self) -> Result<(), SimError> {
        let events = self.engine.step(&mut self.ledger, self.tick).map_err(rt("settlement"))?;
        for e in events {
            match e {
                SettlementEvent::Finalized { record, latency } => {
                    self.acc.finalized += 1;
                    self.acc.latencies.push(latency);
                    self.on_finalized(record)?;
                }
                SettlementEvent::Refunded { record } => {
                    self.acc.refunded += 1;
                    let r = self.engine.record(record).expect("event").clone();
                    self.absorb_return(r.intent_id, r.sell.asset, r.sell.amount)?;
                }
                SettlementEvent::Slashed { .. } => self.acc.slashed += 1,
            }
        }
        Ok(())
    }

    /// Completes the searcher's far leg with the delivered funds.
    fn on_finalized(&mut self, record: RecordId) -> Result<(), SimError> {
        let r = self.engine.record(record).expect("finalized").clone();
        let Some(t) = self.trades.get(&r.intent_id).cloned() else { return Ok(()) };
        let market = self.pool_market[&t.pool];
        let pool_chain = self.pools[&t.pool].chain;
        let asset_in = r.buy.asset;
        let q = {
            let pool = self.pools.get_mut(&t.pool).expect("known pool");
            settle_amm_swap(pool, &mut self.ledger, t.funding, asset_in, r.buy.amount, self.tick).map_err(rt("far-leg swap"))?
        };
        self.acc.slippage.push(q.slippage_bps);
        let got = match t.direction {
            ArbDirection::BuyX => {
                let x = self.pools[&t.pool].asset_x;
                self.cex_sell(market, t.funding, x, q.amount_out)?
            }
            _ => {
                let y = self.pools[&t.pool].asset_y;
                self.convert_at_par(market, t.funding, y, self.home, q.amount_out)?;
                q.amount_out
            }
        };
        let fee = self.gas(pool_chain) + self.settle_fee();
        let paid = self.pay_fee(t.funding, fee)?;
        let tr = self.trades.get_mut(&r.intent_id).expect("present");
        tr.received += got;
        tr.spent += paid;
        tr.fills_finalized += 1;
        tr.finalized_amount += r.sell.amount;
        Ok(())
    }

    fn trade_done(&self, t: &Trade) -> bool {
        let closed = self
            .intents
            .intent(t.intent)
            .is_some_and(|i| matches!(i.state, IntentState::Filled | IntentState::Expired | IntentState::Cancelled));
        closed
            && t.records
                .iter()
                .all(|r| self.engine.record(*r).is_some_and(|r| r.state.is_terminal()))
    }

    fn phase_vault(&mut self) -> Result<(), SimError> {
        let now = self.tick;
        let done: Vec<IntentId> = self.trades.values().filter(|t| self.trade_done(t)).map(|t| t.intent).collect();
        for id in done {
            let t = self.trades.remove(&id).expect("listed");
            let pnl = Rational::from_integer(t.received.into()) - Rational::from_integer(t.spent.into());
            let mut maker_change = pnl.clone();
            if let (Some(pos), Some(v)) = (t.position, self.vault.as_mut()) {
                let collateral = from_u128(v.position(pos).expect("open").collateral);
                let residual = match v.repay(&mut self.ledger, pos, now) {
                    Ok(out) => {
                        self.acc.interest_paid += out.interest_paid;
                        out.residual_to_maker
                    }
                    Err(VaultError::Shortfall { .. }) => {
                        let out = v.liquidate(&mut self.ledger, pos, now).map_err(rt("liquidate"))?;
                        self.acc.liquidations += 1;
                        self.acc.lp_loss += out.loss;
                        out.returned_to_maker
                    }
                    Err(e) => return Err(rt("repay")(e)),
                };
                maker_change = from_u128(residual) - collateral;
            }
            let intent = self.intents.intent(id).expect("known");
            self.acc.close_trade(pnl.clone(), maker_change, t.fills_finalized, t.finalized_amount, intent.sell.amount);
            if pnl > Rational::zero() && t.fills_finalized > 0 {
                self.acc.captured.insert(t.detection);
            }
        }
        if self.vault.is_some() {
            let values = self.position_values();
            let v = self.vault.as_mut().expect("checked");
            v.mark_and_accrue(now, |p| values.get(&p.id).cloned());
        }
        Ok(())
    }

    /// Everything a position's trade holds, at CEX mid.
    fn position_values(&self) -> BTreeMap<PositionId, Rational> {
        let mut out = BTreeMap::new();
        for t in self.trades.values() {
            let Some(pos) = t.position else { continue };
            let mid = self.markets[&self.pool_market[&t.pool]].book.mid().unwrap_or_else(Rational::zero);
            let price = |a: AssetId| {
                if self.cfg.assets[a.0 as usize].symbol == self.cfg.assets[self.home.0 as usize].symbol {
                    Rational::from_integer(1.into())
                } else {
                    mid.clone()
                }
            };
            let mut v = Rational::zero();
            for a in self.ledger.assets() {
                let b = self.ledger.balance(Owner::LoanFunding(pos), a.id);
                if b > 0 {
                    v += from_u128(b) * price(a.id);
                }
            }
            if let Some(i) = self.intents.intent(t.intent) {
                if i.is_live() {
                    v += from_u128(i.remaining()) * price(i.sell.asset);
                }
            }
            for r in &t.records {
                if let Some(r) = self.engine.record(*r) {
                    if !r.state.is_terminal() {
                        v += from_u128(r.sell.amount) * price(r.sell.asset);
                    }
                }
            }
            out.insert(pos, v);
        }
        out
    }

    fn phase_expire(&mut self) -> Result<(), SimError> {
        let refunds = self.intents.expire_and_cancel(&mut self.ledger, self.tick).map_err(rt("expiry"))?;
        for r in refunds {
            self.absorb_return(r.intent_id, r.asset, r.amount)?;
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let bad = |m: String| SimError::Invariant(format!("tick {}: {m}", self.tick));
        self.ledger.check_conservation().map_err(bad)?;
        if let Some(v) = &self.vault {
            v.check_identity(&self.ledger).map_err(bad)?;
        }
        for p in self.pools.values() {
            if self.ledger.balance(Owner::Pool(p.id), p.asset_x) != p.reserve_x
                || self.ledger.balance(Owner::Pool(p.id), p.asset_y) != p.reserve_y
            {
                return Err(bad(format!("pool {} reserves diverge from ledger", p.id)));
            }
        }
        for a in self.ledger.assets() {
            if self.ledger.balance(Owner::IntentEscrow, a.id) != self.intents.escrow_outstanding(a.id) {
                return Err(bad(format!("intent escrow of {} incomplete", a.symbol)));
            }
        }
        Ok(())
    }

    /// One tick in the fixed phase order.
    pub fn step(&mut self) -> Result<(), SimError> {
        advance_clock(&mut self.clock, self.ledger.chains(), 1);
        self.phase_prices()?;
        self.phase_searchers()?;
        self.phase_takers()?;
        self.phase_match()?;
        self.phase_settle()?;
        self.phase_vault()?;
        self.phase_expire()?;
        if cfg!(debug_assertions) {
            self.check_invariants()?;
        }
        let row = self.acc.sample(self.tick, self.vault.as_ref());
        self.series.push(row);
        self.tick += 1;
        Ok(())
    }

    pub fn run_to_horizon(&mut self) -> Result<(), SimError> {
        while self.tick < self.cfg.horizon_ticks {
            self.step()?;
        }
        self.check_invariants()
    }

    pub fn open_trades(&self) -> usize {
        self.trades.len()
    }

    /// Realized per-trade numbers are in the accumulator; this exposes the
    /// current share price for callers that step manually.
    pub fn share_price(&self) -> Option<Rational> {
        self.vault.as_ref().map(|v| v.share_price())
    }
}
