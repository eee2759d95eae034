//! Independent oracles and a random event machine shared by the property
//! tests and the acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Pow, Zero};
use proptest::prelude::*;

use fluxlayer::intent::{FillOffer, FillPolicy, Funding, Intent, IntentBook};
use fluxlayer::ledger::{Asset, AssetId, Chain, ChainId, Ledger, Owner, ParticipantId, Tick};
use fluxlayer::markets::{settle_amm_swap, AmmPool, ArbDirection};
use fluxlayer::num::{from_u128, ratio, Rational};
use fluxlayer::settlement::{
    Behavior, FillSpec, LegSpec, MpcPolicy, QuorumRule, RecordState, SettlementEngine, SettlementMode, Validator,
    ValidatorStatus,
};
use fluxlayer::vault::{PositionState, Vault, VaultParams};

// ---------------------------------------------------------------------------
// AMM reference

/// `floor(r_out * a * (1 - f) / (r_in + a * (1 - f)))` in big rationals.
pub fn reference_out(r_in: u128, r_out: u128, a: u128, fee_bps: u32) -> u128 {
    let g = Rational::new(BigInt::from(10_000 - fee_bps), BigInt::from(10_000));
    let a_eff = from_u128(a) * g;
    let out = from_u128(r_out) * &a_eff / (from_u128(r_in) + &a_eff);
    let f = out.floor().to_integer();
    u128::try_from(f).expect("fits")
}

/// Continuous pool-leg profit in input units, `w * r_out * g * u / (r_in + g * u) - u`,
/// where `w` is the output's worth in input units.
fn profit_f64(r_in: u128, r_out: u128, fee_bps: u32, w: f64, u: u128) -> f64 {
    let g = (10_000 - fee_bps) as f64 / 10_000.0;
    let gu = g * u as f64;
    w * r_out as f64 * gu / (r_in as f64 + gu) - u as f64
}

/// The same profit in exact rationals.
fn profit_exact(r_in: u128, r_out: u128, fee_bps: u32, w: &Rational, u: u128) -> Rational {
    let gu = Rational::new(BigInt::from(10_000 - fee_bps), BigInt::from(10_000)) * from_u128(u);
    w * from_u128(r_out) * &gu / (from_u128(r_in) + &gu) - from_u128(u)
}

pub struct GridBest {
    pub direction: ArbDirection,
    pub amount_in: u128,
    pub step: u128,
}

/// Exhaustive grid over pool input in steps of `max(1, r_in / 10_000)`, up to
/// `span` times the input reserve, against the external price `p / q` (Y per
/// X). Near-ties from the float scan are settled exactly.
pub fn grid_search(pool: &AmmPool, p: u128, q: u128, span: u128) -> GridBest {
    let (x, y) = (pool.reserve_x, pool.reserve_y);
    let mut best = GridBest {
        direction: ArbDirection::None,
        amount_in: 0,
        step: 1,
    };
    let mut best_profit = Rational::zero();
    for (dir, r_in, r_out, w) in [
        (ArbDirection::BuyX, y, x, Rational::new(BigInt::from(p), BigInt::from(q))),
        (ArbDirection::SellX, x, y, Rational::new(BigInt::from(q), BigInt::from(p))),
    ] {
        let wf = fluxlayer::num::to_f64(&w);
        let step = (r_in / 10_000).max(1);
        let (mut k_best, mut f_best) = (0u128, 0.0f64);
        let mut k = 1;
        while k * step <= span * r_in {
            let f = profit_f64(r_in, r_out, pool.fee_bps, wf, k * step);
            if f > f_best {
                (k_best, f_best) = (k, f);
            }
            k += 1;
        }
        let lo = k_best.saturating_sub(3).max(1);
        for k in lo..=k_best + 3 {
            let e = profit_exact(r_in, r_out, pool.fee_bps, &w, k * step);
            if e > best_profit {
                best_profit = e;
                best = GridBest {
                    direction: dir,
                    amount_in: k * step,
                    step,
                };
            }
        }
    }
    best
}

/// Best exact profit (Y units) over every integer pool input in `1..=upto`,
/// quoted with the reference formula.
pub fn best_integer_profit(pool: &AmmPool, dir: ArbDirection, p: u128, q: u128, upto: u128) -> Rational {
    let ext = Rational::new(BigInt::from(p), BigInt::from(q));
    let mut best = Rational::zero();
    for u in 1..=upto {
        let profit = match dir {
            ArbDirection::BuyX => &ext * from_u128(reference_out(pool.reserve_y, pool.reserve_x, u, pool.fee_bps)) - from_u128(u),
            ArbDirection::SellX => from_u128(reference_out(pool.reserve_x, pool.reserve_y, u, pool.fee_bps)) - &ext * from_u128(u),
            ArbDirection::None => Rational::zero(),
        };
        if profit > best {
            best = profit;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Matching reference

/// An offer as the oracle sees it. Lower `price_rank` is a better price.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BookEntry {
    pub price_rank: u32,
    pub tick: Tick,
    pub cap: u128,
}

/// Indices of `entries` in priority order: better price, then earlier tick,
/// then arrival.
pub fn priority_order(entries: &[BookEntry]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by_key(|&i| (entries[i].price_rank, entries[i].tick, i));
    idx
}

fn lex_greater(a: &[u128], b: &[u128]) -> bool {
    let n = a.len().max(b.len());
    for i in 0..n {
        let (x, y) = (a.get(i).copied().unwrap_or(0), b.get(i).copied().unwrap_or(0));
        if x != y {
            return x > y;
        }
    }
    false
}

/// Every allocation that accepts a prefix of the priority queue, with each
/// amount within its offer's cap and the policy's bounds, enumerated in full;
/// returns the lexicographically largest in priority order.
pub fn brute_force_allocate(policy: FillPolicy, remaining: u128, caps: &[u128]) -> Vec<u128> {
    fn feasible(policy: FillPolicy, remaining: u128, used: u128) -> bool {
        let left = remaining - used;
        match policy {
            FillPolicy::AllOrNothing => left == 0,
            FillPolicy::Fragmentable { min_fragment } => left == 0 || left >= min_fragment,
        }
    }
    fn walk(policy: FillPolicy, remaining: u128, caps: &[u128], cur: &mut Vec<u128>, used: u128, best: &mut Vec<u128>) {
        if !cur.is_empty() && feasible(policy, remaining, used) && lex_greater(cur, best) {
            *best = cur.clone();
        }
        let i = cur.len();
        if i == caps.len() || used == remaining {
            return;
        }
        let lo = match policy {
            FillPolicy::AllOrNothing => 1,
            FillPolicy::Fragmentable { min_fragment } => min_fragment,
        };
        let hi = caps[i].min(remaining - used);
        for a in lo..=hi {
            cur.push(a);
            walk(policy, remaining, caps, cur, used + a, best);
            cur.pop();
        }
    }
    let mut best = Vec::new();
    walk(policy, remaining, caps, &mut Vec::new(), 0, &mut best);
    best
}

pub const M_SELL: AssetId = AssetId(0);
pub const M_BUY: AssetId = AssetId(1);

/// A one-intent book ready for offers: the maker (participant 1) sells
/// `remaining` units at limit 1 under `policy`.
pub fn matching_fixture(policy: FillPolicy, remaining: u128) -> (Ledger, IntentBook, u64) {
    let mut ledger = two_chain_ledger(&[("S", 1), ("B", 1)]);
    ledger.mint(Owner::Participant(1), M_SELL, remaining).unwrap();
    let mut book = IntentBook::new();
    let intent = Intent::new(
        1,
        CHAIN_A,
        M_SELL,
        remaining,
        CHAIN_A,
        M_BUY,
        Rational::one(),
        policy,
        1_000,
        Funding::OwnFunds,
    );
    let id = book.submit_intent(intent, &mut ledger, None, 0).unwrap();
    (ledger, book, id)
}

/// Price of a rank: rank 0 is the best.
pub fn rank_price(rank: u32) -> Rational {
    ratio(1_000 + 10 * (8 - rank as i128), 1_000)
}

/// Runs `entries` (in arrival order) through the book at tick 10 and returns
/// the accepted `(arrival index, amount)` pairs in fill order, or `None` when
/// an offer was rejected on submission.
pub fn match_via_book(book: &mut IntentBook, id: u64, entries: &[BookEntry]) -> Vec<(usize, u128)> {
    let mut seq_to_idx = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        let offer = FillOffer {
            taker: 100 + i as ParticipantId,
            intent_id: id,
            take_amount: e.cap,
            price: rank_price(e.price_rank),
            offered_tick: e.tick,
        };
        if let Ok(seq) = book.submit_offer(offer, 10) {
            seq_to_idx.insert(seq, i);
        }
    }
    book.match_tick(10)
        .into_iter()
        .filter(|r| r.intent_id == id)
        .flat_map(|r| r.fills)
        .map(|f| (seq_to_idx[&f.offer_seq], f.amount))
        .collect()
}

/// The oracle's answer for the same book: offers below the minimum fragment
/// never enter the queue.
pub fn match_via_oracle(policy: FillPolicy, remaining: u128, entries: &[BookEntry]) -> Vec<(usize, u128)> {
    let min = match policy {
        FillPolicy::AllOrNothing => 1,
        FillPolicy::Fragmentable { min_fragment } => min_fragment,
    };
    let order: Vec<usize> = priority_order(entries).into_iter().filter(|&i| entries[i].cap >= min).collect();
    let caps: Vec<u128> = order.iter().map(|&i| entries[i].cap).collect();
    brute_force_allocate(policy, remaining, &caps)
        .into_iter()
        .enumerate()
        .map(|(k, a)| (order[k], a))
        .collect()
}

// ---------------------------------------------------------------------------
// Ledgers

pub const CHAIN_A: ChainId = ChainId(1);
pub const CHAIN_B: ChainId = ChainId(2);

fn chain(id: ChainId, contracts: bool) -> Chain {
    Chain {
        id,
        name: format!("c{}", id.0),
        block_interval_ticks: 1,
        native_finality_blocks: 3,
        smart_contracts: contracts,
        gas_per_tx: 0,
    }
}

/// Chain A has contracts, chain B does not. Assets are numbered in order;
/// a trailing `1` puts the asset on chain A, `2` on chain B.
pub fn two_chain_ledger(assets: &[(&str, u16)]) -> Ledger {
    let assets = assets
        .iter()
        .enumerate()
        .map(|(i, (sym, c))| Asset {
            id: AssetId(i as u16),
            chain: ChainId(*c),
            symbol: sym.to_string(),
            decimals: 0,
        })
        .collect();
    Ledger::new(vec![chain(CHAIN_A, true), chain(CHAIN_B, false)], assets)
}

// ---------------------------------------------------------------------------
// Settlement traces

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VSpec {
    pub behavior: Behavior,
    pub stake: u128,
    pub delay: u64,
}

pub const S_SELL: AssetId = AssetId(0);
pub const S_BUY: AssetId = AssetId(1);

#[derive(Clone, Debug)]
pub struct TraceResult {
    /// Per record: terminal state (if any) and the tick it was reached.
    pub outcomes: Vec<(RecordState, Option<Tick>)>,
    pub slashed: Vec<u32>,
}

/// Opens one record per entry of `opens` (at that tick) and steps the engine
/// every tick through `horizon`, checking safety after each step. Sell legs
/// live on chain A (escrow), buy legs on chain B (3 signers, threshold 2).
pub fn run_trace(
    validators: &[VSpec],
    timeout: u64,
    mpc_online: &[u32],
    opens: &[Tick],
    horizon: Tick,
) -> Result<TraceResult, String> {
    let vals: Vec<Validator> = validators
        .iter()
        .enumerate()
        .map(|(i, v)| Validator {
            id: i as u32 + 1,
            restake: v.stake,
            status: ValidatorStatus::Active,
            behavior: v.behavior,
            attest_delay_ticks: v.delay,
        })
        .collect();
    let rule = QuorumRule {
        threshold_num: 2,
        threshold_den: 3,
        timeout_ticks: timeout,
    };
    let mut engine = SettlementEngine::new(vals, rule, SettlementMode::Quorum).map_err(|e| e.to_string())?;
    engine
        .set_mpc_policy(
            CHAIN_B,
            MpcPolicy {
                signers: vec![1, 2, 3],
                t: 2,
            },
            mpc_online.to_vec(),
        )
        .map_err(|e| e.to_string())?;
    let mut ledger = two_chain_ledger(&[("S", 1), ("B", 2)]);
    let (maker, taker) = (1, 2);
    let n = opens.len() as u128;
    ledger.mint(Owner::IntentEscrow, S_SELL, 7 * n).unwrap();
    ledger.mint(Owner::Participant(taker), S_BUY, 11 * n).unwrap();

    let mut seen: BTreeMap<u64, (RecordState, Tick)> = BTreeMap::new();
    for now in 0..=horizon {
        for (i, &t) in opens.iter().enumerate() {
            if t == now {
                let spec = FillSpec {
                    id: i as u64 + 1,
                    intent_id: 1,
                    taker,
                    maker_account: Owner::Participant(maker),
                    sell: LegSpec {
                        chain: CHAIN_A,
                        asset: S_SELL,
                        amount: 7,
                    },
                    buy: LegSpec {
                        chain: CHAIN_B,
                        asset: S_BUY,
                        amount: 11,
                    },
                };
                engine.open(spec, &mut ledger, now).map_err(|e| e.to_string())?;
            }
        }
        engine.step(&mut ledger, now).map_err(|e| format!("step {now}: {e}"))?;
        ledger.check_conservation()?;
        for r in engine.records() {
            if r.finalized_tick.is_some() && r.refunded_tick.is_some() {
                return Err(format!("record {} both finalized and refunded", r.id));
            }
            if let Some((st, at)) = seen.get(&r.id) {
                if r.state != *st {
                    return Err(format!("record {} left terminal {st:?} (reached at {at}) for {:?}", r.id, r.state));
                }
            } else if r.state.is_terminal() {
                seen.insert(r.id, (r.state, now));
            }
            let custody = ledger.balance(Owner::Custody(r.id), S_SELL) + ledger.balance(Owner::Custody(r.id), S_BUY);
            let expect = if r.state.is_terminal() { 0 } else { 18 };
            if custody != expect {
                return Err(format!("record {} custody {custody} in state {:?}", r.id, r.state));
            }
        }
    }
    // payouts match outcomes, all-or-nothing across legs
    let finalized = seen.values().filter(|(s, _)| *s == RecordState::Finalized).count() as u128;
    let refunded = seen.values().filter(|(s, _)| *s == RecordState::Refunded).count() as u128;
    if ledger.balance(Owner::Participant(taker), S_SELL) != 7 * finalized
        || ledger.balance(Owner::Participant(maker), S_BUY) != 11 * finalized
        || ledger.balance(Owner::Participant(maker), S_SELL) != 7 * refunded
    {
        return Err("payouts disagree with terminal states".into());
    }
    for v in &engine.validators {
        let spec = validators[v.id as usize - 1];
        if v.status == ValidatorStatus::Slashed && spec.behavior != Behavior::Equivocating {
            return Err(format!("validator {} slashed without equivocating", v.id));
        }
    }
    let outcomes = (1..=opens.len() as u64)
        .map(|id| match seen.get(&id) {
            Some((s, t)) => (*s, Some(*t)),
            None => (engine.record(id).map_or(RecordState::Pending, |r| r.state), None),
        })
        .collect();
    let slashed = engine
        .validators
        .iter()
        .filter(|v| v.status == ValidatorStatus::Slashed)
        .map(|v| v.id)
        .collect();
    Ok(TraceResult { outcomes, slashed })
}

/// `part >= total * 2/3`
pub fn at_least_two_thirds(part: u128, total: u128) -> bool {
    3 * part >= 2 * total
}

// ---------------------------------------------------------------------------
// Conservation event machine

pub const U_A: AssetId = AssetId(0);
pub const U_B: AssetId = AssetId(1);
pub const X_B: AssetId = AssetId(2);
const PEOPLE: [ParticipantId; 5] = [1, 2, 3, 11, 12];
const MAKERS: [ParticipantId; 3] = [1, 2, 3];
const TAKERS: [ParticipantId; 2] = [11, 12];
pub const MAX_LEVERAGE: i128 = 10;

#[derive(Clone, Debug)]
pub enum Op {
    Transfer { from: u8, to: u8, asset: u8, amount: u32 },
    Swap { who: u8, x_in: bool, amount: u32 },
    Deposit { lp: u8, amount: u32 },
    Withdraw { lp: u8, pct: u8 },
    Borrow { maker: u8, collateral: u32, lev_tenths: u8 },
    Intent { maker: u8, amount: u32, loan: Option<u8>, buy_x: bool, limit: (u8, u8), frag_pct: Option<u8>, ttl: u8 },
    Offer { taker: u8, pick: u8, take_pct: u8, bump: u8, back: u8 },
    Match,
    Advance { ticks: u8 },
    Mark { pick: u8, pct: u8 },
    Repay { pick: u8 },
    Liquidate { pick: u8 },
    Cancel { pick: u8 },
    Mpc { online: bool },
}

pub fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (any::<u8>(), any::<u8>(), any::<u8>(), 1u32..5_000).prop_map(|(from, to, asset, amount)| Op::Transfer { from, to, asset, amount }),
        2 => (any::<u8>(), any::<bool>(), 1u32..3_000).prop_map(|(who, x_in, amount)| Op::Swap { who, x_in, amount }),
        3 => (any::<u8>(), 1u32..20_000).prop_map(|(lp, amount)| Op::Deposit { lp, amount }),
        1 => (any::<u8>(), 1u8..=100).prop_map(|(lp, pct)| Op::Withdraw { lp, pct }),
        3 => (any::<u8>(), 1u32..3_000, 10u8..=120).prop_map(|(maker, collateral, lev_tenths)| Op::Borrow { maker, collateral, lev_tenths }),
        4 => (
            any::<u8>(),
            1u32..8_000,
            proptest::option::of(any::<u8>()),
            any::<bool>(),
            (1u8..=4, 1u8..=4),
            proptest::option::of(1u8..=60),
            1u8..=12
        )
            .prop_map(|(maker, amount, loan, buy_x, limit, frag_pct, ttl)| Op::Intent { maker, amount, loan, buy_x, limit, frag_pct, ttl }),
        5 => (any::<u8>(), any::<u8>(), 1u8..=120, 0u8..20, 0u8..3).prop_map(|(taker, pick, take_pct, bump, back)| Op::Offer { taker, pick, take_pct, bump, back }),
        3 => Just(Op::Match),
        3 => (1u8..=4).prop_map(|ticks| Op::Advance { ticks }),
        2 => (any::<u8>(), 40u8..=160).prop_map(|(pick, pct)| Op::Mark { pick, pct }),
        1 => any::<u8>().prop_map(|pick| Op::Repay { pick }),
        1 => any::<u8>().prop_map(|pick| Op::Liquidate { pick }),
        1 => any::<u8>().prop_map(|pick| Op::Cancel { pick }),
        1 => any::<bool>().prop_map(|online| Op::Mpc { online }),
    ]
}

pub fn ops_strategy(max_len: usize) -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(op_strategy(), 1..max_len)
}

#[derive(Clone, Debug, Default)]
pub struct MachineStats {
    pub events: u64,
    pub applied: u64,
    pub finalized: u64,
    pub refunded: u64,
    pub borrows: u64,
    pub liquidations: u64,
    pub over_cap_rejected: u64,
    pub identity_checks: u64,
}

impl MachineStats {
    pub fn add(&mut self, o: &MachineStats) {
        self.events += o.events;
        self.applied += o.applied;
        self.finalized += o.finalized;
        self.refunded += o.refunded;
        self.borrows += o.borrows;
        self.liquidations += o.liquidations;
        self.over_cap_rejected += o.over_cap_rejected;
        self.identity_checks += o.identity_checks;
    }
}

pub struct Machine {
    pub ledger: Ledger,
    pub pool: AmmPool,
    pub book: IntentBook,
    pub engine: SettlementEngine,
    pub vault: Vault,
    pub now: Tick,
    supply: Vec<u128>,
    ever_borrowed: bool,
    /// Position id -> tick of its last accrual through `Mark`.
    marked_at: BTreeMap<u64, Tick>,
    pub stats: MachineStats,
}

fn interest_oracle(principal: u128, rate_bps: u32, epochs: u64) -> BigInt {
    // ceil(principal * ((1 + r)^e - 1)), r = bps / 10^4
    let den = BigInt::from(10_000u32).pow(epochs);
    let grown = BigInt::from(10_000 + rate_bps).pow(epochs);
    (BigInt::from(principal) * (grown - &den)).div_ceil(&den)
}

impl Default for Machine {
    fn default() -> Self {
        Self::new()
    }
}

impl Machine {
    pub fn new() -> Self {
        let mut ledger = two_chain_ledger(&[("U", 1), ("U", 2), ("X", 2)]);
        for p in MAKERS {
            ledger.mint(Owner::Participant(p), U_A, 50_000).unwrap();
        }
        for t in TAKERS {
            ledger.mint(Owner::Participant(t), U_B, 200_000).unwrap();
            ledger.mint(Owner::Participant(t), X_B, 200_000).unwrap();
        }
        ledger.mint(Owner::Pool(1), X_B, 40_000).unwrap();
        ledger.mint(Owner::Pool(1), U_B, 40_000).unwrap();
        let pool = AmmPool::new(1, CHAIN_B, X_B, U_B, 40_000, 40_000, 30).unwrap();
        let validators = vec![
            Validator::honest(1, 40, 1),
            Validator::honest(2, 35, 2),
            Validator {
                behavior: Behavior::Equivocating,
                ..Validator::honest(3, 15, 1)
            },
            Validator {
                behavior: Behavior::Offline,
                ..Validator::honest(4, 10, 1)
            },
        ];
        let rule = QuorumRule {
            threshold_num: 2,
            threshold_den: 3,
            timeout_ticks: 8,
        };
        let mut engine = SettlementEngine::new(validators, rule, SettlementMode::Quorum).unwrap();
        engine
            .set_mpc_policy(
                CHAIN_B,
                MpcPolicy {
                    signers: vec![1, 2, 3],
                    t: 2,
                },
                vec![1, 2],
            )
            .unwrap();
        let vault = Vault::new(
            U_A,
            VaultParams {
                max_leverage: ratio(MAX_LEVERAGE, 1),
                maintenance_margin_bps: 500,
                interest_rate_bps_per_epoch: 25,
                epoch_ticks: 3,
                profit_share_bps: 1_000,
            },
        );
        let supply = (0..3).map(|a| ledger.minted(AssetId(a))).collect();
        Self {
            ledger,
            pool,
            book: IntentBook::new(),
            engine,
            vault,
            now: 0,
            supply,
            ever_borrowed: false,
            marked_at: BTreeMap::new(),
            stats: MachineStats::default(),
        }
    }

    fn pick_position(&self, pick: u8) -> Option<u64> {
        let ids: Vec<u64> = self.vault.open_positions().map(|p| p.id).collect();
        (!ids.is_empty()).then(|| ids[pick as usize % ids.len()])
    }

    fn pick_intent(&self, pick: u8) -> Option<u64> {
        let ids: Vec<u64> = self.book.live_intents().map(|i| i.id).collect();
        (!ids.is_empty()).then(|| ids[pick as usize % ids.len()])
    }

    fn settle(&mut self) -> Result<(), String> {
        for ev in self.engine.step(&mut self.ledger, self.now).map_err(|e| e.to_string())? {
            match ev {
                fluxlayer::settlement::SettlementEvent::Finalized { .. } => self.stats.finalized += 1,
                fluxlayer::settlement::SettlementEvent::Refunded { .. } => self.stats.refunded += 1,
                _ => {}
            }
        }
        Ok(())
    }

    /// Applies one event. Rejections are part of the workload; only a broken
    /// invariant is an error.
    pub fn apply(&mut self, op: &Op) -> Result<(), String> {
        self.stats.events += 1;
        let now = self.now;
        let ok = match *op {
            Op::Transfer { from, to, asset, amount } => {
                let from = Owner::Participant(PEOPLE[from as usize % 5]);
                let to = Owner::Participant(PEOPLE[to as usize % 5]);
                self.ledger.transfer(from, to, AssetId(asset as u16 % 3), amount as u128, now).is_ok()
            }
            Op::Swap { who, x_in, amount } => {
                let asset = if x_in { X_B } else { U_B };
                let who = Owner::Participant(TAKERS[who as usize % 2]);
                settle_amm_swap(&mut self.pool, &mut self.ledger, who, asset, amount as u128, now).is_ok()
            }
            Op::Deposit { lp, amount } => {
                self.vault.deposit(&mut self.ledger, MAKERS[lp as usize % 3], amount as u128, now).is_ok()
            }
            Op::Withdraw { lp, pct } => {
                let lp = MAKERS[lp as usize % 3];
                let shares = self.vault.shares_of(lp) * ratio(pct as i128, 100);
                self.vault.withdraw(&mut self.ledger, lp, &shares, now).is_ok()
            }
            Op::Borrow { maker, collateral, lev_tenths } => {
                let collateral = collateral as u128;
                // leverage = (c + p) / c, so p = c * (lev - 1)
                let principal = collateral * (lev_tenths as u128).saturating_sub(10) / 10;
                let r = self.vault.borrow(&mut self.ledger, MAKERS[maker as usize % 3], collateral, principal, now);
                let over_cap = collateral + principal > collateral * MAX_LEVERAGE as u128;
                if over_cap {
                    if r.is_ok() {
                        return Err(format!("borrow at {lev_tenths}/10 leverage accepted"));
                    }
                    self.stats.over_cap_rejected += 1;
                }
                if let Ok(id) = r {
                    self.ever_borrowed |= principal > 0;
                    self.stats.borrows += 1;
                    self.marked_at.insert(id, now);
                }
                r.is_ok()
            }
            Op::Intent { maker, amount, loan, buy_x, limit, frag_pct, ttl } => {
                let maker = MAKERS[maker as usize % 3];
                let funding = match loan.and_then(|p| self.pick_position(p)) {
                    Some(id) if self.vault.position(id).is_some_and(|p| p.maker == maker) => Funding::VaultLoan(id),
                    _ => Funding::OwnFunds,
                };
                let amount = amount as u128;
                let policy = match frag_pct {
                    None => FillPolicy::AllOrNothing,
                    Some(p) => FillPolicy::Fragmentable {
                        min_fragment: (amount * p as u128 / 100).max(1),
                    },
                };
                let intent = Intent::new(
                    maker,
                    CHAIN_A,
                    U_A,
                    amount,
                    CHAIN_B,
                    if buy_x { X_B } else { U_B },
                    ratio(limit.0 as i128, limit.1 as i128),
                    policy,
                    now + ttl as u64,
                    funding,
                );
                self.book.submit_intent(intent, &mut self.ledger, Some(&self.vault), now).is_ok()
            }
            Op::Offer { taker, pick, take_pct, bump, back } => match self.pick_intent(pick) {
                None => false,
                Some(id) => {
                    let i = self.book.intent(id).expect("live");
                    let take = (i.remaining() * take_pct as u128 / 100).max(1);
                    let offer = FillOffer {
                        taker: TAKERS[taker as usize % 2],
                        intent_id: id,
                        take_amount: take,
                        price: &i.limit_price * ratio(100 + bump as i128, 100),
                        offered_tick: now.saturating_sub(back as u64),
                    };
                    self.book.submit_offer(offer, now).is_ok()
                }
            },
            Op::Match => {
                let results = self.book.match_tick(now);
                let any = !results.is_empty();
                for r in results {
                    let intent = self.book.intent(r.intent_id).expect("matched").clone();
                    for f in r.fills {
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
                        self.engine.open(spec, &mut self.ledger, now).map_err(|e| format!("open: {e}"))?;
                    }
                }
                any
            }
            Op::Advance { ticks } => {
                for _ in 0..ticks {
                    self.now += 1;
                    self.settle()?;
                    self.book.expire_and_cancel(&mut self.ledger, self.now).map_err(|e| e.to_string())?;
                }
                true
            }
            Op::Mark { pick, pct } => match self.pick_position(pick) {
                None => false,
                Some(id) => {
                    self.vault.mark_and_accrue(now, |p| {
                        (p.id == id).then(|| from_u128(p.notional()) * ratio(pct as i128, 100))
                    });
                    for p in self.vault.open_positions() {
                        self.marked_at.insert(p.id, now);
                    }
                    true
                }
            },
            Op::Repay { pick } => match self.pick_position(pick) {
                None => false,
                Some(id) => self.vault.repay(&mut self.ledger, id, now).is_ok(),
            },
            Op::Liquidate { pick } => match self.pick_position(pick) {
                None => false,
                Some(id) => {
                    let ok = self.vault.liquidate(&mut self.ledger, id, now).is_ok();
                    self.stats.liquidations += ok as u64;
                    ok
                }
            },
            Op::Cancel { pick } => match self.pick_intent(pick) {
                None => false,
                Some(id) => self.book.cancel(id, &mut self.ledger, now).is_ok(),
            },
            Op::Mpc { online } => {
                let signers = if online { vec![1, 2] } else { vec![3] };
                self.engine
                    .set_mpc_policy(
                        CHAIN_B,
                        MpcPolicy {
                            signers: vec![1, 2, 3],
                            t: 2,
                        },
                        signers,
                    )
                    .map_err(|e| e.to_string())?;
                true
            }
        };
        self.stats.applied += ok as u64;
        self.check().map_err(|e| format!("after {op:?} at tick {}: {e}", self.now))
    }

    /// Every invariant the machine tracks, exact.
    pub fn check(&mut self) -> Result<(), String> {
        // supply
        self.ledger.check_conservation()?;
        for (a, &s) in self.supply.iter().enumerate() {
            let now = self.ledger.total_supply(AssetId(a as u16)).map_err(|e| e.to_string())?;
            if now != s {
                return Err(format!("asset {a} supply {now} != {s}"));
            }
        }
        // pool reserves are backed by the pool account
        if self.ledger.balance(Owner::Pool(1), X_B) != self.pool.reserve_x
            || self.ledger.balance(Owner::Pool(1), U_B) != self.pool.reserve_y
        {
            return Err("pool reserves differ from pool balances".into());
        }
        // intent escrow equals what live intents still offer
        let escrow = self.ledger.balance(Owner::IntentEscrow, U_A);
        if escrow != self.book.escrow_outstanding(U_A) {
            return Err(format!("escrow {escrow} != outstanding {}", self.book.escrow_outstanding(U_A)));
        }
        // settlement custody
        for r in self.engine.records() {
            if r.finalized_tick.is_some() && r.refunded_tick.is_some() {
                return Err(format!("record {} has two terminal states", r.id));
            }
            let held = |a: AssetId| self.ledger.balance(Owner::Custody(r.id), a);
            let (s, b) = (held(r.sell.asset), held(r.buy.asset));
            let want = if r.state.is_terminal() { (0, 0) } else { (r.sell.amount, r.buy.amount) };
            if (s, b) != want {
                return Err(format!("record {} custody {:?} != {want:?} in {:?}", r.id, (s, b), r.state));
            }
        }
        self.check_vault()
    }

    fn check_vault(&mut self) -> Result<(), String> {
        self.stats.identity_checks += 1;
        let v = &self.vault;
        v.check_identity(&self.ledger)?;
        // equity rebuilt from the ledger and open positions
        let cash = self.ledger.balance(Owner::Vault, U_A);
        let mut equity = from_u128(cash);
        for p in v.open_positions() {
            let at = self.marked_at.get(&p.id).copied().unwrap_or(p.opened_tick);
            let epochs = at.saturating_sub(p.opened_tick) / v.params.epoch_ticks;
            let due = Rational::from_integer(interest_oracle(p.principal, v.params.interest_rate_bps_per_epoch, epochs));
            if p.accrued_interest != due {
                return Err(format!("position {} accrued {} != {} at tick {at}", p.id, p.accrued_interest, due));
            }
            equity += from_u128(p.principal) + due;
        }
        let shares: Rational = MAKERS.iter().map(|&lp| v.shares_of(lp)).fold(Rational::zero(), |a, s| a + s);
        if shares != v.total_shares() {
            return Err("per-LP shares do not sum to total".into());
        }
        if !shares.is_zero() && &shares * v.share_price() != equity {
            return Err(format!("shares x price {} != rebuilt equity {}", &shares * v.share_price(), equity));
        }
        let cap = ratio(MAX_LEVERAGE, 1);
        if let Some(p) = v.positions().find(|p| p.leverage() > cap) {
            return Err(format!("position {} at leverage {}", p.id, p.leverage()));
        }
        if !self.ever_borrowed && v.share_price() != Rational::one() {
            return Err(format!("share price {} moved without any borrowing", v.share_price()));
        }
        if v.positions().any(|p| p.state != PositionState::Open && !p.accrued_interest.is_zero()) {
            return Err("closed position still carries interest".into());
        }
        Ok(())
    }
}

/// Runs one sequence from a fresh machine.
pub fn run_sequence(ops: &[Op]) -> Result<MachineStats, String> {
    let mut m = Machine::new();
    m.check()?;
    for op in ops {
        m.apply(op)?;
    }
    Ok(m.stats)
}
