//! Intent marketplace.
//!
//! Makers post fully funded cross-chain swap intents; the sell leg moves into
//! the chain's intent escrow at submission. Takers queue offers against an
//! intent and `match_tick` allocates them in batches under price-time
//! priority. Accepted offers always form a prefix of the priority queue.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{AssetId, ChainId, Ledger, LedgerError, Owner, ParticipantId, Tick};
use crate::num::{ceil_u128, from_u128, Rational};
use crate::vault::{PositionState, Vault};

pub type IntentId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillPolicy {
    AllOrNothing,
    Fragmentable { min_fragment: u128 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Funding {
    OwnFunds,
    VaultLoan(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentState {
    Open,
    PartiallyFilled { remaining: u128 },
    Filled,
    Cancelled,
    Expired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SellLeg {
    pub chain: ChainId,
    pub asset: AssetId,
    pub amount: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuyLeg {
    pub chain: ChainId,
    pub asset: AssetId,
    pub min_total_out: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intent {
    pub id: IntentId,
    pub maker: ParticipantId,
    pub sell: SellLeg,
    pub buy: BuyLeg,
    /// Minimum buy units per sell unit.
    pub limit_price: Rational,
    pub fill_policy: FillPolicy,
    pub deadline_tick: Tick,
    pub funding: Funding,
    pub created_tick: Tick,
    pub state: IntentState,
}

impl Intent {
    /// Builds an open intent; `min_total_out` is `ceil(amount * limit_price)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        maker: ParticipantId,
        sell_chain: ChainId,
        sell_asset: AssetId,
        amount: u128,
        buy_chain: ChainId,
        buy_asset: AssetId,
        limit_price: Rational,
        fill_policy: FillPolicy,
        deadline_tick: Tick,
        funding: Funding,
    ) -> Self {
        let min_total_out = ceil_u128(&(from_u128(amount) * &limit_price)).unwrap_or(u128::MAX);
        Self {
            id: 0,
            maker,
            sell: SellLeg {
                chain: sell_chain,
                asset: sell_asset,
                amount,
            },
            buy: BuyLeg {
                chain: buy_chain,
                asset: buy_asset,
                min_total_out,
            },
            limit_price,
            fill_policy,
            deadline_tick,
            funding,
            created_tick: 0,
            state: IntentState::Open,
        }
    }

    pub fn remaining(&self) -> u128 {
        match self.state {
            IntentState::Open => self.sell.amount,
            IntentState::PartiallyFilled { remaining } => remaining,
            _ => 0,
        }
    }

    pub fn filled(&self) -> u128 {
        match self.state {
            IntentState::Open => 0,
            IntentState::PartiallyFilled { remaining } => self.sell.amount - remaining,
            IntentState::Filled => self.sell.amount,
            // closed intents remember nothing about fills; the book keeps it
            IntentState::Cancelled | IntentState::Expired => 0,
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self.state, IntentState::Open | IntentState::PartiallyFilled { .. })
    }

    /// Account that funded the intent and receives refunds and proceeds.
    pub fn funding_account(&self) -> Owner {
        match self.funding {
            Funding::OwnFunds => Owner::Participant(self.maker),
            Funding::VaultLoan(pos) => Owner::LoanFunding(pos),
        }
    }

    fn min_fragment(&self) -> Option<u128> {
        match self.fill_policy {
            FillPolicy::AllOrNothing => None,
            FillPolicy::Fragmentable { min_fragment } => Some(min_fragment),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FillOffer {
    pub taker: ParticipantId,
    pub intent_id: IntentId,
    /// Sell-leg units the taker is willing to take.
    pub take_amount: u128,
    pub price: Rational,
    pub offered_tick: Tick,
}

#[derive(Clone, Debug, PartialEq)]
struct QueuedOffer {
    offer: FillOffer,
    seq: u64,
}

/// Price descending, then time ascending, then arrival order.
fn priority(a: &QueuedOffer, b: &QueuedOffer) -> Ordering {
    b.offer
        .price
        .cmp(&a.offer.price)
        .then(a.offer.offered_tick.cmp(&b.offer.offered_tick))
        .then(a.seq.cmp(&b.seq))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fill {
    /// Also the id of the settlement record spawned for this fill.
    pub settlement_id: u64,
    pub taker: ParticipantId,
    pub offer_seq: u64,
    /// Sell-leg units.
    pub amount: u128,
    pub price: Rational,
    /// Buy-leg units owed by the taker: `ceil(amount * price)`.
    pub buy_amount: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub intent_id: IntentId,
    pub fills: Vec<Fill>,
    pub fully_filled: bool,
}

impl MatchResult {
    pub fn settlement_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.fills.iter().map(|f| f.settlement_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Refund {
    pub intent_id: IntentId,
    pub to: Owner,
    pub asset: AssetId,
    pub amount: u128,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntentError {
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("deadline {deadline} is not after now ({now})")]
    DeadlineInPast { deadline: Tick, now: Tick },
    #[error("maker holds {available}, intent needs {needed}")]
    InsufficientFunds { needed: u128, available: u128 },
    #[error("invalid fill policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid intent: {0}")]
    Invalid(String),
    #[error("loan position {0} is not open for this maker")]
    PositionNotOpen(u64),
    #[error("unknown intent {0}")]
    UnknownIntent(IntentId),
    #[error("intent {0} is closed")]
    IntentClosed(IntentId),
    #[error("offer price below the intent's limit")]
    PriceBelowLimit,
    #[error("offer of {take} below the minimum fragment {min}")]
    FragmentTooSmall { take: u128, min: u128 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug, Default)]
pub struct IntentBook {
    intents: BTreeMap<IntentId, Intent>,
    queues: BTreeMap<IntentId, Vec<QueuedOffer>>,
    next_intent: IntentId,
    next_seq: u64,
    next_settlement: u64,
}

impl IntentBook {
    pub fn new() -> Self {
        Self {
            next_intent: 1,
            next_settlement: 1,
            ..Default::default()
        }
    }

    pub fn intent(&self, id: IntentId) -> Option<&Intent> {
        self.intents.get(&id)
    }

    pub fn intents(&self) -> impl Iterator<Item = &Intent> {
        self.intents.values()
    }

    pub fn live_intents(&self) -> impl Iterator<Item = &Intent> {
        self.intents.values().filter(|i| i.is_live())
    }

    pub fn queued_offers(&self, id: IntentId) -> Vec<FillOffer> {
        self.queues
            .get(&id)
            .map(|q| q.iter().map(|o| o.offer.clone()).collect())
            .unwrap_or_default()
    }

    /// Validates, escrows the sell leg, and opens the intent.
    pub fn submit_intent(
        &mut self,
        mut intent: Intent,
        ledger: &mut Ledger,
        vault: Option<&Vault>,
        now: Tick,
    ) -> Result<IntentId, IntentError> {
        if intent.sell.amount == 0 {
            return Err(IntentError::ZeroAmount);
        }
        if intent.deadline_tick <= now {
            return Err(IntentError::DeadlineInPast {
                deadline: intent.deadline_tick,
                now,
            });
        }
        if let FillPolicy::Fragmentable { min_fragment } = intent.fill_policy {
            if min_fragment == 0 || min_fragment > intent.sell.amount {
                return Err(IntentError::InvalidPolicy(format!(
                    "min_fragment {min_fragment} outside 1..={}",
                    intent.sell.amount
                )));
            }
        }
        if intent.limit_price <= Rational::zero() {
            return Err(IntentError::Invalid("limit price must be positive".into()));
        }
        let expected_out = ceil_u128(&(from_u128(intent.sell.amount) * &intent.limit_price));
        if expected_out != Some(intent.buy.min_total_out) {
            return Err(IntentError::Invalid("min_total_out inconsistent with limit price".into()));
        }
        if ledger.asset(intent.sell.asset)?.chain != intent.sell.chain
            || ledger.asset(intent.buy.asset)?.chain != intent.buy.chain
        {
            return Err(IntentError::Invalid("leg asset not on the leg's chain".into()));
        }
        if let Funding::VaultLoan(pos) = intent.funding {
            let ok = vault
                .and_then(|v| v.position(pos))
                .is_some_and(|p| p.maker == intent.maker && p.state == PositionState::Open);
            if !ok {
                return Err(IntentError::PositionNotOpen(pos));
            }
        }
        let source = intent.funding_account();
        let available = ledger.balance(source, intent.sell.asset);
        if available < intent.sell.amount {
            return Err(IntentError::InsufficientFunds {
                needed: intent.sell.amount,
                available,
            });
        }
        ledger.transfer(source, Owner::IntentEscrow, intent.sell.asset, intent.sell.amount, now)?;
        let id = self.next_intent;
        self.next_intent += 1;
        intent.id = id;
        intent.created_tick = now;
        intent.state = IntentState::Open;
        self.intents.insert(id, intent);
        Ok(id)
    }

    /// Queues an offer; returns its arrival sequence number.
    pub fn submit_offer(&mut self, offer: FillOffer, now: Tick) -> Result<u64, IntentError> {
        let intent = self
            .intents
            .get(&offer.intent_id)
            .ok_or(IntentError::UnknownIntent(offer.intent_id))?;
        if !intent.is_live() || intent.deadline_tick <= now {
            return Err(IntentError::IntentClosed(intent.id));
        }
        if offer.take_amount == 0 {
            return Err(IntentError::ZeroAmount);
        }
        if offer.price < intent.limit_price {
            return Err(IntentError::PriceBelowLimit);
        }
        if let Some(min) = intent.min_fragment() {
            if offer.take_amount < min {
                return Err(IntentError::FragmentTooSmall {
                    take: offer.take_amount,
                    min,
                });
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queues
            .entry(offer.intent_id)
            .or_default()
            .push(QueuedOffer { offer, seq });
        Ok(seq)
    }

    /// One matching batch. Each accepted offer becomes one fill (and one
    /// settlement record); partially used offers are consumed.
    pub fn match_tick(&mut self, now: Tick) -> Vec<MatchResult> {
        let mut results = Vec::new();
        let ids: Vec<IntentId> = self
            .intents
            .values()
            .filter(|i| i.is_live() && i.deadline_tick > now)
            .map(|i| i.id)
            .collect();
        for id in ids {
            let Some(queue) = self.queues.get_mut(&id) else { continue };
            if queue.is_empty() {
                continue;
            }
            queue.sort_by(priority);
            let intent = self.intents.get_mut(&id).expect("listed above");
            let caps: Vec<u128> = queue.iter().map(|q| q.offer.take_amount).collect();
            let alloc = allocate(intent.fill_policy, intent.remaining(), &caps);
            if alloc.is_empty() {
                continue;
            }
            let accepted: Vec<QueuedOffer> = queue.drain(..alloc.len()).collect();
            let mut fills = Vec::with_capacity(alloc.len());
            for (q, amount) in accepted.into_iter().zip(alloc) {
                let buy_amount =
                    ceil_u128(&(from_u128(amount) * &q.offer.price)).unwrap_or(u128::MAX);
                fills.push(Fill {
                    settlement_id: self.next_settlement,
                    taker: q.offer.taker,
                    offer_seq: q.seq,
                    amount,
                    price: q.offer.price,
                    buy_amount,
                });
                self.next_settlement += 1;
            }
            let filled: u128 = fills.iter().map(|f| f.amount).sum();
            let remaining = intent.remaining() - filled;
            intent.state = if remaining == 0 {
                IntentState::Filled
            } else {
                IntentState::PartiallyFilled { remaining }
            };
            if remaining == 0 {
                self.queues.remove(&id);
            }
            results.push(MatchResult {
                intent_id: id,
                fills,
                fully_filled: remaining == 0,
            });
        }
        results
    }

    /// Expires every live intent whose deadline has passed and refunds the
    /// unspent escrow to the funding account (maker or loan position).
    pub fn expire_and_cancel(&mut self, ledger: &mut Ledger, now: Tick) -> Result<Vec<Refund>, IntentError> {
        let due: Vec<IntentId> = self
            .intents
            .values()
            .filter(|i| i.is_live() && i.deadline_tick <= now)
            .map(|i| i.id)
            .collect();
        let mut refunds = Vec::new();
        for id in due {
            if let Some(r) = self.close(id, IntentState::Expired, ledger, now)? {
                refunds.push(r);
            }
        }
        Ok(refunds)
    }

    /// Maker-initiated cancel; refunds exactly like expiry.
    pub fn cancel(&mut self, id: IntentId, ledger: &mut Ledger, now: Tick) -> Result<Option<Refund>, IntentError> {
        let intent = self.intents.get(&id).ok_or(IntentError::UnknownIntent(id))?;
        if !intent.is_live() {
            return Err(IntentError::IntentClosed(id));
        }
        self.close(id, IntentState::Cancelled, ledger, now)
    }

    fn close(
        &mut self,
        id: IntentId,
        terminal: IntentState,
        ledger: &mut Ledger,
        now: Tick,
    ) -> Result<Option<Refund>, IntentError> {
        let intent = self.intents.get_mut(&id).ok_or(IntentError::UnknownIntent(id))?;
        let remaining = intent.remaining();
        let to = intent.funding_account();
        let asset = intent.sell.asset;
        if remaining > 0 {
            ledger.transfer(Owner::IntentEscrow, to, asset, remaining, now)?;
        }
        intent.state = terminal;
        self.queues.remove(&id);
        Ok((remaining > 0).then_some(Refund {
            intent_id: id,
            to,
            asset,
            amount: remaining,
        }))
    }

    /// Sum of remaining amounts over live intents selling `asset`; equals the
    /// intent escrow balance whenever no matched fill is awaiting its lock.
    pub fn escrow_outstanding(&self, asset: AssetId) -> u128 {
        self.live_intents()
            .filter(|i| i.sell.asset == asset)
            .map(|i| i.remaining())
            .sum()
    }
}

/// Allocation of `remaining` across offers already in priority order.
/// Returns the amounts for the accepted prefix.
///
/// Fragmentable: each accepted amount is at least `min_fragment` and the
/// leftover is either zero or at least `min_fragment`; the first offer that
/// cannot take a valid amount ends the batch. AllOrNothing: the prefix must
/// cover `remaining` entirely or nothing is accepted.
pub fn allocate(policy: FillPolicy, remaining: u128, caps: &[u128]) -> Vec<u128> {
    let mut out = Vec::new();
    let mut rem = remaining;
    match policy {
        FillPolicy::AllOrNothing => {
            let covered: u128 = caps.iter().fold(0u128, |acc, &c| acc.saturating_add(c));
            if covered < remaining {
                return out;
            }
            for &cap in caps {
                if rem == 0 {
                    break;
                }
                let take = cap.min(rem);
                out.push(take);
                rem -= take;
            }
        }
        FillPolicy::Fragmentable { min_fragment } => {
            for &cap in caps {
                if rem == 0 {
                    break;
                }
                let mut take = cap.min(rem);
                let left = rem - take;
                if left > 0 && left < min_fragment {
                    take = rem.saturating_sub(min_fragment);
                }
                if take == 0 || take < min_fragment {
                    break;
                }
                out.push(take);
                rem -= take;
            }
        }
    }
    out
}
