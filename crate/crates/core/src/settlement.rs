//! Settlement of matched fills across two chains.
//!
//! A record holds both legs in custody (a contract escrow, or a t-of-n
//! signer policy on chains without contracts) until restaked validators
//! attest. Quorum is stake-weighted over active stake; equivocation slashes.
//! The slow-bridge comparator releases after the source chain's native
//! finality plus a fixed delay, with no quorum at all.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::IntentId;
use crate::ledger::{AssetId, ChainId, Ledger, LedgerError, Owner, ParticipantId, Tick};
use crate::num::{floor_u128, from_u128, Rational};

pub type RecordId = u64;
pub type ValidatorId = u32;
pub type SignerId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidatorStatus {
    Active,
    Slashed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    Offline,
    /// Votes yes, then no one tick later.
    Equivocating,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Validator {
    pub id: ValidatorId,
    pub restake: u128,
    pub status: ValidatorStatus,
    pub behavior: Behavior,
    /// Ticks after lock before this validator attests.
    pub attest_delay_ticks: u64,
}

impl Validator {
    pub fn honest(id: ValidatorId, restake: u128, attest_delay_ticks: u64) -> Self {
        Self {
            id,
            restake,
            status: ValidatorStatus::Active,
            behavior: Behavior::Honest,
            attest_delay_ticks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumRule {
    pub threshold_num: u64,
    pub threshold_den: u64,
    pub timeout_ticks: u64,
}

impl Default for QuorumRule {
    fn default() -> Self {
        Self {
            threshold_num: 2,
            threshold_den: 3,
            timeout_ticks: 100,
        }
    }
}

impl QuorumRule {
    pub fn validate(&self) -> Result<(), SettlementError> {
        let (n, d) = (self.threshold_num as u128, self.threshold_den as u128);
        if d == 0 || 2 * n <= d || n > d || self.timeout_ticks == 0 {
            return Err(SettlementError::InvalidQuorum);
        }
        Ok(())
    }

    /// `yes / active >= num / den`, by cross-multiplication.
    pub fn met(&self, yes_stake: u128, active_stake: u128) -> bool {
        active_stake > 0
            && yes_stake
                .checked_mul(self.threshold_den as u128)
                .zip(active_stake.checked_mul(self.threshold_num as u128))
                .is_some_and(|(l, r)| l >= r)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcPolicy {
    pub signers: Vec<SignerId>,
    pub t: usize,
}

impl MpcPolicy {
    pub fn validate(&self) -> Result<(), SettlementError> {
        let distinct: BTreeSet<_> = self.signers.iter().collect();
        if self.t == 0 || self.t > self.signers.len() || distinct.len() != self.signers.len() {
            return Err(SettlementError::InvalidPolicy(format!(
                "need 1 <= t <= n with distinct signers, got t={} n={}",
                self.t,
                self.signers.len()
            )));
        }
        Ok(())
    }
}

/// Counting policy: authorized iff at least `t` distinct known signers approve.
pub fn mpc_authorize(policy: &MpcPolicy, approvals: &[SignerId]) -> Result<bool, SettlementError> {
    let mut seen = BTreeSet::new();
    for s in approvals {
        if !policy.signers.contains(s) {
            return Err(SettlementError::UnknownSigner(*s));
        }
        seen.insert(*s);
    }
    Ok(seen.len() >= policy.t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Custody {
    Escrow,
    MpcPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leg {
    pub chain: ChainId,
    pub asset: AssetId,
    pub amount: u128,
    /// Where funds come from when locked.
    pub from: Owner,
    /// Released to on finalization.
    pub to: Owner,
    /// Returned to on refund.
    pub refund_to: Owner,
    pub custody: Custody,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordState {
    Pending,
    Locked,
    Attested,
    Finalized,
    Refunded,
}

impl RecordState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RecordState::Finalized | RecordState::Refunded)
    }

    fn is_locked(self) -> bool {
        matches!(self, RecordState::Locked | RecordState::Attested)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettlementRecord {
    pub id: RecordId,
    pub intent_id: IntentId,
    pub taker: ParticipantId,
    /// Maker's sell asset, chain A: escrow to taker.
    pub sell: Leg,
    /// Taker's counter-asset, chain B: taker to maker.
    pub buy: Leg,
    pub attestations: BTreeMap<ValidatorId, bool>,
    pub created_tick: Tick,
    pub state: RecordState,
    pub finalized_tick: Option<Tick>,
    pub refunded_tick: Option<Tick>,
}

impl SettlementRecord {
    pub fn latency(&self) -> Option<Tick> {
        self.finalized_tick.map(|t| t - self.created_tick)
    }

    fn custody_owner(&self) -> Owner {
        Owner::Custody(self.id)
    }

    fn legs(&self) -> [&Leg; 2] {
        [&self.sell, &self.buy]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettlementError {
    #[error("taker needs {needed} to lock, holds {available}")]
    InsufficientTakerFunds { needed: u128, available: u128 },
    #[error("record already locked")]
    AlreadyLocked,
    #[error("record is not locked")]
    RecordNotLocked,
    #[error("validator {0} already voted")]
    AlreadyVoted(ValidatorId),
    #[error("validator {0} cast conflicting votes")]
    Equivocation(ValidatorId),
    #[error("validator {0} is slashed")]
    ValidatorSlashed(ValidatorId),
    #[error("unknown validator {0}")]
    UnknownValidator(ValidatorId),
    #[error("timeout not reached, {remaining} ticks left")]
    NotTimedOut { remaining: u64 },
    #[error("record already finalized")]
    AlreadyFinalized,
    #[error("record already refunded")]
    AlreadyRefunded,
    #[error("unknown signer {0}")]
    UnknownSigner(SignerId),
    #[error("invalid MPC policy: {0}")]
    InvalidPolicy(String),
    #[error("quorum threshold must lie in (1/2, 1] with a positive timeout")]
    InvalidQuorum,
    #[error("chain {0:?} has no contracts and no MPC policy")]
    MissingMpcPolicy(ChainId),
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Moves both legs into the record's custody account. The maker leg is
/// already escrowed by the intent book; only the taker can fail here.
pub fn lock(record: &mut SettlementRecord, ledger: &mut Ledger, now: Tick) -> Result<(), SettlementError> {
    if record.state != RecordState::Pending {
        return Err(SettlementError::AlreadyLocked);
    }
    let available = ledger.balance(record.buy.from, record.buy.asset);
    if available < record.buy.amount {
        return Err(SettlementError::InsufficientTakerFunds {
            needed: record.buy.amount,
            available,
        });
    }
    let custody = record.custody_owner();
    // Taker first: if the maker leg were to fail, this is the one to unwind.
    ledger.transfer(record.buy.from, custody, record.buy.asset, record.buy.amount, now)?;
    if let Err(e) = ledger.transfer(record.sell.from, custody, record.sell.asset, record.sell.amount, now) {
        ledger.transfer(custody, record.buy.from, record.buy.asset, record.buy.amount, now)?;
        return Err(e.into());
    }
    record.state = RecordState::Locked;
    Ok(())
}

/// Records one vote. A second, different vote from the same validator is
/// reported as `Equivocation` so the caller can slash.
pub fn attest(
    record: &mut SettlementRecord,
    validators: &[Validator],
    validator: ValidatorId,
    vote: bool,
) -> Result<(), SettlementError> {
    let v = validators
        .iter()
        .find(|v| v.id == validator)
        .ok_or(SettlementError::UnknownValidator(validator))?;
    if v.status == ValidatorStatus::Slashed {
        return Err(SettlementError::ValidatorSlashed(validator));
    }
    if !record.state.is_locked() {
        return Err(SettlementError::RecordNotLocked);
    }
    match record.attestations.get(&validator) {
        Some(&prev) if prev == vote => Err(SettlementError::AlreadyVoted(validator)),
        Some(_) => Err(SettlementError::Equivocation(validator)),
        None => {
            record.attestations.insert(validator, vote);
            Ok(())
        }
    }
}

pub fn active_stake(validators: &[Validator]) -> u128 {
    validators
        .iter()
        .filter(|v| v.status == ValidatorStatus::Active)
        .map(|v| v.restake)
        .sum()
}

/// Yes votes from validators that are still active.
pub fn yes_stake(record: &SettlementRecord, validators: &[Validator]) -> u128 {
    validators
        .iter()
        .filter(|v| v.status == ValidatorStatus::Active && record.attestations.get(&v.id) == Some(&true))
        .map(|v| v.restake)
        .sum()
}

pub fn quorum_reached(record: &SettlementRecord, validators: &[Validator], rule: &QuorumRule) -> bool {
    rule.met(yes_stake(record, validators), active_stake(validators))
}

/// Cuts the validator's restake by `fraction` and removes it from the quorum.
pub fn slash_equivocation(validators: &mut [Validator], validator: ValidatorId, fraction: &Rational) {
    if let Some(v) = validators.iter_mut().find(|v| v.id == validator) {
        let f = fraction.clone().clamp(Rational::zero(), Rational::one());
        let cut = floor_u128(&(from_u128(v.restake) * f)).unwrap_or(v.restake);
        v.restake -= cut.min(v.restake);
        v.status = ValidatorStatus::Slashed;
    }
}

fn release(record: &mut SettlementRecord, ledger: &mut Ledger, now: Tick) -> Result<(), SettlementError> {
    let custody = record.custody_owner();
    for leg in record.legs() {
        ledger.transfer(custody, leg.to, leg.asset, leg.amount, now)?;
    }
    record.state = RecordState::Finalized;
    record.finalized_tick = Some(now);
    Ok(())
}

fn unwind(record: &mut SettlementRecord, ledger: &mut Ledger, now: Tick) -> Result<(), SettlementError> {
    let custody = record.custody_owner();
    for leg in record.legs() {
        ledger.transfer(custody, leg.refund_to, leg.asset, leg.amount, now)?;
    }
    record.state = RecordState::Refunded;
    record.refunded_tick = Some(now);
    Ok(())
}

fn terminal_error(state: RecordState) -> SettlementError {
    match state {
        RecordState::Finalized => SettlementError::AlreadyFinalized,
        RecordState::Refunded => SettlementError::AlreadyRefunded,
        _ => SettlementError::RecordNotLocked,
    }
}

/// Releases both legs when the quorum holds and every MPC-custodied leg is
/// authorized. Returns whether the record is now finalized.
pub fn finalize(
    record: &mut SettlementRecord,
    validators: &[Validator],
    rule: &QuorumRule,
    mpc_authorized: bool,
    ledger: &mut Ledger,
    now: Tick,
) -> Result<bool, SettlementError> {
    if !record.state.is_locked() {
        return Err(terminal_error(record.state));
    }
    if !quorum_reached(record, validators, rule) {
        return Ok(false);
    }
    record.state = RecordState::Attested;
    if !mpc_authorized {
        return Ok(false);
    }
    release(record, ledger, now)?;
    Ok(true)
}

pub fn refund_on_timeout(
    record: &mut SettlementRecord,
    rule: &QuorumRule,
    mpc_authorized: bool,
    ledger: &mut Ledger,
    now: Tick,
) -> Result<bool, SettlementError> {
    if !record.state.is_locked() {
        return Err(terminal_error(record.state));
    }
    let elapsed = now.saturating_sub(record.created_tick);
    if elapsed < rule.timeout_ticks {
        return Err(SettlementError::NotTimedOut {
            remaining: rule.timeout_ticks - elapsed,
        });
    }
    if !mpc_authorized {
        return Ok(false);
    }
    unwind(record, ledger, now)?;
    Ok(true)
}

/// `native_finality_blocks * block_interval_ticks + bridge_delay` of the
/// sell-leg chain.
pub fn baseline_latency(ledger: &Ledger, record: &SettlementRecord, bridge_delay_ticks: u64) -> Result<u64, SettlementError> {
    Ok(ledger.chain(record.sell.chain)?.native_finality_ticks() + bridge_delay_ticks)
}

pub fn baseline_bridge_settle(
    record: &mut SettlementRecord,
    ledger: &mut Ledger,
    bridge_delay_ticks: u64,
    now: Tick,
) -> Result<bool, SettlementError> {
    if !record.state.is_locked() {
        return Err(terminal_error(record.state));
    }
    let due = record.created_tick + baseline_latency(ledger, record, bridge_delay_ticks)?;
    if now < due {
        return Ok(false);
    }
    release(record, ledger, now)?;
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SettlementMode {
    Quorum,
    Baseline { bridge_delay_ticks: u64 },
}

/// One side of a fill as handed to the engine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LegSpec {
    pub chain: ChainId,
    pub asset: AssetId,
    pub amount: u128,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FillSpec {
    pub id: RecordId,
    pub intent_id: IntentId,
    pub taker: ParticipantId,
    /// Maker's funding account: receives the buy leg and any sell-leg refund.
    pub maker_account: Owner,
    pub sell: LegSpec,
    pub buy: LegSpec,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SettlementEvent {
    Finalized { record: RecordId, latency: Tick },
    Refunded { record: RecordId },
    Slashed { validator: ValidatorId },
}

/// Owns every record and the validator set; stepped once per tick.
#[derive(Clone, Debug)]
pub struct SettlementEngine {
    pub validators: Vec<Validator>,
    pub rule: QuorumRule,
    pub mode: SettlementMode,
    pub slash_fraction: Rational,
    /// Policy and currently reachable signers per contract-less chain.
    mpc: BTreeMap<ChainId, (MpcPolicy, Vec<SignerId>)>,
    records: BTreeMap<RecordId, SettlementRecord>,
}

impl SettlementEngine {
    pub fn new(validators: Vec<Validator>, rule: QuorumRule, mode: SettlementMode) -> Result<Self, SettlementError> {
        rule.validate()?;
        if active_stake(&validators) == 0 {
            return Err(SettlementError::InvalidQuorum);
        }
        Ok(Self {
            validators,
            rule,
            mode,
            slash_fraction: Rational::one(),
            mpc: BTreeMap::new(),
            records: BTreeMap::new(),
        })
    }

    pub fn set_mpc_policy(&mut self, chain: ChainId, policy: MpcPolicy, online: Vec<SignerId>) -> Result<(), SettlementError> {
        policy.validate()?;
        if let Some(s) = online.iter().find(|s| !policy.signers.contains(s)) {
            return Err(SettlementError::UnknownSigner(*s));
        }
        self.mpc.insert(chain, (policy, online));
        Ok(())
    }

    pub fn record(&self, id: RecordId) -> Option<&SettlementRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SettlementRecord> {
        self.records.values()
    }

    fn custody_for(&self, ledger: &Ledger, chain: ChainId) -> Result<Custody, SettlementError> {
        if ledger.chain(chain)?.smart_contracts {
            Ok(Custody::Escrow)
        } else if self.mpc.contains_key(&chain) {
            Ok(Custody::MpcPolicy)
        } else {
            Err(SettlementError::MissingMpcPolicy(chain))
        }
    }

    fn mpc_ok(&self, record: &SettlementRecord) -> Result<bool, SettlementError> {
        for leg in record.legs() {
            if leg.custody == Custody::MpcPolicy {
                let (policy, online) = self.mpc.get(&leg.chain).ok_or(SettlementError::MissingMpcPolicy(leg.chain))?;
                if !mpc_authorize(policy, online)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Creates and locks a record. When the taker cannot lock, the maker's
    /// escrowed leg goes straight back and the record ends `Refunded`.
    pub fn open(&mut self, fill: FillSpec, ledger: &mut Ledger, now: Tick) -> Result<&SettlementRecord, SettlementError> {
        let sell = Leg {
            chain: fill.sell.chain,
            asset: fill.sell.asset,
            amount: fill.sell.amount,
            from: Owner::IntentEscrow,
            to: Owner::Participant(fill.taker),
            refund_to: fill.maker_account,
            custody: self.custody_for(ledger, fill.sell.chain)?,
        };
        let buy = Leg {
            chain: fill.buy.chain,
            asset: fill.buy.asset,
            amount: fill.buy.amount,
            from: Owner::Participant(fill.taker),
            to: fill.maker_account,
            refund_to: Owner::Participant(fill.taker),
            custody: self.custody_for(ledger, fill.buy.chain)?,
        };
        let mut record = SettlementRecord {
            id: fill.id,
            intent_id: fill.intent_id,
            taker: fill.taker,
            sell,
            buy,
            attestations: BTreeMap::new(),
            created_tick: now,
            state: RecordState::Pending,
            finalized_tick: None,
            refunded_tick: None,
        };
        match lock(&mut record, ledger, now) {
            Ok(()) => {}
            Err(SettlementError::InsufficientTakerFunds { .. }) => {
                let s = &record.sell;
                ledger.transfer(s.from, s.refund_to, s.asset, s.amount, now)?;
                record.state = RecordState::Refunded;
                record.refunded_tick = Some(now);
            }
            Err(e) => return Err(e),
        }
        let id = record.id;
        self.records.insert(id, record);
        Ok(&self.records[&id])
    }

    /// Casts a vote through the engine, slashing on equivocation.
    pub fn attest(&mut self, record: RecordId, validator: ValidatorId, vote: bool) -> Result<(), SettlementError> {
        let rec = self.records.get_mut(&record).ok_or(SettlementError::UnknownRecord(record))?;
        match attest(rec, &self.validators, validator, vote) {
            Err(SettlementError::Equivocation(v)) => {
                slash_equivocation(&mut self.validators, v, &self.slash_fraction);
                Err(SettlementError::Equivocation(v))
            }
            other => other,
        }
    }

    /// Validator behaviour, then finalize or refund, for every live record.
    pub fn step(&mut self, ledger: &mut Ledger, now: Tick) -> Result<Vec<SettlementEvent>, SettlementError> {
        let mut events = Vec::new();
        let live: Vec<RecordId> = self.records.values().filter(|r| r.state.is_locked()).map(|r| r.id).collect();
        for id in live {
            match self.mode {
                SettlementMode::Baseline { bridge_delay_ticks } => {
                    let rec = self.records.get_mut(&id).expect("listed");
                    if baseline_bridge_settle(rec, ledger, bridge_delay_ticks, now)? {
                        events.push(SettlementEvent::Finalized {
                            record: id,
                            latency: rec.latency().unwrap_or(0),
                        });
                    }
                    continue;
                }
                SettlementMode::Quorum => {}
            }
            let created = self.records[&id].created_tick;
            let due: Vec<(ValidatorId, bool)> = self
                .validators
                .iter()
                .filter(|v| v.status == ValidatorStatus::Active)
                .flat_map(|v| {
                    let at = created + v.attest_delay_ticks;
                    match v.behavior {
                        Behavior::Honest if now >= at => vec![(v.id, true)],
                        Behavior::Equivocating if now == at => vec![(v.id, true)],
                        Behavior::Equivocating if now == at + 1 => vec![(v.id, false)],
                        _ => vec![],
                    }
                })
                .collect();
            for (v, vote) in due {
                if self.records[&id].attestations.get(&v) == Some(&vote) {
                    continue;
                }
                match self.attest(id, v, vote) {
                    Ok(()) | Err(SettlementError::ValidatorSlashed(_)) => {}
                    Err(SettlementError::Equivocation(v)) => events.push(SettlementEvent::Slashed { validator: v }),
                    Err(SettlementError::RecordNotLocked) => break,
                    Err(e) => return Err(e),
                }
            }
            let authorized = self.mpc_ok(&self.records[&id])?;
            let rec = self.records.get_mut(&id).expect("listed");
            if finalize(rec, &self.validators, &self.rule, authorized, ledger, now)? {
                events.push(SettlementEvent::Finalized {
                    record: id,
                    latency: rec.latency().unwrap_or(0),
                });
                continue;
            }
            match refund_on_timeout(rec, &self.rule, authorized, ledger, now) {
                Ok(true) => events.push(SettlementEvent::Refunded { record: id }),
                Ok(false) | Err(SettlementError::NotTimedOut { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(events)
    }

    pub fn live_count(&self) -> usize {
        self.records.values().filter(|r| !r.state.is_terminal()).count()
    }
}
