//! Multi-chain token ledger.
//!
//! Every holder in the system (participants, pools, escrow, settlement
//! custody, the vault, the CEX hot wallets, the fee sink) is an [`Account`]
//! keyed by `(owner, chain)`. Amounts are integer base units. A transfer
//! never crosses chains; cross-chain value movement is always two transfers
//! tied together by a settlement record.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Tick = u64;
pub type ParticipantId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChainId(pub u16);

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssetId(pub u16);

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "asset#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub id: ChainId,
    pub name: String,
    pub block_interval_ticks: u64,
    pub native_finality_blocks: u64,
    /// Chains without programmability use MPC policy custody.
    pub smart_contracts: bool,
    /// Scalar gas cost per transaction, in home-asset base units.
    pub gas_per_tx: u128,
}

impl Chain {
    /// Ticks until a transfer is final under the chain's own consensus.
    pub fn native_finality_ticks(&self) -> u64 {
        self.native_finality_blocks * self.block_interval_ticks
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub id: AssetId,
    pub chain: ChainId,
    pub symbol: String,
    pub decimals: u8,
}

/// Who holds an account.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Owner {
    Participant(ParticipantId),
    /// Funds backing open intents on a chain.
    IntentEscrow,
    /// Per-settlement custody (escrow contract or MPC wallet).
    Custody(u64),
    Pool(u32),
    Vault,
    /// Disbursement account of one loan position; only intent funding and
    /// repayment debit it.
    LoanFunding(u64),
    Cex(u32),
    FeeSink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountKey {
    pub owner: Owner,
    pub chain: ChainId,
}

impl AccountKey {
    pub fn new(owner: Owner, chain: ChainId) -> Self {
        Self { owner, chain }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Account {
    pub balances: BTreeMap<AssetId, u128>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferStatus {
    Pending,
    Applied,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub from: AccountKey,
    pub to: AccountKey,
    pub asset: AssetId,
    pub amount: u128,
    pub tick_submitted: Tick,
    pub status: TransferStatus,
}

impl Transfer {
    pub fn new(from: Owner, to: Owner, chain: ChainId, asset: AssetId, amount: u128, tick: Tick) -> Self {
        Self {
            from: AccountKey::new(from, chain),
            to: AccountKey::new(to, chain),
            asset,
            amount,
            tick_submitted: tick,
            status: TransferStatus::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("transfer amount must be positive")]
    ZeroAmount,
    #[error("{owner:?} on {chain} holds {available} of {asset}, needs {needed}")]
    InsufficientBalance {
        owner: Owner,
        chain: ChainId,
        asset: AssetId,
        needed: u128,
        available: u128,
    },
    #[error("unknown account {0:?}")]
    UnknownAccount(AccountKey),
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("{asset} lives on {asset_chain}, not {account_chain}")]
    ChainMismatch {
        asset: AssetId,
        asset_chain: ChainId,
        account_chain: ChainId,
    },
    #[error("balance overflow")]
    Overflow,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    chains: BTreeMap<ChainId, Chain>,
    assets: Vec<Asset>,
    accounts: BTreeMap<AccountKey, Account>,
    minted: BTreeMap<AssetId, u128>,
}

impl Ledger {
    pub fn new(chains: Vec<Chain>, assets: Vec<Asset>) -> Self {
        Self {
            chains: chains.into_iter().map(|c| (c.id, c)).collect(),
            assets,
            accounts: BTreeMap::new(),
            minted: BTreeMap::new(),
        }
    }

    pub fn chain(&self, id: ChainId) -> Result<&Chain, LedgerError> {
        self.chains.get(&id).ok_or(LedgerError::UnknownChain(id))
    }

    pub fn chains(&self) -> impl Iterator<Item = &Chain> {
        self.chains.values()
    }

    pub fn asset(&self, id: AssetId) -> Result<&Asset, LedgerError> {
        self.assets.get(id.0 as usize).ok_or(LedgerError::UnknownAsset(id))
    }

    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }

    pub fn find_asset(&self, chain: ChainId, symbol: &str) -> Option<AssetId> {
        self.assets
            .iter()
            .find(|a| a.chain == chain && a.symbol == symbol)
            .map(|a| a.id)
    }

    pub fn open_account(&mut self, owner: Owner, chain: ChainId) -> Result<(), LedgerError> {
        self.chain(chain)?;
        self.accounts.entry(AccountKey::new(owner, chain)).or_default();
        Ok(())
    }

    pub fn has_account(&self, owner: Owner, chain: ChainId) -> bool {
        self.accounts.contains_key(&AccountKey::new(owner, chain))
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&AccountKey, &Account)> {
        self.accounts.iter()
    }

    /// Balance of `asset` held by `owner` on the asset's chain; zero when the
    /// account does not exist.
    pub fn balance(&self, owner: Owner, asset: AssetId) -> u128 {
        let Ok(a) = self.asset(asset) else { return 0 };
        self.accounts
            .get(&AccountKey::new(owner, a.chain))
            .and_then(|acc| acc.balances.get(&asset).copied())
            .unwrap_or(0)
    }

    /// Scenario-level issuance. The only way supply changes.
    pub fn mint(&mut self, owner: Owner, asset: AssetId, amount: u128) -> Result<(), LedgerError> {
        let chain = self.asset(asset)?.chain;
        self.open_account(owner, chain)?;
        let minted = self.minted.entry(asset).or_insert(0);
        *minted = minted.checked_add(amount).ok_or(LedgerError::Overflow)?;
        let bal = self
            .accounts
            .get_mut(&AccountKey::new(owner, chain))
            .expect("opened above")
            .balances
            .entry(asset)
            .or_insert(0);
        *bal = bal.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    pub fn minted(&self, asset: AssetId) -> u128 {
        self.minted.get(&asset).copied().unwrap_or(0)
    }

    /// Applies a same-chain transfer atomically: on any error the ledger is
    /// untouched and the transfer is marked rejected.
    pub fn apply_transfer(&mut self, transfer: &mut Transfer) -> Result<(), LedgerError> {
        match self.try_apply(transfer) {
            Ok(()) => {
                transfer.status = TransferStatus::Applied;
                Ok(())
            }
            Err(e) => {
                transfer.status = TransferStatus::Rejected;
                Err(e)
            }
        }
    }

    fn try_apply(&mut self, t: &Transfer) -> Result<(), LedgerError> {
        if t.amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        let asset_chain = self.asset(t.asset)?.chain;
        for key in [t.from, t.to] {
            if key.chain != asset_chain {
                return Err(LedgerError::ChainMismatch {
                    asset: t.asset,
                    asset_chain,
                    account_chain: key.chain,
                });
            }
            if !self.accounts.contains_key(&key) {
                return Err(LedgerError::UnknownAccount(key));
            }
        }
        let available = self.accounts[&t.from].balances.get(&t.asset).copied().unwrap_or(0);
        if available < t.amount {
            return Err(LedgerError::InsufficientBalance {
                owner: t.from.owner,
                chain: t.from.chain,
                asset: t.asset,
                needed: t.amount,
                available,
            });
        }
        if t.from == t.to {
            return Ok(());
        }
        let to_bal = self.accounts[&t.to].balances.get(&t.asset).copied().unwrap_or(0);
        let credited = to_bal.checked_add(t.amount).ok_or(LedgerError::Overflow)?;
        self.accounts.get_mut(&t.from).expect("checked").balances.insert(t.asset, available - t.amount);
        self.accounts.get_mut(&t.to).expect("checked").balances.insert(t.asset, credited);
        Ok(())
    }

    /// Convenience wrapper: opens the destination account if needed, then
    /// applies the transfer.
    pub fn transfer(
        &mut self,
        from: Owner,
        to: Owner,
        asset: AssetId,
        amount: u128,
        tick: Tick,
    ) -> Result<(), LedgerError> {
        let chain = self.asset(asset)?.chain;
        self.open_account(to, chain)?;
        let mut t = Transfer::new(from, to, chain, asset, amount, tick);
        self.apply_transfer(&mut t)
    }

    /// Sum over every holder of `asset`.
    pub fn total_supply(&self, asset: AssetId) -> Result<u128, LedgerError> {
        self.asset(asset)?;
        Ok(self
            .accounts
            .values()
            .filter_map(|a| a.balances.get(&asset))
            .sum())
    }

    /// Checks supply conservation for every asset. Balances are unsigned, so
    /// non-negativity is structural.
    pub fn check_conservation(&self) -> Result<(), String> {
        for asset in &self.assets {
            let supply = self.total_supply(asset.id).map_err(|e| e.to_string())?;
            let minted = self.minted(asset.id);
            if supply != minted {
                return Err(format!(
                    "{} {} supply {} differs from minted {}",
                    asset.symbol, asset.chain, supply, minted
                ));
            }
        }
        Ok(())
    }
}

/// Per-chain block heights driven by one global tick.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainClock {
    pub tick: Tick,
    pub heights: BTreeMap<ChainId, u64>,
}

impl ChainClock {
    pub fn new<'a>(chains: impl IntoIterator<Item = &'a Chain>) -> Self {
        Self {
            tick: 0,
            heights: chains.into_iter().map(|c| (c.id, 0)).collect(),
        }
    }
}

/// Advances the global tick. Heights derive from the absolute tick, so any
/// split of the same total advance yields the same heights.
pub fn advance_clock<'a>(clock: &mut ChainClock, chains: impl IntoIterator<Item = &'a Chain>, ticks: u64) {
    clock.tick += ticks;
    for chain in chains {
        let interval = chain.block_interval_ticks.max(1);
        clock.heights.insert(chain.id, clock.tick / interval);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_chain_ledger() -> (Ledger, AssetId) {
        let chains = vec![
            Chain {
                id: ChainId(1),
                name: "hub".into(),
                block_interval_ticks: 12,
                native_finality_blocks: 64,
                smart_contracts: true,
                gas_per_tx: 0,
            },
            Chain {
                id: ChainId(2),
                name: "fast".into(),
                block_interval_ticks: 5,
                native_finality_blocks: 1,
                smart_contracts: true,
                gas_per_tx: 0,
            },
        ];
        let assets = vec![Asset {
            id: AssetId(0),
            chain: ChainId(1),
            symbol: "USDT".into(),
            decimals: 0,
        }];
        let mut l = Ledger::new(chains, assets);
        l.open_account(Owner::Participant(2), ChainId(1)).unwrap();
        l.mint(Owner::Participant(1), AssetId(0), 100).unwrap();
        (l, AssetId(0))
    }

    #[test]
    fn zero_amount_rejected() {
        let (mut l, usdt) = two_chain_ledger();
        let mut t = Transfer::new(Owner::Participant(1), Owner::Participant(2), ChainId(1), usdt, 0, 0);
        assert_eq!(l.apply_transfer(&mut t), Err(LedgerError::ZeroAmount));
        assert_eq!(t.status, TransferStatus::Rejected);
    }

    #[test]
    fn exact_balance_transfer() {
        let (mut l, usdt) = two_chain_ledger();
        let mut t = Transfer::new(Owner::Participant(1), Owner::Participant(2), ChainId(1), usdt, 100, 0);
        l.apply_transfer(&mut t).unwrap();
        assert_eq!(t.status, TransferStatus::Applied);
        assert_eq!(l.balance(Owner::Participant(1), usdt), 0);
        assert_eq!(l.balance(Owner::Participant(2), usdt), 100);
        assert_eq!(l.total_supply(usdt).unwrap(), 100);
    }

    #[test]
    fn insufficient_balance_leaves_ledger_unchanged() {
        let (mut l, usdt) = two_chain_ledger();
        l.transfer(Owner::Participant(1), Owner::Participant(3), usdt, 50, 0).unwrap();
        let before = l.clone();
        let err = l.transfer(Owner::Participant(1), Owner::Participant(2), usdt, 51, 1).unwrap_err();
        assert!(matches!(err, LedgerError::InsufficientBalance { needed: 51, available: 50, .. }));
        assert_eq!(l.balance(Owner::Participant(1), usdt), before.balance(Owner::Participant(1), usdt));
        assert_eq!(l.balance(Owner::Participant(2), usdt), 0);
    }

    #[test]
    fn unknown_account_and_asset() {
        let (mut l, usdt) = two_chain_ledger();
        let mut t = Transfer::new(Owner::Participant(9), Owner::Participant(2), ChainId(1), usdt, 1, 0);
        assert!(matches!(l.apply_transfer(&mut t), Err(LedgerError::UnknownAccount(_))));
        let mut t = Transfer::new(Owner::Participant(1), Owner::Participant(2), ChainId(1), AssetId(7), 1, 0);
        assert_eq!(l.apply_transfer(&mut t), Err(LedgerError::UnknownAsset(AssetId(7))));
        assert_eq!(l.total_supply(AssetId(7)), Err(LedgerError::UnknownAsset(AssetId(7))));
    }

    #[test]
    fn cross_chain_transfer_is_structurally_impossible() {
        let (mut l, usdt) = two_chain_ledger();
        l.open_account(Owner::Participant(2), ChainId(2)).unwrap();
        let mut t = Transfer::new(Owner::Participant(1), Owner::Participant(2), ChainId(2), usdt, 1, 0);
        assert!(matches!(l.apply_transfer(&mut t), Err(LedgerError::ChainMismatch { .. })));
    }

    #[test]
    fn fresh_supply_equals_mint() {
        let (l, usdt) = two_chain_ledger();
        assert_eq!(l.total_supply(usdt).unwrap(), l.minted(usdt));
        l.check_conservation().unwrap();
    }

    #[test]
    fn clock_identity_and_arithmetic() {
        let (l, _) = two_chain_ledger();
        let mut c = ChainClock::new(l.chains());
        advance_clock(&mut c, l.chains(), 0);
        assert_eq!(c.heights[&ChainId(1)], 0);
        advance_clock(&mut c, l.chains(), 24);
        assert_eq!(c.heights[&ChainId(1)], 2);
        assert_eq!(c.heights[&ChainId(2)], 4);
    }

    #[test]
    fn clock_split_advance_matches_single() {
        let (l, _) = two_chain_ledger();
        let mut a = ChainClock::new(l.chains());
        let mut b = ChainClock::new(l.chains());
        advance_clock(&mut a, l.chains(), 6);
        advance_clock(&mut a, l.chains(), 6);
        advance_clock(&mut b, l.chains(), 12);
        assert_eq!(a, b);
        assert_eq!(a.heights[&ChainId(1)], 1);
    }
}
