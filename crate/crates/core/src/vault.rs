//! Under-collateralized leverage vault.
//!
//! LPs deposit a single asset for shares. Makers post collateral and borrow
//! up to `max_leverage` times it; both land in a per-position funding account
//! that only intent escrow and repayment may debit. Accounting is exact:
//!
//! ```text
//! cash        = deposits - borrowed        (the vault's ledger balance)
//! receivables = Σ open (principal + accrued interest)
//! equity      = cash + receivables = shares * share_price
//! ```

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Pow, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{AssetId, Ledger, LedgerError, Owner, ParticipantId, Tick};
use crate::num::{ceil_u128, floor_u128, from_bps, from_u128, ratio, Rational};

pub type PositionId = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct VaultParams {
    pub max_leverage: Rational,
    pub maintenance_margin_bps: u32,
    pub interest_rate_bps_per_epoch: u32,
    pub epoch_ticks: u64,
    /// Share of a repaid position's profit routed to the vault.
    pub profit_share_bps: u32,
}

impl Default for VaultParams {
    fn default() -> Self {
        Self {
            max_leverage: ratio(10, 1),
            maintenance_margin_bps: 500,
            interest_rate_bps_per_epoch: 10,
            epoch_ticks: 100,
            profit_share_bps: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionState {
    Open,
    Repaid,
    Liquidated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoanPosition {
    pub id: PositionId,
    pub maker: ParticipantId,
    pub collateral: u128,
    pub principal: u128,
    pub opened_tick: Tick,
    pub maintenance_margin_bps: u32,
    pub state: PositionState,
    pub accrued_interest: Rational,
    /// Gross value of everything the position holds, as last marked.
    pub value: Rational,
}

impl LoanPosition {
    pub fn notional(&self) -> u128 {
        self.collateral + self.principal
    }

    pub fn leverage(&self) -> Rational {
        Rational::new(self.notional().into(), self.collateral.into())
    }

    pub fn equity(&self) -> Rational {
        &self.value - from_u128(self.principal) - &self.accrued_interest
    }

    /// Equity over opening notional.
    pub fn equity_ratio(&self) -> Rational {
        self.equity() / from_u128(self.notional())
    }

    pub fn owed(&self) -> Rational {
        from_u128(self.principal) + &self.accrued_interest
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepayOutcome {
    pub paid_to_vault: u128,
    pub interest_paid: u128,
    pub residual_to_maker: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiquidationOutcome {
    pub seized: u128,
    pub returned_to_maker: u128,
    /// Unrecovered principal plus interest, absorbed by LP equity.
    pub loss: Rational,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VaultError {
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("LP holds {held} shares, requested {requested}")]
    InsufficientShares { held: Rational, requested: Rational },
    #[error("vault liquidity {liquidity} cannot cover payout {payout}")]
    VaultIlliquid { liquidity: u128, payout: u128 },
    #[error("leverage {leverage} exceeds cap {max}")]
    LeverageExceeded { leverage: Rational, max: Rational },
    #[error("vault has {available} available, {requested} requested")]
    InsufficientVaultLiquidity { available: u128, requested: u128 },
    #[error("unknown position {0}")]
    UnknownPosition(PositionId),
    #[error("position {0} is closed")]
    PositionClosed(PositionId),
    #[error("position owes {owed}, funding account holds {available}")]
    Shortfall { owed: u128, available: u128 },
    #[error("position is above its maintenance margin")]
    PositionHealthy,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug)]
pub struct Vault {
    pub asset: AssetId,
    pub params: VaultParams,
    pub total_deposits: u128,
    pub total_borrowed: u128,
    lp_shares: BTreeMap<ParticipantId, Rational>,
    positions: BTreeMap<PositionId, LoanPosition>,
    next_position: PositionId,
}

impl Vault {
    pub fn new(asset: AssetId, params: VaultParams) -> Self {
        Self {
            asset,
            params,
            total_deposits: 0,
            total_borrowed: 0,
            lp_shares: BTreeMap::new(),
            positions: BTreeMap::new(),
            next_position: 1,
        }
    }

    pub fn position(&self, id: PositionId) -> Option<&LoanPosition> {
        self.positions.get(&id)
    }

    pub fn positions(&self) -> impl Iterator<Item = &LoanPosition> {
        self.positions.values()
    }

    pub fn open_positions(&self) -> impl Iterator<Item = &LoanPosition> {
        self.positions.values().filter(|p| p.state == PositionState::Open)
    }

    pub fn shares_of(&self, lp: ParticipantId) -> Rational {
        self.lp_shares.get(&lp).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn total_shares(&self) -> Rational {
        self.lp_shares.values().fold(Rational::zero(), |a, s| a + s)
    }

    pub fn cash(&self) -> u128 {
        self.total_deposits - self.total_borrowed
    }

    pub fn receivables(&self) -> Rational {
        self.open_positions().fold(Rational::zero(), |acc, p| acc + p.owed())
    }

    pub fn equity(&self) -> Rational {
        from_u128(self.cash()) + self.receivables()
    }

    pub fn share_price(&self) -> Rational {
        let shares = self.total_shares();
        if shares.is_zero() {
            Rational::one()
        } else {
            self.equity() / shares
        }
    }

    pub fn utilization(&self) -> Rational {
        if self.total_deposits == 0 {
            Rational::zero()
        } else {
            Rational::new(self.total_borrowed.into(), self.total_deposits.into())
        }
    }

    pub fn deposit(&mut self, ledger: &mut Ledger, lp: ParticipantId, amount: u128, now: Tick) -> Result<Rational, VaultError> {
        if amount == 0 {
            return Err(VaultError::ZeroAmount);
        }
        let price = self.share_price();
        ledger.transfer(Owner::Participant(lp), Owner::Vault, self.asset, amount, now)?;
        let shares = from_u128(amount) / price;
        *self.lp_shares.entry(lp).or_insert_with(Rational::zero) += &shares;
        self.total_deposits += amount;
        Ok(shares)
    }

    /// Redeems up to `shares` for `floor(shares * share_price)` from idle
    /// cash. Only the shares worth the floored payout are burned; the
    /// fraction of a base unit stays with the LP.
    pub fn withdraw(&mut self, ledger: &mut Ledger, lp: ParticipantId, shares: &Rational, now: Tick) -> Result<u128, VaultError> {
        let held = self.shares_of(lp);
        if !shares.is_positive() || *shares > held {
            return Err(VaultError::InsufficientShares {
                held,
                requested: shares.clone(),
            });
        }
        let price = self.share_price();
        let payout = floor_u128(&(shares * &price)).unwrap_or(0);
        let burned = from_u128(payout) / price;
        let liquidity = self.cash();
        if payout > liquidity {
            return Err(VaultError::VaultIlliquid { liquidity, payout });
        }
        if payout > 0 {
            ledger.transfer(Owner::Vault, Owner::Participant(lp), self.asset, payout, now)?;
        }
        let left = held - burned;
        if left.is_zero() {
            self.lp_shares.remove(&lp);
        } else {
            self.lp_shares.insert(lp, left);
        }
        self.total_deposits -= payout;
        Ok(payout)
    }

    /// Opens a position: collateral from the maker and principal from the
    /// vault both move into the position's funding account.
    pub fn borrow(
        &mut self,
        ledger: &mut Ledger,
        maker: ParticipantId,
        collateral: u128,
        principal: u128,
        now: Tick,
    ) -> Result<PositionId, VaultError> {
        if collateral == 0 {
            return Err(VaultError::ZeroAmount);
        }
        let leverage = Rational::new((collateral + principal).into(), collateral.into());
        if leverage > self.params.max_leverage {
            return Err(VaultError::LeverageExceeded {
                leverage,
                max: self.params.max_leverage.clone(),
            });
        }
        let available = self.cash();
        if principal > available {
            return Err(VaultError::InsufficientVaultLiquidity {
                available,
                requested: principal,
            });
        }
        let have = ledger.balance(Owner::Participant(maker), self.asset);
        if have < collateral {
            return Err(LedgerError::InsufficientBalance {
                owner: Owner::Participant(maker),
                chain: ledger.asset(self.asset)?.chain,
                asset: self.asset,
                needed: collateral,
                available: have,
            }
            .into());
        }
        let id = self.next_position;
        self.next_position += 1;
        let funding = Owner::LoanFunding(id);
        ledger.transfer(Owner::Participant(maker), funding, self.asset, collateral, now)?;
        if principal > 0 {
            ledger.transfer(Owner::Vault, funding, self.asset, principal, now)?;
        }
        self.total_borrowed += principal;
        self.positions.insert(
            id,
            LoanPosition {
                id,
                maker,
                collateral,
                principal,
                opened_tick: now,
                maintenance_margin_bps: self.params.maintenance_margin_bps,
                state: PositionState::Open,
                accrued_interest: Rational::zero(),
                value: from_u128(collateral + principal),
            },
        );
        Ok(id)
    }

    /// `principal * ((1 + r)^epochs - 1)` over whole epochs, rounded up to a
    /// base unit.
    pub fn interest_due(&self, pos: &LoanPosition, now: Tick) -> Rational {
        let epochs = now.saturating_sub(pos.opened_tick) / self.params.epoch_ticks.max(1);
        if epochs == 0 || self.params.interest_rate_bps_per_epoch == 0 {
            return Rational::zero();
        }
        let den = BigInt::from(10_000u32).pow(epochs);
        let num = BigInt::from(10_000 + self.params.interest_rate_bps_per_epoch).pow(epochs);
        Rational::from_integer((BigInt::from(pos.principal) * (num - &den)).div_ceil(&den))
    }

    /// Re-marks every open position with `value_of` (None keeps the last
    /// mark), accrues interest to `now`, and returns the new share price.
    pub fn mark_and_accrue(
        &mut self,
        now: Tick,
        mut value_of: impl FnMut(&LoanPosition) -> Option<Rational>,
    ) -> Rational {
        let ids: Vec<PositionId> = self.open_positions().map(|p| p.id).collect();
        for id in ids {
            let accrued = self.interest_due(&self.positions[&id], now);
            let pos = self.positions.get_mut(&id).expect("listed");
            pos.accrued_interest = accrued;
            if let Some(v) = value_of(pos) {
                pos.value = v;
            }
        }
        self.share_price()
    }

    fn open_mut(&mut self, id: PositionId) -> Result<&mut LoanPosition, VaultError> {
        let pos = self.positions.get_mut(&id).ok_or(VaultError::UnknownPosition(id))?;
        if pos.state != PositionState::Open {
            return Err(VaultError::PositionClosed(id));
        }
        Ok(pos)
    }

    /// Pays principal plus interest (ceil) from the funding account; the
    /// maker keeps the rest, less the configured profit share.
    pub fn repay(&mut self, ledger: &mut Ledger, id: PositionId, now: Tick) -> Result<RepayOutcome, VaultError> {
        let asset = self.asset;
        let interest = self.interest_due(self.positions.get(&id).ok_or(VaultError::UnknownPosition(id))?, now);
        let share_bps = self.params.profit_share_bps;
        let pos = self.open_mut(id)?;
        let owed = ceil_u128(&(from_u128(pos.principal) + &interest)).unwrap_or(u128::MAX);
        let available = ledger.balance(Owner::LoanFunding(id), asset);
        if available < owed {
            return Err(VaultError::Shortfall { owed, available });
        }
        let profit = available.saturating_sub(owed).saturating_sub(pos.collateral);
        let share = floor_u128(&(from_u128(profit) * from_bps(share_bps))).unwrap_or(0);
        let to_vault = owed + share;
        let residual = available - to_vault;
        let (principal, maker) = (pos.principal, pos.maker);
        ledger.transfer(Owner::LoanFunding(id), Owner::Vault, asset, to_vault, now)?;
        if residual > 0 {
            ledger.transfer(Owner::LoanFunding(id), Owner::Participant(maker), asset, residual, now)?;
        }
        let pos = self.positions.get_mut(&id).expect("checked");
        pos.state = PositionState::Repaid;
        pos.accrued_interest = Rational::zero();
        pos.value = Rational::zero();
        self.total_borrowed -= principal;
        self.total_deposits = self.total_deposits - principal + to_vault;
        Ok(RepayOutcome {
            paid_to_vault: to_vault,
            interest_paid: owed - principal,
            residual_to_maker: residual,
        })
    }

    /// Seizes the funding account toward principal plus interest. Allowed
    /// when the marked equity ratio is strictly below the maintenance margin
    /// or the account cannot cover what is owed.
    pub fn liquidate(&mut self, ledger: &mut Ledger, id: PositionId, now: Tick) -> Result<LiquidationOutcome, VaultError> {
        let asset = self.asset;
        let interest = self.interest_due(self.positions.get(&id).ok_or(VaultError::UnknownPosition(id))?, now);
        let pos = self.open_mut(id)?;
        let owed = from_u128(pos.principal) + &interest;
        let available = ledger.balance(Owner::LoanFunding(id), asset);
        let shortfall = from_u128(available) < owed;
        let margin = from_bps(pos.maintenance_margin_bps);
        let equity_ratio = (&pos.value - &owed) / from_u128(pos.notional());
        if !shortfall && equity_ratio >= margin {
            return Err(VaultError::PositionHealthy);
        }
        let seized = available.min(ceil_u128(&owed).unwrap_or(u128::MAX));
        let returned = available - seized;
        let loss = (&owed - from_u128(seized)).max(Rational::zero());
        let (principal, maker) = (pos.principal, pos.maker);
        if seized > 0 {
            ledger.transfer(Owner::LoanFunding(id), Owner::Vault, asset, seized, now)?;
        }
        if returned > 0 {
            ledger.transfer(Owner::LoanFunding(id), Owner::Participant(maker), asset, returned, now)?;
        }
        let pos = self.positions.get_mut(&id).expect("checked");
        pos.state = PositionState::Liquidated;
        pos.accrued_interest = Rational::zero();
        pos.value = Rational::zero();
        self.total_borrowed -= principal;
        self.total_deposits = self.total_deposits - principal + seized;
        Ok(LiquidationOutcome {
            seized,
            returned_to_maker: returned,
            loss,
        })
    }

    /// Double-entry identity against the ledger, exact.
    pub fn check_identity(&self, ledger: &Ledger) -> Result<(), String> {
        let cash = ledger.balance(Owner::Vault, self.asset);
        if cash != self.cash() {
            return Err(format!("vault ledger cash {cash} != deposits - borrowed {}", self.cash()));
        }
        let principal: u128 = self.open_positions().map(|p| p.principal).sum();
        if principal != self.total_borrowed {
            return Err(format!("open principal {principal} != borrowed {}", self.total_borrowed));
        }
        if self.total_borrowed > self.total_deposits {
            return Err("borrowed exceeds deposits".into());
        }
        let shares = self.total_shares();
        if !shares.is_zero() && &shares * self.share_price() != self.equity() {
            return Err("shares * share_price != equity".into());
        }
        if let Some(p) = self.open_positions().find(|p| p.leverage() > self.params.max_leverage) {
            return Err(format!("position {} above max leverage", p.id));
        }
        Ok(())
    }
}
