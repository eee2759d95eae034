//! Cross-chain liquidity protocol model: a funded intent marketplace, a
//! stake-weighted attestation quorum that settles matched fills across chains
//! (escrow or MPC-policy custody), an under-collateralized leverage vault, and
//! a deterministic simulator comparing it with a slow-bridge baseline.

pub mod intent;
pub mod io;
pub mod ledger;
pub mod markets;
pub mod num;
pub mod settlement;
pub mod sim;
pub mod vault;
