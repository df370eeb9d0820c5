//! Tokens minted against an off-chain asset, never exceeding its value.

use serde::Serialize;
use thiserror::Error;

use crate::amount::{AmountError, Cftx};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("minting {amount} would exceed the asset value ({minted} minted of {asset_value})")]
    OverMint {
        amount: Cftx,
        minted: Cftx,
        asset_value: Cftx,
    },
    #[error("cannot redeem {amount}: only {minted} minted")]
    OverRedeem { amount: Cftx, minted: Cftx },
    #[error("amount must be nonnegative, got {0}")]
    Negative(Cftx),
    #[error(transparent)]
    Amount(#[from] AmountError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum AnchorEvent {
    Mint { amount: Cftx },
    Redeem { amount: Cftx },
    Revalue { asset_value: Cftx },
    Burn { amount: Cftx },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AnchorPosition {
    asset_value: Cftx,
    minted: Cftx,
}

fn nonneg(x: Cftx) -> Result<Cftx, AnchorError> {
    if x.is_negative() {
        Err(AnchorError::Negative(x))
    } else {
        Ok(x)
    }
}

impl AnchorPosition {
    pub fn new(asset_value: Cftx) -> Result<Self, AnchorError> {
        Ok(Self {
            asset_value: nonneg(asset_value)?,
            minted: Cftx::ZERO,
        })
    }

    pub fn asset_value(&self) -> Cftx {
        self.asset_value
    }

    pub fn minted(&self) -> Cftx {
        self.minted
    }

    pub fn headroom(&self) -> Cftx {
        self.asset_value - self.minted
    }

    pub fn mint(&mut self, amount: Cftx) -> Result<AnchorEvent, AnchorError> {
        nonneg(amount)?;
        let after = self.minted.checked_add(amount)?;
        if after > self.asset_value {
            return Err(AnchorError::OverMint {
                amount,
                minted: self.minted,
                asset_value: self.asset_value,
            });
        }
        self.minted = after;
        Ok(AnchorEvent::Mint { amount })
    }

    /// Returns tokens for the underlying asset; both sides shrink together.
    pub fn redeem(&mut self, amount: Cftx) -> Result<AnchorEvent, AnchorError> {
        nonneg(amount)?;
        if amount > self.minted {
            return Err(AnchorError::OverRedeem {
                amount,
                minted: self.minted,
            });
        }
        self.minted = self.minted - amount;
        self.asset_value = self.asset_value - amount;
        Ok(AnchorEvent::Redeem { amount })
    }

    /// Revalues the asset and burns any minted amount above the new value.
    pub fn adjust(&mut self, asset_value: Cftx) -> Result<Vec<AnchorEvent>, AnchorError> {
        nonneg(asset_value)?;
        self.asset_value = asset_value;
        let mut events = vec![AnchorEvent::Revalue { asset_value }];
        if self.minted > asset_value {
            let excess = self.minted - asset_value;
            self.minted = asset_value;
            events.push(AnchorEvent::Burn { amount: excess });
        }
        Ok(events)
    }
}
