//! Dual-token solution ledgers, asset anchoring and cross-chain token exchange.

pub mod anchor;
pub mod dsol;
pub mod xchain;

pub use anchor::{AnchorError, AnchorEvent, AnchorPosition};
pub use dsol::{Dsol, DsolError, DsolToken, Sale};
pub use xchain::{ExchangeStage, Package, Response, Side, XChainError, XEvent, XHub, XStatus, XToken, XType};
