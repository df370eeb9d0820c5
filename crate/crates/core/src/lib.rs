//! Core types for the BlockCloud service ecosystem: fixed-point token
//! amounts, ecosystem valuation, relevancy ranking, token policy, validator
//! protocol selection, side-chain blocks and the cross-chain ledger.

pub mod amount;
pub mod bft;
pub mod chain;
pub mod err;
pub mod evg;
pub mod ids;
pub mod ledger;
pub mod policy;

pub use amount::{AmountError, Cftx};
pub use ids::{NodeId, TaskId};
