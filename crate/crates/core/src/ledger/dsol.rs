//! Solution ledgers: a book value in CFTX backed by a fixed set of
//! indivisible, individually owned tokens.

use serde::Serialize;
use thiserror::Error;

use crate::amount::{AmountError, Cftx};
use crate::ids::NodeId;

pub const DEFAULT_TOKEN_COUNT: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsolError {
    #[error("book value would become negative ({0})")]
    NegativeBook(Cftx),
    #[error("a solution needs at least one token")]
    NoTokens,
    #[error("expected {expected} token values, got {got}")]
    TokenCount { expected: usize, got: usize },
    #[error("token values sum to {sum}, book value is {book}")]
    ValueSum { sum: Cftx, book: Cftx },
    #[error("token value must be nonnegative, got {0}")]
    NegativeToken(Cftx),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("`{who}` does not own `{serial}`")]
    NotOwner { serial: String, who: NodeId },
    #[error("market multiplier must be positive and finite, got {0}")]
    Multiplier(f64),
    #[error("auction for `{0}` received no valid bids")]
    NoBids(String),
    #[error(transparent)]
    Amount(#[from] AmountError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DsolToken {
    pub serial: String,
    pub owner: NodeId,
    pub book_value: Cftx,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sale {
    pub serial: String,
    pub seller: NodeId,
    pub buyer: NodeId,
    pub price: Cftx,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dsol {
    id: String,
    book_value: Cftx,
    tokens: Vec<DsolToken>,
    market_multiplier: f64,
    /// Relative token values in micro-units; `None` means a uniform split.
    weights: Option<Vec<i64>>,
}

/// Splits `total` in proportion to integer `weights`, handing leftover
/// micro-units to the largest remainders (earlier index first on ties).
fn split_largest_remainder(total: Cftx, weights: &[i64]) -> Vec<Cftx> {
    let sum: i128 = weights.iter().map(|w| i128::from(*w)).sum();
    let t = i128::from(total.micros());
    let mut parts: Vec<i128> = weights.iter().map(|w| t * i128::from(*w) / sum).collect();
    let mut rems: Vec<(i128, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (t * i128::from(*w) % sum, i))
        .collect();
    let given: i128 = parts.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rems.iter().take((t - given) as usize) {
        parts[*i] += 1;
    }
    parts.into_iter().map(|p| Cftx::from_micros(p as i64)).collect()
}

impl Dsol {
    /// Issues `count` tokens to `owner`, serials `{id}{index}` zero-padded.
    pub fn issue(id: impl Into<String>, book_value: Cftx, count: usize, owner: NodeId) -> Result<Self, DsolError> {
        if count == 0 {
            return Err(DsolError::NoTokens);
        }
        if book_value.is_negative() {
            return Err(DsolError::NegativeBook(book_value));
        }
        let id = id.into();
        let width = (count - 1).to_string().len();
        let tokens = (0..count)
            .map(|i| DsolToken {
                serial: format!("{id}{i:0width$}"),
                owner: owner.clone(),
                book_value: Cftx::ZERO,
            })
            .collect();
        let mut d = Self {
            id,
            book_value,
            tokens,
            market_multiplier: 1.0,
            weights: None,
        };
        d.resplit();
        Ok(d)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn book_value(&self) -> Cftx {
        self.book_value
    }

    pub fn tokens(&self) -> &[DsolToken] {
        &self.tokens
    }

    pub fn token(&self, serial: &str) -> Option<&DsolToken> {
        self.tokens.iter().find(|t| t.serial == serial)
    }

    pub fn market_multiplier(&self) -> f64 {
        self.market_multiplier
    }

    fn resplit(&mut self) {
        let weights = match &self.weights {
            Some(w) if w.iter().any(|x| *x > 0) => w.clone(),
            _ => vec![1; self.tokens.len()],
        };
        let parts = split_largest_remainder(self.book_value, &weights);
        for (t, v) in self.tokens.iter_mut().zip(parts) {
            t.book_value = v;
        }
    }

    /// Sets explicit per-token values; they must add up to the book value.
    /// Later book changes keep these proportions.
    pub fn set_token_values(&mut self, values: &[Cftx]) -> Result<(), DsolError> {
        if values.len() != self.tokens.len() {
            return Err(DsolError::TokenCount {
                expected: self.tokens.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| v.is_negative()) {
            return Err(DsolError::NegativeToken(*v));
        }
        let sum: Cftx = values.iter().copied().sum();
        if sum != self.book_value {
            return Err(DsolError::ValueSum {
                sum,
                book: self.book_value,
            });
        }
        for (t, v) in self.tokens.iter_mut().zip(values) {
            t.book_value = *v;
        }
        self.weights = Some(values.iter().map(|v| v.micros()).collect());
        Ok(())
    }

    /// Adds a task's value increment to the book value.
    pub fn record_task_outcome(&mut self, increment: Cftx) -> Result<(), DsolError> {
        let after = self.book_value.checked_add(increment)?;
        if after.is_negative() {
            return Err(DsolError::NegativeBook(after));
        }
        self.book_value = after;
        self.resplit();
        Ok(())
    }

    pub fn set_market_multiplier(&mut self, m: f64) -> Result<(), DsolError> {
        if !(m.is_finite() && m > 0.0) {
            return Err(DsolError::Multiplier(m));
        }
        self.market_multiplier = m;
        Ok(())
    }

    pub fn market_value(&self) -> Result<Cftx, DsolError> {
        Ok(self.book_value.mul_real_round(self.market_multiplier)?)
    }

    /// Moves one whole token between owners.
    pub fn transfer(&mut self, serial: &str, from: &NodeId, to: NodeId) -> Result<(), DsolError> {
        let t = self
            .tokens
            .iter_mut()
            .find(|t| t.serial == serial)
            .ok_or_else(|| DsolError::UnknownToken(serial.to_string()))?;
        if &t.owner != from {
            return Err(DsolError::NotOwner {
                serial: serial.to_string(),
                who: from.clone(),
            });
        }
        t.owner = to;
        Ok(())
    }

    /// Sealed-bid sale: the highest bid wins, the earliest of equal bids first.
    pub fn auction(&mut self, serial: &str, bids: &[(NodeId, Cftx)]) -> Result<Sale, DsolError> {
        let seller = self
            .token(serial)
            .ok_or_else(|| DsolError::UnknownToken(serial.to_string()))?
            .owner
            .clone();
        let mut best: Option<&(NodeId, Cftx)> = None;
        for bid in bids
            .iter()
            .filter(|(who, price)| *who != seller && !price.is_negative())
        {
            if best.is_none_or(|b| bid.1 > b.1) {
                best = Some(bid);
            }
        }
        let (buyer, price) = best.cloned().ok_or_else(|| DsolError::NoBids(serial.to_string()))?;
        self.transfer(serial, &seller, buyer.clone())?;
        Ok(Sale {
            serial: serial.to_string(),
            seller,
            buyer,
            price,
        })
    }

    pub fn is_consistent(&self) -> bool {
        self.tokens.iter().map(|t| t.book_value).sum::<Cftx>() == self.book_value
    }
}
