//! Permissioned cross-chain token exchange.
//!
//! Two chains swap a token each. The initiator locks its token and sends a
//! request; the counterparty confirms (locking its own token) or cancels.
//! Each side then disables its original and sends an authorized package from
//! which the other side mints a shadow token. Once both shadows exist a final
//! confirmation makes them live. Private data travels only inside packages,
//! sealed with a per-exchange keystream, and is restored byte for byte when a
//! shadow is returned to its home chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::amount::Cftx;
use crate::chain::codec::{sha256, Digest, Encoder};
use crate::ids::NodeId;

/// Exchange lifetime when the caller does not choose one: 30 s in µs.
pub const DEFAULT_EXPIRY_US: u64 = 30_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XChainError {
    #[error("unknown chain `{0}`")]
    UnknownChain(String),
    #[error("chain `{0}` is already registered")]
    DuplicateChain(String),
    #[error("unknown token `{token}` on chain `{chain}`")]
    UnknownToken { chain: String, token: String },
    #[error("token `{0}` already exists")]
    DuplicateToken(String),
    #[error("token `{token}` is {status}, expected {expected}")]
    Status {
        token: String,
        status: XStatus,
        expected: XStatus,
    },
    #[error("chain `{0}` is blacklisted")]
    Blacklisted(String),
    #[error("tokens `{0}` and `{1}` are barred from exchanging again")]
    Barred(String, String),
    #[error("a token cannot be exchanged on its own chain")]
    SameChain,
    #[error("unknown exchange {0}")]
    UnknownExchange(u64),
    #[error("exchange {id} is at {stage:?}, cannot {action}")]
    Stage {
        id: u64,
        stage: ExchangeStage,
        action: &'static str,
    },
    #[error("exchange {0} expired")]
    Expired(u64),
    #[error("package verification failed: {0}")]
    Verification(&'static str),
    #[error("token `{0}` is not a shadow")]
    NotShadow(String),
    #[error("original of base `{0}` is missing on its home chain")]
    MissingOriginal(String),
    #[error("restored private data does not match the original")]
    Integrity,
    #[error("at most one live token per base id; `{0}` has more")]
    DuplicateNormal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum XType {
    Collection,
    NonCollection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum XStatus {
    Normal,
    Exchange,
    Disabled,
}

impl fmt::Display for XStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            XStatus::Normal => "normal",
            XStatus::Exchange => "exchange",
            XStatus::Disabled => "disabled",
        })
    }
}

/// One hop in a token's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathRecord {
    pub at: u64,
    pub exchange: u64,
    pub from_chain: String,
    pub to_chain: String,
    pub prior_owner: NodeId,
    pub new_owner: NodeId,
    /// Digest locating the sealed private attributes; empty when not authorized.
    pub private_ref: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct XToken {
    pub id: String,
    pub base_id: String,
    pub xtype: XType,
    pub chain: String,
    pub owner: NodeId,
    /// Last owner on each chain the token has lived on.
    pub owners: BTreeMap<String, NodeId>,
    pub path: Vec<PathRecord>,
    pub status: XStatus,
    pub value: Cftx,
    pub public_data: Vec<u8>,
    /// Plain private data; only the home chain holds it.
    pub private_data: Option<Vec<u8>>,
    /// Sealed private data carried by a shadow.
    pub sealed_private: Option<Vec<u8>>,
    pub home_chain: String,
}

impl XToken {
    pub fn is_shadow(&self) -> bool {
        self.chain != self.home_chain
    }
}

/// Authorized information one chain sends so the other can mint a shadow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Package {
    pub exchange: u64,
    pub from_chain: String,
    pub to_chain: String,
    pub token_id: String,
    pub base_id: String,
    pub xtype: XType,
    pub owner: NodeId,
    pub value: Cftx,
    pub public_data: Vec<u8>,
    pub sealed_private: Option<Vec<u8>>,
    pub private_digest: Option<Digest>,
    pub created_at: u64,
    pub expires_at: u64,
    pub price: Cftx,
    pub payload_digest: Digest,
}

impl Package {
    fn compute_digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str("xchain-package")
            .u64(self.exchange)
            .str(&self.from_chain)
            .str(&self.to_chain)
            .str(&self.token_id)
            .str(&self.base_id)
            .u8(match self.xtype {
                XType::Collection => 1,
                XType::NonCollection => 0,
            })
            .str(self.owner.as_str())
            .i64(self.value.micros())
            .bytes(&self.public_data);
        match &self.sealed_private {
            Some(s) => e.u8(1).bytes(s),
            None => e.u8(0),
        };
        match &self.private_digest {
            Some(d) => e.u8(1).digest(d),
            None => e.u8(0),
        };
        e.u64(self.created_at).u64(self.expires_at).i64(self.price.micros());
        sha256(&[&e.finish()])
    }

    pub fn verify(&self) -> bool {
        self.payload_digest == self.compute_digest()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// The initiating chain.
    A,
    /// The counterparty chain.
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Response {
    Confirm,
    Cancel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeStage {
    Requested,
    Confirmed,
    APackaged,
    BMinted,
    BPackaged,
    AMinted,
    Completed,
    Cancelled(String),
    Aborted(String),
    Breached { offender: String },
}

impl ExchangeStage {
    fn is_over(&self) -> bool {
        matches!(
            self,
            ExchangeStage::Completed
                | ExchangeStage::Cancelled(_)
                | ExchangeStage::Aborted(_)
                | ExchangeStage::Breached { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct Exchange {
    id: u64,
    chain_a: String,
    token_a: String,
    chain_b: String,
    token_b: String,
    requested_at: u64,
    expires_at: u64,
    price: Cftx,
    stage: ExchangeStage,
    shadow_on_b: Option<String>,
    shadow_on_a: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum XEvent {
    Lock {
        exchange: u64,
        chain: String,
        token: String,
    },
    Request {
        exchange: u64,
        xtype: XType,
        at: u64,
        expires_at: u64,
        price: Cftx,
    },
    Confirm {
        exchange: u64,
    },
    Cancel {
        exchange: u64,
        reason: String,
    },
    Package {
        exchange: u64,
        side: Side,
        payload_digest: Digest,
    },
    Mint {
        exchange: u64,
        chain: String,
        token: String,
    },
    Complete {
        exchange: u64,
    },
    Abort {
        exchange: u64,
        reason: String,
    },
    Breach {
        exchange: u64,
        offender: String,
    },
    Return {
        chain: String,
        shadow: String,
        restored: String,
    },
}

#[derive(Debug, Clone, Default)]
struct ChainLedger {
    tokens: BTreeMap<String, XToken>,
    /// Per-exchange keys for the private data this chain has sealed.
    keys: BTreeMap<(u64, String), [u8; 32]>,
}

/// All participating chains plus the exchange bookkeeping between them.
#[derive(Debug, Clone)]
pub struct XHub {
    secret: [u8; 32],
    chains: BTreeMap<String, ChainLedger>,
    exchanges: BTreeMap<u64, Exchange>,
    blacklist: BTreeSet<String>,
    barred: BTreeSet<(String, String)>,
    next_exchange: u64,
    events: Vec<XEvent>,
}

/// XORs `data` with a SHA-256 counter-mode keystream.
fn keystream_xor(key: &[u8; 32], data: &[u8]) -> Vec<u8> {
    data.chunks(32)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let block = sha256(&[key, &(i as u64).to_be_bytes()]);
            chunk.iter().zip(block.0).map(|(d, k)| d ^ k).collect::<Vec<_>>()
        })
        .collect()
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl XHub {
    /// `seed` makes the per-exchange keys reproducible.
    pub fn new(seed: u64) -> Self {
        Self {
            secret: sha256(&[b"xchain-secret", &seed.to_be_bytes()]).0,
            chains: BTreeMap::new(),
            exchanges: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            barred: BTreeSet::new(),
            next_exchange: 1,
            events: Vec::new(),
        }
    }

    pub fn register_chain(&mut self, chain: impl Into<String>) -> Result<(), XChainError> {
        let chain = chain.into();
        if self.chains.contains_key(&chain) {
            return Err(XChainError::DuplicateChain(chain));
        }
        self.chains.insert(chain, ChainLedger::default());
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn create_token(
        &mut self,
        chain: &str,
        id: &str,
        owner: NodeId,
        xtype: XType,
        value: Cftx,
        public_data: Vec<u8>,
        private_data: Vec<u8>,
    ) -> Result<(), XChainError> {
        if self.chains.values().any(|c| c.tokens.values().any(|t| t.base_id == id)) {
            return Err(XChainError::DuplicateToken(id.to_string()));
        }
        let ledger = self.ledger_mut(chain)?;
        if ledger.tokens.contains_key(id) {
            return Err(XChainError::DuplicateToken(id.to_string()));
        }
        ledger.tokens.insert(
            id.to_string(),
            XToken {
                id: id.to_string(),
                base_id: id.to_string(),
                xtype,
                chain: chain.to_string(),
                owner: owner.clone(),
                owners: BTreeMap::from([(chain.to_string(), owner)]),
                path: Vec::new(),
                status: XStatus::Normal,
                value,
                public_data,
                private_data: match xtype {
                    XType::Collection => Some(private_data),
                    XType::NonCollection => None,
                },
                sealed_private: None,
                home_chain: chain.to_string(),
            },
        );
        Ok(())
    }

    pub fn token(&self, chain: &str, id: &str) -> Option<&XToken> {
        self.chains.get(chain)?.tokens.get(id)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &XToken> {
        self.chains.values().flat_map(|c| c.tokens.values())
    }

    pub fn events(&self) -> &[XEvent] {
        &self.events
    }

    pub fn is_blacklisted(&self, chain: &str) -> bool {
        self.blacklist.contains(chain)
    }

    pub fn stage(&self, exchange: u64) -> Option<&ExchangeStage> {
        self.exchanges.get(&exchange).map(|e| &e.stage)
    }

    /// Shadows minted by an exchange: (on the counterparty chain, on the initiator chain).
    pub fn shadows(&self, exchange: u64) -> Option<(Option<&str>, Option<&str>)> {
        self.exchanges
            .get(&exchange)
            .map(|e| (e.shadow_on_b.as_deref(), e.shadow_on_a.as_deref()))
    }

    /// Number of live instances per base id across every chain.
    pub fn normal_count(&self, base_id: &str) -> usize {
        self.tokens()
            .filter(|t| t.base_id == base_id && t.status == XStatus::Normal)
            .count()
    }

    pub fn check_single_normal(&self) -> Result<(), XChainError> {
        let mut seen = BTreeSet::new();
        for t in self.tokens().filter(|t| t.status == XStatus::Normal) {
            if !seen.insert(t.base_id.clone()) {
                return Err(XChainError::DuplicateNormal(t.base_id.clone()));
            }
        }
        Ok(())
    }

    fn ledger_mut(&mut self, chain: &str) -> Result<&mut ChainLedger, XChainError> {
        self.chains
            .get_mut(chain)
            .ok_or_else(|| XChainError::UnknownChain(chain.to_string()))
    }

    fn token_mut(&mut self, chain: &str, id: &str) -> Result<&mut XToken, XChainError> {
        self.ledger_mut(chain)?
            .tokens
            .get_mut(id)
            .ok_or_else(|| XChainError::UnknownToken {
                chain: chain.to_string(),
                token: id.to_string(),
            })
    }

    fn token_ref(&self, chain: &str, id: &str) -> Result<&XToken, XChainError> {
        self.token(chain, id).ok_or_else(|| XChainError::UnknownToken {
            chain: chain.to_string(),
            token: id.to_string(),
        })
    }

    fn set_status(&mut self, chain: &str, id: &str, status: XStatus) -> Result<(), XChainError> {
        self.token_mut(chain, id)?.status = status;
        Ok(())
    }

    fn expect_status(&self, chain: &str, id: &str, expected: XStatus) -> Result<(), XChainError> {
        let t = self.token_ref(chain, id)?;
        if t.status != expected {
            return Err(XChainError::Status {
                token: id.to_string(),
                status: t.status,
                expected,
            });
        }
        Ok(())
    }

    fn exchange(&self, id: u64) -> Result<&Exchange, XChainError> {
        self.exchanges.get(&id).ok_or(XChainError::UnknownExchange(id))
    }

    /// Checks stage and expiry; an expired exchange is unwound and reported.
    fn gate(&mut self, id: u64, now: u64, want: ExchangeStage, action: &'static str) -> Result<Exchange, XChainError> {
        let ex = self.exchange(id)?.clone();
        if ex.stage != want {
            return Err(XChainError::Stage {
                id,
                stage: ex.stage,
                action,
            });
        }
        if now > ex.expires_at {
            self.unwind(id, ExchangeStage::Aborted("expired".into()))?;
            return Err(XChainError::Expired(id));
        }
        Ok(ex)
    }

    /// Releases every lock: originals back to normal, shadows disabled.
    fn unwind(&mut self, id: u64, stage: ExchangeStage) -> Result<(), XChainError> {
        let ex = self.exchange(id)?.clone();
        for (chain, token) in [(&ex.chain_a, &ex.token_a), (&ex.chain_b, &ex.token_b)] {
            self.set_status(chain, token, XStatus::Normal)?;
        }
        if let Some(s) = &ex.shadow_on_b {
            self.set_status(&ex.chain_b, s, XStatus::Disabled)?;
        }
        if let Some(s) = &ex.shadow_on_a {
            self.set_status(&ex.chain_a, s, XStatus::Disabled)?;
        }
        let event = match &stage {
            ExchangeStage::Breached { offender } => XEvent::Breach {
                exchange: id,
                offender: offender.clone(),
            },
            ExchangeStage::Cancelled(reason) => XEvent::Cancel {
                exchange: id,
                reason: reason.clone(),
            },
            ExchangeStage::Aborted(reason) => XEvent::Abort {
                exchange: id,
                reason: reason.clone(),
            },
            other => unreachable!("unwind to {other:?}"),
        };
        self.events.push(event);
        self.exchanges.get_mut(&id).expect("exchange exists").stage = stage;
        Ok(())
    }

    /// Locks the initiator's token and records the request.
    pub fn begin(
        &mut self,
        now: u64,
        (chain_a, token_a): (&str, &str),
        (chain_b, token_b): (&str, &str),
        price: Cftx,
        expiry_us: u64,
    ) -> Result<u64, XChainError> {
        if chain_a == chain_b {
            return Err(XChainError::SameChain);
        }
        for c in [chain_a, chain_b] {
            if !self.chains.contains_key(c) {
                return Err(XChainError::UnknownChain(c.to_string()));
            }
            if self.blacklist.contains(c) {
                return Err(XChainError::Blacklisted(c.to_string()));
            }
        }
        self.expect_status(chain_a, token_a, XStatus::Normal)?;
        self.expect_status(chain_b, token_b, XStatus::Normal)?;
        let base_a = self.token_ref(chain_a, token_a)?.base_id.clone();
        let base_b = self.token_ref(chain_b, token_b)?.base_id.clone();
        if self.barred.contains(&pair_key(&base_a, &base_b)) {
            return Err(XChainError::Barred(base_a, base_b));
        }
        let id = self.next_exchange;
        self.next_exchange += 1;
        let xtype = self.token_ref(chain_a, token_a)?.xtype;
        self.set_status(chain_a, token_a, XStatus::Exchange)?;
        let expires_at = now.saturating_add(expiry_us);
        self.exchanges.insert(
            id,
            Exchange {
                id,
                chain_a: chain_a.to_string(),
                token_a: token_a.to_string(),
                chain_b: chain_b.to_string(),
                token_b: token_b.to_string(),
                requested_at: now,
                expires_at,
                price,
                stage: ExchangeStage::Requested,
                shadow_on_b: None,
                shadow_on_a: None,
            },
        );
        self.events.push(XEvent::Lock {
            exchange: id,
            chain: chain_a.to_string(),
            token: token_a.to_string(),
        });
        self.events.push(XEvent::Request {
            exchange: id,
            xtype,
            at: now,
            expires_at,
            price,
        });
        Ok(id)
    }

    /// The counterparty confirms (locking its token) or cancels with a reason.
    pub fn respond(&mut self, now: u64, id: u64, response: Response) -> Result<(), XChainError> {
        let ex = self.gate(id, now, ExchangeStage::Requested, "respond")?;
        match response {
            Response::Confirm => {
                self.expect_status(&ex.chain_b, &ex.token_b, XStatus::Normal)?;
                self.set_status(&ex.chain_b, &ex.token_b, XStatus::Exchange)?;
                self.events.push(XEvent::Lock {
                    exchange: id,
                    chain: ex.chain_b.clone(),
                    token: ex.token_b.clone(),
                });
                self.events.push(XEvent::Confirm { exchange: id });
                self.exchanges.get_mut(&id).expect("exists").stage = ExchangeStage::Confirmed;
            }
            Response::Cancel(reason) => {
                self.set_status(&ex.chain_a, &ex.token_a, XStatus::Normal)?;
                self.events.push(XEvent::Cancel {
                    exchange: id,
                    reason: reason.clone(),
                });
                self.exchanges.get_mut(&id).expect("exists").stage = ExchangeStage::Cancelled(reason);
            }
        }
        Ok(())
    }

    /// Disables `side`'s original and builds its authorized package.
    pub fn package(&mut self, now: u64, id: u64, side: Side) -> Result<Package, XChainError> {
        let (want, next) = match side {
            Side::A => (ExchangeStage::Confirmed, ExchangeStage::APackaged),
            Side::B => (ExchangeStage::BMinted, ExchangeStage::BPackaged),
        };
        let ex = self.gate(id, now, want, "package")?;
        let (from, token, to) = match side {
            Side::A => (&ex.chain_a, &ex.token_a, &ex.chain_b),
            Side::B => (&ex.chain_b, &ex.token_b, &ex.chain_a),
        };
        self.expect_status(from, token, XStatus::Exchange)?;
        let original = self.token_ref(from, token)?.clone();
        let (sealed, private_digest) = match &original.private_data {
            Some(plain) => {
                let key = sha256(&[&self.secret, &id.to_be_bytes(), original.base_id.as_bytes()]).0;
                self.ledger_mut(from)?.keys.insert((id, original.base_id.clone()), key);
                (Some(keystream_xor(&key, plain)), Some(sha256(&[plain])))
            }
            None => (None, None),
        };
        let mut pkg = Package {
            exchange: id,
            from_chain: from.clone(),
            to_chain: to.clone(),
            token_id: original.id.clone(),
            base_id: original.base_id.clone(),
            xtype: original.xtype,
            owner: original.owner.clone(),
            value: original.value,
            public_data: original.public_data.clone(),
            sealed_private: sealed,
            private_digest,
            created_at: now,
            expires_at: ex.expires_at,
            price: ex.price,
            payload_digest: Digest::ZERO,
        };
        pkg.payload_digest = pkg.compute_digest();
        let (from, token) = (from.clone(), token.clone());
        self.set_status(&from, &token, XStatus::Disabled)?;
        self.events.push(XEvent::Package {
            exchange: id,
            side,
            payload_digest: pkg.payload_digest,
        });
        self.exchanges.get_mut(&id).expect("exists").stage = next;
        Ok(pkg)
    }

    /// Verifies a package and mints the shadow token on the receiving chain.
    /// A package that fails verification aborts the exchange.
    pub fn verify_and_mint(&mut self, now: u64, id: u64, pkg: &Package) -> Result<String, XChainError> {
        let ex = self.exchange(id)?.clone();
        let (side, next) = match ex.stage {
            ExchangeStage::APackaged => (Side::A, ExchangeStage::BMinted),
            ExchangeStage::BPackaged => (Side::B, ExchangeStage::AMinted),
            _ => {
                return Err(XChainError::Stage {
                    id,
                    stage: ex.stage,
                    action: "mint",
                })
            }
        };
        self.gate(id, now, ex.stage.clone(), "mint")?;
        let (from, token, to, new_owner) = match side {
            Side::A => (
                &ex.chain_a,
                &ex.token_a,
                &ex.chain_b,
                self.token_ref(&ex.chain_b, &ex.token_b)?.owner.clone(),
            ),
            Side::B => (
                &ex.chain_b,
                &ex.token_b,
                &ex.chain_a,
                self.token_ref(&ex.chain_a, &ex.token_a)?.owner.clone(),
            ),
        };
        let failure = if !pkg.verify() {
            Some("payload digest mismatch")
        } else if pkg.exchange != id || &pkg.from_chain != from || &pkg.to_chain != to || &pkg.token_id != token {
            Some("package does not belong to this exchange")
        } else if pkg.xtype == XType::Collection && (pkg.sealed_private.is_none() || pkg.private_digest.is_none()) {
            Some("collection token without private attributes")
        } else {
            None
        };
        if let Some(reason) = failure {
            self.unwind(id, ExchangeStage::Aborted(reason.into()))?;
            return Err(XChainError::Verification(reason));
        }

        let original = self.token_ref(from, token)?.clone();
        let shadow_id = format!("{to}:{}#{id}", pkg.base_id);
        let mut path = original.path.clone();
        path.push(PathRecord {
            at: now,
            exchange: id,
            from_chain: from.clone(),
            to_chain: to.clone(),
            prior_owner: pkg.owner.clone(),
            new_owner: new_owner.clone(),
            private_ref: pkg.sealed_private.as_ref().map(|s| sha256(&[s])),
        });
        let mut owners = original.owners.clone();
        owners.insert(to.clone(), new_owner.clone());
        let shadow = XToken {
            id: shadow_id.clone(),
            base_id: pkg.base_id.clone(),
            xtype: pkg.xtype,
            chain: to.clone(),
            owner: new_owner,
            owners,
            path,
            status: XStatus::Exchange,
            value: pkg.value,
            public_data: pkg.public_data.clone(),
            private_data: None,
            sealed_private: pkg.sealed_private.clone(),
            home_chain: original.home_chain.clone(),
        };
        let to = to.clone();
        self.ledger_mut(&to)?.tokens.insert(shadow_id.clone(), shadow);
        let slot = self.exchanges.get_mut(&id).expect("exists");
        match side {
            Side::A => slot.shadow_on_b = Some(shadow_id.clone()),
            Side::B => slot.shadow_on_a = Some(shadow_id.clone()),
        }
        slot.stage = next;
        self.events.push(XEvent::Mint {
            exchange: id,
            chain: to,
            token: shadow_id.clone(),
        });
        Ok(shadow_id)
    }

    /// Final confirmation: both shadows go live; the originals stay disabled.
    pub fn finalize(&mut self, now: u64, id: u64) -> Result<(), XChainError> {
        let ex = self.gate(id, now, ExchangeStage::AMinted, "finalize")?;
        let (sb, sa) = (
            ex.shadow_on_b.clone().expect("minted"),
            ex.shadow_on_a.clone().expect("minted"),
        );
        self.set_status(&ex.chain_b, &sb, XStatus::Normal)?;
        self.set_status(&ex.chain_a, &sa, XStatus::Normal)?;
        self.exchanges.get_mut(&id).expect("exists").stage = ExchangeStage::Completed;
        self.events.push(XEvent::Complete { exchange: id });
        Ok(())
    }

    /// Runs the whole protocol; returns (shadow on B, shadow on A).
    pub fn exchange_tokens(
        &mut self,
        now: u64,
        a: (&str, &str),
        b: (&str, &str),
        price: Cftx,
    ) -> Result<(u64, String, String), XChainError> {
        let id = self.begin(now, a, b, price, DEFAULT_EXPIRY_US)?;
        self.respond(now, id, Response::Confirm)?;
        let pa = self.package(now, id, Side::A)?;
        let sb = self.verify_and_mint(now, id, &pa)?;
        let pb = self.package(now, id, Side::B)?;
        let sa = self.verify_and_mint(now, id, &pb)?;
        self.finalize(now, id)?;
        Ok((id, sb, sa))
    }

    /// Aborts an unfinished exchange whose deadline has passed.
    pub fn expire(&mut self, now: u64, id: u64) -> Result<bool, XChainError> {
        let ex = self.exchange(id)?;
        if ex.stage.is_over() || now <= ex.expires_at {
            return Ok(false);
        }
        self.unwind(id, ExchangeStage::Aborted("expired".into()))?;
        Ok(true)
    }

    /// Records a protocol breach by `offender`: the exchange unwinds, the
    /// offender is blacklisted and the token pair may not exchange again.
    pub fn report_breach(&mut self, id: u64, offender: &str) -> Result<(), XChainError> {
        let ex = self.exchange(id)?.clone();
        if ex.stage.is_over() {
            return Err(XChainError::Stage {
                id,
                stage: ex.stage,
                action: "report a breach",
            });
        }
        if offender != ex.chain_a && offender != ex.chain_b {
            return Err(XChainError::UnknownChain(offender.to_string()));
        }
        let base_a = self.token_ref(&ex.chain_a, &ex.token_a)?.base_id.clone();
        let base_b = self.token_ref(&ex.chain_b, &ex.token_b)?.base_id.clone();
        self.unwind(
            id,
            ExchangeStage::Breached {
                offender: offender.to_string(),
            },
        )?;
        self.blacklist.insert(offender.to_string());
        self.barred.insert(pair_key(&base_a, &base_b));
        Ok(())
    }

    /// Sends a live shadow back to its home chain and revives the original,
    /// restoring its private data from the shadow's sealed copy.
    pub fn return_home(&mut self, now: u64, chain: &str, shadow_id: &str) -> Result<String, XChainError> {
        let shadow = self.token_ref(chain, shadow_id)?.clone();
        if !shadow.is_shadow() {
            return Err(XChainError::NotShadow(shadow_id.to_string()));
        }
        self.expect_status(chain, shadow_id, XStatus::Normal)?;
        let home = shadow.home_chain.clone();
        let original = self
            .chains
            .get(&home)
            .and_then(|c| c.tokens.get(&shadow.base_id))
            .cloned()
            .ok_or_else(|| XChainError::MissingOriginal(shadow.base_id.clone()))?;
        if original.status != XStatus::Disabled {
            return Err(XChainError::MissingOriginal(shadow.base_id.clone()));
        }
        let exchange = shadow.path.last().map_or(0, |p| p.exchange);
        let restored_private = match (&shadow.sealed_private, &original.private_data) {
            (Some(sealed), Some(plain)) => {
                let key = *self
                    .chains
                    .get(&home)
                    .and_then(|c| c.keys.get(&(exchange, shadow.base_id.clone())))
                    .ok_or(XChainError::Integrity)?;
                let opened = keystream_xor(&key, sealed);
                if &opened != plain {
                    return Err(XChainError::Integrity);
                }
                Some(opened)
            }
            (None, None) => None,
            _ => return Err(XChainError::Integrity),
        };
        self.set_status(chain, shadow_id, XStatus::Disabled)?;
        let t = self.token_mut(&home, &shadow.base_id)?;
        t.status = XStatus::Normal;
        t.private_data = restored_private;
        t.owner = shadow.owner.clone();
        t.owners = shadow.owners.clone();
        t.owners.insert(home.clone(), shadow.owner.clone());
        t.path = shadow.path.clone();
        t.path.push(PathRecord {
            at: now,
            exchange,
            from_chain: chain.to_string(),
            to_chain: home.clone(),
            prior_owner: shadow.owner.clone(),
            new_owner: shadow.owner.clone(),
            private_ref: None,
        });
        let restored = t.id.clone();
        self.events.push(XEvent::Return {
            chain: chain.to_string(),
            shadow: shadow_id.to_string(),
            restored: restored.clone(),
        });
        Ok(restored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hub() -> XHub {
        let mut h = XHub::new(7);
        h.register_chain("A").unwrap();
        h.register_chain("B").unwrap();
        h.create_token(
            "A",
            "heart",
            NodeId::new("alice"),
            XType::Collection,
            Cftx::whole(50),
            b"pub-h".to_vec(),
            b"secret heart".to_vec(),
        )
        .unwrap();
        h.create_token(
            "B",
            "moon",
            NodeId::new("bob"),
            XType::Collection,
            Cftx::whole(40),
            b"pub-m".to_vec(),
            b"secret moon!".to_vec(),
        )
        .unwrap();
        h
    }

    fn statuses(h: &XHub) -> Vec<(String, XStatus)> {
        h.tokens().map(|t| (t.id.clone(), t.status)).collect()
    }

    #[test]
    fn happy_path() {
        let mut h = hub();
        let id = h
            .begin(0, ("A", "heart"), ("B", "moon"), Cftx::whole(45), DEFAULT_EXPIRY_US)
            .unwrap();
        h.check_single_normal().unwrap();
        h.respond(1, id, Response::Confirm).unwrap();
        h.check_single_normal().unwrap();
        let pa = h.package(2, id, Side::A).unwrap();
        assert!(pa.sealed_private.as_deref() != Some(b"secret heart".as_slice()));
        let sb = h.verify_and_mint(3, id, &pa).unwrap();
        let pb = h.package(4, id, Side::B).unwrap();
        let sa = h.verify_and_mint(5, id, &pb).unwrap();
        h.check_single_normal().unwrap();
        h.finalize(6, id).unwrap();
        h.check_single_normal().unwrap();

        assert_eq!(h.token("B", &sb).unwrap().status, XStatus::Normal);
        assert_eq!(h.token("A", &sa).unwrap().status, XStatus::Normal);
        assert_eq!(h.token("A", "heart").unwrap().status, XStatus::Disabled);
        assert_eq!(h.token("B", "moon").unwrap().status, XStatus::Disabled);
        assert_eq!(h.normal_count("heart"), 1);
        assert_eq!(h.normal_count("moon"), 1);
        assert_eq!(h.token("B", &sb).unwrap().value, Cftx::whole(50));
        assert_eq!(h.token("B", &sb).unwrap().owner, NodeId::new("bob"));
        assert!(h.token("B", &sb).unwrap().private_data.is_none());
    }

    #[test]
    fn cancel_unwinds() {
        let mut h = hub();
        let id = h
            .begin(0, ("A", "heart"), ("B", "moon"), Cftx::whole(45), DEFAULT_EXPIRY_US)
            .unwrap();
        h.respond(1, id, Response::Cancel("price too low".into())).unwrap();
        assert_eq!(h.token("A", "heart").unwrap().status, XStatus::Normal);
        assert_eq!(h.token("B", "moon").unwrap().status, XStatus::Normal);
        assert_eq!(h.tokens().count(), 2);
    }

    #[test]
    fn breach_blacklists_and_bars() {
        let mut h = hub();
        let id = h
            .begin(0, ("A", "heart"), ("B", "moon"), Cftx::whole(45), DEFAULT_EXPIRY_US)
            .unwrap();
        h.respond(1, id, Response::Confirm).unwrap();
        let pa = h.package(2, id, Side::A).unwrap();
        h.verify_and_mint(3, id, &pa).unwrap();
        // B never sends its package
        h.report_breach(id, "B").unwrap();
        h.check_single_normal().unwrap();
        assert!(h.is_blacklisted("B"));
        assert_eq!(h.token("A", "heart").unwrap().status, XStatus::Normal);
        assert!(matches!(
            h.begin(10, ("A", "heart"), ("B", "moon"), Cftx::whole(45), DEFAULT_EXPIRY_US),
            Err(XChainError::Blacklisted(_))
        ));
    }

    #[test]
    fn expiry_aborts() {
        let mut h = hub();
        let id = h.begin(0, ("A", "heart"), ("B", "moon"), Cftx::ZERO, 100).unwrap();
        h.respond(50, id, Response::Confirm).unwrap();
        let err = h.package(101, id, Side::A).unwrap_err();
        assert_eq!(err, XChainError::Expired(id));
        assert_eq!(statuses(&h).iter().filter(|(_, s)| *s == XStatus::Normal).count(), 2);
        assert!(matches!(h.stage(id), Some(ExchangeStage::Aborted(_))));
    }

    #[test]
    fn tampered_package_aborts() {
        let mut h = hub();
        let id = h
            .begin(0, ("A", "heart"), ("B", "moon"), Cftx::ZERO, DEFAULT_EXPIRY_US)
            .unwrap();
        h.respond(1, id, Response::Confirm).unwrap();
        let mut pa = h.package(2, id, Side::A).unwrap();
        pa.value = Cftx::whole(5_000);
        assert!(matches!(
            h.verify_and_mint(3, id, &pa),
            Err(XChainError::Verification(_))
        ));
        assert_eq!(h.token("A", "heart").unwrap().status, XStatus::Normal);
        h.check_single_normal().unwrap();
    }

    #[test]
    fn return_restores_private_data() {
        let mut h = hub();
        let (_, sb, _) = h
            .exchange_tokens(0, ("A", "heart"), ("B", "moon"), Cftx::whole(45))
            .unwrap();
        let restored = h.return_home(10, "B", &sb).unwrap();
        assert_eq!(restored, "heart");
        let t = h.token("A", "heart").unwrap();
        assert_eq!(t.status, XStatus::Normal);
        assert_eq!(t.private_data.as_deref(), Some(b"secret heart".as_slice()));
        assert_eq!(h.token("B", &sb).unwrap().status, XStatus::Disabled);
        h.check_single_normal().unwrap();
        assert!(h.return_home(11, "B", &sb).is_err());
    }

    #[test]
    fn non_collection_roundtrip() {
        let mut h = XHub::new(1);
        h.register_chain("A").unwrap();
        h.register_chain("B").unwrap();
        h.create_token(
            "A",
            "coin-a",
            NodeId::new("a"),
            XType::NonCollection,
            Cftx::whole(1),
            vec![1],
            vec![9, 9],
        )
        .unwrap();
        h.create_token(
            "B",
            "coin-b",
            NodeId::new("b"),
            XType::NonCollection,
            Cftx::whole(1),
            vec![2],
            vec![],
        )
        .unwrap();
        let (_, sb, sa) = h
            .exchange_tokens(0, ("A", "coin-a"), ("B", "coin-b"), Cftx::ZERO)
            .unwrap();
        assert!(h.token("B", &sb).unwrap().sealed_private.is_none());
        h.return_home(1, "A", &sa).unwrap();
        h.return_home(1, "B", &sb).unwrap();
        assert_eq!(h.token("A", "coin-a").unwrap().status, XStatus::Normal);
        assert_eq!(h.token("A", "coin-a").unwrap().private_data, None);
        h.check_single_normal().unwrap();
    }

    #[test]
    fn keystream_roundtrip() {
        let key = [3u8; 32];
        let data: Vec<u8> = (0..100).collect();
        let sealed = keystream_xor(&key, &data);
        assert_ne!(sealed, data);
        assert_eq!(keystream_xor(&key, &sealed), data);
    }

    proptest! {
        #[test]
        fn single_live_instance_under_random_runs(
            private in prop::collection::vec(any::<u8>(), 0..64),
            stop in 0usize..8,
            breach in any::<bool>(),
            late in any::<bool>(),
        ) {
            let mut h = XHub::new(3);
            h.register_chain("A").unwrap();
            h.register_chain("B").unwrap();
            h.create_token("A", "x", NodeId::new("a"), XType::Collection, Cftx::whole(3), vec![], private.clone()).unwrap();
            h.create_token("B", "y", NodeId::new("b"), XType::Collection, Cftx::whole(4), vec![], vec![1]).unwrap();
            let t = |k: u64| if late { k * 20 } else { k };
            let id = h.begin(t(0), ("A", "x"), ("B", "y"), Cftx::ZERO, 100).unwrap();
            let mut pkg = None;
            for step in 0..stop.min(6) {
                let r = match step {
                    0 => h.respond(t(1), id, Response::Confirm),
                    1 => h.package(t(2), id, Side::A).map(|p| { pkg = Some(p); }),
                    2 => h.verify_and_mint(t(3), id, pkg.as_ref().unwrap()).map(|_| ()),
                    3 => h.package(t(4), id, Side::B).map(|p| { pkg = Some(p); }),
                    4 => h.verify_and_mint(t(5), id, pkg.as_ref().unwrap()).map(|_| ()),
                    _ => h.finalize(t(6), id),
                };
                h.check_single_normal().unwrap();
                if r.is_err() { break; }
            }
            if breach {
                let _ = h.report_breach(id, "B");
                h.check_single_normal().unwrap();
            }
            if let Some((Some(sb), _)) = h.shadows(id).map(|(b, a)| (b.map(str::to_string), a)) {
                if h.token("B", &sb).unwrap().status == XStatus::Normal {
                    prop_assert_eq!(h.token("B", &sb).unwrap().value, Cftx::whole(3));
                    h.return_home(t(7), "B", &sb).unwrap();
                    prop_assert_eq!(h.token("A", "x").unwrap().private_data.clone(), Some(private.clone()));
                    h.check_single_normal().unwrap();
                }
            }
        }
    }
}
