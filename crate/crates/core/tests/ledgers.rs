//! Dual-token valuation, asset anchoring and cross-chain exchange.

use blockcloud_core::ledger::anchor::AnchorPosition;
use blockcloud_core::ledger::dsol::Dsol;
use blockcloud_core::ledger::xchain::{XHub, XStatus, XType};
use blockcloud_core::{Cftx, NodeId};

#[test]
fn two_dsols_after_one_task_each() {
    let mut hi = Dsol::issue("DSOL1", Cftx::whole(100_000), 1_000, NodeId::new("inv")).unwrap();
    let mut lo = Dsol::issue("DSOL2", Cftx::whole(100_000), 1_000, NodeId::new("inv")).unwrap();
    hi.record_task_outcome(Cftx::whole(100)).unwrap();
    lo.record_task_outcome(Cftx::whole(10)).unwrap();
    assert_eq!(hi.book_value(), Cftx::whole(100_100));
    assert_eq!(lo.book_value(), Cftx::whole(100_010));
    let per_token: Cftx = "100.1".parse().unwrap();
    assert!(hi.tokens().iter().all(|t| t.book_value == per_token));
    let sum: Cftx = lo.tokens().iter().map(|t| t.book_value).sum();
    assert_eq!(sum, lo.book_value());

    hi.set_market_multiplier(1.10).unwrap();
    lo.set_market_multiplier(0.90).unwrap();
    assert_eq!(hi.market_value().unwrap(), Cftx::whole(110_110));
    assert_eq!(lo.market_value().unwrap(), Cftx::whole(90_009));
    assert!(hi.is_consistent() && lo.is_consistent());
}

#[test]
fn anchor_never_mints_past_asset_value() {
    let mut pos = AnchorPosition::new(Cftx::whole(1_000)).unwrap();
    pos.mint(Cftx::whole(600)).unwrap();
    assert!(pos.mint(Cftx::whole(401)).is_err());
    pos.mint(Cftx::whole(400)).unwrap();
    assert!(pos.headroom().is_zero());
    pos.redeem(Cftx::whole(100)).unwrap();
    assert_eq!(pos.minted(), Cftx::whole(900));
    pos.adjust(Cftx::whole(500)).unwrap();
    assert!(pos.minted() <= pos.asset_value());
}

#[test]
fn exchange_then_return_restores_originals() {
    let mut hub = XHub::new(3);
    hub.register_chain("A").unwrap();
    hub.register_chain("B").unwrap();
    let secret_a = b"deed #17".to_vec();
    let secret_b = vec![0u8, 255, 1, 254];
    hub.create_token(
        "A",
        "x",
        NodeId::new("alice"),
        XType::Collection,
        Cftx::whole(5),
        b"pub".to_vec(),
        secret_a.clone(),
    )
    .unwrap();
    hub.create_token(
        "B",
        "y",
        NodeId::new("bob"),
        XType::Collection,
        Cftx::whole(7),
        Vec::new(),
        secret_b.clone(),
    )
    .unwrap();

    let (_, on_b, on_a) = hub.exchange_tokens(10, ("A", "x"), ("B", "y"), Cftx::whole(2)).unwrap();
    assert_eq!(hub.token("A", "x").unwrap().status, XStatus::Disabled);
    let shadow = hub.token("B", &on_b).unwrap();
    assert!(shadow.is_shadow());
    assert_eq!(shadow.owner, NodeId::new("bob"));
    assert!(shadow.private_data.is_none());
    assert_ne!(shadow.sealed_private.as_deref(), Some(secret_a.as_slice()));
    assert_eq!(hub.normal_count("x"), 1);
    hub.check_single_normal().unwrap();

    hub.return_home(20, "B", &on_b).unwrap();
    hub.return_home(20, "A", &on_a).unwrap();
    hub.check_single_normal().unwrap();
    assert_eq!(hub.token("A", "x").unwrap().private_data.as_ref(), Some(&secret_a));
    assert_eq!(hub.token("B", "y").unwrap().private_data.as_ref(), Some(&secret_b));
    assert_eq!(hub.token("A", "x").unwrap().status, XStatus::Normal);
    assert!(hub.return_home(30, "B", &on_b).is_err());
}
