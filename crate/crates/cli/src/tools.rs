//! `econ score`, `bft select` and `xchain demo`.

use std::path::Path;

use blockcloud_core::bft::{choose, Preferences, ProtocolCatalog};
use blockcloud_core::err::{FactorScore, RankingProfile};
use blockcloud_core::ledger::xchain::{XHub, XType};
use blockcloud_core::{Cftx, NodeId};
use clap::Args;
use serde::Deserialize;

use crate::{input_error, read, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    id: String,
    /// `[score, weight, norm]` per factor.
    factors: Vec<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScoreFile {
    tasks: Vec<ProfileEntry>,
    nodes: Vec<ProfileEntry>,
}

fn score<const N: usize>(e: &ProfileEntry) -> Result<f64, String> {
    let factors: Vec<FactorScore> = e.factors.iter().map(|[s, w, n]| FactorScore::new(*s, *w, *n)).collect();
    RankingProfile::<N>::from_slice(&factors)
        .map(|p| p.score())
        .map_err(|err| format!("{}: {err}", e.id))
}

pub fn econ_score(path: &Path) -> Result<(), CliError> {
    let file: ScoreFile = toml::from_str(&read(path)?).map_err(|e| input_error(path, e))?;
    let mut out = String::new();
    for t in &file.tasks {
        let s = score::<6>(t).map_err(|e| input_error(path, e))?;
        out.push_str(&format!("{}\t{s:.6}\n", t.id));
    }
    for n in &file.nodes {
        let s = score::<3>(n).map_err(|e| input_error(path, e))?;
        out.push_str(&format!("{}\t{s:.6}\n", n.id));
    }
    print!("{out}");
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectFile {
    /// Builtin catalog when absent.
    #[serde(default)]
    catalog: Option<ProtocolCatalog>,
    preferences: Preferences,
}

pub fn bft_select(path: &Path) -> Result<(), CliError> {
    let file: SelectFile = toml::from_str(&read(path)?).map_err(|e| input_error(path, e))?;
    let catalog = file.catalog.unwrap_or_else(ProtocolCatalog::builtin);
    let (index, eval) = choose(&catalog, &file.preferences).map_err(|e| input_error(path, e))?;
    let record = serde_json::json!({
        "index": index,
        "protocol": catalog.profiles[index].name,
        "c": eval.c,
        "p": eval.p,
        "e": eval.e,
    });
    println!("{record}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Keys the sealed private data.
    #[arg(long, env = "BLOCKCLOUD_SEED", default_value_t = 0)]
    seed: u64,
    /// Exchange and return cycles to run.
    #[arg(long, default_value_t = 3)]
    cycles: u32,
}

pub fn xchain_demo(args: &DemoArgs) -> Result<(), CliError> {
    let fail = |e: blockcloud_core::ledger::xchain::XChainError| CliError::Failed(e.to_string());
    let mut hub = XHub::new(args.seed);
    let tokens = [
        ("alpha", "deed-1", "alice", b"title deed, parcel 17".to_vec()),
        ("beta", "bond-7", "bob", b"coupon schedule 2031".to_vec()),
    ];
    for (chain, id, owner, private) in &tokens {
        hub.register_chain(*chain).map_err(fail)?;
        hub.create_token(
            chain,
            id,
            NodeId::new(*owner),
            XType::Collection,
            Cftx::whole(100),
            format!("{id} public record").into_bytes(),
            private.clone(),
        )
        .map_err(fail)?;
    }
    let mut now = 0;
    for _ in 0..args.cycles {
        now += 1_000_000;
        let (_, on_beta, on_alpha) = hub
            .exchange_tokens(now, ("alpha", "deed-1"), ("beta", "bond-7"), Cftx::whole(5))
            .map_err(fail)?;
        hub.check_single_normal().map_err(fail)?;
        now += 1_000_000;
        hub.return_home(now, "beta", &on_beta).map_err(fail)?;
        hub.return_home(now, "alpha", &on_alpha).map_err(fail)?;
        hub.check_single_normal().map_err(fail)?;
    }
    for ev in hub.events() {
        println!("{}", serde_json::to_string(ev).expect("events serialize"));
    }
    let restored = tokens
        .iter()
        .all(|(chain, id, _, private)| hub.token(chain, id).and_then(|t| t.private_data.as_ref()) == Some(private));
    println!(
        "{}",
        serde_json::json!({ "cycles": args.cycles, "private_data_restored": restored })
    );
    if restored {
        Ok(())
    } else {
        Err(CliError::Failed("private data not restored".into()))
    }
}
