//! Deterministic discrete-event simulator of task shards: validator
//! selection, side-chain consensus, assignment distribution and settlement.
//! Every run is a pure function of its configuration and seed.

pub mod attacks;
pub mod config;
mod engine;
pub mod log;
pub mod model;
pub mod outcome;
pub mod retry;

pub use config::{ConfigError, ScenarioConfig};
pub use outcome::{LedgerView, RunOutput, Summary, Verdicts};

/// Runs a scenario to quiescence with the given seed.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    Ok(engine::Simulation::new(cfg, seed).run())
}
