//! `sim run` and `replay`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use blockcloud_sim::{run_scenario, RunOutput, ScenarioConfig};
use clap::Args;
use rayon::prelude::*;

use crate::{input_error, read, CliError};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; repeat to run several.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = "BLOCKCLOUD_SEED")]
    seed: Option<u64>,
    /// Consecutive seeds to run per scenario.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Record file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Prints a human-readable table instead of records on standard output.
    #[arg(long)]
    summary: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Scenario the records were produced from.
    #[arg(long)]
    config: PathBuf,
    /// Seed of the recorded run; read from its summary record when absent.
    #[arg(long, env = "BLOCKCLOUD_SEED")]
    seed: Option<u64>,
    /// Where to write the regenerated records.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recorded run to check.
    records: PathBuf,
}

fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let cfg = ScenarioConfig::from_toml(&read(path)?).map_err(|e| input_error(path, e))?;
    cfg.validate().map_err(|e| input_error(path, e))?;
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let configs = args
        .config
        .iter()
        .map(PathBuf::as_path)
        .map(load)
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let first = args.seed.unwrap_or(cfg.seed);
        for k in 0..args.runs {
            jobs.push((i, first.wrapping_add(k)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| run_scenario(&configs[i], seed).map_err(|e| input_error(args.config[i].as_path(), e)))
            .collect::<Result<_, _>>()
    })?;

    let records: String = outputs.iter().map(RunOutput::records).collect();
    if let Some(path) = &args.out {
        write_out(path, &records)?;
    }
    let mut stdout = std::io::stdout().lock();
    let shown = if args.summary {
        table(&jobs, &args.config, &outputs)
    } else if args.out.is_none() {
        records
    } else {
        String::new()
    };
    let _ = stdout.write_all(shown.as_bytes());

    let broken: Vec<String> = jobs
        .iter()
        .zip(&outputs)
        .filter(|(_, o)| !o.summary.verdicts.all_hold())
        .map(|(&(i, seed), o)| format!("{} seed {seed}: {:?}", args.config[i].display(), o.summary.verdicts))
        .collect();
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("invariant violated in {}", broken.join("; "))))
    }
}

fn table(jobs: &[(usize, u64)], paths: &[PathBuf], outputs: &[RunOutput]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<24} {:>6} {:>6} {:>6} {:>7} {:>14} {:>8} {:>9} {:>10}",
        "scenario", "seed", "blocks", "closed", "stalled", "circulating", "tariffs", "max share", "invariants"
    );
    for (&(i, seed), o) in jobs.iter().zip(outputs) {
        let s = &o.summary;
        let name = paths[i]
            .file_stem()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let _ = writeln!(
            t,
            "{:<24} {:>6} {:>6} {:>6} {:>7} {:>14} {:>8} {:>9.4} {:>10}",
            name,
            seed,
            s.blocks,
            s.tasks_closed,
            s.tasks_stalled,
            s.supply.circulating.to_string(),
            s.tariff_events,
            s.max_wealth_share,
            if s.verdicts.all_hold() { "ok" } else { "VIOLATED" }
        );
    }
    t
}

fn recorded_seed(records: &str) -> Option<u64> {
    let last = records.lines().rev().find(|l| !l.trim().is_empty())?;
    let v: serde_json::Value = serde_json::from_str(last).ok()?;
    v["summary"]["seed"].as_u64()
}

pub fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let cfg = load(&args.config)?;
    let recorded = read(&args.records)?;
    let seed = match args.seed {
        Some(s) => s,
        None => recorded_seed(&recorded).ok_or_else(|| input_error(&args.records, "no summary record with a seed"))?,
    };
    let fresh = run_scenario(&cfg, seed)
        .map_err(|e| input_error(&args.config, e))?
        .records();
    if let Some(path) = &args.out {
        write_out(path, &fresh)?;
    }
    if fresh == recorded {
        println!("replay identical: {} lines, seed {seed}", fresh.lines().count());
        return Ok(());
    }
    let line = fresh
        .lines()
        .zip(recorded.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| fresh.lines().count().min(recorded.lines().count()));
    Err(CliError::Failed(format!(
        "replay differs from {} at line {}",
        args.records.display(),
        line + 1
    )))
}
