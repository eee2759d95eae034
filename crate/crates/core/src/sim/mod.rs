//! Deterministic discrete-event simulator: seeded prices drive a CEX ladder
//! and a pool on another chain; searchers, takers and LPs act through the
//! intent book, settlement engine and vault.

pub mod metrics;
pub mod price;
pub mod scenario;
mod world;

use thiserror::Error;

pub use metrics::{Deltas, MetricsReport, SeriesRow};
pub use scenario::{reference_scenario, Config, RunMode, Scenario, ValidationError};
pub use world::{Opportunity, World};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] ValidationError),
    #[error("{0}")]
    Runtime(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub series: Vec<SeriesRow>,
}

impl RunOutput {
    pub fn series_csv(&self) -> String {
        metrics::series_csv(&self.series)
    }
}

#[derive(Clone, Debug)]
pub struct PairedOutput {
    pub flux: RunOutput,
    pub baseline: RunOutput,
    pub deltas: Deltas,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    run_config(scenario.resolve()?)
}

pub fn run_config(cfg: Config) -> Result<RunOutput, SimError> {
    let (mode, seed, horizon, tpy) = (cfg.mode, cfg.seed, cfg.horizon_ticks, cfg.ticks_per_year);
    let mut world = World::new(cfg)?;
    world.run_to_horizon()?;
    let report = world.acc.report(mode, seed, horizon, tpy, world.vault.as_ref());
    Ok(RunOutput {
        report,
        series: world.series,
    })
}

/// Same scenario and seed under quorum settlement and under the slow bridge.
pub fn paired_compare(scenario: &Scenario) -> Result<PairedOutput, SimError> {
    let cfg = scenario.resolve()?;
    let mut flux = cfg.clone();
    flux.mode = RunMode::Fluxlayer;
    let mut base = cfg;
    base.mode = RunMode::Baseline;
    let flux = run_config(flux)?;
    let baseline = run_config(base)?;
    let deltas = Deltas::between(&flux.report, &baseline.report);
    Ok(PairedOutput { flux, baseline, deltas })
}

/// One run per seed, in the order given. `threads` caps the worker pool;
/// results do not depend on it.
pub fn sweep(scenario: &Scenario, seeds: &[u64], threads: usize) -> Result<Vec<RunOutput>, SimError> {
    let base = scenario.resolve()?;
    let job = |seed: &u64| {
        let mut cfg = base.clone();
        cfg.seed = *seed;
        run_config(cfg)
    };
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::Runtime(format!("thread pool: {e}")))?;
        return pool.install(|| seeds.par_iter().map(job).collect());
    }
    let _ = threads;
    seeds.iter().map(job).collect()
}

pub fn detect_opportunities(world: &World) -> Vec<Opportunity> {
    world.detect_opportunities()
}
