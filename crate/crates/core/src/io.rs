//! Scenario files in, summary and series files out.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sim::metrics::{aggregate, render_object};
use crate::sim::{PairedOutput, RunOutput, Scenario, ValidationError};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Validation(#[from] ValidationError),
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, LoadError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

pub const SUMMARY: &str = "summary.json";
pub const SERIES: &str = "series.csv";
pub const DELTAS: &str = "deltas.json";
pub const AGGREGATE: &str = "aggregate.json";

pub fn sweep_summary_name(seed: u64) -> String {
    format!("summary_seed_{seed}.json")
}

/// Both runs of a pair under their mode names.
pub fn paired_summary_json(p: &PairedOutput) -> String {
    format!(
        "{{\n  \"fluxlayer\": {},\n  \"baseline\": {}\n}}\n",
        render_object(&p.flux.report.fields(), 2),
        render_object(&p.baseline.report.fields(), 2)
    )
}

fn write(dir: &Path, name: &str, body: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    out.push(path);
    Ok(())
}

pub fn write_single(dir: &Path, run: &RunOutput) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    write(dir, SUMMARY, &run.report.to_json(), &mut out)?;
    write(dir, SERIES, &run.series_csv(), &mut out)?;
    Ok(out)
}

/// The series file carries the fluxlayer run; the baseline appears in the
/// summary and the deltas.
pub fn write_paired(dir: &Path, p: &PairedOutput) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    write(dir, SUMMARY, &paired_summary_json(p), &mut out)?;
    write(dir, SERIES, &p.flux.series_csv(), &mut out)?;
    write(dir, DELTAS, &p.deltas.to_json(), &mut out)?;
    Ok(out)
}

/// One summary per run, in the order given, plus the aggregate.
pub fn write_sweep(dir: &Path, runs: &[RunOutput]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for r in runs {
        write(dir, &sweep_summary_name(r.report.seed), &r.report.to_json(), &mut out)?;
    }
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    write(dir, AGGREGATE, &aggregate(&reports), &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::reference_scenario;

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_scenario("{\n  \"seed\": 1,\n  oops\n}").unwrap_err();
        match err {
            LoadError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn validation_errors_name_the_field() {
        let mut s = reference_scenario();
        s.pools[0].base = "DOGE@dex".into();
        let err = parse_scenario(&s.to_json()).unwrap_err();
        match err {
            LoadError::Validation(v) => assert_eq!(v.field, "pools[0].base"),
            e => panic!("{e}"),
        }
    }

    const MINIMAL: &str = r#"{
      "schema_version": 1, "seed": 1, "horizon_ticks": 50,
      "chains": [ { "id": 1, "name": "solo", "block_interval_ticks": 1, "native_finality_blocks": 3 } ],
      "assets": [ { "chain": "solo", "symbol": "USD", "decimals": 2 }, { "chain": "solo", "symbol": "ETH", "decimals": 4 } ],
      "pools": [ { "id": 1, "base": "ETH@solo", "quote": "USD@solo", "reserve_base": "10", "reserve_quote": "30000", "fee_bps": 30 } ],
      "cex_books": [ { "id": 1, "base": "ETH", "quote": "USD", "taker_fee_bps": 10, "half_spread_bps": 5,
        "levels": 3, "step_bps": 5, "level_size": "1", "price": { "initial": "3000", "volatility_per_tick": 0.01 } } ],
      "validators": [ { "id": 1, "restake": 1 } ],
      "agents": { "home_asset": "USD@solo", "searchers": [ { "capital": "1000", "min_profit": "1" } ], "takers": [] }
    }"#;

    #[test]
    fn minimal_scenario_loads_and_runs() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.validators.len(), 1);
        let out = crate::sim::run(&s).unwrap();
        assert_eq!(out.series.len(), 50);
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_scenario(Path::new("/nonexistent/s.json")).unwrap_err();
        assert!(matches!(err, LoadError::Io { .. }));
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, reference_scenario().to_json()).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), reference_scenario());
    }
}
