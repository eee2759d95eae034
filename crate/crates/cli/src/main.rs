//! `fluxlayer run`: load a scenario, run it, write summaries and series.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use fluxlayer::io::{load_scenario, write_paired, write_single, write_sweep, LoadError};
use fluxlayer::num::format_decimal;
use fluxlayer::sim::{self, MetricsReport, PairedOutput, Scenario, SimError};

const THREADS_ENV: &str = "FLUXLAYER_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fluxlayer", version, about = "Cross-chain arbitrage settlement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    mode: Mode,
    /// A count (seeds counted up from the scenario's) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Single,
    Paired,
    Sweep,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Load(_) | CliError::Sim(SimError::InvalidScenario(_)) => 2,
            _ => 1,
        }
    }
}

fn parse_seeds(spec: &str, first: u64) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--seeds expects a count or a comma list, got {spec:?}"));
    let spec = spec.trim();
    if !spec.contains(',') {
        let n: u64 = spec.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(CliError::Usage("--seeds count must be at least 1".into()));
        }
        return Ok((0..n).map(|i| first.wrapping_add(i)).collect());
    }
    let seeds = spec
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn thread_cap() -> usize {
    let auto = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => auto,
    }
}

fn dec(r: &fluxlayer::num::Rational) -> String {
    format_decimal(r, 2)
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label:<10} seed {:<6} mev {:>14}  captured {}/{}  intents {}  finalized {}  refunded {}  latency {} ticks  share price {}",
        r.seed,
        dec(&r.mev_captured_total),
        r.opportunities_captured,
        r.opportunities_detected,
        r.intents_submitted,
        r.settlements_finalized,
        r.settlements_refunded,
        dec(&r.latency_mean_ticks),
        format_decimal(&r.share_price_final, 6),
    );
}

fn print_paired(p: &PairedOutput) {
    print_report("fluxlayer", &p.flux.report);
    print_report("baseline", &p.baseline.report);
    println!(
        "delta      latency -{} ticks ({}%)  mev {}  captured {:+}",
        dec(&p.deltas.latency_reduction_ticks),
        dec(&(&p.deltas.latency_reduction_fraction * fluxlayer::num::ratio(100, 1))),
        dec(&p.deltas.additional_mev),
        p.deltas.additional_captured,
    );
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".fluxlayer-write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::Usage(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let scenario: Scenario = load_scenario(&args.scenario)?;
    let seeds = match (args.mode, &args.seeds) {
        (Mode::Sweep, Some(s)) => parse_seeds(s, scenario.seed)?,
        (Mode::Sweep, None) => return Err(CliError::Usage("--mode sweep needs --seeds".into())),
        (_, Some(_)) => return Err(CliError::Usage("--seeds only applies to --mode sweep".into())),
        (_, None) => vec![],
    };
    prepare_out(&args.out)?;
    let files = match args.mode {
        Mode::Single => {
            let r = sim::run(&scenario)?;
            if !args.quiet {
                print_report("run", &r.report);
            }
            write_single(&args.out, &r)?
        }
        Mode::Paired => {
            let p = sim::paired_compare(&scenario)?;
            if !args.quiet {
                print_paired(&p);
            }
            write_paired(&args.out, &p)?
        }
        Mode::Sweep => {
            let runs = sim::sweep(&scenario, &seeds, thread_cap())?;
            if !args.quiet {
                for r in &runs {
                    print_report("sweep", &r.report);
                }
            }
            write_sweep(&args.out, &runs)?
        }
    };
    if !args.quiet {
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
