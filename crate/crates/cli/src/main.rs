use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mithril_core::experiment::{self, ExperimentConfig, Mode, RunOutcome, Setting};

/// Every config key doubles as a `--key value` flag. Values stay strings
/// here; the experiment layer parses them so errors name the key and where
/// it came from.
macro_rules! override_flags {
    ($($key:ident: $help:literal),* $(,)?) => {
        #[derive(Args, Debug, Default, Clone)]
        #[command(rename_all = "snake_case")]
        struct Overrides {
            $(
                #[arg(long, value_name = "VALUE", help = $help)]
                $key: Option<String>,
            )*
        }

        impl Overrides {
            #[cfg(test)]
            const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn settings(&self) -> Vec<Setting> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push(Setting::new(stringify!($key), v.clone(), concat!("--", stringify!($key))));
                    }
                )*
                out
            }
        }
    };
}

override_flags! {
    timing: "timing preset: ddr5-32ms, ddr5-64ms or synthetic",
    timing_file: "key=value timing file, durations in ns",
    scheme: "mithril, mithril_plus or parfm",
    n_entry: "tracker entries per bank (default: smallest safe table)",
    rfm_th: "ACTs per RFM command",
    ad_th: "adaptive refresh threshold, 0 disables",
    flip_th: "row hammer threshold",
    blast_radius: "1 or 3",
    counter_bits: "counter width (default: derived from the bound)",
    rows_per_bank: "rows per bank",
    banks: "number of banks a trace may use",
    seed: "base RNG seed",
    output: "report path; side files are written next to it",
    jobs: "worker threads",
    time_mode: "back_to_back or paced",
    flip_ths: "sweep: comma-separated flip thresholds",
    rfm_ths: "sweep: comma-separated RFM thresholds",
    n_banks: "parfm: banks that fail independently",
    target: "parfm: system failure probability to solve for",
    horizon: "parfm: RFM intervals per window (default: W)",
    trials: "parfm: Monte Carlo trials, 0 skips",
    act_energy: "energy weight per ACT",
    pre_energy: "energy weight per PRE",
    refresh_energy: "energy weight per refreshed victim",
    workload: "single_row, round_robin_k, multi_sided, uniform_random, sweep, parfm_worst, reactive_worst or trace_file",
    row: "single_row: target row",
    rows: "round_robin_k: comma-separated rows",
    k: "round_robin_k: number of rows starting at base_row",
    length: "ACTs to generate",
    base_row: "first aggressor row",
    victims: "multi_sided: number of victim rows",
    lo: "first row of a range",
    hi: "end of a range (exclusive)",
    burst: "sweep: ACTs per row before moving on",
    intervals: "parfm_worst: RFM intervals to generate",
    stride: "row spacing between aggressors",
    pool: "parfm_worst: distinct rows per interval pattern",
    threshold: "reactive_worst: counter threshold of the reactive scheme",
    aggressors: "reactive_worst: rows driven to the threshold",
    path: "trace_file: trace to replay",
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Plain-text key=value config; flags given alongside it win.
    #[arg(long, value_name = "FILE")]
    config: Vec<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bound report for one configuration.
    Bound(RunArgs),
    /// Minimal safe table over a flip_th x rfm_th grid, as CSV.
    Sweep(RunArgs),
    /// Replay a workload and report energy and the oracle verdict.
    Simulate(RunArgs),
    /// PARFM failure analysis, optionally with a Monte Carlo check.
    Parfm(RunArgs),
    /// Simulate with every invariant auditor enabled.
    Verify(RunArgs),
}

#[derive(Parser, Debug)]
#[command(name = "mithril", version, about = "Counter-based Row Hammer protection under RFM")]
struct Cli {
    /// Raise log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

impl Command {
    fn split(&self) -> (Mode, &RunArgs) {
        match self {
            Command::Bound(a) => (Mode::Bound, a),
            Command::Sweep(a) => (Mode::Sweep, a),
            Command::Simulate(a) => (Mode::Simulate, a),
            Command::Parfm(a) => (Mode::Parfm, a),
            Command::Verify(a) => (Mode::Verify, a),
        }
    }
}

fn execute(mode: Mode, args: &RunArgs) -> anyhow::Result<RunOutcome> {
    let mut settings = Vec::new();
    for path in &args.config {
        settings.extend(experiment::read_config_file(path)?);
    }
    settings.extend(args.overrides.settings());
    let cfg = ExperimentConfig::from_settings(mode, &settings)?;
    log::info!("running {mode} with seed {}", cfg.seed);
    let outcome = experiment::run(&cfg).with_context(|| format!("{mode} failed"))?;
    if cfg.output.is_none() {
        print!("{}", outcome.report);
        if !outcome.report.ends_with('\n') {
            println!();
        }
    }
    for f in &outcome.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (mode, args) = cli.command.split();
    match execute(mode, args) {
        Ok(outcome) if outcome.is_clean() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} violation(s) found", outcome.violations);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
