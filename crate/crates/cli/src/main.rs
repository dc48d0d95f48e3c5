//! `rbcast`: run scenarios, seed sweeps and the codec benchmark.
//!
//! Data goes to stdout or the output directory; logs go to stderr, filtered
//! by `RBCAST_LOG` (`off`, `info`, `debug`).

mod scenario;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rbcast::codec::{bench_codec, BenchRow};
use rbcast::metrics::account;
use rbcast::simnet::{run, sweep, Adversary, Algorithm, DelayModel, Flags, RunConfig, RunSummary};
use rbcast::ProtocolParams;

use crate::scenario::{parse_seed_range, ScenarioFile};

const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rbcast",
    version,
    about = "Erasure-coded Byzantine reliable broadcast simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one instance and write trace.jsonl and metrics.json.
    Run(RunArgs),
    /// Run a scenario file over a seed range; one CSV row per run.
    Sweep(SweepArgs),
    /// Time encode and decode under (n, 2t+1) and (n, t+1) codes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Algorithm,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    msg_size: usize,
    /// none, silent, silent-peers, crash:<sends>, equivocate:<two-way|targeted-t|per-recipient>, replay, garble
    #[arg(long, default_value = "none", value_parser = parse_adversary)]
    adversary: Adversary,
    #[arg(long)]
    faulty: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// uniform:<d> or random:<max>
    #[arg(long, default_value = "uniform:1", value_parser = parse_delay)]
    delay: DelayModel,
    /// Delivery gate in time units.
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long)]
    strict_storage: bool,
    #[arg(long)]
    piggyback: bool,
    /// Charge signatures as a flat 256 bits.
    #[arg(long)]
    ideal_signatures: bool,
    #[arg(long)]
    ell_max: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Half-open range, e.g. 0..1000.
    #[arg(long)]
    seeds: String,
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4, 7, 16, 31, 64])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1 << 20)]
    input_size: usize,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: rbcast::Error| e.to_string())
}

fn parse_adversary(s: &str) -> Result<Adversary, String> {
    s.parse().map_err(|e: rbcast::Error| e.to_string())
}

fn parse_delay(s: &str) -> Result<DelayModel, String> {
    s.parse().map_err(|e: rbcast::Error| e.to_string())
}

/// An error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn cmd_run(args: RunArgs) -> Result<u8, Failure> {
    let config = RunConfig {
        seed: args.seed,
        algorithm: args.algo,
        n: args.n,
        msg_size: args.msg_size,
        ell_max: args.ell_max,
        adversary: args.adversary,
        faulty: args.faulty,
        delay: args.delay,
        flags: Flags {
            strict_storage: args.strict_storage,
            delta: args.delta,
            piggyback: args.piggyback,
            ideal_signature_size: args.ideal_signatures,
        },
    };
    config.validate().map_err(Failure::config)?;
    let trace = run(&config).map_err(Failure::config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("trace.jsonl"), trace.to_jsonl()).context("writing trace")?;
    let metrics = account(&trace);
    if let Ok(m) = &metrics {
        fs::write(
            args.out.join("metrics.json"),
            serde_json::to_string_pretty(m).context("metrics")?,
        )
        .context("writing metrics")?;
    }
    for v in &trace.violations {
        log::error!("{v}");
    }
    let summary = RunSummary::of(&trace);
    let mut stdout = io::stdout().lock();
    match args.format {
        Format::Json => {
            let body = match &metrics {
                Ok(m) => serde_json::to_value(m),
                Err(_) => serde_json::to_value(&summary),
            }
            .context("summary")?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&body).context("summary")?).context("stdout")?;
        }
        Format::Csv => write_csv(&mut stdout, std::slice::from_ref(&summary))?,
    }
    Ok(if trace.violations.is_empty() { 0 } else { EXIT_VIOLATION })
}

/// A row type with a fixed CSV header, written even when there are no rows.
trait CsvRow: serde::Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for RunSummary {
    const HEADER: &'static [&'static str] = &[
        "config_digest",
        "seed",
        "algorithm",
        "n",
        "adversary",
        "overhead_factor",
        "rounds",
        "delivered",
        "honest",
        "all_delivered",
        "violations",
        "violation_detail",
        "trace_digest",
    ];
}

impl CsvRow for BenchRow {
    const HEADER: &'static [&'static str] = &["n", "k", "op", "mean_us", "p5_us", "p95_us"];
}

fn write_csv<W: Write, T: CsvRow>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, Failure> {
    let scenario = ScenarioFile::load(&args.scenario).map_err(Failure::config)?;
    let seeds = parse_seed_range(&args.seeds).map_err(Failure::config)?;
    let configs: Vec<RunConfig> = seeds.map(|s| scenario.config(s)).collect();
    if let Some(c) = configs.first() {
        c.validate().map_err(Failure::config)?;
    }
    let results = sweep(&configs, args.jobs);
    let mut rows = Vec::with_capacity(results.len());
    for (c, r) in configs.iter().zip(results) {
        rows.push(r.map_err(|e| Failure::config(anyhow::anyhow!("seed {}: {e}", c.seed)))?);
    }
    match &args.out {
        Some(path) => write_csv(fs::File::create(path).context("creating sweep output")?, &rows)?,
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    let bad = rows.iter().filter(|r| r.violations > 0).count();
    if bad > 0 {
        log::error!("{bad} of {} runs violated a property", rows.len());
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<u8, Failure> {
    let mut rows = Vec::new();
    for &n in &args.n {
        let fast = ProtocolParams::for_network(n, args.input_size.max(1)).map_err(Failure::config)?;
        let slow = fast.to_baseline();
        let report =
            bench_codec(&slow, &fast, args.input_size, args.repetitions, args.seed).map_err(Failure::config)?;
        log::info!(
            "n={n}: encode speedup {:.2}x, decode speedup {:.2}x",
            report.encode_speedup,
            report.decode_speedup
        );
        rows.extend(report.rows);
    }
    write_csv(io::stdout().lock(), &rows)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RBCAST_LOG", "off"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
