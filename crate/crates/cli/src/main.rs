//! `mdiqkd`: simulate, analyse, run protocol sessions and optimise
//! decoy-state MDI-QKD parameters.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mdiqkd",
    version,
    about = "Decoy-state MDI-QKD simulator and key-rate analyser"
)]
struct Cli {
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo simulation of the optical setup; writes a counts CSV.
    Simulate(SimulateArgs),
    /// Decoy-state bounds and key rate from tables; writes a TOML report.
    Analyze(AnalyzeArgs),
    /// Three-party session with sifting and post-processing.
    Protocol(ProtocolArgs),
    /// Parameter search or rate-versus-distance sweep; writes CSV.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// TOML run configuration; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Analyse the built-in reference tables.
    #[arg(
        long,
        alias = "paper-tables",
        conflicts_with = "tallies",
        required_unless_present = "tallies"
    )]
    pub reference_tables: bool,
    /// Counts or rates CSV.
    #[arg(long)]
    pub tallies: Option<PathBuf>,
    /// Overrides analysis.n_alpha.
    #[arg(long)]
    pub n_alpha: Option<f64>,
    /// Overrides protocol.total_pulses.
    #[arg(long)]
    pub total_pulses: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub slots: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines transcript of every slot.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TOML search box; keys left out are fixed at the configured values.
    /// Without it every coordinate is free.
    #[arg(long = "box")]
    pub search_box: Option<PathBuf>,
    /// Maximum number of rate evaluations.
    #[arg(long, default_value_t = 300)]
    pub budget: usize,
    /// Emit a rate-versus-distance sweep at the configured point instead.
    #[arg(long)]
    pub sweep: bool,
    /// Largest total fiber length of the sweep.
    #[arg(long, default_value_t = 60.0)]
    pub max_km: f64,
    #[arg(long, default_value_t = 5.0)]
    pub step_km: f64,
    /// Trace CSV, or sweep CSV with `--sweep`.
    #[arg(long)]
    pub out: PathBuf,
    /// Best-point report (TOML).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Optimize(a) => commands::optimize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
