use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hermite_kam::pipeline::{self, Mode, RunRequest};

#[derive(Parser)]
#[command(name = "hkam", version, about = "KAM reducibility pipeline for the forced harmonic oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "hkam-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; HKAM_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// Frequencies "v1,v2,..." grouped into vectors of length n.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the potential matrix.
    Assemble(RunArgs),
    /// Measure the smoothing error rate.
    SmoothRate(RunArgs),
    /// Check the second Melnikov conditions at given frequencies.
    Melnikov(RunArgs),
    /// Estimate the excluded frequency measure against kappa.
    Measure(RunArgs),
    /// Run the KAM reduction.
    Reduce(RunArgs),
    /// Compare the reduction with direct integration.
    Validate(RunArgs),
    /// All stages in order.
    Full(RunArgs),
    /// Merge finished run directories.
    Report {
        /// Run directories containing manifest.json.
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "hkam-report")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Assemble(a) => (Mode::Assemble, a),
        Command::SmoothRate(a) => (Mode::SmoothRate, a),
        Command::Melnikov(a) => (Mode::Melnikov, a),
        Command::Measure(a) => (Mode::Measure, a),
        Command::Reduce(a) => (Mode::Reduce, a),
        Command::Validate(a) => (Mode::Validate, a),
        Command::Full(a) => (Mode::Full, a),
        Command::Report { inputs, out } => {
            return match pipeline::report(&inputs, &out) {
                Ok(s) => {
                    println!("merged {} runs into {}", s.runs.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("hkam: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    let req = RunRequest { mode, config: args.config, out: args.out, seed: args.seed, threads: args.threads, omega: args.omega };
    let outcome = pipeline::run(&req);
    if let Some(m) = &outcome.manifest {
        for w in &m.warnings {
            log::warn!("{w}");
        }
        for s in &m.suites {
            println!("{:<40} {}  {}", s.name, if s.passed { "pass" } else { "FAIL" }, s.detail);
        }
        println!("status: {}", m.status);
    }
    if let Some(msg) = &outcome.message {
        eprintln!("hkam: {msg}");
    }
    ExitCode::from(outcome.exit_code as u8)
}
