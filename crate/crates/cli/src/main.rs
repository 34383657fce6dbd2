use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use collab_cli::{gen_data, modes, run_many, CliError};

/// Simulator for two-party collaborative prediction protocols.
#[derive(Parser)]
#[command(name = "collab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs (concurrently).
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Generate a dataset from a generator spec.
    GenData {
        /// JSON generator spec, e.g. {"kind": "xor", "n": 1000}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every counterexample checker and the weak-learning property suite.
    Verify {
        #[arg(long, default_value = "verify-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Recompute the regret report for an online transcript.
    Report {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 0.1)]
        g: f64,
        #[arg(long, default_value_t = 20)]
        m: u32,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn finish(r: Result<(), CliError>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COLLAB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { configs } => {
            let results = run_many(&configs);
            let mut worst: Option<CliError> = None;
            for (path, r) in configs.iter().zip(results) {
                match r {
                    Ok(a) => println!("{}: wrote {}", path.display(), a.report.display()),
                    Err(e) => {
                        eprintln!("{e}");
                        if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                            worst = Some(e);
                        }
                    }
                }
            }
            match worst {
                None => ExitCode::SUCCESS,
                Some(e) => ExitCode::from(e.exit_code() as u8),
            }
        }
        Command::GenData { spec, seed, out } => finish(gen_data(&spec, seed, &out)),
        Command::Verify { out, seed, trials } => finish(modes::run_verify(&out, seed, trials).map(|a| {
            println!("all checks passed; report at {}", a.report.display());
        })),
        Command::Report {
            transcript,
            data,
            c,
            g,
            m,
            eps,
            out,
        } => finish(
            modes::report_from_files(&transcript, &data, c, g, m, eps)
                .and_then(|r| modes::write_json(&out, &r)),
        ),
    }
}
