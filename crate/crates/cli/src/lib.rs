//! Experiment harness for the collaborative prediction library: config
//! parsing, seeded runs for every mode, artifact emission and the
//! verification suite.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod modes;
pub mod verify;

use std::path::{Path, PathBuf};

use collab_core::datagen::GeneratorSpec;

pub use config::{load_config, Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use modes::Artifacts;

/// Executes one validated config.
pub fn execute(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    let dir = &cfg.output_dir;
    match &cfg.experiment {
        Experiment::Online {
            data,
            rounds,
            eps,
            alice,
            bob,
            solo,
        } => modes::run_online(dir, cfg.seed, data, *rounds, *eps, alice, bob, *solo),
        Experiment::Batch { data, test, m, c } => {
            modes::run_batch(dir, cfg.seed, data, test.as_ref(), *m, *c)
        }
        Experiment::Decision {
            data,
            task,
            rounds,
            eps,
            policies,
        } => modes::run_decision(dir, cfg.seed, data, task, *rounds, *eps, policies.as_deref()),
        Experiment::Bayes {
            prior,
            rounds,
            m,
            horizons,
            c,
        } => modes::run_bayes(dir, prior, *rounds, *m, horizons, *c),
        Experiment::Verify { trials } => modes::run_verify(dir, cfg.seed, *trials),
    }
}

/// Loads and runs one config file.
pub fn run_config(path: &Path) -> CliResult<Artifacts> {
    let cfg = load_config(path)?;
    log::info!("running {} ({:?} mode)", path.display(), mode_name(&cfg.experiment));
    execute(&cfg).map_err(|e| e.context(path.display()))
}

fn mode_name(e: &Experiment) -> &'static str {
    match e {
        Experiment::Online { .. } => "online",
        Experiment::Batch { .. } => "batch",
        Experiment::Decision { .. } => "decision",
        Experiment::Bayes { .. } => "bayes",
        Experiment::Verify { .. } => "verify",
    }
}

/// Runs several configs concurrently, one thread each. Results keep the
/// order of `paths`.
pub fn run_many(paths: &[PathBuf]) -> Vec<CliResult<Artifacts>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = paths.iter().map(|p| s.spawn(move || run_config(p))).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Runtime("run panicked".into())))
            })
            .collect()
    })
}

/// Generates a dataset and writes it as JSON.
pub fn gen_data(spec_path: &Path, seed: u64, out: &Path) -> CliResult<()> {
    let spec: GeneratorSpec = config::read_json(spec_path, "generator spec")?;
    let ds = spec.generate(seed)?;
    modes::write_json(out, &ds)
}
