//! Experiment configs. One JSON file per run; unknown fields are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use collab_core::bayes::PriorTable;
use collab_core::datagen::GeneratorSpec;
use collab_core::decisions::{DecisionDataset, DecisionTask};
use collab_core::learners::LearnerConfig;
use collab_core::SequenceDataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where artifacts go. Relative paths resolve against the config file.
    pub output_dir: PathBuf,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Experiment {
    Online {
        data: DataSource,
        #[serde(rename = "K")]
        rounds: usize,
        eps: f64,
        alice: LearnerConfig,
        bob: LearnerConfig,
        /// Also run each party alone for comparison.
        #[serde(default = "yes")]
        solo: bool,
    },
    Batch {
        data: DataSource,
        #[serde(default)]
        test: Option<DataSource>,
        m: u32,
        #[serde(rename = "C", default = "one")]
        c: f64,
    },
    Decision {
        data: DecisionSource,
        task: DecisionTask,
        #[serde(rename = "K")]
        rounds: usize,
        eps: f64,
        /// Policy file (`{"policies": {name: [action per row]}}`); constant
        /// policies are always added.
        #[serde(default)]
        policies: Option<PathBuf>,
    },
    Bayes {
        prior: PriorSource,
        #[serde(rename = "K")]
        rounds: usize,
        m: u32,
        /// Conversation lengths compared in the one-shot report.
        #[serde(default = "default_horizons")]
        horizons: Vec<usize>,
        #[serde(rename = "C", default = "one")]
        c: f64,
    },
    Verify {
        /// Random distributions drawn for the weak-learning property.
        #[serde(default = "default_trials")]
        trials: usize,
    },
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn default_horizons() -> Vec<usize> {
    vec![2, 4, 8, 16]
}

fn default_trials() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Path(PathBuf),
    Generator(GeneratorSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DecisionSource {
    Path(PathBuf),
    Generator(DecisionGenerator),
}

/// Parameters of the linear vector-outcome generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionGenerator {
    pub n: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub signal: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSource {
    Path(PathBuf),
    Inline(PriorTable),
}

/// Reads and validates a config. Relative paths inside it are rewritten
/// against the config file's directory.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    cfg.rebase(base);
    cfg.validate()?;
    Ok(cfg)
}

fn rebase_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    fn rebase(&mut self, base: &Path) {
        rebase_path(base, &mut self.output_dir);
        match &mut self.experiment {
            Experiment::Online { data, .. } => data.rebase(base),
            Experiment::Batch { data, test, .. } => {
                data.rebase(base);
                if let Some(t) = test {
                    t.rebase(base);
                }
            }
            Experiment::Decision { data, policies, .. } => {
                if let DecisionSource::Path(p) = data {
                    rebase_path(base, p);
                }
                if let Some(p) = policies {
                    rebase_path(base, p);
                }
            }
            Experiment::Bayes { prior, .. } => {
                if let PriorSource::Path(p) = prior {
                    rebase_path(base, p);
                }
            }
            Experiment::Verify { .. } => {}
        }
    }

    /// Checks every numeric parameter before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, why: &str| Err(CliError::Validation(format!("{field}: {why}")));
        match &self.experiment {
            Experiment::Online {
                rounds,
                eps,
                alice,
                bob,
                ..
            } => {
                if *rounds < 2 {
                    return bad("experiment.K", "must be at least 2");
                }
                if !(*eps > 0.0 && *eps <= 1.0) {
                    return bad("experiment.eps", "must lie in (0, 1]");
                }
                for (name, l) in [("experiment.alice", alice), ("experiment.bob", bob)] {
                    l.class_spec().map_err(|e| CliError::Validation(format!("{name}: {e}")))?;
                    l.bucketing().map_err(|e| CliError::Validation(format!("{name}: {e}")))?;
                    if l.m == 0 {
                        return bad(name, "m must be positive");
                    }
                }
            }
            Experiment::Batch { m, c, .. } => {
                if *m == 0 || *m > 1000 {
                    return bad("experiment.m", "must lie in 1..=1000");
                }
                if !(*c >= 0.5) {
                    return bad("experiment.C", "must be at least 0.5");
                }
            }
            Experiment::Decision { rounds, eps, .. } => {
                if *rounds < 2 {
                    return bad("experiment.K", "must be at least 2");
                }
                if !(*eps >= 0.0) {
                    return bad("experiment.eps", "must be non-negative");
                }
            }
            Experiment::Bayes {
                rounds,
                m,
                horizons,
                c,
                ..
            } => {
                if *rounds == 0 || horizons.contains(&0) {
                    return bad("experiment.K", "conversation lengths must be positive");
                }
                if *m == 0 {
                    return bad("experiment.m", "must be positive");
                }
                if !(*c >= 0.5) {
                    return bad("experiment.C", "must be at least 0.5");
                }
            }
            Experiment::Verify { trials } => {
                if *trials == 0 {
                    return bad("experiment.trials", "must be positive");
                }
            }
        }
        Ok(())
    }
}

impl DataSource {
    fn rebase(&mut self, base: &Path) {
        if let DataSource::Path(p) = self {
            rebase_path(base, p);
        }
    }

    pub fn load(&self, seed: u64, field: &str) -> CliResult<SequenceDataset> {
        match self {
            DataSource::Path(p) => read_json(p, field),
            DataSource::Generator(g) => g.generate(seed).map_err(|e| CliError::from(e).context(field)),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Validation(format!("{field}: cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{field}: {}: {e}", path.display())))
}

pub fn load_decision_data(
    src: &DecisionSource,
    task: &DecisionTask,
    seed: u64,
) -> CliResult<(DecisionDataset, Option<collab_core::decisions::PolicySet>)> {
    match src {
        DecisionSource::Path(p) => Ok((read_json(p, "experiment.data.path")?, None)),
        DecisionSource::Generator(g) => {
            let (ds, pol) = collab_core::datagen::decision_linear(
                g.n, g.d_a, g.d_b, task, g.signal, g.noise, seed,
            )
            .map_err(|e| CliError::from(e).context("experiment.data.generator"))?;
            Ok((ds, Some(pol)))
        }
    }
}

pub fn load_prior(src: &PriorSource) -> CliResult<PriorTable> {
    match src {
        PriorSource::Path(p) => read_json(p, "experiment.prior.path"),
        PriorSource::Inline(t) => Ok(t.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"seed":1,"output_dir":"o","experiment":{"mode":"verify"}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.experiment, Experiment::Verify { trials: 50 });
        let extra = r#"{"seed":1,"output_dir":"o","colour":3,"experiment":{"mode":"verify"}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(extra).is_err());
        let inner = r#"{"seed":1,"output_dir":"o","experiment":{"mode":"verify","x":1}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(inner).is_err());
    }

    #[test]
    fn batch_defaults_and_bounds() {
        let s = r#"{"seed":1,"output_dir":"o","experiment":{"mode":"batch",
            "data":{"generator":{"kind":"xor","n":10}},"m":4}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(s).unwrap();
        match &cfg.experiment {
            Experiment::Batch { c, test, .. } => {
                assert_eq!(*c, 1.0);
                assert!(test.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
        cfg.validate().unwrap();
        let s = s.replace("\"m\":4", "\"m\":0");
        let cfg: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Validation(m)) if m.contains("experiment.m")));
    }
}
