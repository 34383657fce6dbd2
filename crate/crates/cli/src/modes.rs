//! Drivers for each experiment mode. Every driver writes a transcript, a
//! report and a per-round metrics CSV into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use collab_core::batch::{collaborate, eval_test_point, union_swap_regret, LeastSquaresOracle};
use collab_core::bayes::{expected_swap_regret, one_shot_report, run_bayes_protocol, OneShotReport};
use collab_core::decisions::{
    action_disagreement_fraction, decision_cal_error, decision_conv_swap_regret,
    decision_regret_check, run_decision_protocol, utility_profile, BaselineForecaster,
    CalibrationAudit, DecisionRegretCheck, DecisionTask, PolicySet, UtilityStep,
};
use collab_core::learners::LearnerConfig;
use collab_core::metrics::{disagreement_fraction, ece, sqe};
use collab_core::protocol::{
    agreement_profile, final_regret_report, round_error_profile, run_collaboration, run_solo,
    AgreementProfile, ReportInputs, RoundErrorProfile,
};
use collab_core::regression::{joint_lsq, LinearClassSpec};
use collab_core::{RegretReport, SequenceDataset, Side};
use serde::{Deserialize, Serialize};

use crate::config::{load_decision_data, load_prior, read_json, DataSource, DecisionSource, PriorSource};
use crate::error::{CliError, CliResult};
use crate::verify::{run_checks, CheckResult};

/// Paths of the artifacts a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub transcript: PathBuf,
    pub report: PathBuf,
    pub metrics: PathBuf,
}

impl Artifacts {
    fn in_dir(dir: &Path, transcript: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Runtime(format!("cannot create output dir {}: {e}", dir.display()))
        })?;
        Ok(Artifacts {
            transcript: dir.join(transcript),
            report: dir.join("report.json"),
            metrics: dir.join("metrics.csv"),
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// One CSV row per round. A missing disagreement value (round 1) is left empty.
struct MetricsRow {
    round: usize,
    sqe: f64,
    ece: f64,
    disagreement: Option<f64>,
}

fn write_metrics(path: &Path, eps: f64, rows: &[MetricsRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "sqe", "ece", &format!("disagreement@{eps}")])?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.sqe.to_string(),
            r.ece.to_string(),
            r.disagreement.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_dims(cfg: &LearnerConfig, got: usize, field: &str) -> CliResult<()> {
    if cfg.d != got {
        return Err(CliError::Validation(format!(
            "{field}.d is {} but the data has {got} features",
            cfg.d
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoloErrors {
    pub alice: f64,
    pub bob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub days: usize,
    pub rounds: usize,
    pub eps: f64,
    pub regret: RegretReport,
    pub agreement: AgreementProfile,
    pub round_errors: RoundErrorProfile,
    pub solo_sqe: Option<SoloErrors>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_online(
    dir: &Path,
    seed: u64,
    data: &DataSource,
    rounds: usize,
    eps: f64,
    alice: &LearnerConfig,
    bob: &LearnerConfig,
    solo: bool,
) -> CliResult<Artifacts> {
    let ds = data.load(seed, "experiment.data")?;
    check_dims(alice, ds.dim_a(), "experiment.alice")?;
    check_dims(bob, ds.dim_b(), "experiment.bob")?;
    let mut la = alice.build(Side::Alice)?;
    let mut lb = bob.build(Side::Bob)?;
    let transcript = run_collaboration(&ds, la.as_mut(), lb.as_mut(), rounds)?;
    // Alice buckets Bob's messages with her own width, and vice versa.
    let (ba, bb) = (alice.bucketing()?, bob.bucketing()?);
    let inputs = ReportInputs {
        dataset: &ds,
        spec_a: alice.class_spec()?,
        spec_b: bob.class_spec()?,
        bucketing_a: ba,
        bucketing_b: bb,
        eps: vec![eps],
    };
    let regret = final_regret_report(&transcript, &inputs)?;
    let agreement = agreement_profile(&transcript, eps, &ba, &bb)?;
    let round_errors = round_error_profile(&transcript, &ba, &bb)?;
    let solo_sqe = if solo {
        let y = ds.outcomes();
        Some(SoloErrors {
            alice: sqe(&run_solo(&ds, Side::Alice, alice)?, &y)?,
            bob: sqe(&run_solo(&ds, Side::Bob, bob)?, &y)?,
        })
    } else {
        None
    };

    let out = Artifacts::in_dir(dir, "transcript.txt")?;
    fs::write(&out.transcript, transcript.to_text())?;
    write_json(
        &out.report,
        &OnlineReport {
            days: ds.len(),
            rounds,
            eps,
            regret,
            agreement,
            round_errors,
            solo_sqe,
        },
    )?;
    let y = transcript.outcomes();
    let rows = (1..=rounds)
        .map(|k| {
            let p = transcript.round(k);
            Ok(MetricsRow {
                round: k,
                sqe: sqe(&p, y)?,
                ece: ece(&p, y)?,
                disagreement: if k >= 2 {
                    Some(disagreement_fraction(&transcript, k, eps)?)
                } else {
                    None
                },
            })
        })
        .collect::<collab_core::Result<Vec<_>>>()?;
    write_metrics(&out.metrics, eps, &rows)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub n: usize,
    pub m: u32,
    pub rounds: usize,
    /// Mean squared error of P^r on the training rows, r = 0..=R.
    pub train_mse_by_round: Vec<f64>,
    pub train_mse: f64,
    /// Mean swap regret of the final predictions against H_A ∪ H_B.
    pub union_swap_regret: f64,
    /// Mean error of the best member of H_A + H_B.
    pub joint_benchmark_mse: f64,
    pub regret_to_joint: f64,
    pub test_mse: Option<f64>,
}

fn mse(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn run_batch(
    dir: &Path,
    seed: u64,
    data: &DataSource,
    test: Option<&DataSource>,
    m: u32,
    c: f64,
) -> CliResult<Artifacts> {
    let ds = data.load(seed, "experiment.data")?;
    let sample = collab_core::batch::BatchSample::new(ds.examples().to_vec())?;
    let spec_a = LinearClassSpec::new(ds.dim_a(), c, true)?;
    let spec_b = LinearClassSpec::new(ds.dim_b(), c, true)?;
    let out_run = collaborate(
        &sample,
        &LeastSquaresOracle { spec: spec_a },
        &LeastSquaresOracle { spec: spec_b },
        m,
    )?;
    let y = sample.labels();
    let fin = out_run.final_predictions();
    let joint = joint_lsq(
        &sample.view(Side::Alice),
        &sample.view(Side::Bob),
        &y,
        &vec![1.0; y.len()],
        &spec_a,
        &spec_b,
    )?;
    let joint_mse = joint.error / y.len() as f64;
    let test_mse = match test {
        Some(src) => {
            let t = match src {
                // Fresh rows from the training distribution.
                DataSource::Generator(g) => g
                    .generate_holdout(seed, y.len())
                    .map_err(|e| CliError::from(e).context("experiment.test"))?,
                DataSource::Path(_) => src.load(seed, "experiment.test")?,
            };
            let preds = t
                .examples()
                .iter()
                .map(|e| eval_test_point(&e.x_a, &e.x_b, &out_run.alice, &out_run.bob))
                .collect::<collab_core::Result<Vec<_>>>()?;
            Some(mse(&preds, &t.outcomes()))
        }
        None => None,
    };
    let report = BatchReport {
        n: y.len(),
        m,
        rounds: out_run.rounds,
        train_mse_by_round: out_run.history.iter().map(|h| mse(&h.values, &y)).collect(),
        train_mse: mse(fin, &y),
        union_swap_regret: union_swap_regret(fin, &sample, &spec_a, &spec_b)?,
        joint_benchmark_mse: joint_mse,
        regret_to_joint: mse(fin, &y) - joint_mse,
        test_mse,
    };

    let out = Artifacts::in_dir(dir, "transcripts.json")?;
    let mut both = BTreeMap::new();
    both.insert("alice", &out_run.alice);
    both.insert("bob", &out_run.bob);
    write_json(&out.transcript, &both)?;
    write_json(&out.report, &report)?;
    let eps = 1.0 / m as f64;
    let rows = out_run
        .history
        .iter()
        .enumerate()
        .map(|(r, h)| {
            Ok(MetricsRow {
                round: r,
                sqe: sqe(&h.values, &y)?,
                ece: ece(&h.values, &y)?,
                disagreement: (r > 0).then(|| {
                    let prev = &out_run.history[r - 1].values;
                    let n = h.values.iter().zip(prev).filter(|(a, b)| (*a - *b).abs() >= eps).count();
                    n as f64 / y.len() as f64
                }),
            })
        })
        .collect::<collab_core::Result<Vec<_>>>()?;
    write_metrics(&out.metrics, eps, &rows)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRoundReport {
    pub k: usize,
    pub utility: f64,
    pub calibration: CalibrationAudit,
    pub regret: DecisionRegretCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub days: usize,
    pub lipschitz: f64,
    pub policies: Vec<String>,
    pub rounds: Vec<DecisionRoundReport>,
    pub utility_steps: Vec<UtilityStep>,
    /// Keys `"k:a"`: round and the other party's previous action.
    pub conversation_swap_regret: BTreeMap<String, f64>,
}

pub fn run_decision(
    dir: &Path,
    seed: u64,
    data: &DecisionSource,
    task: &DecisionTask,
    rounds: usize,
    eps: f64,
    policy_file: Option<&Path>,
) -> CliResult<Artifacts> {
    let (ds, generated) = load_decision_data(data, task, seed)?;
    let policies = match (policy_file, generated) {
        (Some(p), _) => {
            let raw: PolicySet = read_json(p, "experiment.policies")?;
            PolicySet::new(raw.policies, task.n_actions(), ds.len())
                .map_err(|e| CliError::from(e).context("experiment.policies"))?
        }
        (None, Some(g)) => g,
        (None, None) => PolicySet::constants(task.n_actions(), ds.len()),
    };
    let mut fa = BaselineForecaster::new(task.d());
    let mut fb = BaselineForecaster::new(task.d());
    let tr = run_decision_protocol(&ds, task, &mut fa, &mut fb, rounds)?;
    tr.validate(task)?;

    let mut per_round = Vec::with_capacity(rounds);
    for k in 1..=rounds {
        let seq = tr.round(k);
        per_round.push(DecisionRoundReport {
            k,
            utility: seq.actions.iter().zip(&seq.outcomes).map(|(&a, y)| task.utility(a, y)).sum(),
            calibration: decision_cal_error(&seq, task),
            regret: decision_regret_check(&seq, task, &policies),
        });
    }
    let mut csr = BTreeMap::new();
    for side in [Side::Alice, Side::Bob] {
        for ((k, a), v) in decision_conv_swap_regret(&tr, task, &policies, side) {
            csr.insert(format!("{k}:{a}"), v);
        }
    }
    let report = DecisionReport {
        days: ds.len(),
        lipschitz: task.lipschitz(),
        policies: policies.policies.keys().cloned().collect(),
        rounds: per_round,
        utility_steps: utility_profile(&tr, task, eps),
        conversation_swap_regret: csr,
    };

    let out = Artifacts::in_dir(dir, "transcript.json")?;
    write_json(&out.transcript, &tr)?;
    write_json(&out.report, &report)?;
    let rows: Vec<MetricsRow> = (1..=rounds)
        .map(|k| {
            let sq: f64 = (0..tr.days())
                .map(|t| {
                    tr.predictions[t][k - 1]
                        .iter()
                        .zip(&tr.outcomes[t])
                        .map(|(p, y)| (p - y) * (p - y))
                        .sum::<f64>()
                })
                .sum();
            MetricsRow {
                round: k,
                sqe: sq,
                ece: report.rounds[k - 1].calibration.max,
                disagreement: (k >= 2).then(|| action_disagreement_fraction(&tr, task, k - 1, eps)),
            }
        })
        .collect();
    write_metrics(&out.metrics, eps, &rows)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesReport {
    pub rounds: usize,
    pub m: u32,
    pub expected_error: Vec<f64>,
    pub expected_error_rounded: Vec<f64>,
    pub agreement_round: Option<usize>,
    pub max_expected_swap_regret: f64,
    pub one_shot: Option<OneShotReport>,
}

pub fn run_bayes(
    dir: &Path,
    prior_src: &PriorSource,
    rounds: usize,
    m: u32,
    horizons: &[usize],
    c: f64,
) -> CliResult<Artifacts> {
    let prior = load_prior(prior_src)?;
    let run = run_bayes_protocol(&prior, rounds, m)?;
    let regret = expected_swap_regret(&prior, rounds, m)?
        .into_iter()
        .map(|c| c.regret)
        .fold(f64::NEG_INFINITY, f64::max);
    let one_shot = match prior.encoding() {
        Some(enc) => {
            let da = enc.a.values().next().map_or(1, Vec::len);
            let db = enc.b.values().next().map_or(1, Vec::len);
            let sa = LinearClassSpec::new(da, c, true)?;
            let sb = LinearClassSpec::new(db, c, true)?;
            Some(one_shot_report(&prior, horizons, m, &sa, &sb)?)
        }
        None => None,
    };
    let out = Artifacts::in_dir(dir, "transcript.json")?;
    write_json(&out.transcript, &run)?;
    write_json(
        &out.report,
        &BayesReport {
            rounds,
            m,
            expected_error: run.expected_error.clone(),
            expected_error_rounded: run.expected_error_rounded.clone(),
            agreement_round: run.agreement_round,
            max_expected_swap_regret: regret,
            one_shot,
        },
    )?;
    // Error and calibration of the announced messages, ECE = Σ_v |E[(ȳ − y)·1[ȳ = v]]|.
    // The disagreement column is the probability mass whose message changed.
    let rows: Vec<MetricsRow> = (1..=rounds)
        .map(|k| {
            let mut bias: BTreeMap<u64, f64> = BTreeMap::new();
            for tr in &run.traces {
                let v = tr.messages[k - 1];
                *bias.entry(v.to_bits()).or_default() += tr.p * (v - tr.posteriors[k - 1]);
            }
            MetricsRow {
                round: k,
                sqe: run.expected_error_rounded[k - 1],
                ece: bias.values().map(|b| b.abs()).sum(),
                disagreement: (k >= 2).then(|| run.change_mass[k - 2]),
            }
        })
        .collect();
    write_metrics(&out.metrics, 1.0 / m as f64, &rows)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Runs the verification suite; the error carries the failing check names.
pub fn run_verify(dir: &Path, seed: u64, trials: usize) -> CliResult<Artifacts> {
    let checks = run_checks(seed, trials);
    let passed = checks.iter().all(|c| c.passed);
    let out = Artifacts::in_dir(dir, "checks.json")?;
    write_json(&out.transcript, &checks)?;
    write_json(&out.report, &VerifyReport { passed, checks: checks.clone() })?;
    let mut w = csv::Writer::from_path(&out.metrics)?;
    w.write_record(["check", "passed", "detail"])?;
    for c in &checks {
        w.write_record([c.name.as_str(), if c.passed { "true" } else { "false" }, c.detail.as_str()])?;
    }
    w.flush()?;
    if passed {
        Ok(out)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}

/// Recomputes the final-round report for an online transcript file.
pub fn report_from_files(
    transcript: &Path,
    dataset: &Path,
    c: f64,
    g: f64,
    m: u32,
    eps: f64,
) -> CliResult<RegretReport> {
    let text = fs::read_to_string(transcript).map_err(|e| {
        CliError::Validation(format!("cannot read transcript {}: {e}", transcript.display()))
    })?;
    let tr = collab_core::ConversationTranscript::from_text(&text)?;
    let ds: SequenceDataset = read_json(dataset, "dataset")?;
    let b = collab_core::BucketingSpec::new(g, m)?;
    let inputs = ReportInputs {
        dataset: &ds,
        spec_a: LinearClassSpec::new(ds.dim_a(), c, true)?,
        spec_b: LinearClassSpec::new(ds.dim_b(), c, true)?,
        bucketing_a: b,
        bucketing_b: b,
        eps: vec![eps],
    };
    Ok(final_regret_report(&tr, &inputs)?)
}
