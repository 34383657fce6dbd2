//! The online collaboration protocol: per day, the parties alternate
//! predictions for `K` rounds, each seeing only its own features and the
//! other's last message, then both observe the outcome.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learners::{Collaborator, LearnerConfig, LearnerKind};
use crate::metrics::{
    conversation_calibration_error, conversation_rounds, conversation_swap_regret,
    disagreement_fraction, ece, sqe, swap_regret, BenchmarkClass,
};
use crate::regression::{joint_lsq, JointFit, LinearClassSpec};
use crate::types::{
    BucketingSpec, ConversationTranscript, RegretReport, SequenceDataset, Side,
};

/// Rounds per day, agreement threshold, both learners and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(rename = "K")]
    pub rounds: usize,
    pub eps: f64,
    pub alice: LearnerConfig,
    pub bob: LearnerConfig,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 2 {
            return Err(invalid(format!("K = {} must be at least 2", self.rounds)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid(format!("eps = {} must lie in (0, 1)", self.eps)));
        }
        self.alice.class_spec()?;
        self.bob.class_spec()?;
        self.alice.bucketing()?;
        self.bob.bucketing()?;
        Ok(())
    }
}

/// Runs `K` rounds per day over the whole dataset.
pub fn run_collaboration(
    dataset: &SequenceDataset,
    alice: &mut dyn Collaborator,
    bob: &mut dyn Collaborator,
    rounds: usize,
) -> Result<ConversationTranscript> {
    if rounds == 0 {
        return Err(invalid("need at least one round per day"));
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut row = vec![0.0; rounds];
    for (t, ex) in dataset.examples().iter().enumerate() {
        let ctx = |k: usize| move |e: Error| Error::Protocol {
            day: t,
            round: k,
            source: Box::new(e),
        };
        let mut prev = None;
        for k in 1..=rounds {
            let p = match Side::of_round(k) {
                Side::Alice => alice.predict(k, prev, &ex.x_a),
                Side::Bob => bob.predict(k, prev, &ex.x_b),
            }
            .map_err(ctx(k))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(ctx(k)(invalid(format!("prediction {p} outside [0, 1]"))));
            }
            row[k - 1] = p;
            prev = Some(p);
        }
        for k in 1..=rounds {
            let prev = (k > 1).then(|| row[k - 2]);
            match Side::of_round(k) {
                Side::Alice => alice.update(k, prev, &ex.x_a, ex.y),
                Side::Bob => bob.update(k, prev, &ex.x_b, ex.y),
            }
            .map_err(ctx(k))?;
        }
        predictions.push(row.clone());
    }
    ConversationTranscript::new(rounds, predictions, dataset.outcomes())
}

/// Builds both learners from the config and runs the protocol.
pub fn run_with_config(dataset: &SequenceDataset, cfg: &ProtocolConfig) -> Result<ConversationTranscript> {
    cfg.validate()?;
    if cfg.alice.d != dataset.dim_a() || cfg.bob.d != dataset.dim_b() {
        return Err(invalid("learner dimensions do not match the dataset"));
    }
    let mut alice = cfg.alice.build(Side::Alice)?;
    let mut bob = cfg.bob.build(Side::Bob)?;
    run_collaboration(dataset, alice.as_mut(), bob.as_mut(), cfg.rounds)
}

/// One party learning alone from its own features: a single swap learner,
/// one prediction per day. Returns the prediction sequence.
pub fn run_solo(dataset: &SequenceDataset, side: Side, cfg: &LearnerConfig) -> Result<Vec<f64>> {
    let solo = LearnerConfig {
        kind: LearnerKind::Swap,
        ..*cfg
    };
    let mut learner = solo.build(side)?;
    let mut out = Vec::with_capacity(dataset.len());
    for (t, ex) in dataset.examples().iter().enumerate() {
        let x = match side {
            Side::Alice => &ex.x_a,
            Side::Bob => &ex.x_b,
        };
        let wrap = |e: Error| Error::Protocol {
            day: t,
            round: 1,
            source: Box::new(e),
        };
        out.push(learner.predict(1, None, x).map_err(wrap)?);
        learner.update(1, None, x, ex.y).map_err(wrap)?;
    }
    Ok(out)
}

/// Per-round ε-disagreement and the measured agreement bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementProfile {
    /// (k, fraction) for k = 2..=K.
    pub fractions: Vec<(usize, f64)>,
    pub best_round: usize,
    pub best_fraction: f64,
    /// Measured β: worst per-round summed bucket calibration error of each
    /// side, divided by T, plus both bucket widths.
    pub beta_hat: f64,
    /// 1/(2Kε²) + β̂/(2ε²).
    pub bound: f64,
}

/// Worst over the side's rounds (k ≥ 2) of Σ_i ECE(k, i).
fn worst_round_calibration(
    transcript: &ConversationTranscript,
    side: Side,
    bucketing: &BucketingSpec,
) -> Result<f64> {
    let cal = conversation_calibration_error(transcript, side, bucketing)?;
    Ok(conversation_rounds(transcript, side)
        .into_iter()
        .map(|k| cal.range((k, 0)..(k + 1, 0)).map(|(_, v)| v).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Measured β̂ for a transcript. `bucketing_a` is the bucketing Alice applies
/// to Bob's messages and vice versa.
pub fn measured_beta(
    transcript: &ConversationTranscript,
    bucketing_a: &BucketingSpec,
    bucketing_b: &BucketingSpec,
) -> Result<f64> {
    let t = transcript.days() as f64;
    let fa = worst_round_calibration(transcript, Side::Alice, bucketing_a)?;
    let fb = worst_round_calibration(transcript, Side::Bob, bucketing_b)?;
    Ok(fa / t + fb / t + bucketing_a.g + bucketing_b.g)
}

pub fn agreement_profile(
    transcript: &ConversationTranscript,
    eps: f64,
    bucketing_a: &BucketingSpec,
    bucketing_b: &BucketingSpec,
) -> Result<AgreementProfile> {
    let k_max = transcript.rounds();
    if k_max < 2 {
        return Err(invalid("agreement needs K >= 2"));
    }
    let fractions = (2..=k_max)
        .map(|k| Ok((k, disagreement_fraction(transcript, k, eps)?)))
        .collect::<Result<Vec<_>>>()?;
    let (best_round, best_fraction) = fractions
        .iter()
        .copied()
        .fold((0, f64::INFINITY), |acc, (k, f)| if f < acc.1 { (k, f) } else { acc });
    let beta_hat = measured_beta(transcript, bucketing_a, bucketing_b)?;
    let bound = 1.0 / (2.0 * k_max as f64 * eps * eps) + beta_hat / (2.0 * eps * eps);
    Ok(AgreementProfile {
        fractions,
        best_round,
        best_fraction,
        beta_hat,
        bound,
    })
}

/// Per-round squared error with the slack allowed between adjacent rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundErrorProfile {
    /// SQE of rounds 1..=K.
    pub sqe: Vec<f64>,
    /// slack[k-2] for k = 2..=K: g·T + 3·Σ_i ECE(k, i).
    pub slack: Vec<f64>,
    /// Rounds k with SQE(k) > SQE(k−1) + slack(k).
    pub flagged: Vec<usize>,
    /// Largest SQE(k) − SQE(k−1) over k ≥ 2 (may be negative).
    pub max_increase: f64,
}

pub fn round_error_profile(
    transcript: &ConversationTranscript,
    bucketing_a: &BucketingSpec,
    bucketing_b: &BucketingSpec,
) -> Result<RoundErrorProfile> {
    let y = transcript.outcomes();
    let k_max = transcript.rounds();
    let errors = (1..=k_max)
        .map(|k| sqe(&transcript.round(k), y))
        .collect::<Result<Vec<_>>>()?;
    let mut slack = Vec::new();
    let mut flagged = Vec::new();
    let mut max_increase = f64::NEG_INFINITY;
    if k_max >= 2 {
        let cal_a = conversation_calibration_error(transcript, Side::Alice, bucketing_a)?;
        let cal_b = conversation_calibration_error(transcript, Side::Bob, bucketing_b)?;
        let t = transcript.days() as f64;
        for k in 2..=k_max {
            let (cal, g) = match Side::of_round(k) {
                Side::Alice => (&cal_a, bucketing_a.g),
                Side::Bob => (&cal_b, bucketing_b.g),
            };
            let mass: f64 = cal.range((k, 0)..(k + 1, 0)).map(|(_, v)| v).sum();
            let s = g * t + 3.0 * mass;
            let inc = errors[k - 1] - errors[k - 2];
            if inc > s {
                flagged.push(k);
            }
            max_increase = max_increase.max(inc);
            slack.push(s);
        }
    }
    Ok(RoundErrorProfile {
        sqe: errors,
        slack,
        flagged,
        max_increase,
    })
}

/// Best Minkowski-sum predictor on the dataset (unit weights).
pub fn joint_benchmark(
    dataset: &SequenceDataset,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<JointFit> {
    let ws = vec![1.0; dataset.len()];
    joint_lsq(
        &dataset.features(Side::Alice),
        &dataset.features(Side::Bob),
        &dataset.outcomes(),
        &ws,
        spec_a,
        spec_b,
    )
}

/// Everything needed to assemble a report beyond the transcript itself.
#[derive(Clone, Debug)]
pub struct ReportInputs<'a> {
    pub dataset: &'a SequenceDataset,
    pub spec_a: LinearClassSpec,
    pub spec_b: LinearClassSpec,
    pub bucketing_a: BucketingSpec,
    pub bucketing_b: BucketingSpec,
    pub eps: Vec<f64>,
}

/// Assembles the final-round report. Conversation swap regret is measured
/// against each speaker's own linear class, keyed `"k:i"`.
pub fn final_regret_report(
    transcript: &ConversationTranscript,
    inputs: &ReportInputs<'_>,
) -> Result<RegretReport> {
    let ds = inputs.dataset;
    if ds.len() != transcript.days() {
        return Err(invalid("dataset and transcript lengths differ"));
    }
    let y = transcript.outcomes();
    let k_max = transcript.rounds();
    let last = transcript.round(k_max);
    let xa = ds.features(Side::Alice);
    let xb = ds.features(Side::Bob);

    let final_sqe = sqe(&last, y)?;
    let mut swap = std::collections::BTreeMap::new();
    swap.insert(
        "constant".to_string(),
        swap_regret::<&[f64]>(&last, y, &[], &BenchmarkClass::Constant)?,
    );
    swap.insert(
        "linear_a".to_string(),
        swap_regret(&last, y, &xa, &BenchmarkClass::Linear(inputs.spec_a))?,
    );
    swap.insert(
        "linear_b".to_string(),
        swap_regret(&last, y, &xb, &BenchmarkClass::Linear(inputs.spec_b))?,
    );

    let mut csr = std::collections::BTreeMap::new();
    let mut disagreement = std::collections::BTreeMap::new();
    let mut slack_beta = inputs.bucketing_a.g + inputs.bucketing_b.g;
    if k_max >= 2 {
        for (side, xs, spec, b) in [
            (Side::Alice, &xa, inputs.spec_a, inputs.bucketing_a),
            (Side::Bob, &xb, inputs.spec_b, inputs.bucketing_b),
        ] {
            for ((k, i), v) in
                conversation_swap_regret(transcript, side, xs, &BenchmarkClass::Linear(spec), &b)?
            {
                csr.insert(RegretReport::round_bucket_key(k, i), v);
            }
        }
        for &eps in &inputs.eps {
            for k in 2..=k_max {
                disagreement.insert(
                    RegretReport::round_eps_key(k, eps),
                    disagreement_fraction(transcript, k, eps)?,
                );
            }
        }
        slack_beta = measured_beta(transcript, &inputs.bucketing_a, &inputs.bucketing_b)?;
    }

    let joint = joint_benchmark(ds, &inputs.spec_a, &inputs.spec_b)?;
    if !joint.converged {
        log::warn!("joint benchmark did not converge; report uses the best iterate");
    }
    Ok(RegretReport {
        sqe: final_sqe,
        ece: ece(&last, y)?,
        swap_regret_by_class: swap,
        conversation_swap_regret: csr,
        disagreement_fraction_by_round: disagreement,
        joint_benchmark_error: joint.error,
        external_regret_joint: final_sqe - joint.error,
        slack_beta,
    })
}
