//! Sequence-level error, calibration, swap-regret and agreement metrics.
//!
//! All functions are pure. Level sets are exact prediction values, so
//! callers are expected to feed grid-valued predictions.

use std::collections::BTreeMap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::regression::{constrained_lsq, LinearClassSpec};
use crate::types::{BucketingSpec, ConversationTranscript, Side};

/// Benchmark class used by the swap-regret family of metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BenchmarkClass {
    Constant,
    Linear(LinearClassSpec),
}

impl BenchmarkClass {
    pub fn name(&self) -> String {
        match self {
            BenchmarkClass::Constant => "constant".into(),
            BenchmarkClass::Linear(s) => format!("linear(d={},C={})", s.dim, s.norm_bound),
        }
    }
}

/// Sum of squared errors.
pub fn sqe(predictions: &[f64], outcomes: &[f64]) -> Result<f64> {
    check_len("sqe", predictions.len(), outcomes.len())?;
    if predictions.is_empty() {
        return Err(invalid("sqe needs at least one prediction"));
    }
    Ok(predictions
        .iter()
        .zip(outcomes)
        .map(|(p, y)| (p - y) * (p - y))
        .sum())
}

fn key(p: f64) -> OrderedFloat<f64> {
    // Adding +0.0 folds -0.0 into +0.0.
    OrderedFloat(p + 0.0)
}

/// Row indices grouped by exact prediction value, in increasing value order.
pub fn level_sets(predictions: &[f64]) -> BTreeMap<OrderedFloat<f64>, Vec<usize>> {
    let mut sets: BTreeMap<OrderedFloat<f64>, Vec<usize>> = BTreeMap::new();
    for (t, &p) in predictions.iter().enumerate() {
        sets.entry(key(p)).or_default().push(t);
    }
    sets
}

/// Σ over distinct values p of |Σ_t 1[ŷ=p](ŷ − y)|.
pub fn ece(predictions: &[f64], outcomes: &[f64]) -> Result<f64> {
    check_len("ece", predictions.len(), outcomes.len())?;
    let mut bias: BTreeMap<OrderedFloat<f64>, f64> = BTreeMap::new();
    for (p, y) in predictions.iter().zip(outcomes) {
        *bias.entry(key(*p)).or_default() += p - y;
    }
    Ok(bias.values().map(|b| b.abs()).sum())
}

/// Best in-class squared error on the rows `idx`.
fn best_fit_error<X: AsRef<[f64]>>(
    idx: &[usize],
    outcomes: &[f64],
    inputs: &[X],
    class: &BenchmarkClass,
) -> Result<f64> {
    match class {
        BenchmarkClass::Constant => {
            let n = idx.len() as f64;
            let mean = idx.iter().map(|&t| outcomes[t]).sum::<f64>() / n;
            Ok(idx
                .iter()
                .map(|&t| (outcomes[t] - mean) * (outcomes[t] - mean))
                .sum())
        }
        BenchmarkClass::Linear(spec) => {
            let xs: Vec<&[f64]> = idx.iter().map(|&t| inputs[t].as_ref()).collect();
            let ys: Vec<f64> = idx.iter().map(|&t| outcomes[t]).collect();
            let ws = vec![1.0; ys.len()];
            Ok(constrained_lsq(&xs, &ys, &ws, spec)?.error)
        }
    }
}

/// Σ(ŷ−y)² − Σ_v min_{h∈H} Σ 1[ŷ=v](h(x)−y)², level sets over realized values.
/// `inputs` may be empty for the constant class.
pub fn swap_regret<X: AsRef<[f64]>>(
    predictions: &[f64],
    outcomes: &[f64],
    inputs: &[X],
    class: &BenchmarkClass,
) -> Result<f64> {
    check_len("swap_regret", predictions.len(), outcomes.len())?;
    if matches!(class, BenchmarkClass::Linear(_)) {
        check_len("swap_regret inputs", inputs.len(), outcomes.len())?;
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let own = sqe(predictions, outcomes)?;
    let mut bench = 0.0;
    for idx in level_sets(predictions).values() {
        bench += best_fit_error(idx, outcomes, inputs, class)?;
    }
    Ok(own - bench)
}

/// The rounds of `side` that have a predecessor (k ≥ 2).
pub fn conversation_rounds(transcript: &ConversationTranscript, side: Side) -> Vec<usize> {
    (2..=transcript.rounds())
        .filter(|&k| side.owns_round(k))
        .collect()
}

/// Days grouped by the bucket of the round-(k−1) prediction, for every bucket.
fn bucket_days(
    transcript: &ConversationTranscript,
    k: usize,
    bucketing: &BucketingSpec,
) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> =
        (1..=bucketing.n_buckets()).map(|i| (i, Vec::new())).collect();
    for t in 0..transcript.days() {
        let i = bucketing.bucket(transcript.prediction(t, k - 1));
        out.entry(i).or_default().push(t);
    }
    out
}

fn check_conversation(transcript: &ConversationTranscript) -> Result<()> {
    if transcript.rounds() < 2 {
        return Err(invalid("conversation metrics need K >= 2"));
    }
    Ok(())
}

/// Swap regret of `side`'s round-k predictions on each subsequence where the
/// counterparty's round-(k−1) prediction falls in bucket i. Keys are (k, i)
/// with 1-based buckets; empty buckets map to 0.
pub fn conversation_swap_regret<X: AsRef<[f64]>>(
    transcript: &ConversationTranscript,
    side: Side,
    inputs: &[X],
    class: &BenchmarkClass,
    bucketing: &BucketingSpec,
) -> Result<BTreeMap<(usize, usize), f64>> {
    check_conversation(transcript)?;
    if matches!(class, BenchmarkClass::Linear(_)) {
        check_len("conversation inputs", inputs.len(), transcript.days())?;
    }
    let y = transcript.outcomes();
    let mut out = BTreeMap::new();
    for k in conversation_rounds(transcript, side) {
        let preds = transcript.round(k);
        for (i, days) in bucket_days(transcript, k, bucketing) {
            let p: Vec<f64> = days.iter().map(|&t| preds[t]).collect();
            let o: Vec<f64> = days.iter().map(|&t| y[t]).collect();
            let val = if days.is_empty() {
                0.0
            } else {
                match class {
                    BenchmarkClass::Constant => {
                        swap_regret::<&[f64]>(&p, &o, &[], class)?
                    }
                    BenchmarkClass::Linear(_) => {
                        let xs: Vec<&[f64]> = days.iter().map(|&t| inputs[t].as_ref()).collect();
                        swap_regret(&p, &o, &xs, class)?
                    }
                }
            };
            out.insert((k, i), val);
        }
    }
    Ok(out)
}

/// ECE of `side`'s round-k predictions on each counterparty bucket.
pub fn conversation_calibration_error(
    transcript: &ConversationTranscript,
    side: Side,
    bucketing: &BucketingSpec,
) -> Result<BTreeMap<(usize, usize), f64>> {
    check_conversation(transcript)?;
    let y = transcript.outcomes();
    let mut out = BTreeMap::new();
    for k in conversation_rounds(transcript, side) {
        let preds = transcript.round(k);
        for (i, days) in bucket_days(transcript, k, bucketing) {
            let p: Vec<f64> = days.iter().map(|&t| preds[t]).collect();
            let o: Vec<f64> = days.iter().map(|&t| y[t]).collect();
            out.insert((k, i), ece(&p, &o)?);
        }
    }
    Ok(out)
}

/// Fraction of days with |ŷ^{t,k} − ŷ^{t,k−1}| ≥ ε.
pub fn disagreement_fraction(transcript: &ConversationTranscript, k: usize, eps: f64) -> Result<f64> {
    if k < 2 || k > transcript.rounds() {
        return Err(invalid(format!("round {k} outside 2..={}", transcript.rounds())));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let n = transcript
        .rows()
        .iter()
        .filter(|row| (row[k - 1] - row[k - 2]).abs() >= eps)
        .count();
    Ok(n as f64 / transcript.days() as f64)
}
