//! Domain types: examples, datasets, bucketing, transcripts and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

const NORM_SLACK: f64 = 1e-9;

/// Which party made a prediction. Alice speaks on odd rounds, Bob on even.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl Side {
    /// Speaker of (1-based) round `k`.
    pub fn of_round(k: usize) -> Side {
        if k % 2 == 1 {
            Side::Alice
        } else {
            Side::Bob
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Alice => Side::Bob,
            Side::Bob => Side::Alice,
        }
    }

    /// Whether `k` is one of this side's rounds.
    pub fn owns_round(self, k: usize) -> bool {
        k >= 1 && Side::of_round(k) == self
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Alice => f.write_str("alice"),
            Side::Bob => f.write_str("bob"),
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One day's features for both parties and the scalar outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub y: f64,
}

impl LabeledExample {
    /// Validates the unit-ball feature constraint and the label range.
    /// Out-of-ball features are rejected, never rescaled.
    pub fn new(x_a: Vec<f64>, x_b: Vec<f64>, y: f64) -> Result<Self> {
        let ex = LabeledExample { x_a, x_b, y };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("x_a", &self.x_a), ("x_b", &self.x_b)] {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{name} has a non-finite entry")));
            }
            let n = norm(x);
            if n > 1.0 + NORM_SLACK {
                return Err(invalid(format!("{name} has norm {n} > 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.y) {
            return Err(invalid(format!("label {} outside [0, 1]", self.y)));
        }
        Ok(())
    }
}

/// An ordered, immutable sequence of examples with the seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct SequenceDataset {
    examples: Vec<LabeledExample>,
    seed: u64,
}

#[derive(Deserialize)]
struct RawDataset {
    examples: Vec<LabeledExample>,
    seed: u64,
}

impl TryFrom<RawDataset> for SequenceDataset {
    type Error = Error;
    fn try_from(raw: RawDataset) -> Result<Self> {
        SequenceDataset::new(raw.examples, raw.seed)
    }
}

impl SequenceDataset {
    pub fn new(examples: Vec<LabeledExample>, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(invalid("dataset must contain at least one example"));
        }
        let (da, db) = (examples[0].x_a.len(), examples[0].x_b.len());
        for (t, ex) in examples.iter().enumerate() {
            ex.validate()
                .map_err(|e| invalid(format!("example {t}: {e}")))?;
            if ex.x_a.len() != da || ex.x_b.len() != db {
                return Err(invalid(format!("example {t} has inconsistent feature dimensions")));
            }
        }
        Ok(SequenceDataset { examples, seed })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim_a(&self) -> usize {
        self.examples[0].x_a.len()
    }

    pub fn dim_b(&self) -> usize {
        self.examples[0].x_b.len()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.y).collect()
    }

    /// Feature rows visible to `side`.
    pub fn features(&self, side: Side) -> Vec<&[f64]> {
        self.examples
            .iter()
            .map(|e| match side {
                Side::Alice => e.x_a.as_slice(),
                Side::Bob => e.x_b.as_slice(),
            })
            .collect()
    }
}

/// Bucketing of `[0, 1]` into `1/g` half-open intervals plus the message grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketingSpec {
    pub g: f64,
    pub m: u32,
}

impl BucketingSpec {
    pub fn new(g: f64, m: u32) -> Result<Self> {
        if !(g > 0.0 && g <= 1.0) {
            return Err(invalid(format!("bucket width {g} outside (0, 1]")));
        }
        let n = 1.0 / g;
        if (n - n.round()).abs() > 1e-9 {
            return Err(invalid(format!("1/g = {n} is not an integer")));
        }
        if m == 0 {
            return Err(invalid("grid size m must be positive"));
        }
        Ok(BucketingSpec { g, m })
    }

    pub fn n_buckets(&self) -> usize {
        (1.0 / self.g).round() as usize
    }

    /// 1-based bucket of `p`: bucket `i` is `[(i-1)g, ig)`, the last one closed.
    pub fn bucket(&self, p: f64) -> usize {
        let n = self.n_buckets();
        let p = p.clamp(0.0, 1.0);
        let i = (p * n as f64 + 1e-9).floor() as usize;
        i.min(n - 1) + 1
    }
}

/// Predictions of both parties over `T` days and `K` rounds, plus outcomes.
/// Round `k` (1-based) is spoken by Alice when odd and by Bob when even.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationTranscript {
    rounds: usize,
    predictions: Vec<Vec<f64>>,
    outcomes: Vec<f64>,
}

impl ConversationTranscript {
    pub fn new(rounds: usize, predictions: Vec<Vec<f64>>, outcomes: Vec<f64>) -> Result<Self> {
        if rounds == 0 {
            return Err(invalid("transcript needs at least one round"));
        }
        check_len("transcript days", predictions.len(), outcomes.len())?;
        for (t, row) in predictions.iter().enumerate() {
            check_len("transcript rounds", row.len(), rounds)?;
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(invalid(format!("day {t}: prediction {p} outside [0, 1]")));
            }
        }
        Ok(ConversationTranscript {
            rounds,
            predictions,
            outcomes,
        })
    }

    pub fn days(&self) -> usize {
        self.outcomes.len()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Prediction on day `t` (0-based) at round `k` (1-based).
    pub fn prediction(&self, t: usize, k: usize) -> f64 {
        self.predictions[t][k - 1]
    }

    /// All predictions of round `k` (1-based).
    pub fn round(&self, k: usize) -> Vec<f64> {
        self.predictions.iter().map(|row| row[k - 1]).collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    /// Line format: header `T K`, then per day `y p1 ... pK`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.days(), self.rounds);
        for (t, (row, y)) in self.predictions.iter().zip(&self.outcomes).enumerate() {
            let _ = write!(s, "{y} {}", t + 1);
            for p in row {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("missing header".into()))?;
        let mut it = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.ok_or_else(|| Error::Malformed(format!("header lacks {what}")))?
                .parse()
                .map_err(|_| Error::Malformed(format!("bad {what} in header")))
        };
        let days = parse_usize(it.next(), "T")?;
        let rounds = parse_usize(it.next(), "K")?;
        let mut predictions = Vec::with_capacity(days);
        let mut outcomes = Vec::with_capacity(days);
        // Day lines: `y t ŷ^{t,1} … ŷ^{t,K}` with t counted from 1.
        for (t, line) in lines.enumerate() {
            let bad = |why: String| Error::Malformed(format!("line {}: {why}", t + 2));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != rounds + 2 {
                return Err(bad(format!("expected {} fields, found {}", rounds + 2, fields.len())));
            }
            if fields[1].parse::<usize>() != Ok(t + 1) {
                return Err(bad(format!("day index {} out of sequence", fields[1])));
            }
            let vals = fields
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != 1)
                .map(|(_, v)| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            outcomes.push(vals[0]);
            predictions.push(vals[1..].to_vec());
        }
        if outcomes.len() != days {
            return Err(Error::Malformed(format!(
                "header announces {days} days, found {}",
                outcomes.len()
            )));
        }
        ConversationTranscript::new(rounds, predictions, outcomes)
    }
}

/// Every measured regret, calibration and agreement statistic for one run.
///
/// Map keys are strings so the report is plain JSON: conversation swap regret
/// uses `"k:i"` (round, bucket) and disagreement uses `"k@eps"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub sqe: f64,
    pub ece: f64,
    pub swap_regret_by_class: BTreeMap<String, f64>,
    pub conversation_swap_regret: BTreeMap<String, f64>,
    pub disagreement_fraction_by_round: BTreeMap<String, f64>,
    pub joint_benchmark_error: f64,
    pub external_regret_joint: f64,
    pub slack_beta: f64,
}

impl RegretReport {
    pub fn round_bucket_key(k: usize, i: usize) -> String {
        format!("{k}:{i}")
    }

    pub fn round_eps_key(k: usize, eps: f64) -> String {
        format!("{k}@{eps}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_reject_out_of_ball_features() {
        assert!(LabeledExample::new(vec![0.6, 0.8], vec![], 0.5).is_ok());
        assert!(LabeledExample::new(vec![0.8, 0.8], vec![], 0.5).is_err());
        assert!(LabeledExample::new(vec![0.1], vec![0.1], 1.5).is_err());
    }

    #[test]
    fn bucket_boundaries() {
        let b = BucketingSpec::new(0.25, 4).unwrap();
        assert_eq!(b.n_buckets(), 4);
        assert_eq!(b.bucket(0.0), 1);
        assert_eq!(b.bucket(0.2499), 1);
        assert_eq!(b.bucket(0.25), 2);
        assert_eq!(b.bucket(0.75), 4);
        assert_eq!(b.bucket(1.0), 4);
        let b = BucketingSpec::new(0.1, 20).unwrap();
        for k in 0..10 {
            assert_eq!(b.bucket(k as f64 / 10.0), k + 1);
        }
        assert!(BucketingSpec::new(0.3, 4).is_err());
        assert!(BucketingSpec::new(0.0, 4).is_err());
    }

    #[test]
    fn side_parity() {
        assert_eq!(Side::of_round(1), Side::Alice);
        assert_eq!(Side::of_round(2), Side::Bob);
        assert!(Side::Bob.owns_round(4));
        assert!(!Side::Bob.owns_round(3));
    }

    #[test]
    fn transcript_text_round_trip() {
        let tr = ConversationTranscript::new(
            2,
            vec![vec![0.1, 0.30000000000000004], vec![1.0, 0.0]],
            vec![0.2, 1.0 / 3.0],
        )
        .unwrap();
        let text = tr.to_text();
        assert!(text.starts_with("2 2\n0.2 1 0.1 0.30000000000000004\n"), "{text}");
        assert_eq!(ConversationTranscript::from_text(&text).unwrap(), tr);
    }

    #[test]
    fn transcript_rejects_bad_shapes() {
        assert!(ConversationTranscript::new(2, vec![vec![0.1]], vec![0.0]).is_err());
        assert!(ConversationTranscript::new(1, vec![vec![1.5]], vec![0.0]).is_err());
        assert!(ConversationTranscript::from_text("2 1\n0.5 1 0.5\n").is_err());
        assert!(ConversationTranscript::from_text("1 1\n0.5 2 0.5\n").is_err());
        assert!(ConversationTranscript::from_text("1 1\n0.5 1 0.5\n").is_ok());
    }
}
