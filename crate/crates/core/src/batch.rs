//! Batch collaboration: alternating level-set boosting against the other
//! party's current predictions, with model transcripts that can replay the
//! whole exchange on fresh points.
//!
//! Messages live on the coarse grid `1/m`; each party boosts internally on
//! the fine grid `1/m²`. A party keeps a boosted model on a counterparty
//! level set only when it beats that level's value by more than `1/m²`
//! (mean squared error on the level set), and otherwise defers (`⊥`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::grid::{coarsen_index, grid_index, grid_value};
use crate::regression::{constrained_lsq, LinearClassSpec, LinearModel};
use crate::types::{LabeledExample, Side};

/// Version tag written into persisted transcripts.
pub const TRANSCRIPT_VERSION: u32 = 1;

/// Exact squared-error regression onto a hypothesis class.
pub trait Oracle {
    fn fit(&self, xs: &[&[f64]], ys: &[f64]) -> Result<LinearModel>;
}

/// Norm-bounded least squares with intercept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeastSquaresOracle {
    pub spec: LinearClassSpec,
}

impl Oracle for LeastSquaresOracle {
    fn fit(&self, xs: &[&[f64]], ys: &[f64]) -> Result<LinearModel> {
        let ws = vec![1.0; ys.len()];
        Ok(constrained_lsq(xs, ys, &ws, &self.spec)?.model)
    }
}

/// Training rows shared by both parties; row `i` is the same instance in
/// both views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct BatchSample {
    rows: Vec<LabeledExample>,
}

#[derive(Deserialize)]
struct RawSample {
    rows: Vec<LabeledExample>,
}

impl TryFrom<RawSample> for BatchSample {
    type Error = Error;
    fn try_from(raw: RawSample) -> Result<Self> {
        BatchSample::new(raw.rows)
    }
}

impl BatchSample {
    pub fn new(rows: Vec<LabeledExample>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("batch sample needs at least one row"));
        }
        let (da, db) = (rows[0].x_a.len(), rows[0].x_b.len());
        for (i, r) in rows.iter().enumerate() {
            r.validate().map_err(|e| invalid(format!("row {i}: {e}")))?;
            if r.x_a.len() != da || r.x_b.len() != db {
                return Err(invalid(format!("row {i} has inconsistent dimensions")));
            }
        }
        Ok(BatchSample { rows })
    }

    pub fn rows(&self) -> &[LabeledExample] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn view(&self, side: Side) -> Vec<&[f64]> {
        self.rows
            .iter()
            .map(|r| match side {
                Side::Alice => r.x_a.as_slice(),
                Side::Bob => r.x_b.as_slice(),
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }
}

/// Level-set boosting record: the global fit, then per phase a model for
/// each fine-grid level of the previous phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostTranscript {
    pub initial: LinearModel,
    pub phases: Vec<BTreeMap<u32, LinearModel>>,
}

impl BoostTranscript {
    /// Fine-grid index produced for `x`. A level never seen in training
    /// ends the chain at the current value.
    pub fn eval_index(&self, x: &[f64], fine: u32) -> u32 {
        let mut v = grid_index(self.initial.eval(x), fine);
        for phase in &self.phases {
            match phase.get(&v) {
                Some(model) => v = grid_index(model.eval(x), fine),
                None => break,
            }
        }
        v
    }
}

/// One party's move: for each counterparty level (coarse index) either a
/// boosting record or `None` (defer to the counterparty's value).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRound {
    pub r: usize,
    pub entries: BTreeMap<u32, Option<BoostTranscript>>,
}

impl CrossRound {
    pub fn eval_index(&self, x: &[f64], prev: u32, m: u32) -> u32 {
        match self.entries.get(&prev) {
            Some(Some(bt)) => coarsen_index(bt.eval_index(x, m * m), m),
            _ => prev,
        }
    }
}

/// Everything one party needs to replay its side of the exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchModelTranscript {
    pub version: u32,
    pub side: Side,
    pub m: u32,
    pub total_rounds: usize,
    /// Bob's rounded global fit that opens the exchange.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<LinearModel>,
    pub rounds: Vec<CrossRound>,
}

impl BatchModelTranscript {
    fn round(&self, r: usize) -> Result<&CrossRound> {
        // Alice plays rounds 1, 3, 5, ...; Bob plays 2, 4, ...
        let pos = match self.side {
            Side::Alice => (r - 1) / 2,
            Side::Bob => r / 2 - 1,
        };
        let round = self
            .rounds
            .get(pos)
            .ok_or_else(|| Error::Malformed(format!("{} transcript lacks round {r}", self.side)))?;
        if round.r != r {
            return Err(Error::Malformed(format!(
                "{} transcript has round {} where {r} was expected",
                self.side, round.r
            )));
        }
        Ok(round)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: BatchModelTranscript = serde_json::from_str(s)?;
        if t.version != TRANSCRIPT_VERSION {
            return Err(Error::Malformed(format!("unsupported transcript version {}", t.version)));
        }
        Ok(t)
    }
}

/// Predictions of all rows after round `r`, as coarse grid values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRound {
    pub r: usize,
    pub values: Vec<f64>,
}

/// Output of one boosting run on a view.
#[derive(Clone, Debug, PartialEq)]
pub struct InternalBoostResult {
    pub transcript: BoostTranscript,
    /// Final fine-grid index per row.
    pub fine: Vec<u32>,
    pub phases: usize,
}

fn mse(pred: impl Iterator<Item = f64>, ys: &[f64]) -> f64 {
    pred.zip(ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / ys.len() as f64
}

fn group_by(keys: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        out.entry(k).or_default().push(i);
    }
    out
}

/// Repeated level-set regression on the fine grid until a phase improves
/// the (unrounded) mean squared error by less than `1/m²`. The last,
/// insufficient phase is discarded.
pub fn internal_boost(
    xs: &[&[f64]],
    ys: &[f64],
    oracle: &dyn Oracle,
    m: u32,
) -> Result<InternalBoostResult> {
    check_len("internal_boost rows", xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(invalid("internal_boost needs a nonempty sample"));
    }
    let fine = m * m;
    let threshold = 1.0 / fine as f64;
    let initial = oracle.fit(xs, ys)?;
    let raw: Vec<f64> = xs.iter().map(|x| initial.eval(x)).collect();
    let mut current: Vec<u32> = raw.iter().map(|&v| grid_index(v, fine)).collect();
    let mut previous = current.clone();
    let mut err_prev = f64::INFINITY;
    let mut err = mse(raw.into_iter(), ys);
    let mut phases: Vec<BTreeMap<u32, LinearModel>> = Vec::new();

    while err_prev - err >= threshold {
        if phases.len() > fine as usize + 1 {
            return Err(Error::Internal("internal boosting did not halt".into()));
        }
        let mut models = BTreeMap::new();
        let mut raw = vec![0.0; ys.len()];
        for (level, idx) in group_by(&current) {
            let sub_x: Vec<&[f64]> = idx.iter().map(|&i| xs[i]).collect();
            let sub_y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            let model = oracle.fit(&sub_x, &sub_y)?;
            for &i in &idx {
                raw[i] = model.eval(xs[i]);
            }
            models.insert(level, model);
        }
        previous = std::mem::replace(
            &mut current,
            raw.iter().map(|&v| grid_index(v, fine)).collect(),
        );
        err_prev = err;
        err = mse(raw.into_iter(), ys);
        phases.push(models);
    }
    // The loop exits after computing one phase too many.
    phases.pop();
    Ok(InternalBoostResult {
        phases: phases.len(),
        transcript: BoostTranscript { initial, phases },
        fine: previous,
    })
}

/// One party's move against the counterparty's coarse predictions.
/// Returns the new coarse indices and the round record.
pub fn cross_boost(
    xs: &[&[f64]],
    ys: &[f64],
    other: &[u32],
    oracle: &dyn Oracle,
    m: u32,
    r: usize,
) -> Result<(Vec<u32>, CrossRound)> {
    check_len("cross_boost rows", xs.len(), ys.len())?;
    check_len("cross_boost counterparty", other.len(), ys.len())?;
    let threshold = 1.0 / (m as f64 * m as f64);
    let mut out = other.to_vec();
    let mut entries = BTreeMap::new();
    for (level, idx) in group_by(other) {
        let sub_x: Vec<&[f64]> = idx.iter().map(|&i| xs[i]).collect();
        let sub_y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let boosted = internal_boost(&sub_x, &sub_y, oracle, m)?;
        let emitted: Vec<u32> = boosted.fine.iter().map(|&j| coarsen_index(j, m)).collect();
        let err_level = mse(std::iter::repeat(grid_value(level, m)), &sub_y);
        let err_model = mse(emitted.iter().map(|&k| grid_value(k, m)), &sub_y);
        if err_level - err_model > threshold {
            for (&i, &k) in idx.iter().zip(&emitted) {
                out[i] = k;
            }
            entries.insert(level, Some(boosted.transcript));
        } else {
            entries.insert(level, None);
        }
    }
    Ok((out, CrossRound { r, entries }))
}

/// Result of a full training run.
#[derive(Clone, Debug, PartialEq)]
pub struct CollaborateOutput {
    pub alice: BatchModelTranscript,
    pub bob: BatchModelTranscript,
    /// Number of exchange rounds R; `history[R] == history[R-1]`.
    pub rounds: usize,
    /// P^0 ..= P^R.
    pub history: Vec<PredictionRound>,
}

impl CollaborateOutput {
    pub fn final_predictions(&self) -> &[f64] {
        &self.history.last().expect("history is never empty").values
    }
}

/// Alternating cross boosting from Bob's rounded global fit until a round
/// leaves every training prediction unchanged.
pub fn collaborate(
    sample: &BatchSample,
    oracle_a: &dyn Oracle,
    oracle_b: &dyn Oracle,
    m: u32,
) -> Result<CollaborateOutput> {
    if m == 0 {
        return Err(invalid("grid size m must be positive"));
    }
    let ys = sample.labels();
    let xa = sample.view(Side::Alice);
    let xb = sample.view(Side::Bob);
    let initial = oracle_b.fit(&xb, &ys)?;
    let mut current: Vec<u32> = xb.iter().map(|x| grid_index(initial.eval(x), m)).collect();
    let as_round = |r: usize, idx: &[u32]| PredictionRound {
        r,
        values: idx.iter().map(|&k| grid_value(k, m)).collect(),
    };
    let mut history = vec![as_round(0, &current)];
    let mut rounds_a = Vec::new();
    let mut rounds_b = Vec::new();
    let cap = (m as usize) * (m as usize) + 1;
    let mut r = 0;
    loop {
        let (next, record) = if r % 2 == 0 {
            cross_boost(&xa, &ys, &current, oracle_a, m, r + 1)?
        } else {
            cross_boost(&xb, &ys, &current, oracle_b, m, r + 1)?
        };
        if r % 2 == 0 {
            rounds_a.push(record);
        } else {
            rounds_b.push(record);
        }
        r += 1;
        history.push(as_round(r, &next));
        let done = next == current;
        current = next;
        if done {
            break;
        }
        if r > cap {
            return Err(Error::Internal(format!("collaboration did not halt within {cap} rounds")));
        }
    }
    let make = |side, initial, rounds| BatchModelTranscript {
        version: TRANSCRIPT_VERSION,
        side,
        m,
        total_rounds: r,
        initial,
        rounds,
    };
    Ok(CollaborateOutput {
        alice: make(Side::Alice, None, rounds_a),
        bob: make(Side::Bob, Some(initial), rounds_b),
        rounds: r,
        history,
    })
}

/// Replays the exchange for one point.
pub fn eval_test_point(
    xa: &[f64],
    xb: &[f64],
    alice: &BatchModelTranscript,
    bob: &BatchModelTranscript,
) -> Result<f64> {
    if alice.side != Side::Alice || bob.side != Side::Bob {
        return Err(Error::Malformed("transcripts passed in the wrong order".into()));
    }
    if alice.m != bob.m || alice.total_rounds != bob.total_rounds {
        return Err(Error::Malformed("transcripts come from different runs".into()));
    }
    let m = alice.m;
    let initial = bob
        .initial
        .as_ref()
        .ok_or_else(|| Error::Malformed("Bob's transcript lacks the opening model".into()))?;
    let mut v = grid_index(initial.eval(xb), m);
    for r in 1..=alice.total_rounds {
        v = match Side::of_round(r) {
            Side::Alice => alice.round(r)?.eval_index(xa, v, m),
            Side::Bob => bob.round(r)?.eval_index(xb, v, m),
        };
    }
    Ok(grid_value(v, m))
}

/// Swap regret (mean over rows) against the union of both parties' classes:
/// on every level set the benchmark is the better of the two best fits.
pub fn union_swap_regret(
    predictions: &[f64],
    sample: &BatchSample,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<f64> {
    let ys = sample.labels();
    check_len("union_swap_regret", predictions.len(), ys.len())?;
    let xa = sample.view(Side::Alice);
    let xb = sample.view(Side::Bob);
    let own: f64 = predictions.iter().zip(&ys).map(|(p, y)| (p - y) * (p - y)).sum();
    let mut bench = 0.0;
    for idx in crate::metrics::level_sets(predictions).values() {
        let sy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let ws = vec![1.0; sy.len()];
        let sa: Vec<&[f64]> = idx.iter().map(|&i| xa[i]).collect();
        let sb: Vec<&[f64]> = idx.iter().map(|&i| xb[i]).collect();
        let ea = constrained_lsq(&sa, &sy, &ws, spec_a)?.error;
        let eb = constrained_lsq(&sb, &sy, &ws, spec_b)?.error;
        bench += ea.min(eb);
    }
    Ok((own - bench) / ys.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize) -> LinearClassSpec {
        LinearClassSpec::new(d, 1.0, true).unwrap()
    }

    fn sample(rows: Vec<(f64, f64, f64)>) -> BatchSample {
        BatchSample::new(
            rows.into_iter()
                .map(|(a, b, y)| LabeledExample::new(vec![a], vec![b], y).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_labels_halt_after_the_global_fit() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys = vec![0.37; 20];
        let o = LeastSquaresOracle { spec: spec(1) };
        let r = internal_boost(&refs, &ys, &o, 10).unwrap();
        assert_eq!(r.phases, 0);
        assert!(r.fine.iter().all(|&j| j == 37));
    }

    #[test]
    fn realizable_scalar_halts_immediately() {
        let m = 10;
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.1 + 0.8 * x[0]).collect();
        let o = LeastSquaresOracle { spec: spec(1) };
        let r = internal_boost(&refs, &ys, &o, m).unwrap();
        assert_eq!(r.phases, 0);
        let err = mse(r.fine.iter().map(|&j| grid_value(j, m * m)), &ys);
        let direct = constrained_lsq(&refs, &ys, &vec![1.0; 50], &spec(1)).unwrap().error / 50.0;
        assert!(err <= direct + 3.0 / (4.0 * (m * m) as f64));
    }

    #[test]
    fn optimal_counterparty_levels_are_all_deferred() {
        // Labels equal Bob's values exactly, so no level set can improve.
        let s = sample((0..40).map(|i| ((i % 7) as f64 / 7.0, 0.0, (i % 4) as f64 / 4.0)).collect());
        let other: Vec<u32> = s.labels().iter().map(|&y| grid_index(y, 4)).collect();
        let o = LeastSquaresOracle { spec: spec(1) };
        let (out, round) = cross_boost(&s.view(Side::Alice), &s.labels(), &other, &o, 4, 1).unwrap();
        assert_eq!(out, other);
        assert!(round.entries.values().all(|e| e.is_none()));
    }

    #[test]
    fn one_improvable_level_set() {
        // Level 0 carries a label fully explained by Alice; level 1 is exact.
        let mut rows = Vec::new();
        for i in 0..20 {
            let a = if i % 2 == 0 { -0.5 } else { 0.5 };
            rows.push((a, 0.0, 0.5 + a * 0.8));
            rows.push((a, 0.9, 1.0));
        }
        let s = sample(rows);
        let other: Vec<u32> = s.rows().iter().map(|r| if r.x_b[0] > 0.5 { 10 } else { 5 }).collect();
        let o = LeastSquaresOracle { spec: spec(1) };
        let (_, round) = cross_boost(&s.view(Side::Alice), &s.labels(), &other, &o, 10, 1).unwrap();
        let kept: Vec<u32> = round.entries.iter().filter(|(_, e)| e.is_some()).map(|(k, _)| *k).collect();
        assert_eq!(kept, vec![5]);
    }

    #[test]
    fn bob_only_signal_halts_at_round_one() {
        let s = sample((0..60).map(|i| {
            let b = i as f64 / 60.0 - 0.5;
            let a = ((i * 7) % 11) as f64 / 11.0 - 0.5;
            (a, b, 0.5 + 0.6 * b)
        }).collect());
        let o = LeastSquaresOracle { spec: spec(1) };
        let out = collaborate(&s, &o, &o, 10).unwrap();
        assert_eq!(out.rounds, 1);
        assert!(out.alice.rounds[0].entries.values().all(|e| e.is_none()));
        // Replay gives Bob's opening fit.
        for row in s.rows() {
            let v = eval_test_point(&row.x_a, &row.x_b, &out.alice, &out.bob).unwrap();
            let init = out.bob.initial.as_ref().unwrap().eval(&row.x_b);
            assert_eq!(v, crate::grid::round_to_grid(init, 10));
        }
    }

    #[test]
    fn replay_reproduces_training_predictions() {
        let s = sample((0..200).map(|i| {
            let a = ((i * 37) % 101) as f64 / 101.0 - 0.5;
            let b = ((i * 53) % 97) as f64 / 97.0 - 0.5;
            (a, b, 0.5 + 0.4 * a - 0.3 * b)
        }).collect());
        let o = LeastSquaresOracle { spec: spec(1) };
        let out = collaborate(&s, &o, &o, 5).unwrap();
        let fin = out.final_predictions();
        for (i, row) in s.rows().iter().enumerate() {
            let v = eval_test_point(&row.x_a, &row.x_b, &out.alice, &out.bob).unwrap();
            assert_eq!(v.to_bits(), fin[i].to_bits());
        }
        let a = BatchModelTranscript::from_json(&out.alice.to_json().unwrap()).unwrap();
        assert_eq!(a, out.alice);
    }

    #[test]
    fn malformed_transcripts_are_reported() {
        let s = sample((0..30).map(|i| (i as f64 / 30.0 - 0.5, 0.1, 0.5)).collect());
        let o = LeastSquaresOracle { spec: spec(1) };
        let out = collaborate(&s, &o, &o, 4).unwrap();
        assert!(eval_test_point(&[0.0], &[0.0], &out.bob, &out.alice).is_err());
        let mut broken = out.bob.clone();
        broken.initial = None;
        assert!(eval_test_point(&[0.0], &[0.0], &out.alice, &broken).is_err());
        let mut short = out.alice.clone();
        short.total_rounds += 2;
        let mut short_b = out.bob.clone();
        short_b.total_rounds += 2;
        assert!(matches!(
            eval_test_point(&[0.0], &[0.0], &short, &short_b),
            Err(Error::Malformed(_))
        ));
    }
}
