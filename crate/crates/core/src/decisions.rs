//! Action-mediated collaboration: the parties exchange best-response actions
//! instead of predictions. Audits here (calibration, cross calibration, swap
//! regret) are exact sums over the transcript; the forecaster is a simple
//! per-key running mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::types::{norm, Side};

const NORM_SLACK: f64 = 1e-9;

/// A finite action set with a utility linear in the outcome vector,
/// rescaled so that `u` maps `A × [0,1]^d` onto a subset of `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTask", into = "RawTask")]
pub struct DecisionTask {
    d: usize,
    actions: Vec<String>,
    raw: Vec<Vec<f64>>,
    scaled: Vec<Vec<f64>>,
    offset: f64,
    lipschitz: f64,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    d: usize,
    actions: Vec<String>,
    utility: Vec<Vec<f64>>,
}

impl TryFrom<RawTask> for DecisionTask {
    type Error = Error;
    fn try_from(raw: RawTask) -> Result<Self> {
        DecisionTask::new(raw.d, raw.actions, raw.utility)
    }
}

impl From<DecisionTask> for RawTask {
    fn from(t: DecisionTask) -> Self {
        RawTask {
            d: t.d,
            actions: t.actions,
            utility: t.raw,
        }
    }
}

impl DecisionTask {
    /// `utility[a][j]` is the weight of outcome coordinate `j` for action `a`.
    /// The matrix is rescaled affinely: `u(a,y) = (M_a·y − lo) / (hi − lo)`
    /// where `lo`, `hi` are the extreme values of `M_a·y` over the cube.
    pub fn new(d: usize, actions: Vec<String>, utility: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 || actions.is_empty() {
            return Err(invalid("decision task needs d ≥ 1 and at least one action"));
        }
        check_len("utility rows vs actions", utility.len(), actions.len())?;
        for row in &utility {
            check_len("utility row vs d", row.len(), d)?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid("utility entries must be finite"));
            }
        }
        let lo = utility
            .iter()
            .map(|r| r.iter().map(|v| v.min(0.0)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let hi = utility
            .iter()
            .map(|r| r.iter().map(|v| v.max(0.0)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(invalid("utility is identically zero"));
        }
        let span = hi - lo;
        let scaled: Vec<Vec<f64>> = utility
            .iter()
            .map(|r| r.iter().map(|v| v / span).collect())
            .collect();
        // Exact ℓ∞ Lipschitz constant of y ↦ u(a, y) on the cube.
        let lipschitz = scaled
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(DecisionTask {
            d,
            actions,
            raw: utility,
            scaled,
            offset: lo / span,
            lipschitz,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn raw_utility(&self) -> &[Vec<f64>] {
        &self.raw
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Rescaled utility; affine in `y`.
    pub fn utility(&self, a: usize, y: &[f64]) -> f64 {
        self.linear_part(a, y) - self.offset
    }

    /// The part of the utility that is linear in `y`.
    pub fn linear_part(&self, a: usize, y: &[f64]) -> f64 {
        self.scaled[a].iter().zip(y).map(|(m, v)| m * v).sum()
    }

    /// Highest-utility action; ties go to the lowest index.
    pub fn best_response(&self, y: &[f64]) -> usize {
        let mut best = 0;
        let mut best_u = self.linear_part(0, y);
        for a in 1..self.n_actions() {
            let u = self.linear_part(a, y);
            if u > best_u {
                best = a;
                best_u = u;
            }
        }
        best
    }

    fn check_outcome(&self, y: &[f64]) -> Result<()> {
        check_len("outcome dimension", y.len(), self.d)?;
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("outcome vectors must lie in [0,1]^d"));
        }
        Ok(())
    }
}

/// A day with vector outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionExample {
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub y: Vec<f64>,
}

/// Days with vector outcomes, in arrival order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecisionDataset")]
pub struct DecisionDataset {
    examples: Vec<DecisionExample>,
    seed: u64,
}

#[derive(Deserialize)]
struct RawDecisionDataset {
    examples: Vec<DecisionExample>,
    seed: u64,
}

impl TryFrom<RawDecisionDataset> for DecisionDataset {
    type Error = Error;
    fn try_from(raw: RawDecisionDataset) -> Result<Self> {
        DecisionDataset::new(raw.examples, raw.seed)
    }
}

impl DecisionDataset {
    pub fn new(examples: Vec<DecisionExample>, seed: u64) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| invalid("dataset must contain at least one example"))?;
        let (da, db, d) = (first.x_a.len(), first.x_b.len(), first.y.len());
        for (t, ex) in examples.iter().enumerate() {
            if ex.x_a.len() != da || ex.x_b.len() != db || ex.y.len() != d {
                return Err(invalid(format!("example {t} has inconsistent dimensions")));
            }
            if norm(&ex.x_a) > 1.0 + NORM_SLACK || norm(&ex.x_b) > 1.0 + NORM_SLACK {
                return Err(invalid(format!("example {t}: feature norm exceeds 1")));
            }
            if ex.y.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!("example {t}: outcome outside [0,1]^d")));
            }
        }
        Ok(DecisionDataset { examples, seed })
    }

    pub fn examples(&self) -> &[DecisionExample] {
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

    pub fn d(&self) -> usize {
        self.examples[0].y.len()
    }
}

/// Benchmark policies given as one action per dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub policies: BTreeMap<String, Vec<usize>>,
}

impl PolicySet {
    /// Validates the labels and adds every constant policy not already
    /// present (under the name `const:<action>`).
    pub fn new(
        mut policies: BTreeMap<String, Vec<usize>>,
        n_actions: usize,
        days: usize,
    ) -> Result<Self> {
        for (name, labels) in &policies {
            if labels.len() != days {
                return Err(invalid(format!(
                    "policy {name} labels {} rows, expected {days}",
                    labels.len()
                )));
            }
            if labels.iter().any(|&a| a >= n_actions) {
                return Err(invalid(format!("policy {name} names an unknown action")));
            }
        }
        for a in 0..n_actions {
            let present = policies.values().any(|l| l.iter().all(|&b| b == a));
            if !present {
                policies.insert(format!("const:{a}"), vec![a; days]);
            }
        }
        Ok(PolicySet { policies })
    }

    pub fn constants(n_actions: usize, days: usize) -> Self {
        PolicySet::new(BTreeMap::new(), n_actions, days).expect("constant policies are valid")
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Predictions and actions of both parties over `T` days and `K` rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTranscript {
    pub rounds: usize,
    /// `predictions[t][k-1]`
    pub predictions: Vec<Vec<Vec<f64>>>,
    /// `actions[t][k-1]`
    pub actions: Vec<Vec<usize>>,
    pub outcomes: Vec<Vec<f64>>,
}

/// A single sequence `(ŷ, a, y)` drawn from one round of a transcript,
/// possibly restricted to a subset of days. `rows` are dataset indices.
#[derive(Clone, Debug)]
pub struct ActionSequence<'a> {
    pub rows: Vec<usize>,
    pub predictions: Vec<&'a [f64]>,
    pub actions: Vec<usize>,
    pub outcomes: Vec<&'a [f64]>,
}

impl DecisionTranscript {
    pub fn days(&self) -> usize {
        self.outcomes.len()
    }

    /// Checks shapes and that every action is the best response to the
    /// prediction it was derived from.
    pub fn validate(&self, task: &DecisionTask) -> Result<()> {
        check_len("transcript predictions", self.predictions.len(), self.days())?;
        check_len("transcript actions", self.actions.len(), self.days())?;
        for t in 0..self.days() {
            task.check_outcome(&self.outcomes[t])?;
            check_len("rounds per day", self.predictions[t].len(), self.rounds)?;
            check_len("actions per day", self.actions[t].len(), self.rounds)?;
            for k in 0..self.rounds {
                let p = &self.predictions[t][k];
                task.check_outcome(p)?;
                if self.actions[t][k] != task.best_response(p) {
                    return Err(Error::Malformed(format!(
                        "day {t}, round {}: action is not the best response",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Round `k` (1-based) over all days.
    pub fn round(&self, k: usize) -> ActionSequence<'_> {
        self.select(k, |_| true)
    }

    /// Round `k` restricted to days where round `k-1` played `prev`.
    pub fn after_action(&self, k: usize, prev: usize) -> ActionSequence<'_> {
        assert!(k >= 2, "round {k} has no predecessor");
        self.select(k, |t| self.actions[t][k - 2] == prev)
    }

    fn select(&self, k: usize, keep: impl Fn(usize) -> bool) -> ActionSequence<'_> {
        assert!((1..=self.rounds).contains(&k), "round {k} out of range");
        let rows: Vec<usize> = (0..self.days()).filter(|&t| keep(t)).collect();
        ActionSequence {
            predictions: rows.iter().map(|&t| self.predictions[t][k - 1].as_slice()).collect(),
            actions: rows.iter().map(|&t| self.actions[t][k - 1]).collect(),
            outcomes: rows.iter().map(|&t| self.outcomes[t].as_slice()).collect(),
            rows,
        }
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn add_residual(acc: &mut [f64], p: &[f64], y: &[f64]) {
    for ((a, p), y) in acc.iter_mut().zip(p).zip(y) {
        *a += p - y;
    }
}

/// Per-action bias `‖Σ_{t: a^t = a} (ŷ^t − y^t)‖∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationAudit {
    pub per_action: Vec<f64>,
    pub counts: Vec<usize>,
    pub max: f64,
}

pub fn decision_cal_error(seq: &ActionSequence<'_>, task: &DecisionTask) -> CalibrationAudit {
    let n = task.n_actions();
    let mut sums = vec![vec![0.0; task.d()]; n];
    let mut counts = vec![0; n];
    for ((&a, p), y) in seq.actions.iter().zip(&seq.predictions).zip(&seq.outcomes) {
        add_residual(&mut sums[a], p, y);
        counts[a] += 1;
    }
    let per_action: Vec<f64> = sums.iter().map(|s| linf(s)).collect();
    let max = per_action.iter().cloned().fold(0.0, f64::max);
    CalibrationAudit {
        per_action,
        counts,
        max,
    }
}

/// Bias conditioned on the played action and on a benchmark policy's action:
/// `values[c][a][a']` for policy `c` in name order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCalibrationAudit {
    pub values: BTreeMap<String, Vec<Vec<f64>>>,
    pub max: f64,
    /// For each `(a, a')`, the worst value over policies.
    pub worst_by_pair: Vec<Vec<f64>>,
}

pub fn decision_cross_cal_error(
    seq: &ActionSequence<'_>,
    task: &DecisionTask,
    policies: &PolicySet,
) -> CrossCalibrationAudit {
    let n = task.n_actions();
    let mut values = BTreeMap::new();
    let mut worst = vec![vec![0.0; n]; n];
    for (name, labels) in &policies.policies {
        let mut sums = vec![vec![vec![0.0; task.d()]; n]; n];
        for (i, &t) in seq.rows.iter().enumerate() {
            add_residual(&mut sums[seq.actions[i]][labels[t]], seq.predictions[i], seq.outcomes[i]);
        }
        let table: Vec<Vec<f64>> = sums
            .iter()
            .map(|row| row.iter().map(|s| linf(s)).collect())
            .collect();
        for a in 0..n {
            for b in 0..n {
                worst[a][b] = f64::max(worst[a][b], table[a][b]);
            }
        }
        values.insert(name.clone(), table);
    }
    let max = worst.iter().flatten().cloned().fold(0.0, f64::max);
    CrossCalibrationAudit {
        values,
        max,
        worst_by_pair: worst,
    }
}

/// `Σ_a max_c Σ_{t: a^t = a} u(c(x^t), y^t) − Σ_t u(a^t, y^t)`.
pub fn decision_swap_regret(
    seq: &ActionSequence<'_>,
    task: &DecisionTask,
    policies: &PolicySet,
) -> f64 {
    let n = task.n_actions();
    let mut best = vec![f64::NEG_INFINITY; n];
    for labels in policies.policies.values() {
        let mut totals = vec![0.0; n];
        for (i, &t) in seq.rows.iter().enumerate() {
            totals[seq.actions[i]] += task.utility(labels[t], seq.outcomes[i]);
        }
        for a in 0..n {
            best[a] = best[a].max(totals[a]);
        }
    }
    let bench: f64 = best.iter().filter(|v| v.is_finite()).sum();
    let own: f64 = seq
        .actions
        .iter()
        .zip(&seq.outcomes)
        .map(|(&a, y)| task.utility(a, y))
        .sum();
    bench - own
}

/// Measured swap regret together with the bound obtained by plugging the
/// measured calibration errors into the calibration-to-regret inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRegretCheck {
    pub regret: f64,
    pub f_hat: f64,
    pub f_prime_hat: f64,
    /// `L|A|·f̂ + L|A|²·f̂′`.
    pub bound: f64,
    /// `L·Σ_a cal(a) + L·Σ_{a,a'} max_c cc(a,a',c)`, never larger than `bound`.
    pub tight_bound: f64,
}

impl DecisionRegretCheck {
    pub fn holds(&self) -> bool {
        self.regret <= self.tight_bound + 1e-9 * (1.0 + self.tight_bound.abs())
    }
}

pub fn decision_regret_check(
    seq: &ActionSequence<'_>,
    task: &DecisionTask,
    policies: &PolicySet,
) -> DecisionRegretCheck {
    let cal = decision_cal_error(seq, task);
    let cross = decision_cross_cal_error(seq, task, policies);
    let l = task.lipschitz();
    let n = task.n_actions() as f64;
    let tight = l * cal.per_action.iter().sum::<f64>()
        + l * cross.worst_by_pair.iter().flatten().sum::<f64>();
    DecisionRegretCheck {
        regret: decision_swap_regret(seq, task, policies),
        f_hat: cal.max,
        f_prime_hat: cross.max,
        bound: l * n * cal.max + l * n * n * cross.max,
        tight_bound: tight,
    }
}

/// Decision swap regret of `side` on each of its rounds `k ≥ 2`,
/// restricted to days where the other party played `a'` at round `k−1`.
pub fn decision_conv_swap_regret(
    transcript: &DecisionTranscript,
    task: &DecisionTask,
    policies: &PolicySet,
    side: Side,
) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for k in (2..=transcript.rounds).filter(|&k| side.owns_round(k)) {
        for prev in 0..task.n_actions() {
            let seq = transcript.after_action(k, prev);
            out.insert((k, prev), decision_swap_regret(&seq, task, policies));
        }
    }
    out
}

/// Decision calibration of `side` on each of its rounds `k ≥ 2`,
/// conditioned on the previous action. Values are the max over actions.
pub fn decision_conv_cal_error(
    transcript: &DecisionTranscript,
    task: &DecisionTask,
    side: Side,
) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for k in (2..=transcript.rounds).filter(|&k| side.owns_round(k)) {
        for prev in 0..task.n_actions() {
            let seq = transcript.after_action(k, prev);
            out.insert((k, prev), decision_cal_error(&seq, task).max);
        }
    }
    out
}

/// Utility change from round `k−1` to round `k` with its measured floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityStep {
    pub k: usize,
    /// `Σ_t u(a^{t,k}, y^t) − Σ_t u(a^{t,k−1}, y^t)`.
    pub gain: f64,
    /// Days where the speaker's own prediction values its action more than
    /// the previous action by over `eps`.
    pub disagreements: usize,
    /// `eps·disagreements − 2L·Σ_{a,a'} ‖Σ_{T(a,a')} (ŷ − y)‖∞`, where
    /// `T(a,a')` are days with this action `a` and previous action `a'`.
    pub floor: f64,
}

impl UtilityStep {
    pub fn holds(&self) -> bool {
        self.gain >= self.floor - 1e-9 * (1.0 + self.floor.abs())
    }
}

pub fn utility_profile(
    transcript: &DecisionTranscript,
    task: &DecisionTask,
    eps: f64,
) -> Vec<UtilityStep> {
    let n = task.n_actions();
    let mut steps = Vec::new();
    for k in 2..=transcript.rounds {
        let mut gain = 0.0;
        let mut disagreements = 0;
        let mut sums = vec![vec![vec![0.0; task.d()]; n]; n];
        for t in 0..transcript.days() {
            let p = &transcript.predictions[t][k - 1];
            let y = &transcript.outcomes[t];
            let (a, b) = (transcript.actions[t][k - 1], transcript.actions[t][k - 2]);
            gain += task.utility(a, y) - task.utility(b, y);
            if task.utility(a, p) - task.utility(b, p) > eps {
                disagreements += 1;
            }
            add_residual(&mut sums[a][b], p, y);
        }
        let bias: f64 = sums.iter().flatten().map(|s| linf(s)).sum();
        steps.push(UtilityStep {
            k,
            gain,
            disagreements,
            floor: eps * disagreements as f64 - 2.0 * task.lipschitz() * bias,
        });
    }
    steps
}

/// Fraction of days on which rounds `k` and `k+1` ε-disagree: either
/// party's prediction values the two actions more than `eps` apart.
pub fn action_disagreement_fraction(
    transcript: &DecisionTranscript,
    task: &DecisionTask,
    k: usize,
    eps: f64,
) -> f64 {
    let days = transcript.days();
    let count = (0..days)
        .filter(|&t| {
            let (a, b) = (transcript.actions[t][k - 1], transcript.actions[t][k]);
            let (p, q) = (&transcript.predictions[t][k - 1], &transcript.predictions[t][k]);
            (task.utility(a, p) - task.utility(b, p)).abs() > eps
                || (task.utility(a, q) - task.utility(b, q)).abs() > eps
        })
        .count();
    count as f64 / days as f64
}

/// Per-party online predictor of the outcome vector, keyed by round and by
/// the previous round's action.
pub trait Forecaster {
    fn predict(&mut self, k: usize, prev: Option<usize>, x: &[f64]) -> Result<Vec<f64>>;
    fn update(&mut self, k: usize, prev: Option<usize>, x: &[f64], y: &[f64]) -> Result<()>;
}

/// Running mean of outcomes on each `(round, previous action)` subsequence,
/// starting from the all-½ vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineForecaster {
    d: usize,
    state: BTreeMap<(usize, Option<usize>), (Vec<f64>, u64)>,
}

impl BaselineForecaster {
    pub fn new(d: usize) -> Self {
        BaselineForecaster {
            d,
            state: BTreeMap::new(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &(usize, Option<usize>)> {
        self.state.keys()
    }
}

impl Forecaster for BaselineForecaster {
    fn predict(&mut self, k: usize, prev: Option<usize>, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self.state.get(&(k, prev)) {
            Some((sum, n)) => sum.iter().map(|s| s / *n as f64).collect(),
            None => vec![0.5; self.d],
        })
    }

    fn update(&mut self, k: usize, prev: Option<usize>, _x: &[f64], y: &[f64]) -> Result<()> {
        check_len("forecaster outcome", y.len(), self.d)?;
        let entry = self
            .state
            .entry((k, prev))
            .or_insert_with(|| (vec![0.0; y.len()], 0));
        for (s, v) in entry.0.iter_mut().zip(y) {
            *s += v;
        }
        entry.1 += 1;
        Ok(())
    }
}

fn clip_forecast(mut p: Vec<f64>, d: usize, t: usize, k: usize) -> Result<Vec<f64>> {
    check_len("forecast dimension", p.len(), d)?;
    if p.iter().any(|v| v.is_nan()) {
        return Err(invalid(format!("day {t}, round {k}: forecast is NaN")));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        log::warn!("day {t}, round {k}: forecast outside [0,1]^d clipped");
        for v in &mut p {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(p)
}

/// Runs `K` rounds per day. Each party sees only its own features and the
/// other party's previous action; forecasters learn after the outcome.
pub fn run_decision_protocol(
    dataset: &DecisionDataset,
    task: &DecisionTask,
    alice: &mut dyn Forecaster,
    bob: &mut dyn Forecaster,
    rounds: usize,
) -> Result<DecisionTranscript> {
    if rounds == 0 {
        return Err(invalid("K must be at least 1"));
    }
    check_len("dataset outcome dimension vs task", dataset.d(), task.d())?;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut actions = Vec::with_capacity(dataset.len());
    for (t, ex) in dataset.examples().iter().enumerate() {
        let mut preds = Vec::with_capacity(rounds);
        let mut acts: Vec<usize> = Vec::with_capacity(rounds);
        for k in 1..=rounds {
            let prev = if k == 1 { None } else { Some(acts[k - 2]) };
            let raw = match Side::of_round(k) {
                Side::Alice => alice.predict(k, prev, &ex.x_a),
                Side::Bob => bob.predict(k, prev, &ex.x_b),
            }
            .map_err(|e| Error::Protocol {
                day: t,
                round: k,
                source: Box::new(e),
            })?;
            let p = clip_forecast(raw, task.d(), t, k)?;
            acts.push(task.best_response(&p));
            preds.push(p);
        }
        for k in 1..=rounds {
            let prev = if k == 1 { None } else { Some(acts[k - 2]) };
            match Side::of_round(k) {
                Side::Alice => alice.update(k, prev, &ex.x_a, &ex.y),
                Side::Bob => bob.update(k, prev, &ex.x_b, &ex.y),
            }
            .map_err(|e| Error::Protocol {
                day: t,
                round: k,
                source: Box::new(e),
            })?;
        }
        predictions.push(preds);
        actions.push(acts);
    }
    Ok(DecisionTranscript {
        rounds,
        predictions,
        actions,
        outcomes: dataset.examples().iter().map(|e| e.y.clone()).collect(),
    })
}
