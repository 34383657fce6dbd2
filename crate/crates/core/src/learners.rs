//! Online learner stack: forward ridge regression (Vovk-Azoury-Warmuth) as
//! the external-regret base learner, a bucketed swap-regret wrapper over it,
//! and the conversation wrapper that keeps one swap learner per
//! (round, counterparty bucket).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{clip01, round_to_grid};
use crate::types::{BucketingSpec, Side};

pub use crate::regression::LinearClassSpec;

/// A learner that predicts a real value and is then told the outcome.
pub trait OnlineRegressor {
    fn predict(&self, x: &[f64]) -> Result<f64>;
    fn update(&mut self, x: &[f64], y: f64) -> Result<()>;
}

/// Forward ridge regression state.
///
/// With `intercept` set, features are augmented with a trailing 1, so the
/// accumulators have dimension `dim + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct VawState {
    dim: usize,
    intercept: bool,
    reg: f64,
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    steps: usize,
}

impl VawState {
    pub fn new(dim: usize, reg: f64, intercept: bool) -> Result<Self> {
        if dim == 0 && !intercept {
            return Err(invalid("VAW needs at least one feature"));
        }
        if !(reg > 0.0) || !reg.is_finite() {
            return Err(invalid(format!("VAW regularizer {reg} must be positive")));
        }
        let p = dim + usize::from(intercept);
        Ok(VawState {
            dim,
            intercept,
            reg,
            gram: DMatrix::identity(p, p) * reg,
            moment: DVector::zeros(p),
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn regularizer(&self) -> f64 {
        self.reg
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let p = self.dim + usize::from(self.intercept);
        Ok(DVector::from_iterator(
            p,
            x.iter().copied().chain(self.intercept.then_some(1.0)),
        ))
    }

    /// Unclipped forward prediction `xᵀ(G + xxᵀ)⁻¹ b`.
    pub fn raw_predict(&self, x: &[f64]) -> Result<f64> {
        let phi = self.features(x)?;
        if self.steps == 0 {
            return Ok(0.0);
        }
        let a = &self.gram + &phi * phi.transpose();
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Internal("VAW gram lost positive definiteness".into()))?;
        Ok(phi.dot(&chol.solve(&self.moment)))
    }

    /// Forward prediction clipped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(clip01(self.raw_predict(x)?))
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&y) {
            return Err(invalid(format!("label {y} outside [0, 1]")));
        }
        let phi = self.features(x)?;
        self.gram += &phi * phi.transpose();
        self.moment += &phi * y;
        self.steps += 1;
        Ok(())
    }
}

impl OnlineRegressor for VawState {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        VawState::predict(self, x)
    }

    fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        VawState::update(self, x, y)
    }
}

/// Distance from `p` to the closure of bucket `i` (0-based) of width `1/m`.
fn bucket_distance(p: f64, i: usize, m: u32) -> f64 {
    let lo = i as f64 / m as f64;
    let hi = (i + 1) as f64 / m as f64;
    (lo - p).max(p - hi).max(0.0)
}

/// Swap-regret reduction: one expert per bucket of the wrapper's own
/// prediction. Each round the expert whose rounded proposal is closest to
/// its own bucket speaks, and only that expert learns from the outcome.
#[derive(Clone, Debug)]
pub struct SwapWrapper<L> {
    m: u32,
    experts: Vec<L>,
    last_active: Option<usize>,
}

impl<L: OnlineRegressor + Clone> SwapWrapper<L> {
    /// `m` fresh copies of `base`.
    pub fn new(m: u32, base: L) -> Result<Self> {
        if m == 0 {
            return Err(invalid("swap wrapper needs m >= 1"));
        }
        Ok(SwapWrapper {
            m,
            experts: vec![base; m as usize],
            last_active: None,
        })
    }
}

impl<L: OnlineRegressor> SwapWrapper<L> {
    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn experts(&self) -> &[L] {
        &self.experts
    }

    pub fn last_active(&self) -> Option<usize> {
        self.last_active
    }

    /// Rounded proposals of every expert, in index order.
    pub fn proposals(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.experts
            .iter()
            .map(|e| Ok(round_to_grid(e.predict(x)?, self.m)))
            .collect()
    }

    pub fn predict(&mut self, x: &[f64]) -> Result<f64> {
        let props = self.proposals(x)?;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &p) in props.iter().enumerate() {
            let dist = bucket_distance(p, i, self.m);
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        self.last_active = Some(best);
        Ok(props[best])
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        let i = self.last_active.take().ok_or(Error::UpdateWithoutPredict)?;
        self.experts[i].update(x, y)
    }
}

/// Per-round, per-bucket swap learners for one side of the conversation.
#[derive(Clone, Debug)]
pub struct ConversationWrapper<L> {
    side: Side,
    bucketing: BucketingSpec,
    prototype: SwapWrapper<L>,
    first: SwapWrapper<L>,
    instances: BTreeMap<(usize, usize), SwapWrapper<L>>,
}

impl<L: OnlineRegressor + Clone> ConversationWrapper<L> {
    pub fn new(side: Side, bucketing: BucketingSpec, prototype: SwapWrapper<L>) -> Self {
        ConversationWrapper {
            side,
            bucketing,
            first: prototype.clone(),
            prototype,
            instances: BTreeMap::new(),
        }
    }

    fn route(&mut self, k: usize, prev: Option<f64>) -> Result<&mut SwapWrapper<L>> {
        if !self.side.owns_round(k) {
            return Err(invalid(format!("round {k} does not belong to {}", self.side)));
        }
        if k == 1 {
            return Ok(&mut self.first);
        }
        let p = prev.ok_or_else(|| invalid(format!("round {k} needs the previous message")))?;
        let i = self.bucketing.bucket(p);
        let proto = &self.prototype;
        Ok(self.instances.entry((k, i)).or_insert_with(|| proto.clone()))
    }

    pub fn predict(&mut self, k: usize, prev: Option<f64>, x: &[f64]) -> Result<f64> {
        self.route(k, prev)?.predict(x)
    }

    pub fn update(&mut self, k: usize, prev: Option<f64>, x: &[f64], y: f64) -> Result<()> {
        self.route(k, prev)?.update(x, y)
    }
}

impl<L> ConversationWrapper<L> {
    pub fn side(&self) -> Side {
        self.side
    }

    /// The first-round instance.
    pub fn first_instance(&self) -> &SwapWrapper<L> {
        &self.first
    }

    /// Instances for rounds k ≥ 2, keyed by (k, 1-based bucket).
    pub fn instances(&self) -> &BTreeMap<(usize, usize), SwapWrapper<L>> {
        &self.instances
    }
}

/// A party in the online protocol. `prev` is the counterparty's message in
/// the previous round, absent on round 1.
pub trait Collaborator {
    fn predict(&mut self, k: usize, prev: Option<f64>, x: &[f64]) -> Result<f64>;
    fn update(&mut self, k: usize, prev: Option<f64>, x: &[f64], y: f64) -> Result<()>;
}

impl<L: OnlineRegressor + Clone> Collaborator for ConversationWrapper<L> {
    fn predict(&mut self, k: usize, prev: Option<f64>, x: &[f64]) -> Result<f64> {
        ConversationWrapper::predict(self, k, prev, x)
    }

    fn update(&mut self, k: usize, prev: Option<f64>, x: &[f64], y: f64) -> Result<()> {
        ConversationWrapper::update(self, k, prev, x, y)
    }
}

/// Ignores the conversation and uses one learner for every round.
#[derive(Clone, Debug)]
pub struct Uncoupled<L>(pub SwapWrapper<L>);

impl<L: OnlineRegressor> Collaborator for Uncoupled<L> {
    fn predict(&mut self, _k: usize, _prev: Option<f64>, x: &[f64]) -> Result<f64> {
        self.0.predict(x)
    }

    fn update(&mut self, _k: usize, _prev: Option<f64>, x: &[f64], y: f64) -> Result<()> {
        self.0.update(x, y)
    }
}

/// Always says the same value; a stub for structural tests.
#[derive(Clone, Copy, Debug)]
pub struct ConstantLearner(pub f64);

impl Collaborator for ConstantLearner {
    fn predict(&mut self, _k: usize, _prev: Option<f64>, _x: &[f64]) -> Result<f64> {
        Ok(self.0)
    }

    fn update(&mut self, _k: usize, _prev: Option<f64>, _x: &[f64], _y: f64) -> Result<()> {
        Ok(())
    }
}

/// Learner configuration block: `{kind, d, C, a, m, g}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub d: usize,
    #[serde(rename = "C", default = "default_c")]
    pub c: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Vaw,
    Swap,
    Conversation,
}

fn default_c() -> f64 {
    1.0
}
fn default_a() -> f64 {
    1.0
}
fn default_m() -> u32 {
    20
}
fn default_g() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl LearnerConfig {
    pub fn conversation(d: usize, m: u32, g: f64) -> Self {
        LearnerConfig {
            kind: LearnerKind::Conversation,
            d,
            c: 1.0,
            a: 1.0,
            m,
            g,
            intercept: true,
        }
    }

    pub fn class_spec(&self) -> Result<LinearClassSpec> {
        LinearClassSpec::new(self.d, self.c, self.intercept)
    }

    pub fn bucketing(&self) -> Result<BucketingSpec> {
        BucketingSpec::new(self.g, self.m)
    }

    /// Builds the learner for `side`. `vaw` and `swap` ignore the conversation
    /// (a single learner for all rounds); `vaw` uses one expert.
    pub fn build(&self, side: Side) -> Result<Box<dyn Collaborator + Send>> {
        let base = VawState::new(self.d, self.a, self.intercept)?;
        Ok(match self.kind {
            LearnerKind::Vaw => Box::new(Uncoupled(SwapWrapper::new(1, base)?)),
            LearnerKind::Swap => Box::new(Uncoupled(SwapWrapper::new(self.m, base)?)),
            LearnerKind::Conversation => Box::new(ConversationWrapper::new(
                side,
                self.bucketing()?,
                SwapWrapper::new(self.m, base)?,
            )),
        })
    }
}
