//! Weak learning for bounded linear classes on finite distributions.
//!
//! If the sum class `H_A + H_B` beats the best constant by γ, then scaling
//! the better-correlated block toward the mean beats it by γ²/(16C²).
//! This module performs that extraction exactly and builds the finite
//! constructions that show where aggregation breaks down.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::regression::{
    constrained_lsq, dot, joint_lsq, JointFit, JointModel, LinearClassSpec, LinearFit, LinearModel,
};
use crate::types::Side;

/// One support point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub xa: Vec<f64>,
    pub xb: Vec<f64>,
    pub y: f64,
    pub p: f64,
}

/// Affine map from the analysis label scale to `[0, 1]`: `unit = scale·y + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub scale: f64,
    pub offset: f64,
}

impl LabelMap {
    pub fn to_unit(&self, y: f64) -> f64 {
        self.scale * y + self.offset
    }
}

/// A distribution over finitely many `(x_A, x_B, y)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct FiniteDistribution {
    atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_map: Option<LabelMap>,
}

#[derive(Deserialize)]
struct RawDistribution {
    atoms: Vec<Atom>,
    #[serde(default)]
    label_map: Option<LabelMap>,
}

impl TryFrom<RawDistribution> for FiniteDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        let mut d = FiniteDistribution::new(raw.atoms)?;
        d.label_map = raw.label_map;
        Ok(d)
    }
}

impl FiniteDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("distribution needs at least one atom"));
        }
        let (da, db) = (atoms[0].xa.len(), atoms[0].xb.len());
        let mut total = 0.0;
        for (i, a) in atoms.iter().enumerate() {
            if !(a.p >= 0.0) || !a.y.is_finite() {
                return Err(invalid(format!("atom {i} has a bad probability or label")));
            }
            if a.xa.len() != da || a.xb.len() != db {
                return Err(invalid(format!("atom {i} has inconsistent dimensions")));
            }
            total += a.p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(FiniteDistribution {
            atoms,
            label_map: None,
        })
    }

    pub fn with_label_map(mut self, map: LabelMap) -> Self {
        self.label_map = Some(map);
        self
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn label_map(&self) -> Option<LabelMap> {
        self.label_map
    }

    pub fn dim_a(&self) -> usize {
        self.atoms[0].xa.len()
    }

    pub fn dim_b(&self) -> usize {
        self.atoms[0].xb.len()
    }

    /// E[f(atom)].
    pub fn expect(&self, f: impl Fn(&Atom) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.p * f(a)).sum()
    }

    pub fn mean_y(&self) -> f64 {
        self.expect(|a| a.y)
    }

    /// E[(μ − y)²], the error of the best constant.
    pub fn constant_error(&self) -> f64 {
        let mu = self.mean_y();
        self.expect(|a| (mu - a.y) * (mu - a.y))
    }

    fn columns(&self) -> (Vec<&[f64]>, Vec<&[f64]>, Vec<f64>, Vec<f64>) {
        (
            self.atoms.iter().map(|a| a.xa.as_slice()).collect(),
            self.atoms.iter().map(|a| a.xb.as_slice()).collect(),
            self.atoms.iter().map(|a| a.y).collect(),
            self.atoms.iter().map(|a| a.p).collect(),
        )
    }

    /// Best member of one side's class; `error` is the expected squared error.
    pub fn fit_side(&self, side: Side, spec: &LinearClassSpec) -> Result<LinearFit> {
        let (xa, xb, ys, ps) = self.columns();
        match side {
            Side::Alice => constrained_lsq(&xa, &ys, &ps, spec),
            Side::Bob => constrained_lsq(&xb, &ys, &ps, spec),
        }
    }

    /// Best member of the sum class.
    pub fn fit_joint(&self, spec_a: &LinearClassSpec, spec_b: &LinearClassSpec) -> Result<JointFit> {
        let (xa, xb, ys, ps) = self.columns();
        joint_lsq(&xa, &xb, &ys, &ps, spec_a, spec_b)
    }

    /// Improvement of the best in-class predictor for `side` over the best constant.
    pub fn side_gain(&self, side: Side, spec: &LinearClassSpec) -> Result<f64> {
        Ok(self.constant_error() - self.fit_side(side, spec)?.error)
    }

    pub fn joint_gain(&self, spec_a: &LinearClassSpec, spec_b: &LinearClassSpec) -> Result<f64> {
        Ok(self.constant_error() - self.fit_joint(spec_a, spec_b)?.error)
    }
}

/// The single-side predictor recovered from a joint one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLearnResult {
    pub side: Side,
    pub gamma: f64,
    pub alpha: f64,
    /// `α f + μ` on the chosen side's features.
    pub predictor: LinearModel,
    pub achieved_gain: f64,
    /// γ²/(16C²).
    pub required_gain: f64,
}

/// Scales the block of `h_j` that correlates with the centered label by at
/// least γ/4 and recenters it on the mean.
pub fn weak_learner_extract(
    dist: &FiniteDistribution,
    h_j: &JointModel,
    c: f64,
) -> Result<WeakLearnResult> {
    if !(c >= 0.5) {
        return Err(invalid(format!("norm bound {c} must be at least 1/2")));
    }
    if h_j.theta_a.len() != dist.dim_a() || h_j.theta_b.len() != dist.dim_b() {
        return Err(invalid("joint predictor dimensions do not match the distribution"));
    }
    let bound = dist
        .atoms()
        .iter()
        .map(|a| h_j.part_a(&a.xa).abs().max(h_j.part_b(&a.xb).abs()))
        .fold(0.0, f64::max);
    if bound > c * (1.0 + 1e-9) {
        return Err(invalid(format!(
            "joint predictor blocks reach {bound}, beyond the bound {c}"
        )));
    }

    let mu = dist.mean_y();
    let base = dist.constant_error();
    let gamma = base - dist.expect(|a| (h_j.eval(&a.xa, &a.xb) - a.y).powi(2));
    if !(gamma > 0.0) {
        return Err(Error::NoJointImprovement(gamma));
    }
    let corr_a = dist.expect(|a| h_j.part_a(&a.xa) * (a.y - mu));
    let corr_b = dist.expect(|a| h_j.part_b(&a.xb) * (a.y - mu));
    let side = if corr_a >= gamma / 4.0 || corr_a >= corr_b {
        Side::Alice
    } else {
        Side::Bob
    };
    let alpha = gamma / (4.0 * c * c);
    let coef: Vec<f64> = match side {
        Side::Alice => h_j.theta_a.iter().map(|v| alpha * v).collect(),
        Side::Bob => h_j.theta_b.iter().map(|v| alpha * v).collect(),
    };
    let predictor = LinearModel {
        coef,
        intercept: mu,
    };
    let err = dist.expect(|a| {
        let x = match side {
            Side::Alice => &a.xa,
            Side::Bob => &a.xb,
        };
        (predictor.eval(x) - a.y).powi(2)
    });
    Ok(WeakLearnResult {
        side,
        gamma,
        alpha,
        predictor,
        achieved_gain: base - err,
        required_gain: gamma * gamma / (16.0 * c * c),
    })
}

fn uniform_atoms(points: Vec<(Vec<f64>, Vec<f64>, f64)>) -> Result<FiniteDistribution> {
    let p = 1.0 / points.len() as f64;
    FiniteDistribution::new(
        points
            .into_iter()
            .map(|(xa, xb, y)| Atom { xa, xb, y, p })
            .collect(),
    )
}

const SIGNS: [f64; 2] = [-1.0, 1.0];

/// Four equally likely points over signs ξ_A, ξ_B:
/// `x_A = ξ_A/2`, `x_B = x_A + ξ_B/(2ρ)`, `y = ξ_B`.
/// Alice's features are independent of the label; Bob's carry it only
/// through a small component, so the sum class gains far more than Bob.
pub fn gen_counterexample_rho(rho: f64) -> Result<FiniteDistribution> {
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(invalid(format!("rho = {rho} must be at least 1")));
    }
    let mut pts = Vec::with_capacity(4);
    for xi_a in SIGNS {
        for xi_b in SIGNS {
            let xa = xi_a / 2.0;
            pts.push((vec![xa], vec![xa + xi_b / (2.0 * rho)], xi_b));
        }
    }
    Ok(uniform_atoms(pts)?.with_label_map(LabelMap {
        scale: 0.5,
        offset: 0.5,
    }))
}

/// Prediction rule of the swap-necessity construction.
pub fn swap_necessity_rule(xa: &[f64], _xb: &[f64]) -> f64 {
    xa[0] / 2.0
}

/// Independent uniform bits with `y = x_A·x_B`, and the rule `ŷ = x_A/2`.
/// The rule has no external regret to either side's class but has regret
/// to the sum class.
pub fn gen_swap_necessity() -> Result<(FiniteDistribution, fn(&[f64], &[f64]) -> f64)> {
    let mut pts = Vec::with_capacity(4);
    for a in [0.0, 1.0] {
        for b in [0.0, 1.0] {
            pts.push((vec![a], vec![b], a * b));
        }
    }
    Ok((uniform_atoms(pts)?, swap_necessity_rule))
}

/// External regrets of a fixed rule to each side's class and to the sum class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRegrets {
    pub rule_error: f64,
    pub regret_a: f64,
    pub regret_b: f64,
    pub regret_joint: f64,
    pub joint_model: JointModel,
}

pub fn rule_regrets(
    dist: &FiniteDistribution,
    rule: impl Fn(&[f64], &[f64]) -> f64,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<RuleRegrets> {
    let rule_error = dist.expect(|a| (rule(&a.xa, &a.xb) - a.y).powi(2));
    let joint = dist.fit_joint(spec_a, spec_b)?;
    Ok(RuleRegrets {
        rule_error,
        regret_a: rule_error - dist.fit_side(Side::Alice, spec_a)?.error,
        regret_b: rule_error - dist.fit_side(Side::Bob, spec_b)?.error,
        regret_joint: rule_error - joint.error,
        joint_model: joint.model,
    })
}

/// (i) uniform bits with `y = x_A ⊕ x_B`; (ii) uniform signs with `y = x_A·x_B`.
pub fn gen_xor_counterexamples() -> Result<(FiniteDistribution, FiniteDistribution)> {
    let mut bits = Vec::with_capacity(4);
    let mut signs = Vec::with_capacity(4);
    for a in [0.0f64, 1.0] {
        for b in [0.0f64, 1.0] {
            bits.push((vec![a], vec![b], if a != b { 1.0 } else { 0.0 }));
        }
    }
    for a in SIGNS {
        for b in SIGNS {
            signs.push((vec![a], vec![b], a * b));
        }
    }
    let signs = uniform_atoms(signs)?.with_label_map(LabelMap {
        scale: 0.5,
        offset: 0.5,
    });
    Ok((uniform_atoms(bits)?, signs))
}

/// Both sides of the information-substitutes inequality
/// `min_A − min_J ≤ min_const − min_B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstitutesCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn information_substitutes_check(
    dist: &FiniteDistribution,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<SubstitutesCheck> {
    let err_a = dist.fit_side(Side::Alice, spec_a)?.error;
    let err_b = dist.fit_side(Side::Bob, spec_b)?.error;
    let err_j = dist.fit_joint(spec_a, spec_b)?.error;
    let err_c = dist.constant_error();
    let lhs = err_a - err_j;
    let rhs = err_c - err_b;
    Ok(SubstitutesCheck {
        holds: lhs <= rhs + 1e-9,
        lhs,
        rhs,
    })
}

/// Uniform draw from the unit ball in `d` dimensions.
pub fn sample_unit_ball<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    if d == 0 {
        return Vec::new();
    }
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = dot(&v, &v).sqrt().max(f64::MIN_POSITIVE);
    let r = rng.random::<f64>().powf(1.0 / d as f64);
    v.into_iter().map(|x| x * r / n).collect()
}

/// Random distribution with features in the unit ball and labels in `[0, 1]`
/// that mix a linear signal from both sides with noise.
pub fn random_distribution<R: Rng + ?Sized>(
    rng: &mut R,
    atoms: usize,
    d_a: usize,
    d_b: usize,
) -> Result<FiniteDistribution> {
    let ta = sample_unit_ball(rng, d_a);
    let tb = sample_unit_ball(rng, d_b);
    let mut weights: Vec<f64> = (0..atoms).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    // Renormalizing can leave the sum a few ulps off; fold it into the last atom.
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    if let Some(last) = weights.last_mut() {
        *last = (*last + drift).max(0.0);
    }
    let list = weights
        .into_iter()
        .map(|p| {
            let xa = sample_unit_ball(rng, d_a);
            let xb = sample_unit_ball(rng, d_b);
            let noise: f64 = rng.random_range(-0.25..0.25);
            let y = (0.5 + 0.5 * dot(&ta, &xa) + 0.5 * dot(&tb, &xb) + noise).clamp(0.0, 1.0);
            Atom { xa, xb, y, p }
        })
        .collect();
    FiniteDistribution::new(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: f64) -> LinearClassSpec {
        LinearClassSpec::new(1, c, true).unwrap()
    }

    /// Expectation over four equally likely sign pairs, written out by hand.
    fn four(f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for a in SIGNS {
            for b in SIGNS {
                s += f(a, b) / 4.0;
            }
        }
        s
    }

    #[test]
    fn extraction_on_a_fully_informative_side() {
        let mut pts = Vec::new();
        for xi in SIGNS {
            for noise in [-0.3, 0.3] {
                pts.push((vec![xi], vec![noise], (xi + 1.0) / 2.0));
            }
        }
        let dist = uniform_atoms(pts).unwrap();
        let h = JointModel {
            theta_a: vec![0.5],
            theta_b: vec![0.0],
            intercept: 0.5,
        };
        let r = weak_learner_extract(&dist, &h, 1.0).unwrap();
        assert_eq!(r.side, Side::Alice);
        assert!((r.gamma - 0.25).abs() < 1e-15);
        assert!((r.alpha - 1.0 / 16.0).abs() < 1e-15);
        // Gain 2α·E[f ȳ] − α²·E[f²] with E[f ȳ] = E[f²] = 1/4.
        let alpha = 1.0 / 16.0;
        let oracle = 2.0 * alpha * 0.25 - alpha * alpha * 0.25;
        assert!((r.achieved_gain - oracle).abs() < 1e-15);
        assert!((r.achieved_gain - 31.0 / 1024.0).abs() < 1e-15);
        assert!((r.required_gain - 0.00390625).abs() < 1e-15);
        assert!(r.achieved_gain >= r.required_gain);
    }

    #[test]
    fn symmetric_correlations_pick_alice() {
        let mut pts = Vec::new();
        for a in SIGNS {
            for b in SIGNS {
                pts.push((vec![a / 2.0], vec![b / 2.0], (a + b + 2.0) / 4.0));
            }
        }
        let dist = uniform_atoms(pts).unwrap();
        let h = JointModel {
            theta_a: vec![0.5],
            theta_b: vec![0.5],
            intercept: 0.5,
        };
        assert_eq!(weak_learner_extract(&dist, &h, 1.0).unwrap().side, Side::Alice);
    }

    #[test]
    fn extraction_on_rho_one_picks_bob() {
        let dist = gen_counterexample_rho(1.0).unwrap();
        let h = JointModel {
            theta_a: vec![-1.0],
            theta_b: vec![1.0],
            intercept: 0.0,
        };
        let r = weak_learner_extract(&dist, &h, 1.0).unwrap();
        assert!((r.gamma - 0.75).abs() < 1e-15);
        assert_eq!(r.side, Side::Bob);
        assert!(r.achieved_gain >= 0.03515625);
    }

    #[test]
    fn extraction_requires_improvement_and_bounded_blocks() {
        let dist = gen_counterexample_rho(2.0).unwrap();
        let zero = JointModel {
            theta_a: vec![0.0],
            theta_b: vec![0.0],
            intercept: 0.0,
        };
        assert!(matches!(
            weak_learner_extract(&dist, &zero, 1.0),
            Err(Error::NoJointImprovement(_))
        ));
        let big = JointModel {
            theta_a: vec![-4.0],
            theta_b: vec![4.0],
            intercept: 0.0,
        };
        assert!(weak_learner_extract(&dist, &big, 1.0).is_err());
    }

    #[test]
    fn rho_gains_match_enumeration() {
        for rho in [1.0, 2.0, 4.0, 7.5] {
            let dist = gen_counterexample_rho(rho).unwrap();
            // Independent oracle: best slope w for y on x_B is
            // E[x_B y]/E[x_B²] when it fits inside the bound.
            let exy = four(|a, b| (a / 2.0 + b / (2.0 * rho)) * b);
            let exx = four(|a, b| (a / 2.0 + b / (2.0 * rho)).powi(2));
            let w = exy / exx;
            let oracle_err = four(|a, b| (w * (a / 2.0 + b / (2.0 * rho)) - b).powi(2));
            let fit = dist.fit_side(Side::Bob, &spec(1.0)).unwrap();
            assert!((fit.model.coef[0] - w).abs() < 1e-12);
            assert!((fit.error - oracle_err).abs() < 1e-12);
            assert!((1.0 - oracle_err - 1.0 / (rho * rho + 1.0)).abs() < 1e-12);
            assert!(dist.side_gain(Side::Alice, &spec(1.0)).unwrap().abs() < 1e-12);
        }
        let fit = gen_counterexample_rho(2.0)
            .unwrap()
            .fit_side(Side::Bob, &spec(1.0))
            .unwrap();
        assert!((fit.model.coef[0] - 0.8).abs() < 1e-12);
        assert!((fit.error - 0.8).abs() < 1e-12);
        assert!(gen_counterexample_rho(0.5).is_err());
    }

    #[test]
    fn rho_joint_gain_matches_enumeration() {
        for rho in [1.0, 2.0, 4.0] {
            let dist = gen_counterexample_rho(rho).unwrap();
            // Scan a fine grid of the two block weights inside the unit ball.
            let mut best = f64::INFINITY;
            let n = 200;
            for i in -n..=n {
                for j in -n..=n {
                    let (wa, wb) = (i as f64 / n as f64, j as f64 / n as f64);
                    let e = four(|a, b| {
                        let xa = a / 2.0;
                        (wa * xa + wb * (xa + b / (2.0 * rho)) - b).powi(2)
                    });
                    best = best.min(e);
                }
            }
            let fitted = dist.fit_joint(&spec(1.0), &spec(1.0)).unwrap();
            assert!(fitted.error <= best + 1e-12);
            assert!((fitted.error - best).abs() < 1e-9);
        }
    }

    #[test]
    fn swap_necessity_values() {
        let (dist, rule) = gen_swap_necessity().unwrap();
        let r = rule_regrets(&dist, rule, &spec(1.0), &spec(1.0)).unwrap();
        assert!((r.rule_error - 0.125).abs() < 1e-15);
        assert!(r.regret_a.abs() < 1e-12);
        assert!(r.regret_b.abs() < 1e-12);
        assert!((r.regret_joint - 0.0625).abs() < 1e-12);
        assert!((r.joint_model.theta_a[0] - 0.5).abs() < 1e-12);
        assert!((r.joint_model.intercept + 0.25).abs() < 1e-12);
    }

    #[test]
    fn xor_constructions() {
        let (bits, signs) = gen_xor_counterexamples().unwrap();
        for d in [&bits, &signs] {
            assert!(d.side_gain(Side::Alice, &spec(1.0)).unwrap().abs() < 1e-12);
            assert!(d.side_gain(Side::Bob, &spec(1.0)).unwrap().abs() < 1e-12);
        }
        let xor_err = bits.expect(|a| ((a.xa[0] - a.xb[0]).abs() - a.y).powi(2));
        assert_eq!(xor_err, 0.0);
        let prod_err = signs.expect(|a| (a.xa[0] * a.xb[0] - a.y).powi(2));
        assert_eq!(prod_err, 0.0);
        assert_eq!(bits.mean_y(), 0.5);
        assert_eq!(signs.expect(|a| if a.y == 1.0 { 1.0 } else { 0.0 }), 0.5);
    }

    #[test]
    fn substitutes_examples() {
        let constant = uniform_atoms(vec![
            (vec![0.1], vec![0.2], 0.4),
            (vec![-0.3], vec![0.5], 0.4),
        ])
        .unwrap();
        let c = information_substitutes_check(&constant, &spec(1.0), &spec(1.0)).unwrap();
        assert!(c.holds && c.lhs.abs() < 1e-12 && c.rhs.abs() < 1e-12);

        let rho1 = gen_counterexample_rho(1.0).unwrap();
        let c = information_substitutes_check(&rho1, &spec(2.0), &spec(2.0)).unwrap();
        assert!(!c.holds);
        assert!((c.lhs - 1.0).abs() < 1e-12);
        assert!((c.rhs - 0.5).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let d = gen_counterexample_rho(2.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.starts_with("{\"atoms\":[{\"xa\":"));
        assert_eq!(serde_json::from_str::<FiniteDistribution>(&s).unwrap(), d);
        let bad = r#"{"atoms":[{"xa":[0.0],"xb":[0.0],"y":0.0,"p":0.4}]}"#;
        assert!(serde_json::from_str::<FiniteDistribution>(bad).is_err());
    }
}
