//! Exact simulation of two Bayesians with a common finite prior who take
//! turns announcing rounded posterior means.
//!
//! Every message is a deterministic function of the realized signal pair, so
//! the whole exchange is computed once for each support pair; posteriors are
//! then conditional means over the pairs whose simulated messages match.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{grid_index, grid_value};
use crate::regression::{joint_lsq, LinearClassSpec};
use crate::types::Side;
use crate::weaklearn::FiniteDistribution;

const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorAtom {
    pub a: String,
    pub b: String,
    pub y: f64,
    pub p: f64,
}

/// Numeric features for each signal label, used only by linear benchmarks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalEncoding {
    pub a: BTreeMap<String, Vec<f64>>,
    pub b: BTreeMap<String, Vec<f64>>,
}

/// A finite joint distribution over `(signal_a, signal_b, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct PriorTable {
    atoms: Vec<PriorAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<SignalEncoding>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    atoms: Vec<PriorAtom>,
    #[serde(default)]
    encoding: Option<SignalEncoding>,
}

impl TryFrom<RawPrior> for PriorTable {
    type Error = Error;
    fn try_from(raw: RawPrior) -> Result<Self> {
        PriorTable::new(raw.atoms, raw.encoding)
    }
}

impl PriorTable {
    pub fn new(atoms: Vec<PriorAtom>, encoding: Option<SignalEncoding>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("prior needs at least one atom"));
        }
        let mut total = 0.0;
        for (i, at) in atoms.iter().enumerate() {
            if !(at.p >= 0.0) || !(0.0..=1.0).contains(&at.y) {
                return Err(invalid(format!("atom {i}: need p ≥ 0 and y in [0,1]")));
            }
            total += at.p;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("prior probabilities sum to {total}, not 1")));
        }
        if let Some(enc) = &encoding {
            for (which, map, label) in [
                ("a", &enc.a, atoms.iter().map(|x| &x.a).collect::<Vec<_>>()),
                ("b", &enc.b, atoms.iter().map(|x| &x.b).collect()),
            ] {
                let dim = map.values().next().map(Vec::len);
                if map.values().any(|v| Some(v.len()) != dim) {
                    return Err(invalid(format!("encoding {which} has mixed dimensions")));
                }
                if let Some(missing) = label.iter().find(|l| !map.contains_key(l.as_str())) {
                    return Err(invalid(format!("encoding {which} lacks signal {missing}")));
                }
            }
        }
        Ok(PriorTable { atoms, encoding })
    }

    pub fn atoms(&self) -> &[PriorAtom] {
        &self.atoms
    }

    pub fn encoding(&self) -> Option<&SignalEncoding> {
        self.encoding.as_ref()
    }

    /// Independent uniform bits with `y = a ⊕ b`; bits are encoded as ±1.
    pub fn xor() -> Self {
        Self::bits(|a, b| if a != b { 1.0 } else { 0.0 })
    }

    /// Independent uniform bits with `y = (a + b)/2`; bits are encoded as ±1.
    pub fn additive() -> Self {
        Self::bits(|a, b| (a + b) as f64 / 2.0)
    }

    fn bits(y: impl Fn(u8, u8) -> f64) -> Self {
        let mut atoms = Vec::new();
        for a in 0..2u8 {
            for b in 0..2u8 {
                atoms.push(PriorAtom {
                    a: a.to_string(),
                    b: b.to_string(),
                    y: y(a, b),
                    p: 0.25,
                });
            }
        }
        let enc: BTreeMap<String, Vec<f64>> =
            [("0".to_string(), vec![-1.0]), ("1".to_string(), vec![1.0])].into();
        PriorTable::new(
            atoms,
            Some(SignalEncoding {
                a: enc.clone(),
                b: enc,
            }),
        )
        .expect("bit priors are valid")
    }

    /// Treats each feature vector as a signal label, mapping labels into
    /// `[0,1]` with the distribution's label map when it has one.
    pub fn from_distribution(dist: &FiniteDistribution) -> Result<Self> {
        let map = dist.label_map();
        let mut enc = SignalEncoding::default();
        let mut atoms = Vec::with_capacity(dist.atoms().len());
        for at in dist.atoms() {
            let (a, b) = (format!("{:?}", at.xa), format!("{:?}", at.xb));
            enc.a.insert(a.clone(), at.xa.clone());
            enc.b.insert(b.clone(), at.xb.clone());
            let y = map.map_or(at.y, |m| m.to_unit(at.y));
            atoms.push(PriorAtom { a, b, y, p: at.p });
        }
        PriorTable::new(atoms, Some(enc))
    }

    /// `n_a × n_b` signal pairs with `n_y` labels each, weights drawn from
    /// an exponential so the prior is uniform on the simplex.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_a: usize, n_b: usize, n_y: usize) -> Self {
        let mut atoms = Vec::with_capacity(n_a * n_b * n_y);
        for a in 0..n_a {
            for b in 0..n_b {
                for _ in 0..n_y {
                    atoms.push(PriorAtom {
                        a: format!("a{a}"),
                        b: format!("b{b}"),
                        y: rng.random::<f64>(),
                        p: Exp1.sample(rng),
                    });
                }
            }
        }
        let total: f64 = atoms.iter().map(|x| x.p).sum();
        for at in &mut atoms {
            at.p /= total;
        }
        let n = atoms.len();
        let head: f64 = atoms[..n - 1].iter().map(|x| x.p).sum();
        atoms[n - 1].p = (1.0 - head).max(0.0);
        PriorTable::new(atoms, None).expect("random prior is valid")
    }
}

/// Rounded messages exchanged so far, as indices on the `1/m` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageHistory {
    pub m: u32,
    pub messages: Vec<u32>,
}

impl MessageHistory {
    /// Accepts values that lie on the grid up to 1e-9.
    pub fn from_values(m: u32, values: &[f64]) -> Result<Self> {
        let mut messages = Vec::with_capacity(values.len());
        for &v in values {
            let k = grid_index(v, m);
            if (grid_value(k, m) - v).abs() > 1e-9 {
                return Err(invalid(format!("message {v} is not on the 1/{m} grid")));
            }
            messages.push(k);
        }
        Ok(MessageHistory { m, messages })
    }
}

/// Support pair `(a, b)` with its mass and label moments.
#[derive(Clone, Debug)]
struct Pair {
    a: usize,
    b: usize,
    mass: f64,
    s1: f64,
    s2: f64,
}

struct Simulation {
    a_labels: Vec<String>,
    b_labels: Vec<String>,
    pairs: Vec<Pair>,
    /// `posteriors[pair][k-1]`
    posteriors: Vec<Vec<f64>>,
    messages: Vec<Vec<u32>>,
}

fn support(prior: &PriorTable) -> (Vec<String>, Vec<String>, Vec<Pair>) {
    let mut a_idx: BTreeMap<&str, usize> = BTreeMap::new();
    let mut b_idx: BTreeMap<&str, usize> = BTreeMap::new();
    for at in prior.atoms() {
        a_idx.entry(&at.a).or_insert(0);
        b_idx.entry(&at.b).or_insert(0);
    }
    for (i, v) in a_idx.values_mut().enumerate() {
        *v = i;
    }
    for (i, v) in b_idx.values_mut().enumerate() {
        *v = i;
    }
    let mut pairs: BTreeMap<(usize, usize), Pair> = BTreeMap::new();
    for at in prior.atoms().iter().filter(|x| x.p > 0.0) {
        let key = (a_idx[at.a.as_str()], b_idx[at.b.as_str()]);
        let e = pairs.entry(key).or_insert(Pair {
            a: key.0,
            b: key.1,
            mass: 0.0,
            s1: 0.0,
            s2: 0.0,
        });
        e.mass += at.p;
        e.s1 += at.p * at.y;
        e.s2 += at.p * at.y * at.y;
    }
    (
        a_idx.keys().map(|s| s.to_string()).collect(),
        b_idx.keys().map(|s| s.to_string()).collect(),
        pairs.into_values().collect(),
    )
}

fn own(pair: &Pair, side: Side) -> usize {
    match side {
        Side::Alice => pair.a,
        Side::Bob => pair.b,
    }
}

fn simulate(prior: &PriorTable, rounds: usize, m: u32) -> Simulation {
    let (a_labels, b_labels, pairs) = support(prior);
    let mut posteriors = vec![Vec::with_capacity(rounds); pairs.len()];
    let mut messages: Vec<Vec<u32>> = vec![Vec::with_capacity(rounds); pairs.len()];
    for k in 1..=rounds {
        let side = Side::of_round(k);
        let mut groups: HashMap<(usize, &[u32]), (f64, f64)> = HashMap::new();
        for (pair, msgs) in pairs.iter().zip(&messages) {
            let g = groups.entry((own(pair, side), msgs.as_slice())).or_insert((0.0, 0.0));
            g.0 += pair.mass;
            g.1 += pair.s1;
        }
        let post: Vec<f64> = pairs
            .iter()
            .zip(&messages)
            .map(|(pair, msgs)| {
                let (mass, s1) = groups[&(own(pair, side), msgs.as_slice())];
                (s1 / mass).clamp(0.0, 1.0)
            })
            .collect();
        for (i, p) in post.into_iter().enumerate() {
            posteriors[i].push(p);
            messages[i].push(grid_index(p, m));
        }
    }
    Simulation {
        a_labels,
        b_labels,
        pairs,
        posteriors,
        messages,
    }
}

/// `E[y | own signal, every message in history]`, where the conditioning
/// event is the set of support pairs whose simulated exchange reproduces
/// `history`.
pub fn posterior_mean(
    prior: &PriorTable,
    side: Side,
    signal: &str,
    history: &MessageHistory,
) -> Result<f64> {
    let sim = simulate(prior, history.messages.len(), history.m);
    let labels = match side {
        Side::Alice => &sim.a_labels,
        Side::Bob => &sim.b_labels,
    };
    let idx = labels
        .iter()
        .position(|l| l == signal)
        .ok_or_else(|| Error::InconsistentHistory(format!("unknown {side} signal {signal}")))?;
    let (mut mass, mut s1) = (0.0, 0.0);
    for (pair, msgs) in sim.pairs.iter().zip(&sim.messages) {
        if own(pair, side) == idx && *msgs == history.messages {
            mass += pair.mass;
            s1 += pair.s1;
        }
    }
    if mass <= 0.0 {
        return Err(Error::InconsistentHistory(format!(
            "no support point with {side} signal {signal} produces these messages"
        )));
    }
    Ok(s1 / mass)
}

/// The exchange for one signal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrace {
    pub a: String,
    pub b: String,
    pub p: f64,
    pub posteriors: Vec<f64>,
    pub messages: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesRun {
    pub rounds: usize,
    pub m: u32,
    pub traces: Vec<PairTrace>,
    /// `E[(ŷ^k − y)²]` for each round, unrounded posterior.
    pub expected_error: Vec<f64>,
    /// `E[(ȳ^k − y)²]` for each round, announced message.
    pub expected_error_rounded: Vec<f64>,
    /// `P[ȳ^k ≠ ȳ^{k−1}]` for `k = 2..=K`.
    pub change_mass: Vec<f64>,
    /// First round whose message equals the previous one on every pair.
    pub agreement_round: Option<usize>,
}

fn sq_err(pair: &Pair, c: f64) -> f64 {
    // Σ p (c − y)² over the pair's atoms.
    (pair.mass * c * c - 2.0 * c * pair.s1 + pair.s2).max(0.0)
}

pub fn run_bayes_protocol(prior: &PriorTable, rounds: usize, m: u32) -> Result<BayesRun> {
    if rounds == 0 || m == 0 {
        return Err(invalid("need K ≥ 1 and m ≥ 1"));
    }
    let sim = simulate(prior, rounds, m);
    let mut expected_error = vec![0.0; rounds];
    let mut expected_error_rounded = vec![0.0; rounds];
    let mut change_mass = vec![0.0; rounds.saturating_sub(1)];
    for (i, pair) in sim.pairs.iter().enumerate() {
        for k in 0..rounds {
            expected_error[k] += sq_err(pair, sim.posteriors[i][k]);
            expected_error_rounded[k] += sq_err(pair, grid_value(sim.messages[i][k], m));
            if k > 0 && sim.messages[i][k] != sim.messages[i][k - 1] {
                change_mass[k - 1] += pair.mass;
            }
        }
    }
    let agreement_round = (2..=rounds)
        .find(|&k| sim.messages.iter().all(|msgs| msgs[k - 1] == msgs[k - 2]));
    let traces = sim
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| PairTrace {
            a: sim.a_labels[pair.a].clone(),
            b: sim.b_labels[pair.b].clone(),
            p: pair.mass,
            posteriors: sim.posteriors[i].clone(),
            messages: sim.messages[i].iter().map(|&k| grid_value(k, m)).collect(),
        })
        .collect();
    Ok(BayesRun {
        rounds,
        m,
        traces,
        expected_error,
        expected_error_rounded,
        change_mass,
        agreement_round,
    })
}

/// `min_{h ∈ H_A + H_B} E[(h − y)²]` over the prior's numeric encoding.
pub fn joint_benchmark(
    prior: &PriorTable,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<f64> {
    let enc = prior
        .encoding()
        .ok_or_else(|| invalid("linear benchmark needs a signal encoding"))?;
    let xa: Vec<&[f64]> = prior.atoms().iter().map(|x| enc.a[&x.a].as_slice()).collect();
    let xb: Vec<&[f64]> = prior.atoms().iter().map(|x| enc.b[&x.b].as_slice()).collect();
    let ys: Vec<f64> = prior.atoms().iter().map(|x| x.y).collect();
    let ps: Vec<f64> = prior.atoms().iter().map(|x| x.p).collect();
    Ok(joint_lsq(&xa, &xb, &ys, &ps, spec_a, spec_b)?.error)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneShotEntry {
    pub rounds: usize,
    pub error: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneShotReport {
    pub benchmark: f64,
    pub entries: Vec<OneShotEntry>,
    /// Whether the gap never increases along `entries`.
    pub non_increasing: bool,
}

/// Final-round expected error minus the joint linear benchmark, for each
/// conversation length in `rounds`.
pub fn one_shot_report(
    prior: &PriorTable,
    rounds: &[usize],
    m: u32,
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<OneShotReport> {
    let benchmark = joint_benchmark(prior, spec_a, spec_b)?;
    let mut entries = Vec::with_capacity(rounds.len());
    for &k in rounds {
        let run = run_bayes_protocol(prior, k, m)?;
        let error = run.expected_error[k - 1];
        entries.push(OneShotEntry {
            rounds: k,
            error,
            gap: error - benchmark,
        });
    }
    let non_increasing = entries.windows(2).all(|w| w[1].gap <= w[0].gap + 1e-12);
    Ok(OneShotReport {
        benchmark,
        entries,
        non_increasing,
    })
}

/// Expected swap regret on one (round, previous message) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCell {
    pub k: usize,
    /// Previous round's message on the grid; `None` for round 1.
    pub prev: Option<f64>,
    pub regret: f64,
}

/// For each speaker round and previous message, the expected regret of the
/// announced (rounded) prediction against the best swap function of the
/// speaker's own signal: `E[1[prev] ((ȳ − y)² − (h_{ȳ}(x) − y)²)]`.
/// Any fixed benchmark class on the speaker's features is dominated by this
/// one, so these values upper bound regret to every such class.
pub fn expected_swap_regret(prior: &PriorTable, rounds: usize, m: u32) -> Result<Vec<RegretCell>> {
    if rounds == 0 || m == 0 {
        return Err(invalid("need K ≥ 1 and m ≥ 1"));
    }
    let sim = simulate(prior, rounds, m);
    let mut cells = Vec::new();
    for k in 1..=rounds {
        let side = Side::of_round(k);
        let mut own_err: BTreeMap<Option<u32>, f64> = BTreeMap::new();
        // (prev, own message, own signal) → (mass, s1, s2)
        let mut groups: BTreeMap<(Option<u32>, u32, usize), (f64, f64, f64)> = BTreeMap::new();
        for (i, pair) in sim.pairs.iter().enumerate() {
            let prev = (k > 1).then(|| sim.messages[i][k - 2]);
            let v = sim.messages[i][k - 1];
            *own_err.entry(prev).or_default() += sq_err(pair, grid_value(v, m));
            let g = groups.entry((prev, v, own(pair, side))).or_default();
            g.0 += pair.mass;
            g.1 += pair.s1;
            g.2 += pair.s2;
        }
        let mut best: BTreeMap<Option<u32>, f64> = BTreeMap::new();
        for ((prev, _, _), (mass, s1, s2)) in groups {
            *best.entry(prev).or_default() += (s2 - s1 * s1 / mass).max(0.0);
        }
        for (prev, err) in own_err {
            cells.push(RegretCell {
                k,
                prev: prev.map(|j| grid_value(j, m)),
                regret: err - best[&prev],
            });
        }
    }
    Ok(cells)
}
