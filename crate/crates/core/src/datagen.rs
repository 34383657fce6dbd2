//! Seeded synthetic data for experiments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayes::PriorTable;
use crate::decisions::{DecisionDataset, DecisionExample, DecisionTask, PolicySet};
use crate::error::{invalid, Result};
use crate::grid::clip01;
use crate::regression::dot;
use crate::types::{LabeledExample, SequenceDataset};
use crate::weaklearn::{gen_counterexample_rho, gen_swap_necessity, sample_unit_ball};

/// Deterministic generator for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `y = clip(½ + signal·(θ_A·x_A + θ_B·x_B) + N(0, noise²))` with features
/// uniform in the unit ball and unit-norm directions θ.
pub fn additive_linear_noise(
    n: usize,
    d_a: usize,
    d_b: usize,
    signal: f64,
    noise: f64,
    seed: u64,
) -> Result<SequenceDataset> {
    if n == 0 || d_a == 0 || d_b == 0 {
        return Err(invalid("n, d_a and d_b must be positive"));
    }
    if !(noise >= 0.0) || !signal.is_finite() {
        return Err(invalid("noise must be non-negative and signal finite"));
    }
    let mut rng = rng_from_seed(seed);
    let theta_a = unit_direction(&mut rng, d_a);
    let theta_b = unit_direction(&mut rng, d_b);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let x_a = sample_unit_ball(&mut rng, d_a);
        let x_b = sample_unit_ball(&mut rng, d_b);
        let eps = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        let y = clip01(0.5 + signal * (dot(&theta_a, &x_a) + dot(&theta_b, &x_b)) + eps);
        examples.push(LabeledExample::new(x_a, x_b, y)?);
    }
    SequenceDataset::new(examples, seed)
}

/// Independent draws from a finite table of `(x_A, x_B, y)` atoms.
fn sample_atoms(
    n: usize,
    seed: u64,
    atoms: &[(Vec<f64>, Vec<f64>, f64, f64)],
) -> Result<SequenceDataset> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut cdf = Vec::with_capacity(atoms.len());
    let mut acc = 0.0;
    for a in atoms {
        acc += a.3;
        cdf.push(acc);
    }
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let i = cdf.partition_point(|&c| c <= u).min(atoms.len() - 1);
        let (xa, xb, y, _) = &atoms[i];
        examples.push(LabeledExample::new(xa.clone(), xb.clone(), *y)?);
    }
    SequenceDataset::new(examples, seed)
}

/// Draws from the ρ construction with labels mapped to `{0, 1}`.
pub fn rho_sampler(n: usize, rho: f64, seed: u64) -> Result<SequenceDataset> {
    let dist = gen_counterexample_rho(rho)?;
    let map = dist.label_map().expect("ρ construction carries a label map");
    let atoms: Vec<_> = dist
        .atoms()
        .iter()
        .map(|a| (a.xa.clone(), a.xb.clone(), map.to_unit(a.y), a.p))
        .collect();
    sample_atoms(n, seed, &atoms)
}

/// Independent uniform bits with `y = x_A ⊕ x_B`.
pub fn xor(n: usize, seed: u64) -> Result<SequenceDataset> {
    let mut atoms = Vec::new();
    for a in [0.0, 1.0] {
        for b in [0.0, 1.0] {
            atoms.push((vec![a], vec![b], if a != b { 1.0 } else { 0.0 }, 0.25));
        }
    }
    sample_atoms(n, seed, &atoms)
}

/// Draws from the swap-necessity construction (`y = x_A·x_B` on bits).
pub fn swap_necessity(n: usize, seed: u64) -> Result<SequenceDataset> {
    let (dist, _) = gen_swap_necessity()?;
    let atoms: Vec<_> = dist
        .atoms()
        .iter()
        .map(|a| (a.xa.clone(), a.xb.clone(), a.y, a.p))
        .collect();
    sample_atoms(n, seed, &atoms)
}

/// Draws from a prior table, using its encoding as features.
pub fn custom_prior(prior: &PriorTable, n: usize, seed: u64) -> Result<SequenceDataset> {
    let enc = prior
        .encoding()
        .ok_or_else(|| invalid("custom prior needs a signal encoding to produce features"))?;
    let atoms: Vec<_> = prior
        .atoms()
        .iter()
        .map(|a| (enc.a[&a.a].clone(), enc.b[&a.b].clone(), a.y, a.p))
        .collect();
    sample_atoms(n, seed, &atoms)
}

/// Vector outcomes `y_j = clip(½ + signal·(θ_Aj·x_A + θ_Bj·x_B) + N(0, noise²))`
/// together with benchmark policies: the best response to each side's
/// noiseless linear part, the best response to the joint one, and every
/// constant action.
pub fn decision_linear(
    n: usize,
    d_a: usize,
    d_b: usize,
    task: &DecisionTask,
    signal: f64,
    noise: f64,
    seed: u64,
) -> Result<(DecisionDataset, PolicySet)> {
    if n == 0 || d_a == 0 || d_b == 0 {
        return Err(invalid("n, d_a and d_b must be positive"));
    }
    if !(noise >= 0.0) || !signal.is_finite() {
        return Err(invalid("noise must be non-negative and signal finite"));
    }
    let d = task.d();
    let mut rng = rng_from_seed(seed);
    let theta_a: Vec<Vec<f64>> = (0..d).map(|_| unit_direction(&mut rng, d_a)).collect();
    let theta_b: Vec<Vec<f64>> = (0..d).map(|_| unit_direction(&mut rng, d_b)).collect();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut examples = Vec::with_capacity(n);
    let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for _ in 0..n {
        let x_a = sample_unit_ball(&mut rng, d_a);
        let x_b = sample_unit_ball(&mut rng, d_b);
        let part_a: Vec<f64> = theta_a.iter().map(|t| signal * dot(t, &x_a)).collect();
        let part_b: Vec<f64> = theta_b.iter().map(|t| signal * dot(t, &x_b)).collect();
        let only_a: Vec<f64> = part_a.iter().map(|v| clip01(0.5 + v)).collect();
        let only_b: Vec<f64> = part_b.iter().map(|v| clip01(0.5 + v)).collect();
        let joint: Vec<f64> = part_a.iter().zip(&part_b).map(|(a, b)| clip01(0.5 + a + b)).collect();
        let y: Vec<f64> = part_a
            .iter()
            .zip(&part_b)
            .map(|(a, b)| {
                let eps = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                clip01(0.5 + a + b + eps)
            })
            .collect();
        labels.entry("alice_linear".into()).or_default().push(task.best_response(&only_a));
        labels.entry("bob_linear".into()).or_default().push(task.best_response(&only_b));
        labels.entry("joint_linear".into()).or_default().push(task.best_response(&joint));
        examples.push(DecisionExample { x_a, x_b, y });
    }
    let policies = PolicySet::new(labels, task.n_actions(), n)?;
    Ok((DecisionDataset::new(examples, seed)?, policies))
}

/// A random decision task with entries uniform in `[-1, 1]`.
pub fn random_task<R: Rng + ?Sized>(rng: &mut R, n_actions: usize, d: usize) -> Result<DecisionTask> {
    let utility: Vec<Vec<f64>> = (0..n_actions)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    DecisionTask::new(d, (0..n_actions).map(|a| format!("a{a}")).collect(), utility)
}

/// Serializable description of a generator run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    AdditiveLinearNoise {
        n: usize,
        d_a: usize,
        d_b: usize,
        signal: f64,
        noise: f64,
    },
    Rho {
        n: usize,
        rho: f64,
    },
    Xor {
        n: usize,
    },
    SwapNecessity {
        n: usize,
    },
    CustomPrior {
        n: usize,
        prior: PriorTable,
    },
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64) -> Result<SequenceDataset> {
        match self {
            GeneratorSpec::AdditiveLinearNoise {
                n,
                d_a,
                d_b,
                signal,
                noise,
            } => additive_linear_noise(*n, *d_a, *d_b, *signal, *noise, seed),
            GeneratorSpec::Rho { n, rho } => rho_sampler(*n, *rho, seed),
            GeneratorSpec::Xor { n } => xor(*n, seed),
            GeneratorSpec::SwapNecessity { n } => swap_necessity(*n, seed),
            GeneratorSpec::CustomPrior { n, prior } => custom_prior(prior, *n, seed),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            GeneratorSpec::AdditiveLinearNoise { n, .. }
            | GeneratorSpec::Rho { n, .. }
            | GeneratorSpec::Xor { n }
            | GeneratorSpec::SwapNecessity { n }
            | GeneratorSpec::CustomPrior { n, .. } => *n,
        }
    }

    fn with_n(&self, rows: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            GeneratorSpec::AdditiveLinearNoise { n, .. }
            | GeneratorSpec::Rho { n, .. }
            | GeneratorSpec::Xor { n }
            | GeneratorSpec::SwapNecessity { n }
            | GeneratorSpec::CustomPrior { n, .. } => *n = rows,
        }
        out
    }

    /// Held-out rows from the same draw as a training set of `skip` rows:
    /// the generator runs for `skip + n` rows and the first `skip` are
    /// dropped. Generators that draw hidden parameters (such as the linear
    /// direction) therefore share them with the training set.
    pub fn generate_holdout(&self, seed: u64, skip: usize) -> Result<SequenceDataset> {
        let full = self.with_n(skip + self.n()).generate(seed)?;
        SequenceDataset::new(full.examples()[skip..].to_vec(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_shares_the_direction_but_not_rows() {
        let spec = GeneratorSpec::AdditiveLinearNoise {
            n: 50,
            d_a: 2,
            d_b: 2,
            signal: 0.2,
            noise: 0.0,
        };
        let train = spec.generate(9).unwrap();
        let test = spec.generate_holdout(9, 50).unwrap();
        assert_eq!(test.len(), 50);
        assert_ne!(train.examples()[0], test.examples()[0]);
        // Noise-free labels are an exact linear function, so one least-squares
        // fit explains both sets.
        let rows: Vec<_> = train.examples().iter().chain(test.examples()).collect();
        let xa: Vec<&[f64]> = rows.iter().map(|e| e.x_a.as_slice()).collect();
        let xb: Vec<&[f64]> = rows.iter().map(|e| e.x_b.as_slice()).collect();
        let ys: Vec<f64> = rows.iter().map(|e| e.y).collect();
        let spec = crate::regression::LinearClassSpec::new(2, 1.0, true).unwrap();
        let fit = crate::regression::joint_lsq(&xa, &xb, &ys, &vec![1.0; ys.len()], &spec, &spec)
            .unwrap();
        let resid = fit.error;
        assert!(resid < 1e-10, "residual {resid}");
    }
    use crate::types::norm;

    #[test]
    fn additive_noise_sanity() {
        let ds = additive_linear_noise(500, 2, 3, 0.4, 0.1, 7).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!((ds.dim_a(), ds.dim_b()), (2, 3));
        for ex in ds.examples() {
            assert!(norm(&ex.x_a) <= 1.0 + 1e-12 && norm(&ex.x_b) <= 1.0 + 1e-12);
            assert!((0.0..=1.0).contains(&ex.y));
        }
        assert_eq!(ds, additive_linear_noise(500, 2, 3, 0.4, 0.1, 7).unwrap());
        assert_ne!(ds, additive_linear_noise(500, 2, 3, 0.4, 0.1, 8).unwrap());
    }

    #[test]
    fn discrete_samplers_stay_on_support() {
        let ds = rho_sampler(400, 2.0, 1).unwrap();
        assert!(ds.examples().iter().all(|e| e.y == 0.0 || e.y == 1.0));
        let ds = xor(400, 2).unwrap();
        assert!(ds
            .examples()
            .iter()
            .all(|e| e.y == if e.x_a[0] != e.x_b[0] { 1.0 } else { 0.0 }));
        let ones = ds.outcomes().iter().filter(|&&y| y == 1.0).count();
        assert!((150..250).contains(&ones));
        let ds = swap_necessity(100, 3).unwrap();
        assert!(ds.examples().iter().all(|e| e.y == e.x_a[0] * e.x_b[0]));
    }

    #[test]
    fn generator_spec_json() {
        let spec: GeneratorSpec = serde_json::from_str(r#"{"kind":"xor","n":10}"#).unwrap();
        assert_eq!(spec.generate(0).unwrap().len(), 10);
        assert!(serde_json::from_str::<GeneratorSpec>(r#"{"kind":"xor","n":10,"z":1}"#).is_err());
        let prior = GeneratorSpec::CustomPrior {
            n: 20,
            prior: PriorTable::additive(),
        };
        let s = serde_json::to_string(&prior).unwrap();
        assert_eq!(serde_json::from_str::<GeneratorSpec>(&s).unwrap(), prior);
        assert!(prior.generate(4).unwrap().examples().iter().all(|e| e.x_a[0].abs() == 1.0));
    }

    #[test]
    fn decision_generator_includes_constants() {
        let mut rng = rng_from_seed(5);
        let task = random_task(&mut rng, 4, 3).unwrap();
        let (ds, pol) = decision_linear(200, 2, 2, &task, 0.3, 0.1, 9).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(pol.policies.contains_key("joint_linear"));
        for a in 0..4 {
            assert!(pol.policies.values().any(|l| l.iter().all(|&b| b == a)));
        }
    }
}
