use collab_core::datagen::{decision_linear, random_task};
use collab_core::decisions::{
    decision_regret_check, decision_swap_regret, run_decision_protocol, BaselineForecaster,
    DecisionTask,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw_score(task: &DecisionTask, a: usize, y: &[f64]) -> f64 {
    task.raw_utility()[a].iter().zip(y).map(|(m, v)| m * v).sum()
}

/// First index of the largest raw score.
fn brute_force_best(task: &DecisionTask, y: &[f64]) -> usize {
    (0..task.n_actions()).fold(0, |best, a| {
        if raw_score(task, a, y) > raw_score(task, best, y) {
            a
        } else {
            best
        }
    })
}

/// Rescaling bounds computed from the raw matrix, as the task should.
fn span(task: &DecisionTask) -> (f64, f64) {
    let lo = task
        .raw_utility()
        .iter()
        .map(|r| r.iter().map(|v| v.min(0.0)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let hi = task
        .raw_utility()
        .iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn task_and_points() -> impl Strategy<Value = (u64, usize, usize, Vec<Vec<f64>>)> {
    (0u64..100_000, 2usize..6, 1usize..5).prop_flat_map(|(seed, n, d)| {
        (
            Just(seed),
            Just(n),
            Just(d),
            proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, d), 3),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn best_response_matches_brute_force((seed, n, d, ys) in task_and_points()) {
        let task = random_task(&mut ChaCha8Rng::seed_from_u64(seed), n, d).unwrap();
        for y in &ys {
            prop_assert_eq!(task.best_response(y), brute_force_best(&task, y));
        }
    }

    #[test]
    fn rescaled_utility_is_affine_bounded_and_lipschitz(
        (seed, n, d, ys) in task_and_points(),
        lam in 0.0f64..=1.0,
    ) {
        let task = random_task(&mut ChaCha8Rng::seed_from_u64(seed), n, d).unwrap();
        let (lo, hi) = span(&task);
        let mix: Vec<f64> = ys[0].iter().zip(&ys[1]).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let dist = ys[0].iter().zip(&ys[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for a in 0..n {
            let u0 = task.utility(a, &ys[0]);
            let u1 = task.utility(a, &ys[1]);
            prop_assert!((task.utility(a, &mix) - (lam * u0 + (1.0 - lam) * u1)).abs() < 1e-12);
            prop_assert!((u0 - (raw_score(&task, a, &ys[0]) - lo) / (hi - lo)).abs() < 1e-12);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&u0));
            let gap = (u0 - task.utility(a, &ys[2])).abs();
            prop_assert!(gap <= task.lipschitz() * dist + 1e-12);
        }
    }
}

#[test]
fn baseline_run_keeps_best_responses_and_the_regret_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let task = random_task(&mut rng, 4, 3).unwrap();
    let (ds, pol) = decision_linear(4000, 2, 2, &task, 0.3, 0.1, 21).unwrap();
    let mut a = BaselineForecaster::new(3);
    let mut b = BaselineForecaster::new(3);
    let tr = run_decision_protocol(&ds, &task, &mut a, &mut b, 4).unwrap();
    tr.validate(&task).unwrap();
    for t in 0..tr.days() {
        for k in 0..tr.rounds {
            assert_eq!(tr.actions[t][k], brute_force_best(&task, &tr.predictions[t][k]));
        }
    }
    let (lo, hi) = span(&task);
    for k in 1..=tr.rounds {
        let seq = tr.round(k);
        let chk = decision_regret_check(&seq, &task, &pol);
        assert!(chk.holds(), "round {k}: {chk:?}");
        assert!(chk.tight_bound <= chk.bound + 1e-9);
        // Swap regret recomputed from raw scores.
        let mut own = 0.0;
        let mut best = vec![f64::NEG_INFINITY; task.n_actions()];
        for labels in pol.policies.values() {
            let mut tot = vec![0.0; task.n_actions()];
            for (i, &t) in seq.rows.iter().enumerate() {
                tot[seq.actions[i]] += (raw_score(&task, labels[t], seq.outcomes[i]) - lo) / (hi - lo);
            }
            for (b, v) in best.iter_mut().zip(tot) {
                *b = b.max(v);
            }
        }
        for (i, y) in seq.outcomes.iter().enumerate() {
            own += (raw_score(&task, seq.actions[i], y) - lo) / (hi - lo);
        }
        let oracle = best.iter().filter(|v| v.is_finite()).sum::<f64>() - own;
        let got = decision_swap_regret(&seq, &task, &pol);
        assert!((oracle - got).abs() < 1e-8 * (1.0 + oracle.abs()), "{oracle} vs {got}");
        assert!((got - chk.regret).abs() < 1e-12);
    }
}
