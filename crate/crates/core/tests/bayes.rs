use std::collections::BTreeMap;

use collab_core::bayes::{expected_swap_regret, run_bayes_protocol, PriorTable};
use collab_core::datagen::rng_from_seed;
use collab_core::grid::grid_index;
use proptest::prelude::*;

struct Cell {
    a: String,
    b: String,
    mass: f64,
    s1: f64,
    s2: f64,
}

/// Direct simulation: at round k the speaker's posterior is the mean label
/// over every signal pair that shares its own signal and has produced the
/// same messages so far. Quadratic in the support size, which is fine here.
fn naive(prior: &PriorTable, rounds: usize, m: u32) -> (Vec<Cell>, Vec<Vec<f64>>, Vec<Vec<u32>>) {
    let mut cells: BTreeMap<(String, String), (f64, f64, f64)> = BTreeMap::new();
    for at in prior.atoms() {
        let c = cells.entry((at.a.clone(), at.b.clone())).or_default();
        c.0 += at.p;
        c.1 += at.p * at.y;
        c.2 += at.p * at.y * at.y;
    }
    let cells: Vec<Cell> = cells
        .into_iter()
        .filter(|(_, v)| v.0 > 0.0)
        .map(|((a, b), (mass, s1, s2))| Cell { a, b, mass, s1, s2 })
        .collect();
    let n = cells.len();
    let mut post = vec![Vec::new(); n];
    let mut msgs: Vec<Vec<u32>> = vec![Vec::new(); n];
    for k in 0..rounds {
        let alice = k % 2 == 0;
        let mut now = Vec::with_capacity(n);
        for i in 0..n {
            let (mut w, mut s) = (0.0, 0.0);
            for j in 0..n {
                let same = if alice { cells[i].a == cells[j].a } else { cells[i].b == cells[j].b };
                if same && msgs[i] == msgs[j] {
                    w += cells[j].mass;
                    s += cells[j].s1;
                }
            }
            now.push(s / w);
        }
        for i in 0..n {
            post[i].push(now[i]);
            msgs[i].push(grid_index(now[i], m));
        }
    }
    (cells, post, msgs)
}

fn err(c: &Cell, v: f64) -> f64 {
    c.s2 - 2.0 * v * c.s1 + v * v * c.mass
}

fn random_prior(seed: u64) -> PriorTable {
    let mut rng = rng_from_seed(seed);
    PriorTable::random(&mut rng, 3, 3, 2)
}

#[test]
fn unrounded_posteriors_can_get_worse_between_speakers() {
    // Alice knows y exactly; Bob only hears her value rounded to {0, 1}.
    let prior: PriorTable = serde_json::from_str(
        r#"{"atoms": [
            {"a": "lo", "b": "-", "y": 0.3, "p": 0.5},
            {"a": "hi", "b": "-", "y": 0.4, "p": 0.5}]}"#,
    )
    .unwrap();
    let run = run_bayes_protocol(&prior, 2, 1).unwrap();
    assert_eq!(run.expected_error[0], 0.0);
    assert!(run.expected_error[1] > 0.0);
    // The announced predictions do not get worse.
    assert!(run.expected_error_rounded[1] <= run.expected_error_rounded[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn simulation_matches_a_direct_recomputation(seed in 0u64..5000, m in 1u32..20) {
        let prior = random_prior(seed);
        let run = run_bayes_protocol(&prior, 6, m).unwrap();
        let (cells, post, msgs) = naive(&prior, 6, m);
        prop_assert_eq!(run.traces.len(), cells.len());
        for tr in &run.traces {
            let i = cells.iter().position(|c| c.a == tr.a && c.b == tr.b).unwrap();
            for k in 0..6 {
                prop_assert!((tr.posteriors[k] - post[i][k]).abs() < 1e-12);
                prop_assert_eq!(grid_index(tr.messages[k], m), msgs[i][k]);
            }
        }
        for k in 0..6 {
            let e: f64 = cells.iter().enumerate().map(|(i, c)| err(c, post[i][k])).sum();
            prop_assert!((run.expected_error[k] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn information_only_helps_and_messages_are_martingales(seed in 0u64..5000, m in 1u32..20) {
        let prior = random_prior(seed);
        let k_max = 8;
        let (cells, post, msgs) = naive(&prior, k_max, m);
        let e = |k: usize| cells.iter().enumerate().map(|(i, c)| err(c, post[i][k])).sum::<f64>();
        let e_msg = |k: usize| {
            cells.iter().enumerate().map(|(i, c)| err(c, msgs[i][k] as f64 / m as f64)).sum::<f64>()
        };
        for k in 0..k_max - 1 {
            // Announced values: the nearest grid point to a better-informed
            // posterior beats any grid point the listener already knows.
            prop_assert!(e_msg(k + 1) <= e_msg(k) + 1e-12, "announced error rose at round {}", k + 2);
            // The listener can always repeat the message it just heard.
            prop_assert!(e(k + 1) <= e_msg(k) + 1e-12);
            if k + 2 < k_max {
                prop_assert!(e(k + 2) <= e(k) + 1e-12, "speaker error rose at round {}", k + 3);
            }
            // E[ŷ_{k+1} | message k] = E[ŷ_k | message k] = E[y | message k].
            let mut by_msg: BTreeMap<u32, (f64, f64, f64)> = BTreeMap::new();
            for (i, c) in cells.iter().enumerate() {
                let s = by_msg.entry(msgs[i][k]).or_default();
                s.0 += c.mass * post[i][k + 1];
                s.1 += c.mass * post[i][k];
                s.2 += c.s1;
            }
            for (v, (next, cur, y)) in by_msg {
                prop_assert!((next - cur).abs() < 1e-12, "message {v}");
                prop_assert!((cur - y).abs() < 1e-12, "message {v}");
            }
        }
    }

    #[test]
    fn expected_swap_regret_is_at_most_the_rounding_loss(seed in 0u64..5000, m in 1u32..20) {
        let prior = random_prior(seed);
        let worst = expected_swap_regret(&prior, 6, m)
            .unwrap()
            .iter()
            .map(|c| c.regret)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(worst <= 1.0 / (4.0 * (m * m) as f64) + 1e-12, "regret {worst}");
    }
}
