use collab_core::datagen::{additive_linear_noise, rng_from_seed};
use collab_core::grid::round_to_grid;
use collab_core::learners::{LearnerConfig, VawState};
use collab_core::metrics::{ece, sqe, swap_regret, BenchmarkClass};
use collab_core::protocol::{round_error_profile, run_collaboration};
use collab_core::regression::LinearClassSpec;
use collab_core::weaklearn::sample_unit_ball;
use collab_core::{ConversationTranscript, Side};
use proptest::prelude::*;

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Unregularized least squares through the origin.
fn least_squares(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let d = xs[0].len();
    let mut g = vec![vec![0.0; d]; d];
    let mut r = vec![0.0; d];
    for (x, y) in xs.iter().zip(ys) {
        for i in 0..d {
            r[i] += x[i] * y;
            for j in 0..d {
                g[i][j] += x[i] * x[j];
            }
        }
    }
    solve(g, r)
}

#[test]
fn forward_ridge_meets_its_log_regret_bound_on_adversarial_labels() {
    let (d, t_max) = (4, 400);
    for seed in 0..6 {
        let mut rng = rng_from_seed(seed);
        let mut vaw = VawState::new(d, 1.0, false).unwrap();
        let (mut xs, mut ys, mut preds) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..t_max {
            let x = sample_unit_ball(&mut rng, d);
            let p = vaw.predict(&x).unwrap();
            let y = if p < 0.5 { 1.0 } else { 0.0 };
            vaw.update(&x, y).unwrap();
            xs.push(x);
            ys.push(y);
            preds.push(p);
        }
        let theta = least_squares(&xs, &ys);
        let best: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() - y).powi(2))
            .sum();
        let own = sqe(&preds, &ys).unwrap();
        let norm2: f64 = theta.iter().map(|v| v * v).sum();
        let bound = 2.0 * d as f64 * ((t_max + 1) as f64).ln() + norm2;
        assert!(own - best <= bound, "seed {seed}: regret {} > {bound}", own - best);
    }
}

#[test]
fn conversation_errors_never_rise_beyond_the_slack() {
    let ds = additive_linear_noise(3000, 2, 2, 0.4, 0.1, 11).unwrap();
    let cfg = LearnerConfig::conversation(2, 10, 0.1);
    let mut a = cfg.build(Side::Alice).unwrap();
    let mut b = cfg.build(Side::Bob).unwrap();
    let tr = run_collaboration(&ds, a.as_mut(), b.as_mut(), 6).unwrap();
    let bucket = cfg.bucketing().unwrap();
    let prof = round_error_profile(&tr, &bucket, &bucket).unwrap();
    assert!(prof.flagged.is_empty(), "flagged rounds {:?}", prof.flagged);
    assert_eq!(prof.sqe.len(), 6);
}

fn grid_sequence() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (5usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec((0.0f64..=1.0).prop_map(|p| round_to_grid(p, 5)), n),
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(-1.0f64..=1.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn calibration_error_is_bounded_by_constant_swap_regret((p, y, _x) in grid_sequence()) {
        let e = ece(&p, &y).unwrap();
        let sr: f64 = swap_regret::<Vec<f64>>(&p, &y, &[], &BenchmarkClass::Constant).unwrap();
        prop_assert!(sr >= -1e-12);
        prop_assert!(e <= (p.len() as f64 * sr.max(0.0)).sqrt() + 1e-9);
    }

    #[test]
    fn linear_benchmark_is_at_least_as_strong_as_constants((p, y, x) in grid_sequence()) {
        let xs: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let spec = LinearClassSpec::new(1, 1.0, true).unwrap();
        let lin = swap_regret(&p, &y, &xs, &BenchmarkClass::Linear(spec)).unwrap();
        let con = swap_regret::<Vec<f64>>(&p, &y, &[], &BenchmarkClass::Constant).unwrap();
        prop_assert!(lin >= con - 1e-9, "linear {lin} < constant {con}");
    }

    #[test]
    fn transcripts_survive_a_text_round_trip(
        rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 3), 1..20),
    ) {
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let tr = ConversationTranscript::new(3, rows, y).unwrap();
        let back = ConversationTranscript::from_text(&tr.to_text()).unwrap();
        prop_assert_eq!(back, tr);
    }
}
