//! Verification suite: exact checks on the lower-bound constructions, the
//! weak-learning extraction on random distributions, and the Bayesian
//! examples with known answers.

use collab_core::bayes::{run_bayes_protocol, PriorTable};
use collab_core::datagen::rng_from_seed;
use collab_core::regression::LinearClassSpec;
use collab_core::weaklearn::{
    gen_counterexample_rho, gen_swap_necessity, gen_xor_counterexamples,
    information_substitutes_check, random_distribution, rule_regrets, weak_learner_extract,
};
use collab_core::Side;
use serde::{Deserialize, Serialize};

const EXACT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn failed(name: &str, e: impl std::fmt::Display) -> CheckResult {
    check(name, false, format!("error: {e}"))
}

fn spec(c: f64) -> LinearClassSpec {
    LinearClassSpec::new(1, c, true).expect("valid class")
}

fn rho_gains() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for rho in [1.0, 2.0, 4.0] {
        let name = format!("rho_gains[{rho}]");
        let r = (|| -> collab_core::Result<(f64, f64)> {
            let d = gen_counterexample_rho(rho)?;
            Ok((d.side_gain(Side::Bob, &spec(1.0))?, d.joint_gain(&spec(1.0), &spec(1.0))?))
        })();
        out.push(match r {
            Ok((gb, gj)) => {
                let want_b = 1.0 / (rho * rho + 1.0);
                let want_j = (4.0 * rho - 1.0) / (4.0 * rho * rho);
                check(
                    &name,
                    (gb - want_b).abs() < EXACT && (gj - want_j).abs() < EXACT,
                    format!("bob gain {gb} (want {want_b}), joint gain {gj} (want {want_j})"),
                )
            }
            Err(e) => failed(&name, e),
        });
    }
    out
}

fn quadratic_ratio() -> CheckResult {
    let name = "quadratic_tightness";
    let mut worst: (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
    for rho in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        let r = (|| -> collab_core::Result<f64> {
            let d = gen_counterexample_rho(rho)?;
            let gb = d.side_gain(Side::Bob, &spec(1.0))?;
            let gj = d.joint_gain(&spec(1.0), &spec(1.0))?;
            Ok(gb / (gj * gj))
        })();
        match r {
            Ok(ratio) => {
                let analytic =
                    16.0 * rho.powi(4) / ((rho * rho + 1.0) * (4.0 * rho - 1.0).powi(2));
                if (ratio - analytic).abs() > 1e-9 {
                    return check(name, false, format!("rho {rho}: ratio {ratio} vs {analytic}"));
                }
                worst = (worst.0.min(ratio), worst.1.max(ratio));
            }
            Err(e) => return failed(name, e),
        }
    }
    check(
        name,
        worst.0 >= 0.5 && worst.1 <= 2.0,
        format!("single-side gain / joint gain² in [{}, {}]", worst.0, worst.1),
    )
}

fn swap_necessity() -> CheckResult {
    let name = "swap_necessity";
    match gen_swap_necessity().and_then(|(d, rule)| rule_regrets(&d, rule, &spec(1.0), &spec(1.0))) {
        Ok(r) => check(
            name,
            r.regret_a.abs() < EXACT
                && r.regret_b.abs() < EXACT
                && (r.regret_joint - 1.0 / 16.0).abs() < EXACT,
            format!("regrets ({}, {}, {})", r.regret_a, r.regret_b, r.regret_joint),
        ),
        Err(e) => failed(name, e),
    }
}

fn substitutes() -> CheckResult {
    let name = "information_substitutes_violation";
    match gen_counterexample_rho(1.0)
        .and_then(|d| information_substitutes_check(&d, &spec(2.0), &spec(2.0)))
    {
        Ok(c) => check(
            name,
            !c.holds && (c.lhs - 1.0).abs() < EXACT && (c.rhs - 0.5).abs() < EXACT,
            format!("lhs {} rhs {}", c.lhs, c.rhs),
        ),
        Err(e) => failed(name, e),
    }
}

fn xor_needs_interaction() -> CheckResult {
    let name = "xor_individual_classes_gain_nothing";
    let r = (|| -> collab_core::Result<Vec<f64>> {
        let (bits, signs) = gen_xor_counterexamples()?;
        let mut gains = Vec::new();
        for d in [&bits, &signs] {
            gains.push(d.side_gain(Side::Alice, &spec(1.0))?);
            gains.push(d.side_gain(Side::Bob, &spec(1.0))?);
            gains.push(d.joint_gain(&spec(1.0), &spec(1.0))?);
        }
        Ok(gains)
    })();
    match r {
        Ok(g) => check(name, g.iter().all(|v| v.abs() < EXACT), format!("gains {g:?}")),
        Err(e) => failed(name, e),
    }
}

/// Draws random finite distributions, keeps those with joint gain of at
/// least 0.01, and checks the extracted single-side predictor.
pub fn weak_learning_trials(seed: u64, trials: usize, c: f64) -> CheckResult {
    let name = "weak_learning_extraction";
    let mut rng = rng_from_seed(seed);
    let (sa, sb) = (
        LinearClassSpec::new(2, c, true).expect("valid class"),
        LinearClassSpec::new(2, c, true).expect("valid class"),
    );
    let mut done = 0;
    let mut draws = 0;
    let mut worst_margin = f64::INFINITY;
    while done < trials {
        draws += 1;
        if draws > 100 * trials {
            return check(name, false, format!("only {done} usable distributions in {draws} draws"));
        }
        let r = (|| -> collab_core::Result<Option<f64>> {
            let dist = random_distribution(&mut rng, 12, 2, 2)?;
            let joint = dist.fit_joint(&sa, &sb)?;
            let gamma = dist.constant_error() - joint.error;
            if gamma < 0.01 {
                return Ok(None);
            }
            let res = weak_learner_extract(&dist, &joint.model, c)?;
            Ok(Some(res.achieved_gain - gamma * gamma / (16.0 * c * c)))
        })();
        match r {
            Ok(Some(margin)) => {
                done += 1;
                worst_margin = worst_margin.min(margin);
            }
            Ok(None) => {}
            Err(e) => return failed(name, e),
        }
    }
    check(
        name,
        worst_margin >= -1e-9,
        format!("{done} distributions, smallest gain − γ²/16C² = {worst_margin:e}"),
    )
}

fn bayes_examples() -> Vec<CheckResult> {
    let mut out = Vec::new();
    match run_bayes_protocol(&PriorTable::xor(), 8, 16) {
        Ok(run) => out.push(check(
            "bayes_xor_agrees_without_aggregating",
            run.expected_error.iter().all(|&e| e == 0.25)
                && run.traces.iter().all(|t| t.posteriors.iter().all(|&p| p == 0.5)),
            format!("expected errors {:?}", run.expected_error),
        )),
        Err(e) => out.push(failed("bayes_xor_agrees_without_aggregating", e)),
    }
    match run_bayes_protocol(&PriorTable::additive(), 2, 16) {
        Ok(run) => out.push(check(
            "bayes_additive_resolves_in_two_rounds",
            run.expected_error[1] == 0.0,
            format!("expected errors {:?}", run.expected_error),
        )),
        Err(e) => out.push(failed("bayes_additive_resolves_in_two_rounds", e)),
    }
    out
}

pub fn run_checks(seed: u64, trials: usize) -> Vec<CheckResult> {
    let mut out = rho_gains();
    out.push(quadratic_ratio());
    out.push(swap_necessity());
    out.push(substitutes());
    out.push(xor_needs_interaction());
    out.push(weak_learning_trials(seed, trials, 1.0));
    out.extend(bayes_examples());
    out
}
