//! Norm-bounded linear classes and the least-squares solvers behind every
//! benchmark: a single-block solver that is exact, and a two-block solver
//! for the Minkowski-sum class.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// Linear functions `x -> θ·x (+ b)` with `‖θ‖₂ ≤ C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassSpec {
    pub dim: usize,
    pub norm_bound: f64,
    pub with_intercept: bool,
}

impl LinearClassSpec {
    pub fn new(dim: usize, norm_bound: f64, with_intercept: bool) -> Result<Self> {
        let spec = LinearClassSpec {
            dim,
            norm_bound,
            with_intercept,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("linear class needs dim >= 1"));
        }
        if !(self.norm_bound >= 0.5) || !self.norm_bound.is_finite() {
            return Err(invalid(format!(
                "norm bound {} must be finite and at least 1/2",
                self.norm_bound
            )));
        }
        Ok(())
    }
}

/// A fitted linear predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn constant(dim: usize, c: f64) -> Self {
        LinearModel {
            coef: vec![0.0; dim],
            intercept: c,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coef, x) + self.intercept
    }

    pub fn norm(&self) -> f64 {
        dot(&self.coef, &self.coef).sqrt()
    }
}

/// Result of a single-block fit; `error` is the weighted sum of squared residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub model: LinearModel,
    pub error: f64,
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rows<X: AsRef<[f64]>>(xs: &[X], ys: &[f64], ws: &[f64], dim: usize) -> Result<()> {
    check_len("regression rows", xs.len(), ys.len())?;
    check_len("regression weights", ws.len(), ys.len())?;
    if xs.is_empty() {
        return Err(invalid("regression needs a nonempty sample"));
    }
    for x in xs {
        if x.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.as_ref().len(),
            });
        }
    }
    if ws.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("regression weights must be nonnegative"));
    }
    Ok(())
}

/// Weighted sum of squared residuals of `f` on the sample.
pub fn weighted_error<X: AsRef<[f64]>>(
    xs: &[X],
    ys: &[f64],
    ws: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    xs.iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| {
            let r = f(x.as_ref()) - y;
            w * r * r
        })
        .sum()
}

/// Exact minimizer of `Σ w (θ·x + b − y)²` over `‖θ‖ ≤ C` (intercept free when
/// the class has one, zero otherwise).
///
/// The intercept is profiled out by centering. The remaining trust-region
/// problem is solved through an eigendecomposition of the scatter matrix:
/// the minimum-norm unconstrained solution is returned when feasible, and
/// otherwise the multiplier λ with `‖(Σ + λI)⁻¹c‖ = C` is found by bisection.
pub fn constrained_lsq<X: AsRef<[f64]>>(
    xs: &[X],
    ys: &[f64],
    ws: &[f64],
    spec: &LinearClassSpec,
) -> Result<LinearFit> {
    check_rows(xs, ys, ws, spec.dim)?;
    let d = spec.dim;
    let total: f64 = ws.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("regression weights sum to zero"));
    }

    let (xbar, ybar) = if spec.with_intercept {
        let mut xbar = vec![0.0; d];
        let mut ybar = 0.0;
        for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
            for (acc, v) in xbar.iter_mut().zip(x.as_ref()) {
                *acc += w * v;
            }
            ybar += w * y;
        }
        xbar.iter_mut().for_each(|v| *v /= total);
        (xbar, ybar / total)
    } else {
        (vec![0.0; d], 0.0)
    };

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut cross = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        for (c, (v, m)) in centered.iter_mut().zip(x.as_ref().iter().zip(&xbar)) {
            *c = v - m;
        }
        let yc = y - ybar;
        for i in 0..d {
            cross[i] += w * centered[i] * yc;
            for j in 0..=i {
                scatter[(i, j)] += w * centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            scatter[(j, i)] = scatter[(i, j)];
        }
    }

    let theta = trust_region_solve(scatter, cross, spec.norm_bound);
    let coef: Vec<f64> = theta.iter().copied().collect();
    let intercept = if spec.with_intercept {
        ybar - dot(&coef, &xbar)
    } else {
        0.0
    };
    let model = LinearModel { coef, intercept };
    let error = weighted_error(xs, ys, ws, |x| model.eval(x));
    Ok(LinearFit { model, error })
}

/// Minimizes `θᵀSθ − 2cᵀθ` over `‖θ‖ ≤ radius` for PSD `S`.
fn trust_region_solve(scatter: DMatrix<f64>, cross: DVector<f64>, radius: f64) -> DVector<f64> {
    let d = cross.len();
    let eig = SymmetricEigen::new(scatter);
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = lam_max * 1e-12 * d as f64;
    let b = eig.eigenvectors.transpose() * &cross;

    let coords = |shift: f64| -> DVector<f64> {
        DVector::from_iterator(
            d,
            (0..d).map(|j| {
                let l = eig.eigenvalues[j].max(0.0) + shift;
                if shift == 0.0 && eig.eigenvalues[j] <= tol {
                    0.0
                } else {
                    b[j] / l
                }
            }),
        )
    };

    let free = coords(0.0);
    if free.norm() <= radius {
        return &eig.eigenvectors * free;
    }
    // ‖θ(λ)‖ is decreasing in λ and ‖θ(λ)‖ ≤ ‖b‖/λ.
    let mut lo = 0.0;
    let mut hi = b.norm() / radius;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if coords(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = coords(hi);
    let n = theta.norm();
    if n > radius {
        theta *= radius / n;
    }
    &eig.eigenvectors * theta
}

/// A member of the Minkowski-sum class `h_A(x_A) + h_B(x_B) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub intercept: f64,
}

impl JointModel {
    pub fn eval(&self, xa: &[f64], xb: &[f64]) -> f64 {
        dot(&self.theta_a, xa) + dot(&self.theta_b, xb) + self.intercept
    }

    /// The Alice block alone, `f_A(x_A) = θ_A·x_A`.
    pub fn part_a(&self, xa: &[f64]) -> f64 {
        dot(&self.theta_a, xa)
    }

    pub fn part_b(&self, xb: &[f64]) -> f64 {
        dot(&self.theta_b, xb)
    }
}

/// Result of the two-block fit. `converged` is false when the iteration cap
/// was hit before the stopping rule fired; the best iterate is returned.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFit {
    pub model: JointModel,
    pub error: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Iteration cap and stopping tolerance for [`joint_lsq`].
pub const JOINT_MAX_ITERS: usize = 10_000;
pub const JOINT_GRAD_TOL: f64 = 1e-8;

/// Minimizes `Σ w (θ_A·x_A + θ_B·x_B + b − y)²` over `‖θ_A‖ ≤ C_A`,
/// `‖θ_B‖ ≤ C_B` and `|b| ≤ 1` (b = 0 when neither class has an intercept).
///
/// Starts from the minimum-norm unconstrained solution; if it is feasible it
/// is returned as is. Otherwise runs accelerated projected gradient with step
/// `1/L` until the gradient-mapping norm drops below tolerance.
pub fn joint_lsq<X: AsRef<[f64]>, Z: AsRef<[f64]>>(
    xs_a: &[X],
    xs_b: &[Z],
    ys: &[f64],
    ws: &[f64],
    spec_a: &LinearClassSpec,
    spec_b: &LinearClassSpec,
) -> Result<JointFit> {
    check_rows(xs_a, ys, ws, spec_a.dim)?;
    check_rows(xs_b, ys, ws, spec_b.dim)?;
    if spec_a.with_intercept != spec_b.with_intercept {
        return Err(invalid("joint benchmark needs a shared intercept convention"));
    }
    let (da, db) = (spec_a.dim, spec_b.dim);
    let with_b = spec_a.with_intercept;
    let p = da + db + usize::from(with_b);

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut lin = DVector::<f64>::zeros(p);
    let mut phi = vec![0.0; p];
    for (((xa, xb), y), w) in xs_a.iter().zip(xs_b).zip(ys).zip(ws) {
        phi[..da].copy_from_slice(xa.as_ref());
        phi[da..da + db].copy_from_slice(xb.as_ref());
        if with_b {
            phi[p - 1] = 1.0;
        }
        for i in 0..p {
            lin[i] += w * y * phi[i];
            for j in 0..=i {
                gram[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }

    let project = |z: &mut DVector<f64>| {
        project_ball(&mut z.as_mut_slice()[..da], spec_a.norm_bound);
        project_ball(&mut z.as_mut_slice()[da..da + db], spec_b.norm_bound);
        if with_b {
            z[p - 1] = z[p - 1].clamp(-1.0, 1.0);
        }
    };
    let objective = |z: &DVector<f64>| -> f64 { (&gram * z).dot(z) - 2.0 * lin.dot(z) };

    let eig = SymmetricEigen::new(gram.clone());
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = lam_max * 1e-12 * p as f64;
    let b = eig.eigenvectors.transpose() * &lin;
    let free = DVector::from_iterator(
        p,
        (0..p).map(|j| {
            if eig.eigenvalues[j] > tol {
                b[j] / eig.eigenvalues[j]
            } else {
                0.0
            }
        }),
    );
    let unconstrained = &eig.eigenvectors * free;

    let mut start = unconstrained.clone();
    project(&mut start);
    let finish = |z: DVector<f64>, converged: bool, iterations: usize| -> JointFit {
        let model = JointModel {
            theta_a: z.as_slice()[..da].to_vec(),
            theta_b: z.as_slice()[da..da + db].to_vec(),
            intercept: if with_b { z[p - 1] } else { 0.0 },
        };
        let error = xs_a
            .iter()
            .zip(xs_b)
            .zip(ys)
            .zip(ws)
            .map(|(((xa, xb), y), w)| {
                let r = model.eval(xa.as_ref(), xb.as_ref()) - y;
                w * r * r
            })
            .sum();
        JointFit {
            model,
            error,
            converged,
            iterations,
        }
    };
    if start == unconstrained {
        return Ok(finish(start, true, 0));
    }

    let smooth = 2.0 * lam_max;
    if smooth <= 0.0 {
        return Ok(finish(start, true, 0));
    }
    let step = 1.0 / smooth;
    let grad = |z: &DVector<f64>| -> DVector<f64> { (&gram * z - &lin) * 2.0 };
    let scale = lin.norm().max(1.0);

    let mut x = start.clone();
    let mut yk = start;
    let mut t = 1.0f64;
    let mut best = x.clone();
    let mut best_obj = objective(&x);
    for it in 1..=JOINT_MAX_ITERS {
        let mut next = &yk - grad(&yk) * step;
        project(&mut next);
        let obj = objective(&next);
        if obj < best_obj {
            best_obj = obj;
            best = next.clone();
        }
        // Gradient mapping at the current point decides termination.
        let mut probe = &next - grad(&next) * step;
        project(&mut probe);
        let mapping = (&next - &probe).norm() * smooth;
        if mapping < JOINT_GRAD_TOL * scale {
            let out = if objective(&probe) < best_obj { probe } else { best };
            return Ok(finish(out, true, it));
        }
        // Restart momentum whenever the objective goes up.
        let t_next = if obj > objective(&x) {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        yk = &next + (&next - &x) * ((t - 1.0) / t_next);
        if t_next == 1.0 {
            yk = next.clone();
        }
        x = next;
        t = t_next;
    }
    log::warn!("joint least squares hit the iteration cap without converging");
    Ok(finish(best, false, JOINT_MAX_ITERS))
}

fn project_ball(v: &mut [f64], radius: f64) {
    let n = dot(v, v).sqrt();
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}
