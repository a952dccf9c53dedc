use super::{quasi_newton, ArmijoStep, SolveOptions, SolveResult};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::problems::{BvldProblem, FeasibleSet};

/// Mirror-form trials before handing over to the classical test on f.
const MIRROR_TRIALS: usize = 60;
const MIN_ALPHA: f64 = 1e-16;

/// Inexact realization of T_t(p).
///
/// The inner solve stops at residual `sqrt(2μδ_t)`, which by strong convexity
/// of Φ(·;p) bounds the merit gap by δ_t. If the variational certificate
/// `⟨r(q), q − p⟩ ≥ −δ_t` (r the stationarity residual) still fails, the solve
/// is resumed from q at the tighter residual `δ_t / (2‖q − p‖)`. The step to
/// the next iterate is then chosen by backtracking along the mirror segment
/// from p towards q.
pub fn apply_inexact(
    prob: &BvldProblem,
    p: &Point,
    t: usize,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    prob.check_point(p)?;
    let delta = opts.delta(t);
    let mut tol = if delta > 0.0 {
        (2.0 * prob.mu() * delta).sqrt().max(opts.tol_stationarity)
    } else {
        opts.tol_stationarity
    };
    let mut res = quasi_newton(prob, p, p.clone(), tol, opts)?;

    if delta > 0.0 {
        let full = prob.merit_grad(&res.q, p);
        let r = prob.feasible.stationarity_residual(&res.q, &full);
        let gap = &res.q - p;
        if r.dot(&gap) < -delta {
            tol = (delta / (2.0 * gap.norm())).max(opts.tol_stationarity);
            let mut again = quasi_newton(prob, p, res.q.clone(), tol, opts)?;
            again.inner_iters += res.inner_iters;
            let mut history = std::mem::take(&mut res.merit_history);
            history.extend(again.merit_history.iter().skip(1));
            again.merit_history = history;
            res = again;
        }
    }

    res.armijo = Some(armijo_step(prob, p, &res.q, opts)?);
    res.delta = Some(delta);
    Ok(res)
}

fn mirror_path(prob: &BvldProblem, up: &Point, h: &Point, alpha: f64) -> Point {
    let x = prob.potential.grad_inv(&(up + h * alpha));
    if prob.potential.on_simplex() || prob.feasible == FeasibleSet::Whole {
        x
    } else {
        prob.feasible.project(&x)
    }
}

/// Backtracking on p⁺(α) = ∇ψ⁻¹(∇ψ(p) + αG), G = ∇ψ(q) − ∇ψ(p).
///
/// The mirror-form test `Φ(p⁺;p) ≤ Φ(q;p) − (α/2)‖G‖²` is tried first. Since
/// q (approximately) minimizes Φ(·;p), it can only pass when G vanishes; after
/// `MIRROR_TRIALS` rejections the classical test on f decides the step.
pub(crate) fn armijo_step(
    prob: &BvldProblem,
    p: &Point,
    q: &Point,
    opts: &SolveOptions,
) -> Result<ArmijoStep> {
    let psi = prob.potential.as_ref();
    let up = psi.grad(p);
    let h = psi.grad(q) - &up;
    let g2 = h.norm_squared();
    let phi_q = prob.merit(q, p);

    let mut alpha = 1.0;
    for trial in 1..=MIRROR_TRIALS {
        let x = mirror_path(prob, &up, &h, alpha);
        if prob.is_admissible(&x) && prob.merit(&x, p) <= phi_q - 0.5 * alpha * g2 {
            return Ok(ArmijoStep {
                alpha,
                trials: trial,
                fallback: false,
                next: x,
            });
        }
        alpha *= opts.armijo_beta;
    }
    fallback_step(prob, p, &up, &h, MIRROR_TRIALS, opts)
}

/// Classical Armijo on f along the mirror segment, with slope
/// `⟨∇f(p), ∇²ψ*(∇ψ(p))G⟩`. A nonnegative slope means f cannot decrease to
/// first order, and the full step to q is taken.
pub(crate) fn fallback_step(
    prob: &BvldProblem,
    p: &Point,
    up: &Point,
    h: &Point,
    prior_trials: usize,
    opts: &SolveOptions,
) -> Result<ArmijoStep> {
    let f = prob.objective.as_ref();
    let fp = f.value(p);
    let slope = f.grad(p).dot(&prob.potential.mirror_tangent(p, h));
    if slope.is_nan() || slope >= 0.0 {
        return Ok(ArmijoStep {
            alpha: 1.0,
            trials: prior_trials,
            fallback: true,
            next: mirror_path(prob, up, h, 1.0),
        });
    }
    let mut alpha = 1.0;
    let mut trials = prior_trials;
    while alpha >= MIN_ALPHA {
        trials += 1;
        let x = mirror_path(prob, up, h, alpha);
        if prob.is_admissible(&x) && f.value(&x) <= fp + opts.armijo_gamma * alpha * slope {
            return Ok(ArmijoStep {
                alpha,
                trials,
                fallback: true,
                next: x,
            });
        }
        alpha *= opts.armijo_beta;
    }
    Err(Error::LineSearchFailure { alpha })
}
