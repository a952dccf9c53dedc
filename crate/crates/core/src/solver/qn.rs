use nalgebra::{DMatrix, DVector};

use super::{SolveOptions, SolveResult};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::problems::{BvldProblem, FeasibleSet};

/// Curvature pairs with ⟨y,s⟩ at or below this are skipped.
const CURVATURE_FLOOR: f64 = 1e-12;
/// Relative merit change below which Φ is treated as unresolved.
const MERIT_NOISE: f64 = 1e-14;
const MIN_ALPHA: f64 = 1e-16;

/// Quasi-Newton realization of T(p), started at `p`.
pub fn apply_qn(prob: &BvldProblem, p: &Point, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    prob.check_point(p)?;
    quasi_newton(prob, p, p.clone(), opts.tol_stationarity, opts)
}

struct State {
    q: Point,
    u: DVector<f64>,
    g: DVector<f64>,
    phi: f64,
}

fn state(prob: &BvldProblem, p: &Point, q: Point) -> State {
    let full = prob.merit_grad(&q, p);
    State {
        u: prob.potential.grad(&q),
        g: prob.feasible.stationarity_residual(&q, &full),
        phi: prob.merit(&q, p),
        q,
    }
}

/// BFGS on Φ(·;p) in mirror coordinates u = ∇ψ(q), stopping once the
/// stationarity residual drops to `tol`.
///
/// Trial points are `Π_Θ(∇ψ⁻¹(u + αd))`; the projection is skipped when the
/// potential's own inverse map already lands in Θ. The slope used by the
/// Armijo test is the directional derivative of Φ along that path,
/// `⟨g, ∇²ψ*(u)d⟩`.
pub(crate) fn quasi_newton(
    prob: &BvldProblem,
    p: &Point,
    q0: Point,
    tol: f64,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    if !prob.is_admissible(&q0) {
        return Err(Error::DomainFailure {
            stage: "quasi-newton start",
        });
    }
    let n = prob.dim();
    let psi = prob.potential.as_ref();
    let project = !(psi.on_simplex() || prob.feasible == FeasibleSet::Whole);

    let mut cur = state(prob, p, q0);
    let mut history = vec![cur.phi];
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iters = 0;
    let mut active = prob.feasible.active_set(&cur.q);

    while iters < opts.max_inner_iters {
        let gnorm = cur.g.norm();
        if gnorm <= tol {
            break;
        }
        let d = prob.feasible.tangent_direction(&cur.q, &(-(&h * &cur.g)));
        let slope = cur.g.dot(&psi.mirror_tangent(&cur.q, &d));
        if slope.is_nan() || slope >= 0.0 {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        }

        let mut alpha = 1.0;
        let mut admissible_seen = false;
        let mut accepted = None;
        while alpha >= MIN_ALPHA {
            let mut trial = psi.grad_inv(&(&cur.u + &d * alpha));
            if project {
                trial = prob.feasible.project(&trial);
            }
            if prob.is_admissible(&trial) {
                admissible_seen = true;
                let phi_t = prob.merit(&trial, p);
                let predicted = opts.armijo_gamma * alpha * slope;
                let noise = MERIT_NOISE * (1.0 + cur.phi.abs());
                if -predicted > noise {
                    if phi_t <= cur.phi + predicted {
                        accepted = Some(trial);
                        break;
                    }
                } else if trial != cur.q && phi_t - cur.phi <= noise {
                    // Below the resolution of Φ the residual decides.
                    let next = state(prob, p, trial.clone());
                    if next.g.norm() < gnorm {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            alpha *= opts.armijo_beta;
        }

        let Some(q_new) = accepted else {
            if !admissible_seen {
                return Err(Error::DomainFailure {
                    stage: "quasi-newton line search",
                });
            }
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        iters += 1;
        let next = state(prob, p, q_new);
        // Curvature pairs mixing free and bound coordinates mislead BFGS, so
        // the metric restarts whenever the active set moves.
        let next_active = prob.feasible.active_set(&next.q);
        let s = &next.u - &cur.u;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        if next_active != active {
            active = next_active;
            h = DMatrix::identity(n, n);
            fresh = true;
        } else if sy > CURVATURE_FLOOR {
            if fresh {
                h *= sy / y.norm_squared();
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        let step = (&next.q - &cur.q).norm();
        history.push(next.phi);
        cur = next;
        if step <= opts.tol_step {
            break;
        }
    }

    let converged = cur.g.norm() <= tol;
    Ok(SolveResult::assemble(prob, p, cur.q, iters, converged, tol, history))
}
