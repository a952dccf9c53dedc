//! Realizations of the operator T(p) = argmin_{q∈Θ} f(q) + D_ψ(q‖p).
//!
//! * [`apply_exact`]: closed form where one exists, otherwise the
//!   quasi-Newton inner solver run to `tol_stationarity`.
//! * [`apply_inexact`]: an approximate minimizer certified to within δ_t of
//!   the optimal merit, followed by an Armijo-accepted mirror step.
//! * [`apply_qn`]: BFGS in mirror coordinates, started at `p`.
//!
//! The three are also exposed as [`OperatorSolver`] strategies through
//! [`solver_registry`], which is how the dynamics driver and the command line
//! select one by name.

mod inexact;
mod qn;

use std::sync::Arc;

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{softmax, DualPoint, Point, PotentialKind};
use crate::problems::{kkt_residual_unchecked, BvldProblem, FeasibleSet};
use crate::registry::Registry;

pub use inexact::apply_inexact;
pub use qn::apply_qn;
pub(crate) use qn::quasi_newton;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub tol_stationarity: f64,
    pub tol_step: f64,
    pub max_inner_iters: usize,
    pub armijo_gamma: f64,
    pub armijo_beta: f64,
    /// δ₀ of the inexactness schedule δ_t = δ₀·rᵗ.
    pub delta0: f64,
    /// r of the inexactness schedule; must be below 1 so Σδ_t is finite.
    pub delta_ratio: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_stationarity: 1e-10,
            tol_step: 1e-12,
            max_inner_iters: 200,
            armijo_gamma: 0.5,
            armijo_beta: 0.5,
            delta0: 1e-4,
            delta_ratio: 0.5,
        }
    }
}

impl SolveOptions {
    pub fn delta(&self, t: usize) -> f64 {
        self.delta0 * self.delta_ratio.powi(t.min(i32::MAX as usize) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must lie in (0,1), got {v}")))
            }
        };
        positive("tol_stationarity", self.tol_stationarity)?;
        positive("tol_step", self.tol_step)?;
        unit("armijo_gamma", self.armijo_gamma)?;
        unit("armijo_beta", self.armijo_beta)?;
        if self.max_inner_iters == 0 {
            return Err(Error::Invalid("max_inner_iters must be positive".into()));
        }
        if !(self.delta0 >= 0.0 && self.delta0.is_finite()) {
            return Err(Error::Invalid(format!(
                "delta0 must be nonnegative, got {}",
                self.delta0
            )));
        }
        if !(self.delta_ratio >= 0.0 && self.delta_ratio < 1.0) {
            return Err(Error::Invalid(format!(
                "delta_ratio must lie in [0,1), got {}",
                self.delta_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    DomainFailure,
}

/// Accepted Armijo step of the inexact update.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoStep {
    pub alpha: f64,
    pub trials: usize,
    /// The mirror-form test rejected every trial and the classical test on f
    /// decided the step.
    pub fallback: bool,
    /// p⁺ = ∇ψ⁻¹(∇ψ(p) + α(∇ψ(q) − ∇ψ(p))).
    pub next: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub q: Point,
    pub inner_iters: usize,
    pub kkt_residual: f64,
    /// Φ(q;p) = f(q) + D_ψ(q‖p).
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Stationarity tolerance the status refers to: `Converged` implies
    /// `kkt_residual <= tolerance`.
    pub tolerance: f64,
    /// G_ψ(p) = ∇ψ(p) − ∇ψ(q).
    pub mirror_residual: DualPoint,
    /// Merit after each accepted inner step (first entry is Φ at the start).
    pub merit_history: Vec<f64>,
    pub armijo: Option<ArmijoStep>,
    /// δ_t the result was certified against (inexact solver only).
    pub delta: Option<f64>,
}

impl SolveResult {
    /// The point the outer recursion moves to: p⁺ for the inexact update,
    /// q otherwise.
    pub fn next_iterate(&self) -> &Point {
        self.armijo.as_ref().map(|a| &a.next).unwrap_or(&self.q)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub(crate) fn assemble(
        prob: &BvldProblem,
        p: &Point,
        q: Point,
        inner_iters: usize,
        converged: bool,
        tolerance: f64,
        merit_history: Vec<f64>,
    ) -> Self {
        let kkt = kkt_residual_unchecked(prob, p, &q);
        let status = if converged && kkt <= tolerance {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIters
        };
        Self {
            objective_value: prob.merit(&q, p),
            mirror_residual: prob.potential.grad(p) - prob.potential.grad(&q),
            kkt_residual: kkt,
            tolerance,
            q,
            inner_iters,
            status,
            merit_history,
            armijo: None,
            delta: None,
        }
    }
}

/// One realization of the operator, selectable by name.
pub trait OperatorSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// Applies T_t at `p`; `t` indexes the inexactness schedule.
    fn apply(&self, prob: &BvldProblem, p: &Point, t: usize, opts: &SolveOptions)
        -> Result<SolveResult>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSolver;

#[derive(Debug, Clone, Copy, Default)]
pub struct InexactSolver;

#[derive(Debug, Clone, Copy, Default)]
pub struct QuasiNewtonSolver;

impl OperatorSolver for ExactSolver {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn apply(&self, prob: &BvldProblem, p: &Point, _t: usize, opts: &SolveOptions) -> Result<SolveResult> {
        apply_exact(prob, p, opts)
    }
}

impl OperatorSolver for InexactSolver {
    fn name(&self) -> &'static str {
        "inexact"
    }
    fn apply(&self, prob: &BvldProblem, p: &Point, t: usize, opts: &SolveOptions) -> Result<SolveResult> {
        apply_inexact(prob, p, t, opts)
    }
}

impl OperatorSolver for QuasiNewtonSolver {
    fn name(&self) -> &'static str {
        "qn"
    }
    fn apply(&self, prob: &BvldProblem, p: &Point, _t: usize, opts: &SolveOptions) -> Result<SolveResult> {
        apply_qn(prob, p, opts)
    }
}

pub fn solver_registry() -> Registry<dyn OperatorSolver, ()> {
    let mut reg: Registry<dyn OperatorSolver, ()> = Registry::new("solver");
    reg.register("exact", |_| Ok(Arc::new(ExactSolver) as Arc<dyn OperatorSolver>))
        .register("inexact", |_| Ok(Arc::new(InexactSolver) as Arc<dyn OperatorSolver>))
        .register("qn", |_| Ok(Arc::new(QuasiNewtonSolver) as Arc<dyn OperatorSolver>));
    reg
}

/// Exact minimizer of Φ(·;p) over Θ.
///
/// Closed forms: Euclidean ψ with a quadratic loss on the whole space gives
/// `q = (A + I)⁻¹(p + b)`; entropy on the simplex with a linear loss `cᵀq`
/// gives `q ∝ p·exp(−c)`. Everything else runs the quasi-Newton solver to
/// `tol_stationarity`.
pub fn apply_exact(prob: &BvldProblem, p: &Point, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    prob.check_point(p)?;
    if let Some(q) = closed_form(prob, p) {
        if prob.is_admissible(&q) {
            let phi = prob.merit(&q, p);
            // The closed form is exact up to rounding; its residual is judged
            // against the rounding-level floor rather than tol_stationarity.
            let tol = opts.tol_stationarity.max(1e-8);
            return Ok(SolveResult::assemble(prob, p, q, 0, true, tol, vec![phi]));
        }
    }
    quasi_newton(prob, p, p.clone(), opts.tol_stationarity, opts)
}

fn closed_form(prob: &BvldProblem, p: &Point) -> Option<Point> {
    let (a, b) = prob.objective.quadratic_parts()?;
    match (prob.potential.kind(), &prob.feasible) {
        (PotentialKind::Euclidean, FeasibleSet::Whole) => {
            let n = p.len();
            let m = a + nalgebra::DMatrix::<f64>::identity(n, n);
            let rhs: DVector<f64> = p + b;
            Cholesky::new(m).map(|c| c.solve(&rhs))
        }
        (PotentialKind::NegativeEntropy, FeasibleSet::Simplex)
            if prob.potential.on_simplex() && a.amax() == 0.0 =>
        {
            // f = −bᵀq, so c = −b and log q = log p + b − log Z.
            Some(softmax(&(p.map(f64::ln) + b)))
        }
        _ => None,
    }
}
