//! Legendre potentials, mirror maps and Bregman divergences.
//!
//! A [`Potential`] ψ supplies its value, the mirror map ∇ψ, the inverse mirror
//! map ∇ψ⁻¹ and a strong-convexity modulus μ with respect to the Euclidean
//! norm. Everything downstream (operators, envelopes, dynamics) is written
//! against the trait, so built-in and user-supplied potentials are
//! interchangeable.
//!
//! Operations reject points outside `int(dom ψ)` with [`Error::Domain`]
//! instead of clamping them; clamping would hide iterates that ran into the
//! boundary of a steep potential.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::registry::Registry;
use crate::sampling;

pub type Point = DVector<f64>;
/// Mirror (dual) coordinates, i.e. values of ∇ψ and their differences.
pub type DualPoint = DVector<f64>;

/// Tolerance on `Σx = 1` for points on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Euclidean,
    NegativeEntropy,
    Custom,
}

pub trait Potential: Send + Sync + fmt::Debug {
    fn kind(&self) -> PotentialKind;

    /// Registry name, e.g. `"euclidean"` or `"entropy-simplex"`.
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Strong-convexity modulus with respect to ‖·‖₂.
    fn mu(&self) -> f64;

    fn in_domain(&self, x: &Point) -> bool;

    fn value(&self, x: &Point) -> f64;

    /// Mirror map ∇ψ(x).
    fn grad(&self, x: &Point) -> DualPoint;

    /// Inverse mirror map ∇ψ⁻¹(u) = ∇ψ*(u).
    fn grad_inv(&self, u: &DualPoint) -> Point;

    /// Directional derivative of the inverse mirror map at `u = ∇ψ(x)` along
    /// `h`, i.e. `∇²ψ*(∇ψ(x)) h`. This is the primal velocity of the mirror
    /// path `α ↦ ∇ψ⁻¹(∇ψ(x) + αh)` at `α = 0`.
    fn mirror_tangent(&self, x: &Point, h: &DualPoint) -> DVector<f64> {
        let u = self.grad(x);
        let eps = 1e-6 * (1.0 + h.norm()).recip();
        let fwd = self.grad_inv(&(&u + h * eps));
        let bwd = self.grad_inv(&(&u - h * eps));
        (fwd - bwd) / (2.0 * eps)
    }

    /// Fenchel conjugate ψ*(u), when it has a closed form.
    fn conjugate(&self, _u: &DualPoint) -> Option<f64> {
        None
    }

    /// Whether the domain is the probability simplex (so ∇ψ is only defined
    /// up to adding a multiple of the all-ones vector).
    fn on_simplex(&self) -> bool {
        false
    }

    /// Returns a [`Error::Domain`] naming the first offending coordinate.
    fn check(&self, x: &Point) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::domain(self.name(), describe_violation(x)))
        }
    }
}

fn describe_violation(x: &Point) -> String {
    match x.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        Some(i) => format!("coordinate {} = {}", i, x[i]),
        None => format!("coordinates sum to {}", x.sum()),
    }
}

/// ψ(x) = ½‖x‖², μ = 1; the mirror map is the identity.
#[derive(Debug, Clone)]
pub struct Euclidean {
    dim: usize,
}

impl Euclidean {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Potential for Euclidean {
    fn kind(&self) -> PotentialKind {
        PotentialKind::Euclidean
    }
    fn name(&self) -> &str {
        "euclidean"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn mu(&self) -> f64 {
        1.0
    }
    fn in_domain(&self, x: &Point) -> bool {
        x.iter().all(|v| v.is_finite())
    }
    fn value(&self, x: &Point) -> f64 {
        0.5 * x.norm_squared()
    }
    fn grad(&self, x: &Point) -> DualPoint {
        x.clone()
    }
    fn grad_inv(&self, u: &DualPoint) -> Point {
        u.clone()
    }
    fn mirror_tangent(&self, _x: &Point, h: &DualPoint) -> DVector<f64> {
        h.clone()
    }
    fn conjugate(&self, u: &DualPoint) -> Option<f64> {
        Some(0.5 * u.norm_squared())
    }
}

/// Negative entropy ψ(x) = Σ xᵢ log xᵢ.
///
/// On the open positive orthant the inverse mirror map is `exp(u − 1)`; on
/// the simplex it is the softmax, which keeps iterates normalized. In both
/// cases μ = 1 holds for ‖·‖₂ as long as every coordinate is at most 1 (the
/// Hessian is `diag(1/xᵢ)`), which always holds on the simplex. The gradient
/// is not Lipschitz near the boundary.
#[derive(Debug, Clone)]
pub struct NegativeEntropy {
    dim: usize,
    simplex: bool,
}

impl NegativeEntropy {
    pub fn orthant(dim: usize) -> Self {
        Self {
            dim,
            simplex: false,
        }
    }

    pub fn simplex(dim: usize) -> Self {
        Self { dim, simplex: true }
    }
}

/// `x log x` with the continuous extension `0 log 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn log_sum_exp(u: &DVector<f64>) -> f64 {
    let m = u.max();
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(u: &DVector<f64>) -> DVector<f64> {
    let m = u.max();
    let e = u.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

impl Potential for NegativeEntropy {
    fn kind(&self) -> PotentialKind {
        PotentialKind::NegativeEntropy
    }
    fn name(&self) -> &str {
        if self.simplex {
            "entropy-simplex"
        } else {
            "entropy"
        }
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn mu(&self) -> f64 {
        1.0
    }
    fn in_domain(&self, x: &Point) -> bool {
        let positive = x.iter().all(|v| v.is_finite() && *v > 0.0);
        positive && (!self.simplex || (x.sum() - 1.0).abs() <= SIMPLEX_TOL)
    }
    fn value(&self, x: &Point) -> f64 {
        x.iter().map(|&v| xlogx(v)).sum()
    }
    fn grad(&self, x: &Point) -> DualPoint {
        x.map(|v| 1.0 + v.ln())
    }
    fn grad_inv(&self, u: &DualPoint) -> Point {
        if self.simplex {
            softmax(u)
        } else {
            u.map(|v| (v - 1.0).exp())
        }
    }
    fn mirror_tangent(&self, x: &Point, h: &DualPoint) -> DVector<f64> {
        let xh = x.component_mul(h);
        if self.simplex {
            let s = x.dot(h);
            xh - x * s
        } else {
            xh
        }
    }
    fn conjugate(&self, u: &DualPoint) -> Option<f64> {
        if self.simplex {
            Some(log_sum_exp(u))
        } else {
            Some(u.iter().map(|v| (v - 1.0).exp()).sum())
        }
    }
    fn on_simplex(&self) -> bool {
        self.simplex
    }
}

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&Point) -> bool + Send + Sync>;

/// User-supplied potential. The declared μ is spot-checked at construction.
#[derive(Clone)]
pub struct CustomPotential {
    name: String,
    dim: usize,
    mu: f64,
    value: ScalarFn,
    grad: VectorFn,
    grad_inv: VectorFn,
    domain: DomainFn,
}

/// Number of sampled pairs used to validate declared constants.
pub const CONSTANT_CHECK_SAMPLES: usize = 1000;

impl CustomPotential {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        mu: f64,
        value: ScalarFn,
        grad: VectorFn,
        grad_inv: VectorFn,
        domain: DomainFn,
    ) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Invalid(format!("mu must be positive, got {mu}")));
        }
        let pot = Self {
            name: name.into(),
            dim,
            mu,
            value,
            grad,
            grad_inv,
            domain,
        };
        pot.verify_mu()?;
        Ok(pot)
    }

    fn verify_mu(&self) -> Result<()> {
        let samples = domain_samples(self, 2 * CONSTANT_CHECK_SAMPLES, sampling::CHECK_SEED);
        if samples.len() < 2 {
            return Err(Error::Invalid(format!(
                "could not sample the domain of {}",
                self.name
            )));
        }
        for pair in samples.chunks_exact(2).take(CONSTANT_CHECK_SAMPLES) {
            let (x, y) = (&pair[0], &pair[1]);
            let d = self.value(y) - self.value(x) - self.grad(x).dot(&(y - x));
            let bound = 0.5 * self.mu * (y - x).norm_squared();
            let tol = 1e-10 * (1.0 + self.value(y).abs() + self.value(x).abs());
            if d < bound - tol {
                return Err(Error::Constant {
                    name: "mu",
                    value: self.mu,
                    detail: format!("D = {d:e} < (mu/2)|x-y|^2 = {bound:e}"),
                });
            }
        }
        Ok(())
    }
}

/// Draws points inside `dom ψ`, alternating between `[-2, 2]^d` and `(0, 1]^d`
/// so that orthant-type domains are also covered.
pub fn domain_samples(pot: &dyn Potential, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = sampling::rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let x = if attempts % 2 == 0 {
            sampling::uniform_box(&mut rng, pot.dim(), -2.0, 2.0)
        } else {
            sampling::uniform_box(&mut rng, pot.dim(), 0.0, 1.0).map(|v| v.max(1e-6))
        };
        let x = if pot.on_simplex() { &x / x.sum() } else { x };
        if pot.in_domain(&x) {
            out.push(x);
        }
    }
    out
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .finish()
    }
}

impl Potential for CustomPotential {
    fn kind(&self) -> PotentialKind {
        PotentialKind::Custom
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn mu(&self) -> f64 {
        self.mu
    }
    fn in_domain(&self, x: &Point) -> bool {
        x.iter().all(|v| v.is_finite()) && (self.domain)(x)
    }
    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }
    fn grad(&self, x: &Point) -> DualPoint {
        (self.grad)(x)
    }
    fn grad_inv(&self, u: &DualPoint) -> Point {
        (self.grad_inv)(u)
    }
}

/// D_ψ(x‖y) = ψ(x) − ψ(y) − ⟨∇ψ(y), x − y⟩.
pub fn bregman_div(psi: &dyn Potential, x: &Point, y: &Point) -> Result<f64> {
    psi.check(x)?;
    psi.check(y)?;
    Ok(bregman_unchecked(psi, x, y))
}

/// Entropy divergences are evaluated in the `Σ xᵢ log(xᵢ/yᵢ) − Σ xᵢ + Σ yᵢ`
/// form, which avoids cancellation between the two ψ values.
pub(crate) fn bregman_unchecked(psi: &dyn Potential, x: &Point, y: &Point) -> f64 {
    if x == y {
        return 0.0;
    }
    let d = match psi.kind() {
        PotentialKind::Euclidean => 0.5 * (x - y).norm_squared(),
        PotentialKind::NegativeEntropy => x
            .iter()
            .zip(y.iter())
            .map(|(&a, &b)| if a == 0.0 { b } else { a * (a / b).ln() - a + b })
            .sum(),
        PotentialKind::Custom => psi.value(x) - psi.value(y) - psi.grad(y).dot(&(x - y)),
    };
    d.max(0.0)
}

/// Defect of the three-point identity:
/// `D(x‖y) + D(y‖z) − D(x‖z) − ⟨∇ψ(z) − ∇ψ(y), x − y⟩`.
pub fn three_point_residual(psi: &dyn Potential, x: &Point, y: &Point, z: &Point) -> Result<f64> {
    psi.check(x)?;
    psi.check(y)?;
    psi.check(z)?;
    let lhs = bregman_unchecked(psi, x, y) + bregman_unchecked(psi, y, z)
        - bregman_unchecked(psi, x, z);
    let rhs = (psi.grad(z) - psi.grad(y)).dot(&(x - y));
    Ok(lhs - rhs)
}

/// `⟨∇f(x) − ∇f(y), x − y⟩ − (1/L)‖∇f(x) − ∇f(y)‖²`; nonnegative for convex
/// L-smooth f.
pub fn cocoercivity_gap(f: &dyn Objective, x: &Point, y: &Point) -> f64 {
    let dg = f.grad(x) - f.grad(y);
    let l = f.lipschitz();
    let inner = dg.dot(&(x - y));
    if l == 0.0 {
        return inner;
    }
    inner - dg.norm_squared() / l
}

/// Creates potentials by registry name; the argument is the dimension.
pub fn potential_registry() -> Registry<dyn Potential, usize> {
    let mut reg: Registry<dyn Potential, usize> = Registry::new("potential");
    reg.register("euclidean", |&d| Ok(Arc::new(Euclidean::new(d)) as Arc<dyn Potential>))
        .register("entropy", |&d| {
            Ok(Arc::new(NegativeEntropy::orthant(d)) as Arc<dyn Potential>)
        })
        .register("entropy-simplex", |&d| {
            Ok(Arc::new(NegativeEntropy::simplex(d)) as Arc<dyn Potential>)
        });
    reg
}
