//! Objective families, feasible sets and the operator problem bundle.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bregman_unchecked, Point, Potential, ScalarFn, VectorFn, SIMPLEX_TOL};
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Quadratic,
    LogSumExp,
    Huberized,
    Custom,
    /// Built from other objectives (noisy, weighted-sum or robust wrappers).
    Composite,
}

/// A convex, L-smooth loss f.
pub trait Objective: Send + Sync + fmt::Debug {
    fn kind(&self) -> ObjectiveKind;
    fn dim(&self) -> usize;
    fn value(&self, q: &Point) -> f64;
    fn grad(&self, q: &Point) -> DVector<f64>;

    /// Lipschitz constant L of ∇f.
    fn lipschitz(&self) -> f64;

    /// A known unconstrained minimizer, if any.
    fn minimizer(&self) -> Option<Point> {
        None
    }

    /// `(A, b)` when f(q) = ½qᵀAq − bᵀq.
    fn quadratic_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }

    /// Fenchel conjugate f*(v); `Some(f64::INFINITY)` outside its domain.
    fn conjugate(&self, _v: &DVector<f64>) -> Option<f64> {
        None
    }

    /// The same loss moved so that its minimizer sits at `center`.
    fn retarget(&self, _center: &Point) -> Option<Arc<dyn Objective>> {
        None
    }
}

/// f(q) = ½qᵀAq − bᵀq with A symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    l: f64,
    lambda_min: f64,
    // Cholesky-free inverse is fine at desk scale; kept for f* and q*.
    a_inv: Option<DMatrix<f64>>,
}

/// Eigenvalues below this are treated as zero when deciding invertibility.
const SINGULAR_EIG: f64 = 1e-12;

/// Builds `½qᵀAq − bᵀq`, with `L = λ_max(A)` and `q* = A⁻¹b` when A is
/// nonsingular.
pub fn make_quadratic(a: DMatrix<f64>, b: DVector<f64>) -> Result<Quadratic> {
    let n = b.len();
    if a.nrows() != n {
        return Err(Error::Shape {
            expected: n,
            got: a.nrows(),
        });
    }
    if a.ncols() != n {
        return Err(Error::Shape {
            expected: n,
            got: a.ncols(),
        });
    }
    let scale = a.amax().max(1.0);
    if (&a - a.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Invalid("quadratic matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let lambda_min = eig.min();
    let lambda_max = eig.max();
    if lambda_min < -1e-10 {
        return Err(Error::Spectrum {
            eigenvalue: lambda_min,
        });
    }
    let a_inv = if lambda_min > SINGULAR_EIG * scale {
        a.clone().try_inverse()
    } else {
        None
    };
    Ok(Quadratic {
        a,
        b,
        l: lambda_max.max(0.0),
        lambda_min: lambda_min.max(0.0),
        a_inv,
    })
}

impl Quadratic {
    /// f(q) = cᵀq, the A = 0 case.
    pub fn linear(c: DVector<f64>) -> Self {
        let n = c.len();
        make_quadratic(DMatrix::zeros(n, n), -c).expect("zero matrix is PSD")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn is_linear(&self) -> bool {
        self.a.amax() == 0.0
    }

    /// Same A with linear term `b`.
    pub fn with_linear_term(&self, b: DVector<f64>) -> Self {
        Self {
            b,
            ..self.clone()
        }
    }
}

impl Objective for Quadratic {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Quadratic
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, q: &Point) -> f64 {
        0.5 * q.dot(&(&self.a * q)) - self.b.dot(q)
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        &self.a * q - &self.b
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
    fn minimizer(&self) -> Option<Point> {
        self.a_inv.as_ref().map(|inv| inv * &self.b)
    }
    fn quadratic_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.a, &self.b))
    }
    fn conjugate(&self, v: &DVector<f64>) -> Option<f64> {
        let w = v + &self.b;
        if let Some(inv) = &self.a_inv {
            return Some(0.5 * w.dot(&(inv * &w)));
        }
        if self.is_linear() {
            return Some(if w.amax() <= 1e-9 { 0.0 } else { f64::INFINITY });
        }
        None
    }
    fn retarget(&self, center: &Point) -> Option<Arc<dyn Objective>> {
        Some(Arc::new(self.with_linear_term(&self.a * center)))
    }
}

/// Smooth absolute-value loss `s Σᵢ log(e^{zᵢ} + e^{−zᵢ})`, `zᵢ = (qᵢ − cᵢ)/s`.
///
/// Convex with gradient `tanh(zᵢ)` and L = 1/s; minimized at `c`. Curvature
/// vanishes far from `c`.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    scale: f64,
    center: DVector<f64>,
}

impl LogSumExp {
    pub fn new(scale: f64, center: DVector<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, center })
    }
}

impl Objective for LogSumExp {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::LogSumExp
    }
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, q: &Point) -> f64 {
        let s = self.scale;
        q.iter()
            .zip(self.center.iter())
            .map(|(qi, ci)| {
                let z = ((qi - ci) / s).abs();
                s * (z + (-2.0 * z).exp().ln_1p())
            })
            .sum()
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        (q - &self.center).map(|d| (d / self.scale).tanh())
    }
    fn lipschitz(&self) -> f64 {
        1.0 / self.scale
    }
    fn minimizer(&self) -> Option<Point> {
        Some(self.center.clone())
    }
    fn retarget(&self, center: &Point) -> Option<Arc<dyn Objective>> {
        Some(Arc::new(Self {
            scale: self.scale,
            center: center.clone(),
        }))
    }
}

/// Σᵢ Huber_δ(qᵢ − cᵢ): quadratic within δ of the center, linear outside; L = 1.
#[derive(Debug, Clone)]
pub struct Huberized {
    delta: f64,
    center: DVector<f64>,
}

impl Huberized {
    pub fn new(delta: f64, center: DVector<f64>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Invalid(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { delta, center })
    }
}

impl Objective for Huberized {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Huberized
    }
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, q: &Point) -> f64 {
        let d = self.delta;
        q.iter()
            .zip(self.center.iter())
            .map(|(qi, ci)| {
                let r = (qi - ci).abs();
                if r <= d {
                    0.5 * r * r
                } else {
                    d * r - 0.5 * d * d
                }
            })
            .sum()
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        (q - &self.center).map(|r| r.clamp(-self.delta, self.delta))
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn minimizer(&self) -> Option<Point> {
        Some(self.center.clone())
    }
    fn retarget(&self, center: &Point) -> Option<Arc<dyn Objective>> {
        Some(Arc::new(Self {
            delta: self.delta,
            center: center.clone(),
        }))
    }
}

/// User-supplied objective with a declared L, spot-checked at construction.
#[derive(Clone)]
pub struct CustomObjective {
    dim: usize,
    l: f64,
    value: ScalarFn,
    grad: VectorFn,
    minimizer: Option<Point>,
}

impl CustomObjective {
    pub fn new(
        dim: usize,
        lipschitz: f64,
        value: ScalarFn,
        grad: VectorFn,
        minimizer: Option<Point>,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::Invalid(format!(
                "L must be nonnegative, got {lipschitz}"
            )));
        }
        let f = Self {
            dim,
            l: lipschitz,
            value,
            grad,
            minimizer,
        };
        let mut rng = sampling::rng(sampling::CHECK_SEED);
        for _ in 0..crate::geometry::CONSTANT_CHECK_SAMPLES {
            let x = sampling::uniform_box(&mut rng, dim, -2.0, 2.0);
            let y = sampling::uniform_box(&mut rng, dim, -2.0, 2.0);
            let lhs = (f.grad(&x) - f.grad(&y)).norm();
            let rhs = f.l * (&x - &y).norm();
            if lhs > rhs * (1.0 + 1e-8) + 1e-12 {
                return Err(Error::Constant {
                    name: "L",
                    value: f.l,
                    detail: format!("|grad f(x) - grad f(y)| = {lhs:e} > L|x-y| = {rhs:e}"),
                });
            }
        }
        Ok(f)
    }
}

impl fmt::Debug for CustomObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomObjective")
            .field("dim", &self.dim)
            .field("l", &self.l)
            .finish()
    }
}

impl Objective for CustomObjective {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Custom
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &Point) -> f64 {
        (self.value)(q)
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        (self.grad)(q)
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
    fn minimizer(&self) -> Option<Point> {
        self.minimizer.clone()
    }
}

/// `f(q) + ⟨shift, q⟩`: a loss whose gradient is offset by a fixed vector,
/// used to inject observation noise into a single operator application.
#[derive(Debug, Clone)]
pub struct Shifted {
    inner: Arc<dyn Objective>,
    shift: DVector<f64>,
    quadratic: Option<Quadratic>,
}

impl Shifted {
    pub fn new(inner: Arc<dyn Objective>, shift: DVector<f64>) -> Self {
        let quadratic = inner.quadratic_parts().and_then(|(a, b)| {
            make_quadratic(a.clone(), b - &shift).ok()
        });
        Self {
            inner,
            shift,
            quadratic,
        }
    }
}

impl Objective for Shifted {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Composite
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, q: &Point) -> f64 {
        self.inner.value(q) + self.shift.dot(q)
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        self.inner.grad(q) + &self.shift
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
    fn minimizer(&self) -> Option<Point> {
        self.quadratic.as_ref().and_then(|q| q.minimizer())
    }
    fn quadratic_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.quadratic.as_ref().and_then(|q| q.quadratic_parts())
    }
    fn conjugate(&self, v: &DVector<f64>) -> Option<f64> {
        self.inner.conjugate(&(v - &self.shift))
    }
}

/// Closed convex feasible set Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeasibleSet {
    Whole,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Simplex,
}

/// Slack allowed when testing membership of projected points.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn at_bound(v: f64, bound: f64) -> bool {
    (v - bound).abs() <= 1e-10 * (1.0 + bound.abs())
}

impl FeasibleSet {
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Self {
        FeasibleSet::Box {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn project(&self, x: &Point) -> Point {
        match self {
            FeasibleSet::Whole => x.clone(),
            FeasibleSet::Box { lo, hi } => {
                DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
            }
            FeasibleSet::Simplex => project_simplex(x),
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        if !x.iter().all(|v| v.is_finite()) {
            return false;
        }
        match self {
            FeasibleSet::Whole => true,
            FeasibleSet::Box { lo, hi } => x.iter().enumerate().all(|(i, &v)| {
                v >= lo[i] - MEMBERSHIP_TOL * (1.0 + lo[i].abs())
                    && v <= hi[i] + MEMBERSHIP_TOL * (1.0 + hi[i].abs())
            }),
            FeasibleSet::Simplex => {
                x.iter().all(|&v| v >= -MEMBERSHIP_TOL) && (x.sum() - 1.0).abs() <= SIMPLEX_TOL
            }
        }
    }

    /// Component of `g` that is not absorbed by the normal cone N_Θ(q).
    ///
    /// Box: components at an active bound are zeroed when `g` pushes outward
    /// (`gᵢ ≥ 0` at the lower bound, `gᵢ ≤ 0` at the upper bound).
    /// Simplex: `g` is shifted by the multiplier of `Σq = 1` (minus the mean
    /// over free coordinates); coordinates at zero keep only a negative part.
    pub fn stationarity_residual(&self, q: &Point, g: &DVector<f64>) -> DVector<f64> {
        match self {
            FeasibleSet::Whole => g.clone(),
            FeasibleSet::Box { lo, hi } => DVector::from_fn(g.len(), |i, _| {
                let gi = g[i];
                if at_bound(q[i], lo[i]) && at_bound(q[i], hi[i]) {
                    0.0
                } else if at_bound(q[i], lo[i]) {
                    gi.min(0.0)
                } else if at_bound(q[i], hi[i]) {
                    gi.max(0.0)
                } else {
                    gi
                }
            }),
            FeasibleSet::Simplex => {
                let free: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 1e-12).collect();
                let shift = if free.is_empty() {
                    0.0
                } else {
                    -free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
                };
                DVector::from_fn(g.len(), |i, _| {
                    let r = g[i] + shift;
                    if q[i] > 1e-12 {
                        r
                    } else {
                        r.min(0.0)
                    }
                })
            }
        }
    }

    /// Coordinates sitting on the boundary of Θ.
    pub(crate) fn active_set(&self, q: &Point) -> Vec<bool> {
        match self {
            FeasibleSet::Whole => vec![false; q.len()],
            FeasibleSet::Box { lo, hi } => (0..q.len())
                .map(|i| at_bound(q[i], lo[i]) || at_bound(q[i], hi[i]))
                .collect(),
            FeasibleSet::Simplex => q.iter().map(|&v| v <= 1e-12).collect(),
        }
    }

    /// Restricts a search direction to the tangent cone at `q`: components
    /// that would leave an active bound are dropped, and on the simplex the
    /// remaining free components are made to sum to zero.
    pub(crate) fn tangent_direction(&self, q: &Point, d: &DVector<f64>) -> DVector<f64> {
        match self {
            FeasibleSet::Whole => d.clone(),
            FeasibleSet::Box { lo, hi } => DVector::from_fn(d.len(), |i, _| {
                let di = d[i];
                if (at_bound(q[i], lo[i]) && di < 0.0) || (at_bound(q[i], hi[i]) && di > 0.0) {
                    0.0
                } else {
                    di
                }
            }),
            FeasibleSet::Simplex => {
                let free: Vec<bool> = (0..q.len()).map(|i| q[i] > 1e-12 || d[i] > 0.0).collect();
                let count = free.iter().filter(|&&f| f).count();
                if count == 0 {
                    return DVector::zeros(d.len());
                }
                let mean = (0..d.len()).filter(|&i| free[i]).map(|i| d[i]).sum::<f64>()
                    / count as f64;
                DVector::from_fn(d.len(), |i, _| if free[i] { d[i] - mean } else { 0.0 })
            }
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if let FeasibleSet::Box { lo, hi } = self {
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: lo.len().min(hi.len()),
                });
            }
            if lo.iter().zip(hi).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
                return Err(Error::Invalid("box has lo > hi".into()));
            }
        }
        Ok(())
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(x: &Point) -> Point {
    let n = x.len();
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    DVector::from_fn(n, |i, _| (x[i] - theta).max(0.0))
}

/// One operator T(p) = argmin_{q∈Θ} f(q) + D_ψ(q‖p), with κ = μ/(μ+L).
#[derive(Debug, Clone)]
pub struct BvldProblem {
    pub objective: Arc<dyn Objective>,
    pub potential: Arc<dyn Potential>,
    pub feasible: FeasibleSet,
    kappa: f64,
}

impl BvldProblem {
    /// A simplex-domain potential with `Whole` is treated as `Simplex`.
    pub fn new(
        objective: Arc<dyn Objective>,
        potential: Arc<dyn Potential>,
        feasible: FeasibleSet,
    ) -> Result<Self> {
        let dim = potential.dim();
        if objective.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: objective.dim(),
            });
        }
        feasible.check_dim(dim)?;
        let feasible = if potential.on_simplex() && feasible == FeasibleSet::Whole {
            FeasibleSet::Simplex
        } else {
            feasible
        };
        let mu = potential.mu();
        let kappa = mu / (mu + objective.lipschitz());
        Ok(Self {
            objective,
            potential,
            feasible,
            kappa,
        })
    }

    /// Same potential and feasible set with a different loss.
    pub fn with_objective(&self, objective: Arc<dyn Objective>) -> Result<Self> {
        Self::new(objective, self.potential.clone(), self.feasible.clone())
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn mu(&self) -> f64 {
        self.potential.mu()
    }

    pub fn lipschitz(&self) -> f64 {
        self.objective.lipschitz()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Merit Φ(q;p) = f(q) + D_ψ(q‖p) (unchecked).
    pub fn merit(&self, q: &Point, p: &Point) -> f64 {
        self.objective.value(q) + bregman_unchecked(self.potential.as_ref(), q, p)
    }

    /// ∇f(q) + ∇ψ(q) − ∇ψ(p).
    pub fn merit_grad(&self, q: &Point, p: &Point) -> DVector<f64> {
        self.objective.grad(q) + self.potential.grad(q) - self.potential.grad(p)
    }

    pub fn is_admissible(&self, x: &Point) -> bool {
        x.len() == self.dim() && self.potential.in_domain(x) && self.feasible.contains(x)
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        self.potential.check(x)?;
        if !self.feasible.contains(x) {
            return Err(Error::domain(
                self.potential.name(),
                format!("point is outside the feasible set {:?}", self.feasible),
            ));
        }
        Ok(())
    }
}

/// Norm of the part of ∇f(q) + ∇ψ(q) − ∇ψ(p) not absorbed by N_Θ(q).
pub fn kkt_residual(prob: &BvldProblem, p: &Point, q: &Point) -> Result<f64> {
    prob.check_point(p)?;
    prob.check_point(q)?;
    Ok(kkt_residual_unchecked(prob, p, q))
}

pub(crate) fn kkt_residual_unchecked(prob: &BvldProblem, p: &Point, q: &Point) -> f64 {
    let g = prob.merit_grad(q, p);
    prob.feasible.stationarity_residual(q, &g).norm()
}
