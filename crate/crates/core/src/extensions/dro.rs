use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{xlogx, Point, Potential};
use crate::problems::{BvldProblem, FeasibleSet, Objective, ObjectiveKind};
use crate::solver::{apply_qn, SolveOptions, SolveResult};

pub const MAX_ATOMS: usize = 64;
/// Lower end of the λ search.
pub const LAMBDA_MIN: f64 = 1e-8;
const GOLDEN_ITERS: usize = 120;
const BISECTION_ITERS: usize = 200;
const NEWTON_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divergence {
    Kl,
    ChiSquared,
}

impl Divergence {
    /// φ(r): KL r log r − r + 1, χ² (r − 1)²; +∞ for r < 0.
    pub fn phi(self, r: f64) -> f64 {
        if r < 0.0 {
            return f64::INFINITY;
        }
        match self {
            Divergence::Kl => xlogx(r) - r + 1.0,
            Divergence::ChiSquared => (r - 1.0).powi(2),
        }
    }

    /// φ*(s) = sup_{r≥0} sr − φ(r).
    pub fn conjugate(self, s: f64) -> f64 {
        match self {
            Divergence::Kl => s.exp_m1(),
            Divergence::ChiSquared if s >= -2.0 => s + 0.25 * s * s,
            Divergence::ChiSquared => -1.0,
        }
    }

    /// The maximizing ratio r(s) = (φ*)′(s).
    pub fn ratio(self, s: f64) -> f64 {
        match self {
            Divergence::Kl => s.exp(),
            Divergence::ChiSquared => (1.0 + 0.5 * s).max(0.0),
        }
    }

    fn ratio_slope(self, s: f64) -> f64 {
        match self {
            Divergence::Kl => s.exp(),
            Divergence::ChiSquared if s > -2.0 => 0.5,
            Divergence::ChiSquared => 0.0,
        }
    }
}

/// φ-divergence ball of radius ρ around a discrete nominal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguitySet {
    pub divergence: Divergence,
    pub rho: f64,
    pub atoms: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl AmbiguitySet {
    pub fn new(divergence: Divergence, rho: f64, atoms: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let set = Self {
            divergence,
            rho,
            atoms,
            weights,
        };
        set.validate()?;
        Ok(set)
    }

    /// Equal weights on the given atoms.
    pub fn uniform(divergence: Divergence, rho: f64, atoms: Vec<DVector<f64>>) -> Result<Self> {
        let j = atoms.len().max(1);
        Self::new(divergence, rho, atoms, vec![1.0 / j as f64; j])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Invalid(format!("rho must be positive, got {}", self.rho)));
        }
        let j = self.weights.len();
        if j == 0 || j > MAX_ATOMS {
            return Err(Error::Invalid(format!(
                "nominal distribution needs 1..={MAX_ATOMS} atoms, got {j}"
            )));
        }
        if self.atoms.len() != j {
            return Err(Error::Shape {
                expected: j,
                got: self.atoms.len(),
            });
        }
        let dim = self.atoms[0].len();
        if let Some(a) = self.atoms.iter().find(|a| a.len() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: a.len(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        let min = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        if min.is_nan() || min < 0.0 || sum.is_nan() || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Weight { sum, min });
        }
        Ok(())
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.divergence, rho, self.atoms.clone(), self.weights.clone())
    }

    /// Σ ĥⱼ φ(wⱼ/ĥⱼ) for a reweighting w of the atoms.
    pub fn divergence_of(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.weights)
            .map(|(&wj, &hj)| {
                if hj > 0.0 {
                    hj * self.divergence.phi(wj / hj)
                } else if wj == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    }
}

/// Robust value sup_{Q∈U} E_Q[ℓ] with its dual certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroEnvelope {
    pub value: f64,
    pub lambda_star: f64,
    pub eta_star: f64,
    /// The worst-case reweighting Q* of the atoms.
    pub weights: Vec<f64>,
}

struct Inner {
    value: f64,
    eta: f64,
    /// dV/dλ with η held at its optimum.
    slope: f64,
    weights: Vec<f64>,
}

struct Dual<'a> {
    div: Divergence,
    rho: f64,
    h: &'a [f64],
    loss: &'a [f64],
    lmax: f64,
    lmin: f64,
    /// Nominal mass on the atoms attaining lmax.
    h_top: f64,
}

impl Dual<'_> {
    /// min over η of λρ + η + λ Σ ĥⱼ φ*((ℓⱼ − η)/λ), by safeguarded Newton on
    /// 1 − Σ ĥⱼ r((ℓⱼ − η)/λ).
    fn inner(&self, lambda: f64) -> Inner {
        let div = self.div;
        let floor = match div {
            Divergence::Kl => self.lmax + lambda * self.h_top.ln(),
            Divergence::ChiSquared => self.lmax - 2.0 * lambda * (1.0 / self.h_top - 1.0),
        };
        let (mut lo, mut hi) = (self.lmin.max(floor), self.lmax);
        let score = |eta: f64| {
            let mut h = 1.0;
            let mut dh = 0.0;
            for (&hj, &lj) in self.h.iter().zip(self.loss) {
                if hj > 0.0 {
                    let s = (lj - eta) / lambda;
                    h -= hj * div.ratio(s);
                    dh += hj * div.ratio_slope(s) / lambda;
                }
            }
            (h, dh)
        };
        let mut eta = 0.5 * (lo + hi);
        for _ in 0..NEWTON_ITERS {
            let (h, dh) = score(eta);
            if h == 0.0 {
                break;
            }
            if h < 0.0 {
                lo = eta;
            } else {
                hi = eta;
            }
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + eta.abs()) {
                break;
            }
            let newton = eta - h / dh;
            eta = if dh > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        let mut value = lambda * self.rho + eta;
        let mut slope = self.rho;
        let mut weights = vec![0.0; self.h.len()];
        for (j, (&hj, &lj)) in self.h.iter().zip(self.loss).enumerate() {
            if hj > 0.0 {
                let s = (lj - eta) / lambda;
                let phi = div.conjugate(s);
                let r = div.ratio(s);
                value += lambda * hj * phi;
                slope += hj * (phi - s * r);
                weights[j] = hj * r;
            }
        }
        normalize(&mut weights);
        Inner {
            value,
            eta,
            slope,
            weights,
        }
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
}

/// Robust value of the per-atom losses `loss[j] = ℓ(q, θⱼ)` over the
/// ambiguity set, through the η-augmented dual
/// `min_{λ≥0, η} λρ + η + λ Σ ĥⱼ φ*((ℓⱼ − η)/λ)`.
///
/// λ is located by golden-section search over log λ on
/// `[LAMBDA_MIN, λ_max]` and refined by bisection on ∂V/∂λ; η is solved
/// exactly for each λ. The λ = 0 limit, `max ℓ` over the support, is taken
/// when it is lower.
pub fn dro_envelope(amb: &AmbiguitySet, loss: &[f64]) -> Result<DroEnvelope> {
    amb.validate()?;
    if loss.len() != amb.weights.len() {
        return Err(Error::Shape {
            expected: amb.weights.len(),
            got: loss.len(),
        });
    }
    if let Some(j) = loss.iter().position(|l| !l.is_finite()) {
        return Err(Error::Invalid(format!("loss of atom {j} is not finite")));
    }
    let h = &amb.weights;
    let support = || h.iter().zip(loss).filter(|(&hj, _)| hj > 0.0).map(|(_, &l)| l);
    let lmax = support().fold(f64::NEG_INFINITY, f64::max);
    let lmin = support().fold(f64::INFINITY, f64::min);
    let mean: f64 = h.iter().zip(loss).map(|(a, b)| a * b).sum();
    let top: Vec<f64> = h
        .iter()
        .zip(loss)
        .map(|(&hj, &l)| if hj > 0.0 && l == lmax { hj } else { 0.0 })
        .collect();
    if lmax - lmin <= 1e-15 * (1.0 + lmax.abs()) {
        return Ok(DroEnvelope {
            value: mean,
            lambda_star: 0.0,
            eta_star: lmax,
            weights: h.clone(),
        });
    }
    let dual = Dual {
        div: amb.divergence,
        rho: amb.rho,
        h,
        loss,
        lmax,
        lmin,
        h_top: top.iter().sum(),
    };

    // V(λ) ≥ λρ + E[ℓ] and V ≤ max ℓ at the optimum, so λ* ≤ (max ℓ − E[ℓ])/ρ.
    let mut hi = (2.0 * (lmax - mean) / amb.rho).max(10.0 * LAMBDA_MIN);
    let mut expanded = false;
    let t_star = loop {
        let t = golden(|t| dual.inner(t.exp()).value, LAMBDA_MIN.ln(), hi.ln());
        if hi.ln() - t > 1e-3 * (hi.ln() - LAMBDA_MIN.ln()) {
            break t;
        }
        if expanded {
            return Err(Error::Bracket {
                lo: LAMBDA_MIN,
                hi,
            });
        }
        hi *= 10.0;
        expanded = true;
    };
    let lambda = refine(&dual, t_star, LAMBDA_MIN.ln(), hi.ln()).exp();
    let best = dual.inner(lambda);

    if lmax <= best.value {
        let mut weights = top;
        normalize(&mut weights);
        return Ok(DroEnvelope {
            value: lmax,
            lambda_star: 0.0,
            eta_star: lmax,
            weights,
        });
    }
    Ok(DroEnvelope {
        value: best.value,
        lambda_star: lambda,
        eta_star: best.eta,
        weights: best.weights,
    })
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Bisection on the sign of ∂V/∂λ around the golden-section estimate, which
/// only resolves λ to about √ε on the flat bottom of V.
fn refine(dual: &Dual, t0: f64, t_lo: f64, t_hi: f64) -> f64 {
    let slope = |t: f64| dual.inner(t.exp()).slope;
    let mut step = 1e-3;
    let mut a = t0;
    while slope(a) > 0.0 {
        if a <= t_lo {
            return t_lo;
        }
        a = (a - step).max(t_lo);
        step *= 2.0;
    }
    let mut step = 1e-3;
    let mut b = t0;
    while slope(b) < 0.0 {
        if b >= t_hi {
            return t_hi;
        }
        b = (b + step).min(t_hi);
        step *= 2.0;
    }
    for _ in 0..BISECTION_ITERS {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// ℓ(q) = ½(q − c)ᵀA(q − c), a per-atom loss centred on the atom.
#[derive(Debug, Clone)]
pub struct CenteredQuadratic {
    a: DMatrix<f64>,
    center: DVector<f64>,
    l: f64,
}

impl CenteredQuadratic {
    pub fn new(a: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let q = crate::problems::make_quadratic(a.clone(), center.clone())?;
        Ok(Self {
            a,
            center,
            l: q.lipschitz(),
        })
    }
}

impl Objective for CenteredQuadratic {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Quadratic
    }
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, q: &Point) -> f64 {
        let d = q - &self.center;
        0.5 * d.dot(&(&self.a * &d))
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        &self.a * (q - &self.center)
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
    fn minimizer(&self) -> Option<Point> {
        Some(self.center.clone())
    }
}

/// One centred quadratic loss per atom of `amb`.
pub fn quadratic_atom_losses(a: &DMatrix<f64>, amb: &AmbiguitySet) -> Result<Vec<Arc<dyn Objective>>> {
    amb.atoms
        .iter()
        .map(|c| Ok(Arc::new(CenteredQuadratic::new(a.clone(), c.clone())?) as Arc<dyn Objective>))
        .collect()
}

/// The robust loss q ↦ sup_{Q∈U} E_Q[ℓ(q,θ)], with the Danskin gradient
/// Σ Q*ⱼ ∇ℓⱼ(q). Its declared L is the common per-atom bound.
#[derive(Debug, Clone)]
pub struct RobustObjective {
    losses: Vec<Arc<dyn Objective>>,
    amb: AmbiguitySet,
    l: f64,
}

impl RobustObjective {
    pub fn new(losses: Vec<Arc<dyn Objective>>, amb: AmbiguitySet) -> Result<Self> {
        amb.validate()?;
        if losses.len() != amb.weights.len() {
            return Err(Error::Shape {
                expected: amb.weights.len(),
                got: losses.len(),
            });
        }
        let dim = losses[0].dim();
        if let Some(f) = losses.iter().find(|f| f.dim() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: f.dim(),
            });
        }
        let l = losses.iter().map(|f| f.lipschitz()).fold(0.0, f64::max);
        Ok(Self { losses, amb, l })
    }

    pub fn envelope(&self, q: &Point) -> Result<DroEnvelope> {
        let loss: Vec<f64> = self.losses.iter().map(|f| f.value(q)).collect();
        dro_envelope(&self.amb, &loss)
    }
}

impl Objective for RobustObjective {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Composite
    }
    fn dim(&self) -> usize {
        self.losses[0].dim()
    }
    fn value(&self, q: &Point) -> f64 {
        self.envelope(q).map(|e| e.value).unwrap_or(f64::NAN)
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        match self.envelope(q) {
            Ok(env) => env
                .weights
                .iter()
                .zip(&self.losses)
                .filter(|(w, _)| **w > 0.0)
                .fold(DVector::zeros(q.len()), |acc, (w, f)| acc + f.grad(q) * *w),
            Err(_) => DVector::from_element(q.len(), f64::NAN),
        }
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
}

/// The robust update argmin_{q∈Θ} sup_{Q∈U} E_Q[ℓ(q,θ)] + D_ψ(q‖p), solved
/// with the quasi-Newton inner solver.
pub fn dro_bvld_step(
    potential: Arc<dyn Potential>,
    feasible: FeasibleSet,
    p: &Point,
    amb: &AmbiguitySet,
    losses: Vec<Arc<dyn Objective>>,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let robust = RobustObjective::new(losses, amb.clone())?;
    let prob = BvldProblem::new(Arc::new(robust), potential, feasible)?;
    apply_qn(&prob, p, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroSweepRow {
    pub rho: f64,
    pub point: usize,
    pub x: Vec<f64>,
    pub value: f64,
    pub lambda_star: f64,
}

/// Robust values at every point for every radius; radii run in parallel.
pub fn dro_sweep(
    losses: &[Arc<dyn Objective>],
    amb: &AmbiguitySet,
    rhos: &[f64],
    points: &[Point],
) -> Result<Vec<DroSweepRow>> {
    let blocks: Vec<Result<Vec<DroSweepRow>>> = rhos
        .par_iter()
        .map(|&rho| {
            let robust = RobustObjective::new(losses.to_vec(), amb.with_rho(rho)?)?;
            points
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let env = robust.envelope(x)?;
                    Ok(DroSweepRow {
                        rho,
                        point: k,
                        x: x.iter().cloned().collect(),
                        value: env.value,
                        lambda_star: env.lambda_star,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for block in blocks {
        rows.extend(block?);
    }
    Ok(rows)
}

/// Columns: `rho,point,x_0..x_{n-1},value,lambda_star`.
pub fn write_dro_csv<W: std::io::Write>(rows: &[DroSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let mut header = vec!["rho".to_string(), "point".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend(["value".to_string(), "lambda_star".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.rho.to_string(), r.point.to_string()];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        rec.extend([r.value.to_string(), r.lambda_star.to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}
