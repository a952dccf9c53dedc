//! Bregman–Moreau envelope E(p) = min_{q∈Θ} f(q) + D_ψ(q‖p), its dual
//! certificate, and rate diagnostics for iterate traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DualPoint, Point};
use crate::problems::{BvldProblem, FeasibleSet};
use crate::solver::{apply_exact, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeEval {
    pub value: f64,
    /// ∇ψ(p) − ∇ψ(T(p)), also the optimal dual variable.
    pub mirror_grad: DualPoint,
    pub argmin: Point,
}

pub fn envelope_eval(prob: &BvldProblem, p: &Point) -> Result<EnvelopeEval> {
    envelope_eval_with(prob, p, &SolveOptions::default())
}

pub fn envelope_eval_with(prob: &BvldProblem, p: &Point, opts: &SolveOptions) -> Result<EnvelopeEval> {
    let res = apply_exact(prob, p, opts)?;
    Ok(EnvelopeEval {
        value: res.objective_value,
        mirror_grad: res.mirror_residual,
        argmin: res.q,
    })
}

/// E(p) minus the Fenchel dual objective `−f*(y) − ψ*(∇ψ(p) − y) + ψ*(∇ψ(p))`
/// evaluated at y* = ∇ψ(p) − ∇ψ(T(p)).
///
/// On the simplex ψ* is the conjugate of ψ restricted to the simplex, and a
/// linear f = cᵀq is conjugated over the affine hull {Σq = 1}: f*(y) = s when
/// y − c = s·1.
pub fn dual_gap(prob: &BvldProblem, p: &Point) -> Result<f64> {
    let unavailable = || {
        Error::ConjugateUnavailable(format!(
            "{:?} loss with {} potential on {:?}",
            prob.objective.kind(),
            prob.potential.name(),
            prob.feasible
        ))
    };
    let env = envelope_eval(prob, p)?;
    let y = &env.mirror_grad;
    let u = prob.potential.grad(p);

    let f_conj = if prob.potential.on_simplex() {
        let (a, b) = prob.objective.quadratic_parts().ok_or_else(unavailable)?;
        if a.amax() != 0.0 {
            return Err(unavailable());
        }
        // c = −b
        let r = y + b;
        let s = r.mean();
        if r.iter().all(|v| (v - s).abs() <= 1e-9 * (1.0 + s.abs())) {
            s
        } else {
            f64::INFINITY
        }
    } else {
        if prob.feasible != FeasibleSet::Whole {
            return Err(unavailable());
        }
        prob.objective.conjugate(y).ok_or_else(unavailable)?
    };
    let psi_shift = prob.potential.conjugate(&(&u - y)).ok_or_else(unavailable)?;
    let psi_u = prob.potential.conjugate(&u).ok_or_else(unavailable)?;
    let dual = -f_conj - psi_shift + psi_u;
    Ok((env.value - dual).max(0.0))
}

/// Fixed point of T: the minimizer of f over Θ. Uses the loss's own
/// minimizer when it is admissible, otherwise iterates T until the mirror
/// residual vanishes.
pub fn fixed_point(prob: &BvldProblem, start: &Point) -> Result<Point> {
    if let Some(m) = prob.objective.minimizer() {
        if prob.is_admissible(&m) {
            return Ok(m);
        }
    }
    let opts = SolveOptions::default();
    let mut p = start.clone();
    for _ in 0..10_000 {
        let res = apply_exact(prob, &p, &opts)?;
        let done = res.mirror_residual.norm() <= 1e-12;
        p = res.q;
        if done {
            break;
        }
    }
    Ok(p)
}

/// min over samples of ½‖∇_ψE(p)‖² / (E(p) − E(p*)), skipping samples whose
/// gap is below 1e-12. The norm is the mirror-space one.
pub fn pl_constant_probe(prob: &BvldProblem, samples: &[Point]) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Err(Error::NoValidSamples);
    };
    let pstar = fixed_point(prob, first)?;
    let e_star = envelope_eval(prob, &pstar)?.value;
    let mut best: Option<f64> = None;
    for p in samples {
        let env = envelope_eval(prob, p)?;
        let gap = env.value - e_star;
        if gap < 1e-12 {
            continue;
        }
        let ratio = 0.5 * env.mirror_grad.norm_squared() / gap;
        best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
    }
    best.ok_or(Error::NoValidSamples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateRegime {
    Finite,
    Linear,
    Sublinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub regime: RateRegime,
    /// Łojasiewicz exponent implied by the regime: 0 for Finite, ½ for
    /// Linear, and (e − 1)/(2e) for a fitted power law k^e.
    pub theta_hat: f64,
    /// Per-step contraction 1 − exp(slope) (Linear only).
    pub rho_hat: Option<f64>,
    pub fit_r2: f64,
    /// Slope of the selected fit: per-step log decay for Linear, the power
    /// exponent for Sublinear.
    pub slope: f64,
}

/// Gaps at or below this count as exactly zero.
pub const ZERO_GAP: f64 = 1e-14;
/// Minimum number of positive gaps needed for a fit.
pub const MIN_USABLE: usize = 10;
const R2_MARGIN: f64 = 0.05;

/// Least-squares line `y ≈ a + b x`; returns (b, R²). R² is 0 when y has
/// no variance.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
            .sum();
        1.0 - ss_res / syy
    } else {
        0.0
    };
    (slope, r2)
}

/// Classifies the decay of a gap sequence F_k (index k = position).
///
/// Finite when a gap reaches zero before ten positive gaps accumulate.
/// Otherwise log F_k is regressed on k (Linear) and on log k for k ≥ 1
/// (Sublinear); Linear wins unless the power law fits better by more than
/// 0.05 in R², and requires a negative slope.
pub fn estimate_rate(gaps: &[f64]) -> Result<RateEstimate> {
    let hit = gaps.iter().position(|&g| g <= ZERO_GAP);
    let span = &gaps[..hit.unwrap_or(gaps.len())];
    let usable: Vec<(f64, f64)> = span
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_finite())
        .map(|(k, &g)| (k as f64, g.ln()))
        .collect();
    if usable.len() < MIN_USABLE {
        if hit.is_some() {
            return Ok(RateEstimate {
                regime: RateRegime::Finite,
                theta_hat: 0.0,
                rho_hat: None,
                fit_r2: 1.0,
                slope: f64::NEG_INFINITY,
            });
        }
        return Err(Error::InsufficientData {
            usable: usable.len(),
            required: MIN_USABLE,
        });
    }
    let (k, logf): (Vec<f64>, Vec<f64>) = usable.iter().copied().unzip();
    let (lin_slope, lin_r2) = linear_fit(&k, &logf);
    let (logk, logf_pos): (Vec<f64>, Vec<f64>) =
        usable.iter().filter(|(k, _)| *k >= 1.0).map(|&(k, f)| (k.ln(), f)).unzip();
    let (sub_slope, sub_r2) = linear_fit(&logk, &logf_pos);

    if lin_slope < 0.0 && lin_r2 + R2_MARGIN >= sub_r2 {
        return Ok(RateEstimate {
            regime: RateRegime::Linear,
            theta_hat: 0.5,
            rho_hat: Some(1.0 - lin_slope.exp()),
            fit_r2: lin_r2,
            slope: lin_slope,
        });
    }
    let theta = if sub_slope < 0.0 {
        ((sub_slope - 1.0) / (2.0 * sub_slope)).clamp(0.5, 1.0 - 1e-12)
    } else {
        1.0 - 1e-12
    };
    Ok(RateEstimate {
        regime: RateRegime::Sublinear,
        theta_hat: theta,
        rho_hat: None,
        fit_r2: if sub_slope < 0.0 { sub_r2 } else { 0.0 },
        slope: sub_slope,
    })
}
