use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::envelope::{fixed_point, linear_fit};
use crate::error::{Error, Result};
use crate::geometry::{bregman_unchecked, Point};
use crate::problems::{BvldProblem, FeasibleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    /// Step actually used (halved once if the first attempt left the domain).
    pub dt: f64,
    pub times: Vec<f64>,
    /// E(t) = D_ψ(p(t)‖p*).
    pub energy: Vec<f64>,
    /// Decay rate fitted to log E over the second half of the run; None when
    /// E vanishes (start at the equilibrium).
    pub lambda_hat: Option<f64>,
    /// ∫ max(0, Ė + κE) dt, the empirical forcing residual.
    pub forcing: f64,
    pub kappa: f64,
}

impl FlowResult {
    /// E(t) ≤ e^{−λ̂t}E(0)(1 + 1e-3) along the whole grid.
    pub fn decay_bound_holds(&self) -> bool {
        let e0 = self.energy[0];
        match self.lambda_hat {
            None => self.energy.iter().all(|&e| e <= e0),
            Some(lambda) => self
                .times
                .iter()
                .zip(&self.energy)
                .all(|(&t, &e)| e <= (-lambda * t).exp() * e0 * (1.0 + 1e-3)),
        }
    }
}

/// Energies below this fraction of E(0) are at the rounding floor and are
/// left out of the rate fit.
const FIT_FLOOR: f64 = 1e-24;

/// Integrates the mirror flow d/dt ∇ψ(p) = −∇f(p) with fixed-step RK4 in
/// mirror coordinates.
pub fn integrate_evi_flow(prob: &BvldProblem, p0: &Point, t_end: f64, dt: f64) -> Result<FlowResult> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSize {
            dt,
            detail: "step must be positive".into(),
        });
    }
    let limit = 1e-2 * prob.mu() / prob.lipschitz();
    if dt > limit {
        return Err(Error::StepSize {
            dt,
            detail: format!("step exceeds 1e-2·μ/L = {limit:e}"),
        });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Invalid(format!("t_end must be positive, got {t_end}")));
    }
    if !(prob.feasible == FeasibleSet::Whole || prob.potential.on_simplex()) {
        return Err(Error::Invalid(
            "the flow is only defined without extra constraints".into(),
        ));
    }
    prob.check_point(p0)?;
    let pstar = fixed_point(prob, p0)?;
    match rk4(prob, p0, &pstar, t_end, dt) {
        Some(res) => Ok(res),
        None => rk4(prob, p0, &pstar, t_end, dt / 2.0).ok_or(Error::DomainFailure { stage: "mirror flow" }),
    }
}

fn rk4(prob: &BvldProblem, p0: &Point, pstar: &Point, t_end: f64, dt: f64) -> Option<FlowResult> {
    let psi = prob.potential.as_ref();
    let f = prob.objective.as_ref();
    let field = |u: &DVector<f64>| -> Option<DVector<f64>> {
        let p = psi.grad_inv(u);
        prob.is_admissible(&p).then(|| -f.grad(&p))
    };
    let steps = (t_end / dt).round().max(1.0) as usize;
    let mut u = psi.grad(p0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    times.push(0.0);
    energy.push(bregman_unchecked(psi, p0, pstar));
    for k in 1..=steps {
        let k1 = field(&u)?;
        let k2 = field(&(&u + &k1 * (dt / 2.0)))?;
        let k3 = field(&(&u + &k2 * (dt / 2.0)))?;
        let k4 = field(&(&u + &k3 * dt))?;
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let p = psi.grad_inv(&u);
        if !prob.is_admissible(&p) {
            return None;
        }
        times.push(k as f64 * dt);
        energy.push(bregman_unchecked(psi, &p, pstar));
    }

    let kappa = prob.kappa();
    let forcing = energy
        .windows(2)
        .map(|e| ((e[1] - e[0]) / dt + kappa * 0.5 * (e[0] + e[1])).max(0.0) * dt)
        .sum();
    let e0 = energy[0];
    let (t_fit, log_e): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&energy)
        .skip(steps / 2)
        .filter(|(_, &e)| e > FIT_FLOOR * e0 && e > 0.0)
        .map(|(&t, &e)| (t, e.ln()))
        .unzip();
    let lambda_hat = (t_fit.len() >= 2).then(|| -linear_fit(&t_fit, &log_e).0);
    Some(FlowResult {
        dt,
        times,
        energy,
        lambda_hat,
        forcing,
        kappa,
    })
}
