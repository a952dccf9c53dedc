//! Time iteration p_t = T_t(p_{t−1}) under drifting losses f_t.
//!
//! A [`DriftSchedule`] moves the equilibrium of a template loss along a
//! seeded path of offsets d_t; the loss at step t is the template retargeted
//! so its minimizer sits at m₀ + d_t. Observation noise adds a Gaussian
//! linear term ⟨ξ_t, q⟩ to the loss handed to the solver (a gradient
//! perturbation), while regret is measured on the noiseless f_t.

mod flow;
mod rules;
pub mod sweep;
mod trace;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::envelope::fixed_point;
use crate::error::{Error, Result};
use crate::geometry::{bregman_unchecked, Point};
use crate::problems::{BvldProblem, Objective, Shifted};
use crate::sampling::{gaussian, rng_stream};
use crate::solver::{OperatorSolver, SolveOptions};

pub use flow::{integrate_evi_flow, FlowResult};
pub use rules::{drift_registry, DriftParams, DriftRule};
pub use sweep::{stability_sweep, Stability, StabilityCell, StabilityMap, SweepSpec};
pub use trace::{check_drift_bound, DriftBoundReport, IterateTrace, TraceRecord};

/// RNG stream for the drift path.
const DRIFT_STREAM: u64 = 0;
/// RNG stream for observation noise.
const NOISE_STREAM: u64 = 1;

/// Tolerance of the per-step Fejér check on static runs.
pub const FEJER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftKind {
    Static,
    RandomWalk { sigma_env: f64 },
    Sinusoidal { amplitude: f64, period: f64 },
    /// Each listed time adds a jump of the given size in a seeded direction.
    Piecewise { jumps: Vec<usize>, magnitude: f64 },
    /// Externally supplied scalar path x_t, applied as d_t = x_t·1.
    Series { values: Vec<f64> },
}

impl DriftKind {
    pub fn rule_name(&self) -> &'static str {
        match self {
            DriftKind::Static => "static",
            DriftKind::RandomWalk { .. } => "random-walk",
            DriftKind::Sinusoidal { .. } => "sinusoidal",
            DriftKind::Piecewise { .. } => "piecewise",
            DriftKind::Series { .. } => "series",
        }
    }

    pub fn params(&self) -> DriftParams {
        let mut p = DriftParams::default();
        match self {
            DriftKind::Static => {}
            DriftKind::RandomWalk { sigma_env } => p.sigma_env = *sigma_env,
            DriftKind::Sinusoidal { amplitude, period } => {
                p.amplitude = *amplitude;
                p.period = *period;
            }
            DriftKind::Piecewise { jumps, magnitude } => {
                p.jumps = jumps.clone();
                p.magnitude = *magnitude;
            }
            DriftKind::Series { values } => p.values = values.clone(),
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    pub kind: DriftKind,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub sigma_obs: f64,
}

impl DriftSchedule {
    pub fn new(kind: DriftKind, horizon: usize, seed: u64) -> Self {
        Self {
            kind,
            horizon,
            seed,
            sigma_obs: 0.0,
        }
    }

    pub fn with_sigma_obs(mut self, sigma_obs: f64) -> Self {
        self.sigma_obs = sigma_obs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Schedule("horizon must be at least 1".into()));
        }
        if !(self.sigma_obs >= 0.0 && self.sigma_obs.is_finite()) {
            return Err(Error::Schedule(format!(
                "sigma_obs must be nonnegative, got {}",
                self.sigma_obs
            )));
        }
        Ok(())
    }

    /// Static with no observation noise: the setting of the Fejér check.
    pub fn is_noiseless_static(&self) -> bool {
        self.kind == DriftKind::Static && self.sigma_obs == 0.0
    }

    /// Equilibrium offsets d_0..d_T (d_0 = 0 except for series input).
    pub fn offsets(&self, dim: usize) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        let rule = drift_registry().create(self.kind.rule_name(), &self.kind.params())?;
        let mut rng = rng_stream(self.seed, DRIFT_STREAM);
        let path = rule.path(dim, self.horizon, &mut rng)?;
        debug_assert_eq!(path.len(), self.horizon + 1);
        Ok(path)
    }
}

/// Equilibrium p_t* of the template retargeted to `center`.
fn equilibrium(template: &BvldProblem, center: &Point) -> Result<(BvldProblem, Point)> {
    let objective: Arc<dyn Objective> = template.objective.retarget(center).ok_or_else(|| {
        Error::Schedule(format!(
            "{:?} loss cannot be moved to a new equilibrium",
            template.objective.kind()
        ))
    })?;
    let prob = template.with_objective(objective)?;
    let start = if prob.is_admissible(center) {
        center.clone()
    } else {
        template.feasible.project(center)
    };
    if !prob.is_admissible(&start) {
        return Err(Error::Schedule(
            "equilibrium path leaves the domain of the potential".into(),
        ));
    }
    let pstar = fixed_point(&prob, &start)?;
    Ok((prob, pstar))
}

/// Runs p_t = T_t(p_{t−1}) for t = 1..T and records the trace.
pub fn run_dynamics(
    schedule: &DriftSchedule,
    template: &BvldProblem,
    p0: &Point,
    solver: &dyn OperatorSolver,
    opts: &SolveOptions,
) -> Result<IterateTrace> {
    schedule.validate()?;
    template.check_point(p0)?;
    let n = template.dim();
    let psi = template.potential.as_ref();
    let kappa = template.kappa();
    let m0 = fixed_point(template, p0)?;
    let offsets = schedule.offsets(n)?;
    let mut noise_rng = rng_stream(schedule.seed, NOISE_STREAM);

    let (mut prob_t, mut pstar) = equilibrium(template, &(&m0 + &offsets[0]))?;
    let d0 = bregman_unchecked(psi, p0, &pstar);
    let mut trace = IterateTrace::new(kappa, schedule.sigma_obs, schedule.is_noiseless_static());
    trace.push(TraceRecord {
        t: 0,
        p: p0.clone(),
        pstar: pstar.clone(),
        d: d0,
        w: 0.0,
        v: 0.0,
        kkt: 0.0,
        status: None,
        regret: 0.0,
        cum_regret: 0.0,
    });

    let mut p = p0.clone();
    for t in 1..=schedule.horizon {
        let prev_star = pstar.clone();
        if offsets[t] != offsets[t - 1] {
            (prob_t, pstar) = equilibrium(template, &(&m0 + &offsets[t])).map_err(|e| e.at_step(t))?;
        }
        let solve_prob = if schedule.sigma_obs > 0.0 {
            let xi = gaussian(&mut noise_rng, n, schedule.sigma_obs);
            prob_t.with_objective(Arc::new(Shifted::new(prob_t.objective.clone(), xi)))?
        } else {
            prob_t.clone()
        };
        let res = solver.apply(&solve_prob, &p, t - 1, opts).map_err(|e| e.at_step(t))?;
        p = res.next_iterate().clone();
        if !template.is_admissible(&p) {
            return Err(Error::DomainFailure { stage: "dynamics step" }.at_step(t));
        }
        let w = bregman_unchecked(psi, &prev_star, &pstar);
        let regret = prob_t.objective.value(&p) - prob_t.objective.value(&pstar);
        let last = trace.last();
        let record = TraceRecord {
            t,
            d: bregman_unchecked(psi, &p, &pstar),
            w,
            v: last.v + w,
            kkt: res.kkt_residual,
            status: Some(res.status),
            regret,
            cum_regret: last.cum_regret + regret,
            p: p.clone(),
            pstar: pstar.clone(),
        };
        trace.push(record);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests;
