use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_dynamics, DriftKind, DriftSchedule};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::problems::BvldProblem;
use crate::sampling::mix_seed;
use crate::solver::{OperatorSolver, SolveOptions};

/// R_T/T below this is Stable.
pub const STABLE_BELOW: f64 = 0.05;
/// R_T/T above this is Unstable.
pub const UNSTABLE_ABOVE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Transition,
    Unstable,
}

impl Stability {
    pub fn classify(normalized_regret: f64) -> Self {
        if normalized_regret < STABLE_BELOW {
            Stability::Stable
        } else if normalized_regret <= UNSTABLE_ABOVE {
            Stability::Transition
        } else {
            Stability::Unstable
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub sigma_env_max: f64,
    pub sigma_obs_max: f64,
    /// Grid points per axis, including zero.
    pub points: usize,
    pub reps: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_env_max > 0.0 && self.sigma_obs_max > 0.0) {
            return Err(Error::Invalid("sweep grid bounds must be positive".into()));
        }
        if self.points < 2 || self.reps == 0 || self.horizon == 0 {
            return Err(Error::Invalid(
                "sweep needs at least 2 points per axis, 1 rep and horizon 1".into(),
            ));
        }
        Ok(())
    }

    pub fn axis(max: f64, points: usize) -> Vec<f64> {
        (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub i: usize,
    pub j: usize,
    pub sigma_env: f64,
    pub sigma_obs: f64,
    /// Mean R_T/T over the successful reps.
    pub mean_regret: f64,
    pub class: Stability,
    /// Reps whose run failed; any failure marks the cell Unstable.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityMap {
    pub sigma_env: Vec<f64>,
    pub sigma_obs: Vec<f64>,
    pub reps: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Row-major: index i over σ_env, j over σ_obs.
    pub cells: Vec<StabilityCell>,
    /// Plane R_T/T ≈ c1·σ_env + c2·σ_obs (no intercept).
    pub c1: f64,
    pub c2: f64,
    /// Centered R² of the plane.
    pub r2: f64,
}

impl StabilityMap {
    pub fn cell(&self, i: usize, j: usize) -> &StabilityCell {
        &self.cells[i * self.sigma_obs.len() + j]
    }

    /// Largest drop of mean R_T/T between neighbours along either axis.
    pub fn max_decrease(&self) -> f64 {
        let (ne, no) = (self.sigma_env.len(), self.sigma_obs.len());
        let mut worst: f64 = 0.0;
        for i in 0..ne {
            for j in 0..no {
                let here = self.cell(i, j).mean_regret;
                if i + 1 < ne {
                    worst = worst.max(here - self.cell(i + 1, j).mean_regret);
                }
                if j + 1 < no {
                    worst = worst.max(here - self.cell(i, j + 1).mean_regret);
                }
            }
        }
        worst
    }
}

/// Fits z ≈ c1 x + c2 y by least squares through the origin; returns
/// (c1, c2, centered R²).
pub fn fit_plane(x: &[f64], y: &[f64], z: &[f64]) -> (f64, f64, f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let (sxx, sxy, syy) = (dot(x, x), dot(x, y), dot(y, y));
    let (sxz, syz) = (dot(x, z), dot(y, z));
    let det = sxx * syy - sxy * sxy;
    if det.abs() < 1e-300 {
        return (0.0, 0.0, 0.0);
    }
    let c1 = (sxz * syy - syz * sxy) / det;
    let c2 = (syz * sxx - sxz * sxy) / det;
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let ss_tot: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (c - c1 * a - c2 * b).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    (c1, c2, r2)
}

/// Mean normalized regret over a σ_env × σ_obs grid of random-walk runs.
///
/// Cells run in parallel; every cell and rep draws from its own seed derived
/// from `spec.seed`, and results are collected in cell order, so the map does
/// not depend on scheduling.
pub fn stability_sweep(
    spec: &SweepSpec,
    template: &BvldProblem,
    p0: &Point,
    solver: &dyn OperatorSolver,
    opts: &SolveOptions,
) -> Result<StabilityMap> {
    spec.validate()?;
    let env_axis = SweepSpec::axis(spec.sigma_env_max, spec.points);
    let obs_axis = SweepSpec::axis(spec.sigma_obs_max, spec.points);
    let n = spec.points;
    let cells: Vec<StabilityCell> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let cell_seed = mix_seed(spec.seed, idx as u64);
            let mut total = 0.0;
            let mut failures = 0;
            for rep in 0..spec.reps {
                let schedule = DriftSchedule::new(
                    DriftKind::RandomWalk {
                        sigma_env: env_axis[i],
                    },
                    spec.horizon,
                    mix_seed(cell_seed, rep as u64),
                )
                .with_sigma_obs(obs_axis[j]);
                match run_dynamics(&schedule, template, p0, solver, opts) {
                    Ok(trace) if trace.normalized_regret().is_finite() => {
                        total += trace.normalized_regret()
                    }
                    _ => failures += 1,
                }
            }
            let ok = spec.reps - failures;
            let mean_regret = if ok > 0 { total / ok as f64 } else { f64::NAN };
            StabilityCell {
                i,
                j,
                sigma_env: env_axis[i],
                sigma_obs: obs_axis[j],
                mean_regret,
                class: if failures > 0 {
                    Stability::Unstable
                } else {
                    Stability::classify(mean_regret)
                },
                failures,
            }
        })
        .collect();

    let fit: Vec<&StabilityCell> = cells.iter().filter(|c| c.mean_regret.is_finite()).collect();
    let xs: Vec<f64> = fit.iter().map(|c| c.sigma_env).collect();
    let ys: Vec<f64> = fit.iter().map(|c| c.sigma_obs).collect();
    let zs: Vec<f64> = fit.iter().map(|c| c.mean_regret).collect();
    let (c1, c2, r2) = fit_plane(&xs, &ys, &zs);
    Ok(StabilityMap {
        sigma_env: env_axis,
        sigma_obs: obs_axis,
        reps: spec.reps,
        horizon: spec.horizon,
        seed: spec.seed,
        cells,
        c1,
        c2,
        r2,
    })
}
