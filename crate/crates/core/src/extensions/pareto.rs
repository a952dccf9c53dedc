use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dro::csv_err;
use crate::error::{Error, Result};
use crate::geometry::{bregman_unchecked, Point, Potential};
use crate::problems::{BvldProblem, FeasibleSet, Objective, ObjectiveKind};
use crate::solver::{apply_qn, SolveOptions, SolveResult, SolveStatus};

pub const MAX_OBJECTIVES: usize = 8;
/// Slack allowed when checking that weights lie on the simplex.
pub const WEIGHT_TOL: f64 = 1e-10;

/// m convex objectives sharing a dimension, scalarized over the simplex.
#[derive(Debug, Clone)]
pub struct ParetoProblem {
    objectives: Vec<Arc<dyn Objective>>,
    l_max: f64,
}

impl ParetoProblem {
    pub fn new(objectives: Vec<Arc<dyn Objective>>) -> Result<Self> {
        let m = objectives.len();
        if m == 0 || m > MAX_OBJECTIVES {
            return Err(Error::Invalid(format!(
                "need 1..={MAX_OBJECTIVES} objectives, got {m}"
            )));
        }
        let dim = objectives[0].dim();
        if let Some(f) = objectives.iter().find(|f| f.dim() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: f.dim(),
            });
        }
        let l_max = objectives.iter().map(|f| f.lipschitz()).fold(0.0, f64::max);
        Ok(Self { objectives, l_max })
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }

    pub fn objectives(&self) -> &[Arc<dyn Objective>] {
        &self.objectives
    }

    /// max Lᵢ, which fixes κ = μ/(μ + L_max) for every scalarization.
    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: w.len(),
            });
        }
        let sum: f64 = w.iter().sum();
        let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min >= -WEIGHT_TOL && (sum - 1.0).abs() <= WEIGHT_TOL) {
            return Err(Error::Weight { sum, min });
        }
        Ok(())
    }

    /// Σ wᵢ fᵢ.
    pub fn scalarize(&self, w: &[f64]) -> Result<WeightedSum> {
        self.check_weights(w)?;
        Ok(WeightedSum {
            parts: w.iter().cloned().zip(self.objectives.iter().cloned()).collect(),
            l_max: self.l_max,
        })
    }

    pub fn values(&self, q: &Point) -> Vec<f64> {
        self.objectives.iter().map(|f| f.value(q)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct WeightedSum {
    parts: Vec<(f64, Arc<dyn Objective>)>,
    l_max: f64,
}

impl Objective for WeightedSum {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Composite
    }
    fn dim(&self) -> usize {
        self.parts[0].1.dim()
    }
    fn value(&self, q: &Point) -> f64 {
        self.parts.iter().map(|(w, f)| w * f.value(q)).sum()
    }
    fn grad(&self, q: &Point) -> DVector<f64> {
        self.parts
            .iter()
            .fold(DVector::zeros(q.len()), |acc, (w, f)| acc + f.grad(q) * *w)
    }
    fn lipschitz(&self) -> f64 {
        self.l_max
    }
}

/// argmin_{q∈Θ} Σ wᵢ fᵢ(q) + D_ψ(q‖p) by the quasi-Newton solver. Its
/// `kkt_residual` is the residual of 0 ∈ Σ wᵢ∇fᵢ(q) + ∇ψ(q) − ∇ψ(p) + N_Θ(q).
pub fn pareto_bvld_step(
    pp: &ParetoProblem,
    w: &[f64],
    potential: Arc<dyn Potential>,
    feasible: FeasibleSet,
    p: &Point,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let prob = BvldProblem::new(Arc::new(pp.scalarize(w)?), potential, feasible)?;
    apply_qn(&prob, p, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub weights: Vec<f64>,
    pub q: Vec<f64>,
    /// fᵢ(q).
    pub values: Vec<f64>,
    /// fᵢ(q) + D_ψ(q‖p): the objectives the scalarized step trades off.
    pub regularized: Vec<f64>,
    pub kkt_residual: f64,
    pub status: SolveStatus,
}

/// `count` evenly spaced weights (w₁, 1 − w₁) with w₁ from 0 to 1.
pub fn weight_grid(count: usize) -> Vec<Vec<f64>> {
    match count {
        0 => Vec::new(),
        1 => vec![vec![0.5, 0.5]],
        _ => (0..count)
            .map(|k| {
                let w1 = k as f64 / (count - 1) as f64;
                vec![w1, 1.0 - w1]
            })
            .collect(),
    }
}

/// One scalarized step per weight vector, solved in parallel and returned in
/// input order.
pub fn pareto_frontier(
    pp: &ParetoProblem,
    weights: &[Vec<f64>],
    potential: Arc<dyn Potential>,
    feasible: FeasibleSet,
    p: &Point,
    opts: &SolveOptions,
) -> Result<Vec<FrontierPoint>> {
    weights
        .par_iter()
        .map(|w| {
            let res = pareto_bvld_step(pp, w, potential.clone(), feasible.clone(), p, opts)?;
            let values = pp.values(&res.q);
            let d = bregman_unchecked(potential.as_ref(), &res.q, p);
            Ok(FrontierPoint {
                weights: w.clone(),
                q: res.q.iter().cloned().collect(),
                regularized: values.iter().map(|v| v + d).collect(),
                values,
                kkt_residual: res.kkt_residual,
                status: res.status,
            })
        })
        .collect()
}

/// Whether some point's regularized objectives are all ≤ another's and one
/// is smaller by more than `tol`.
pub fn dominated_pairs(points: &[FrontierPoint], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (a, pa) in points.iter().enumerate() {
        for (b, pb) in points.iter().enumerate() {
            let le = pa.regularized.iter().zip(&pb.regularized).all(|(x, y)| x <= &(y + tol));
            let lt = pa.regularized.iter().zip(&pb.regularized).any(|(x, y)| x + tol < *y);
            if a != b && le && lt {
                out.push((a, b));
            }
        }
    }
    out
}

/// Columns: `w_1..w_m,f_1..f_m,g_1..g_m,kkt` where gᵢ = fᵢ + D_ψ(q‖p).
pub fn write_pareto_csv<W: std::io::Write>(points: &[FrontierPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = points.first().map(|p| p.weights.len()).unwrap_or(0);
    let mut header: Vec<String> = (1..=m).map(|i| format!("w_{i}")).collect();
    header.extend((1..=m).map(|i| format!("f_{i}")));
    header.extend((1..=m).map(|i| format!("g_{i}")));
    header.push("kkt".into());
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let rec: Vec<String> = p
            .weights
            .iter()
            .chain(&p.values)
            .chain(&p.regularized)
            .chain(std::iter::once(&p.kkt_residual))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(())
}
