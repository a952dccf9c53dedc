//! Robust, multiobjective and bilevel variants of the operator.

use nalgebra::DVector;

use crate::error::Result;
use crate::geometry::Point;
use crate::problems::{kkt_residual, BvldProblem};

mod dro;
mod pareto;

pub use dro::{
    dro_bvld_step, dro_envelope, dro_sweep, quadratic_atom_losses, write_dro_csv, AmbiguitySet,
    CenteredQuadratic, Divergence, DroEnvelope, DroSweepRow, RobustObjective, LAMBDA_MIN, MAX_ATOMS,
};
pub use pareto::{
    dominated_pairs, pareto_bvld_step, pareto_frontier, weight_grid, write_pareto_csv, FrontierPoint,
    ParetoProblem, WeightedSum, MAX_OBJECTIVES, WEIGHT_TOL,
};

/// Lower-level feasibility certificate of the single-level reformulation:
/// the KKT residual of q for T(p). Small values certify (x, q) for any upper
/// variable x.
pub fn bilevel_kkt_residual(_x: &DVector<f64>, q: &Point, p: &Point, prob: &BvldProblem) -> Result<f64> {
    kkt_residual(prob, p, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelCertificate {
    pub residual: f64,
    /// The user's upper objective C(x,q) + λ·Risk(x,q), evaluated at (x, q).
    pub upper_value: f64,
}

/// [`bilevel_kkt_residual`] together with the upper objective evaluated
/// alongside; no upper-level optimization is attempted.
pub fn certify_bilevel<F>(x: &DVector<f64>, q: &Point, p: &Point, prob: &BvldProblem, upper: F) -> Result<BilevelCertificate>
where
    F: Fn(&DVector<f64>, &Point) -> f64,
{
    Ok(BilevelCertificate {
        residual: bilevel_kkt_residual(x, q, p, prob)?,
        upper_value: upper(x, q),
    })
}
