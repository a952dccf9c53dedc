//! Bregman–variational dynamics: the operator T(p) = argmin_{q∈Θ} f(q) + D_ψ(q‖p),
//! its solvers, envelope diagnostics, drifting dynamics and extensions.

pub mod envelope;
pub mod dynamics;
pub mod error;
pub mod extensions;
pub mod geometry;
pub mod problems;
pub mod registry;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{bregman_div, Euclidean, NegativeEntropy, Point, Potential, PotentialKind};
pub use problems::{kkt_residual, make_quadratic, BvldProblem, FeasibleSet, Objective};
pub use solver::{apply_exact, apply_inexact, apply_qn, SolveOptions, SolveResult, SolveStatus};
