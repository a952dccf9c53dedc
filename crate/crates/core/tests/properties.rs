use std::sync::Arc;

use bvld::geometry::three_point_residual;
use bvld::{apply_exact, bregman_div, make_quadratic, BvldProblem, Euclidean, FeasibleSet, NegativeEntropy, SolveOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn simplex_point(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        DVector::from_vec(v.into_iter().map(|x| x / s).collect())
    })
}

fn point(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0f64..5.0, n).prop_map(DVector::from_vec)
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_satisfies_three_points(x in simplex_point(4), y in simplex_point(4), z in simplex_point(4)) {
        let psi = NegativeEntropy::simplex(4);
        let d = bregman_div(&psi, &x, &y).unwrap();
        prop_assert!(d >= 0.5 * (&x - &y).norm_squared() - 1e-12);
        prop_assert!(three_point_residual(&psi, &x, &y, &z).unwrap().abs() < 1e-9);
        prop_assert!(bregman_div(&psi, &x, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn euclidean_divergence_is_half_squared_distance(x in point(3), y in point(3)) {
        let d = bregman_div(&Euclidean::new(3), &x, &y).unwrap();
        prop_assert!((d - 0.5 * (&x - &y).norm_squared()).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn diagonal_quadratic_step_contracts(
        diag in prop::collection::vec(0.1f64..10.0, 3),
        p in point(3),
        q in point(3),
    ) {
        let f = make_quadratic(DMatrix::from_diagonal(&DVector::from_vec(diag)), DVector::zeros(3)).unwrap();
        let prob = BvldProblem::new(Arc::new(f), Arc::new(Euclidean::new(3)), FeasibleSet::Whole).unwrap();
        let opts = SolveOptions::default();
        let tp = apply_exact(&prob, &p, &opts).unwrap().q;
        let tq = apply_exact(&prob, &q, &opts).unwrap().q;
        let lhs = 0.5 * (&tp - &tq).norm_squared();
        let rhs = (1.0 - prob.kappa()) * 0.5 * (&p - &q).norm_squared();
        prop_assert!(lhs <= rhs + 1e-9);
    }
}
