use std::sync::Arc;

use bvld::extensions::*;
use bvld::problems::{make_quadratic, FeasibleSet, Objective};
use bvld::sampling::{gaussian, rng, uniform_box};
use bvld::{apply_exact, bregman_div, kkt_residual, BvldProblem, Error, Euclidean, Potential, SolveOptions};
use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;

#[path = "support/dro_oracle.rs"]
mod dro_oracle;

fn scalar_atoms(j: usize) -> Vec<DVector<f64>> {
    (0..j).map(|k| dvector![k as f64]).collect()
}

fn random_weights<R: Rng>(r: &mut R, j: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..j).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let tail: f64 = w[..j - 1].iter().sum();
    w[j - 1] = 1.0 - tail;
    w
}

fn euclid(n: usize) -> Arc<dyn Potential> {
    Arc::new(Euclidean::new(n))
}

#[test]
fn conjugates_match_numerical_sup() {
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        for s in [-4.0, -2.5, -1.0, 0.0, 0.7, 2.0] {
            let best = (0..=400_000)
                .map(|k| k as f64 * 1e-4)
                .map(|r| s * r - div.phi(r))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - div.conjugate(s)).abs() < 1e-6, "{div:?} s={s}");
            let r = div.ratio(s);
            assert!((s * r - div.phi(r) - div.conjugate(s)).abs() < 1e-12);
        }
    }
}

#[test]
fn tiny_radius_recovers_the_nominal_mean() {
    // The excess over the mean is √(2ρ·Var) for KL and √(ρ·Var) for χ² as
    // ρ → 0, so the nominal mean is reached to 1e-6 once ρ is about 1e-14.
    let mut r = rng(1);
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        let w = random_weights(&mut r, 5);
        let loss: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..3.0)).collect();
        let mean: f64 = w.iter().zip(&loss).map(|(a, b)| a * b).sum();
        let var: f64 = w.iter().zip(&loss).map(|(a, b)| a * (b - mean).powi(2)).sum();
        let scale = if div == Divergence::Kl { 2.0 } else { 1.0 };
        let amb = AmbiguitySet::new(div, 1e-10, scalar_atoms(5), w.clone()).unwrap();
        let excess = dro_envelope(&amb, &loss).unwrap().value - mean;
        let predicted = (scale * 1e-10 * var).sqrt();
        assert!((excess - predicted).abs() < 1e-3 * predicted, "{div:?} {excess} vs {predicted}");
        let amb = amb.with_rho(1e-14).unwrap();
        let env = dro_envelope(&amb, &loss).unwrap();
        assert!((env.value - mean).abs() < 1e-6, "{} vs {mean}", env.value);
    }
}

#[test]
fn constant_loss_is_unchanged() {
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        for rho in [0.01, 1.0, 100.0] {
            let amb = AmbiguitySet::uniform(div, rho, scalar_atoms(4)).unwrap();
            let env = dro_envelope(&amb, &[2.5; 4]).unwrap();
            assert!((env.value - 2.5).abs() < 1e-12);
        }
    }
}

#[test]
fn kl_eta_form_matches_the_eliminated_form() {
    // For KL the inner minimum over η is λ log E[e^{ℓ/λ}], leaving a 1-D
    // problem in λ that a dense grid plus local refinement solves directly.
    let mut r = rng(2);
    for _ in 0..10 {
        let w = random_weights(&mut r, 5);
        let rho = r.random_range(0.01..1.0);
        let amb = AmbiguitySet::new(Divergence::Kl, rho, scalar_atoms(5), w.clone()).unwrap();
        let loss: Vec<f64> = (0..5).map(|_| r.random_range(0.0..4.0)).collect();
        let lmax = loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g = |lam: f64| {
            let s: f64 = w.iter().zip(&loss).map(|(h, l)| h * ((l - lmax) / lam).exp()).sum();
            lam * rho + lmax + lam * s.ln()
        };
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=20_000 {
            let lam = 10f64.powf(-6.0 + 9.0 * k as f64 / 20_000.0);
            best = best.min_by_value(g(lam), lam);
        }
        let (mut a, mut b) = (best.1 * 0.99, best.1 * 1.01);
        for _ in 0..200 {
            let (c, d) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
            if g(c) < g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let closed = g(0.5 * (a + b)).min(lmax);
        let env = dro_envelope(&amb, &loss).unwrap();
        assert!((env.value - closed).abs() < 1e-9 * closed.abs().max(1.0), "{} vs {closed}", env.value);
    }
}

trait MinBy {
    fn min_by_value(self, v: f64, x: f64) -> Self;
}

impl MinBy for (f64, f64) {
    fn min_by_value(self, v: f64, x: f64) -> Self {
        if v < self.0 {
            (v, x)
        } else {
            self
        }
    }
}

#[test]
fn dual_matches_primal_brute_force() {
    let mut r = rng(3);
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        for _ in 0..20 {
            let w = random_weights(&mut r, 5);
            let rho = r.random_range(0.02..0.5);
            let amb = AmbiguitySet::new(div, rho, scalar_atoms(5), w).unwrap();
            let loss: Vec<f64> = (0..5).map(|_| r.random_range(0.0..5.0)).collect();
            let dual = dro_envelope(&amb, &loss).unwrap().value;
            let primal = dro_oracle::primal_sup(&amb, &loss);
            assert!(
                (dual - primal).abs() <= 1e-3 * dual.abs().max(1e-12),
                "{div:?}: dual {dual} primal {primal}"
            );
        }
    }
}

#[test]
fn worst_case_weights_certify_the_value() {
    let mut r = rng(4);
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        for _ in 0..20 {
            let amb = AmbiguitySet::new(div, r.random_range(0.01..2.0), scalar_atoms(6), random_weights(&mut r, 6)).unwrap();
            let loss: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let env = dro_envelope(&amb, &loss).unwrap();
            let primal: f64 = env.weights.iter().zip(&loss).map(|(a, b)| a * b).sum();
            assert!((env.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(amb.divergence_of(&env.weights) <= amb.rho + 1e-7, "{div:?}");
            assert!((primal - env.value).abs() < 1e-7, "{div:?} {primal} vs {}", env.value);
        }
    }
}

#[test]
fn large_chi_square_radius_hits_the_worst_atom() {
    let amb = AmbiguitySet::uniform(Divergence::ChiSquared, 10.0, scalar_atoms(4)).unwrap();
    let env = dro_envelope(&amb, &[1.0, 3.0, 2.0, 0.0]).unwrap();
    assert_eq!(env.value, 3.0);
    assert_eq!(env.lambda_star, 0.0);
    assert_eq!(env.weights, vec![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn robust_value_grows_with_radius() {
    let mut r = rng(5);
    let atoms: Vec<DVector<f64>> = (0..5).map(|_| gaussian(&mut r, 2, 1.0)).collect();
    let a = DMatrix::identity(2, 2);
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        let amb = AmbiguitySet::uniform(div, 0.1, atoms.clone()).unwrap();
        let losses = quadratic_atom_losses(&a, &amb).unwrap();
        let small = RobustObjective::new(losses.clone(), amb.clone()).unwrap();
        let large = RobustObjective::new(losses, amb.with_rho(0.5).unwrap()).unwrap();
        for i in 0..11 {
            for j in 0..11 {
                let q = dvector![-2.0 + 0.4 * i as f64, -2.0 + 0.4 * j as f64];
                assert!(large.value(&q) >= small.value(&q) - 1e-12);
            }
        }
    }
}

#[test]
fn danskin_gradient_matches_finite_differences() {
    let mut r = rng(6);
    let atoms: Vec<DVector<f64>> = (0..5).map(|_| gaussian(&mut r, 3, 1.0)).collect();
    let a = DMatrix::identity(3, 3) * 2.0;
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        let amb = AmbiguitySet::uniform(div, 0.2, atoms.clone()).unwrap();
        let f = RobustObjective::new(quadratic_atom_losses(&a, &amb).unwrap(), amb).unwrap();
        for _ in 0..10 {
            let q = gaussian(&mut r, 3, 1.0);
            let g = f.grad(&q);
            for i in 0..3 {
                let mut e = DVector::zeros(3);
                e[i] = 1e-5;
                let fd = (f.value(&(&q + &e)) - f.value(&(&q - &e))) / 2e-5;
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "{div:?} {fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn ambiguity_set_validation() {
    let atoms = scalar_atoms(3);
    assert!(matches!(
        AmbiguitySet::new(Divergence::Kl, 0.1, atoms.clone(), vec![0.5, 0.5, 0.1]),
        Err(Error::Weight { .. })
    ));
    assert!(matches!(
        AmbiguitySet::new(Divergence::Kl, 0.1, atoms.clone(), vec![1.2, -0.2, 0.0]),
        Err(Error::Weight { .. })
    ));
    assert!(matches!(
        AmbiguitySet::uniform(Divergence::Kl, 0.0, atoms.clone()),
        Err(Error::Invalid(_))
    ));
    assert!(AmbiguitySet::uniform(Divergence::Kl, 0.1, scalar_atoms(65)).is_err());
    let amb = AmbiguitySet::uniform(Divergence::Kl, 0.1, atoms).unwrap();
    assert!(matches!(dro_envelope(&amb, &[1.0, 2.0]), Err(Error::Shape { .. })));
    assert!(dro_envelope(&amb, &[1.0, f64::NAN, 0.0]).is_err());
}

fn nominal_average(a: &DMatrix<f64>, amb: &AmbiguitySet) -> BvldProblem {
    let center = amb
        .atoms
        .iter()
        .zip(&amb.weights)
        .fold(DVector::zeros(a.nrows()), |acc, (t, w)| acc + t * *w);
    BvldProblem::new(
        Arc::new(make_quadratic(a.clone(), a * center).unwrap()),
        euclid(a.nrows()),
        FeasibleSet::Whole,
    )
    .unwrap()
}

#[test]
fn tiny_radius_step_matches_the_nominal_step() {
    let mut r = rng(7);
    let atoms: Vec<DVector<f64>> = (0..5).map(|_| gaussian(&mut r, 3, 1.0)).collect();
    let a = DMatrix::from_diagonal(&dvector![1.0, 2.0, 3.0]);
    let amb = AmbiguitySet::uniform(Divergence::Kl, 1e-14, atoms).unwrap();
    let p = gaussian(&mut r, 3, 1.0);
    let opts = SolveOptions::default();
    let robust = dro_bvld_step(euclid(3), FeasibleSet::Whole, &p, &amb, quadratic_atom_losses(&a, &amb).unwrap(), &opts).unwrap();
    let nominal = apply_exact(&nominal_average(&a, &amb), &p, &opts).unwrap();
    assert!((&robust.q - &nominal.q).norm() < 1e-6);
}

#[test]
fn robust_step_contracts() {
    let mut r = rng(8);
    let a = DMatrix::identity(3, 3) * 2.0;
    let opts = SolveOptions::default();
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        let atoms: Vec<DVector<f64>> = (0..5).map(|_| gaussian(&mut r, 3, 1.0)).collect();
        let amb = AmbiguitySet::uniform(div, 0.3, atoms).unwrap();
        let losses = quadratic_atom_losses(&a, &amb).unwrap();
        let kappa = 1.0 / 3.0;
        for _ in 0..200 {
            let p = gaussian(&mut r, 3, 2.0);
            let q = gaussian(&mut r, 3, 2.0);
            let tp = dro_bvld_step(euclid(3), FeasibleSet::Whole, &p, &amb, losses.clone(), &opts).unwrap();
            let tq = dro_bvld_step(euclid(3), FeasibleSet::Whole, &q, &amb, losses.clone(), &opts).unwrap();
            assert!(tp.converged() && tq.converged());
            let psi = Euclidean::new(3);
            let lhs = bregman_div(&psi, &tp.q, &tq.q).unwrap();
            let rhs = (1.0 - kappa) * bregman_div(&psi, &p, &q).unwrap();
            assert!(lhs <= rhs + 1e-8, "{div:?} {lhs} > {rhs}");
        }
    }
}

#[test]
fn dro_sweep_csv_layout() {
    let amb = AmbiguitySet::uniform(Divergence::Kl, 0.1, vec![dvector![0.0], dvector![1.0]]).unwrap();
    let losses = quadratic_atom_losses(&DMatrix::identity(1, 1), &amb).unwrap();
    let rows = dro_sweep(&losses, &amb, &[0.1, 0.5], &[dvector![0.0], dvector![2.0]]).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[2].rho, rows[2].point), (0.5, 0));
    let mut buf = Vec::new();
    write_dro_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "rho,point,x_0,value,lambda_star");
    assert_eq!(text.lines().count(), 5);
}

fn centered(center: DVector<f64>) -> Arc<dyn Objective> {
    let n = center.len();
    Arc::new(CenteredQuadratic::new(DMatrix::identity(n, n), center).unwrap())
}

#[test]
fn single_objective_scalarization_is_the_plain_step() {
    let f: Arc<dyn Objective> = Arc::new(make_quadratic(DMatrix::from_diagonal(&dvector![1.0, 4.0]), dvector![1.0, -1.0]).unwrap());
    let pp = ParetoProblem::new(vec![f.clone()]).unwrap();
    let p = dvector![0.3, 0.7];
    let opts = SolveOptions::default();
    let res = pareto_bvld_step(&pp, &[1.0], euclid(2), FeasibleSet::Whole, &p, &opts).unwrap();
    let prob = BvldProblem::new(f, euclid(2), FeasibleSet::Whole).unwrap();
    let exact = apply_exact(&prob, &p, &opts).unwrap();
    assert!((&res.q - &exact.q).norm() < 1e-9);
}

#[test]
fn averaged_quadratics_have_a_closed_form_step() {
    let a = dvector![1.0, -2.0, 0.5];
    let b = dvector![3.0, 0.0, -1.0];
    let pp = ParetoProblem::new(vec![centered(a.clone()), centered(b.clone())]).unwrap();
    let p = dvector![0.2, 0.4, -0.6];
    let res = pareto_bvld_step(&pp, &[0.5, 0.5], euclid(3), FeasibleSet::Whole, &p, &SolveOptions::default()).unwrap();
    let expected = (&p + (&a + &b) / 2.0) / 2.0;
    assert!((&res.q - expected).norm() < 1e-9);
    assert!(res.kkt_residual < 1e-8);
}

#[test]
fn frontier_is_nondominated_and_convex() {
    let mut r = rng(9);
    for _ in 0..5 {
        let pp = ParetoProblem::new(vec![centered(gaussian(&mut r, 3, 2.0)), centered(gaussian(&mut r, 3, 2.0))]).unwrap();
        let p = gaussian(&mut r, 3, 1.0);
        let front = pareto_frontier(&pp, &weight_grid(21), euclid(3), FeasibleSet::Whole, &p, &SolveOptions::default()).unwrap();
        assert_eq!(front.len(), 21);
        assert!(front.iter().all(|f| f.kkt_residual < 1e-8));
        assert!(dominated_pairs(&front, 1e-12).is_empty());
        // w₁ rising trades g₂ for g₁.
        for k in 1..front.len() {
            assert!(front[k].regularized[0] <= front[k - 1].regularized[0] + 1e-12);
            assert!(front[k].regularized[1] >= front[k - 1].regularized[1] - 1e-12);
        }
        for k in 1..front.len() - 1 {
            let (x0, y0) = (front[k - 1].regularized[0], front[k - 1].regularized[1]);
            let (x1, y1) = (front[k].regularized[0], front[k].regularized[1]);
            let (x2, y2) = (front[k + 1].regularized[0], front[k + 1].regularized[1]);
            let cross = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
            assert!(cross <= 1e-9, "frontier bends the wrong way at {k}");
        }
    }
}

#[test]
fn pareto_validation() {
    let pp = ParetoProblem::new(vec![centered(dvector![0.0]), centered(dvector![1.0])]).unwrap();
    let p = dvector![0.0];
    let opts = SolveOptions::default();
    for w in [vec![0.6, 0.6], vec![1.1, -0.1]] {
        assert!(matches!(
            pareto_bvld_step(&pp, &w, euclid(1), FeasibleSet::Whole, &p, &opts),
            Err(Error::Weight { .. })
        ));
    }
    assert!(pareto_bvld_step(&pp, &[1.0 + 5e-11, -5e-11], euclid(1), FeasibleSet::Whole, &p, &opts).is_ok());
    assert!(matches!(
        ParetoProblem::new(vec![centered(dvector![0.0]), centered(dvector![1.0, 2.0])]),
        Err(Error::Shape { .. })
    ));
    assert_eq!(pp.l_max(), 1.0);
}

#[test]
fn pareto_csv_layout() {
    let pp = ParetoProblem::new(vec![centered(dvector![0.0]), centered(dvector![1.0])]).unwrap();
    let front = pareto_frontier(&pp, &weight_grid(3), euclid(1), FeasibleSet::Whole, &dvector![0.0], &SolveOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_pareto_csv(&front, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "w_1,w_2,f_1,f_2,g_1,g_2,kkt");
    assert_eq!(text.lines().count(), 4);
}

fn random_quadratic_problem(seed: u64, feasible: FeasibleSet) -> BvldProblem {
    let mut r = rng(seed);
    let g = DMatrix::from_fn(4, 4, |_, _| r.random_range(-1.0..1.0));
    let a = &g * g.transpose() + DMatrix::identity(4, 4);
    BvldProblem::new(Arc::new(make_quadratic(a, gaussian(&mut r, 4, 3.0)).unwrap()), euclid(4), feasible).unwrap()
}

#[test]
fn bilevel_residual_certifies_the_lower_solution() {
    let prob = random_quadratic_problem(10, FeasibleSet::Whole);
    let p = dvector![0.1, 0.2, 0.3, 0.4];
    let x = dvector![5.0, -1.0];
    let q = apply_exact(&prob, &p, &SolveOptions::default()).unwrap().q;
    assert!(bilevel_kkt_residual(&x, &q, &p, &prob).unwrap() < 1e-8);
    let mut r = rng(11);
    for _ in 0..20 {
        let dir = gaussian(&mut r, 4, 1.0).normalize();
        let moved = &q + dir * 1e-2;
        assert!(bilevel_kkt_residual(&x, &moved, &p, &prob).unwrap() > 1e-4);
    }
    let cert = certify_bilevel(&x, &q, &p, &prob, |x, q| x.sum() + q.norm_squared()).unwrap();
    assert_eq!(cert.upper_value, 4.0 + q.norm_squared());
    assert!(cert.residual < 1e-8);
}

#[test]
fn bilevel_residual_absorbs_active_bounds() {
    let feasible = FeasibleSet::uniform_box(4, -0.5, 0.5);
    let prob = random_quadratic_problem(12, feasible.clone());
    let (a, b) = prob.objective.quadratic_parts().map(|(a, b)| (a.clone(), b.clone())).unwrap();
    let mut r = rng(13);
    let p = uniform_box(&mut r, 4, -0.5, 0.5);
    // Projected gradient on Φ(q) = ½qᵀAq − bᵀq + ½‖q − p‖².
    let hess = &a + DMatrix::identity(4, 4);
    let step = 1.0 / hess.symmetric_eigenvalues().max();
    let mut q = p.clone();
    for _ in 0..20_000 {
        q = feasible.project(&(&q - (&hess * &q - &b - &p) * step));
    }
    let active = q.iter().filter(|v| v.abs() == 0.5).count();
    assert!(active > 0, "instance has no active bound");
    let x = DVector::zeros(1);
    assert!(bilevel_kkt_residual(&x, &q, &p, &prob).unwrap() < 1e-8);
    assert!(kkt_residual(&prob, &p, &q).unwrap() < 1e-8);
    let outside = q.map(|v| v * 2.0);
    assert!(bilevel_kkt_residual(&x, &outside, &p, &prob).is_err());
}
