use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use super::*;
use crate::envelope::RateRegime;
use crate::geometry::Euclidean;
use crate::problems::{make_quadratic, FeasibleSet, LogSumExp};
use crate::sampling::{gaussian, rng};
use crate::solver::{ExactSolver, InexactSolver, QuasiNewtonSolver};

fn quadratic(a: DMatrix<f64>, b: DVector<f64>, feasible: FeasibleSet) -> BvldProblem {
    let n = b.len();
    BvldProblem::new(
        Arc::new(make_quadratic(a, b).unwrap()),
        Arc::new(Euclidean::new(n)),
        feasible,
    )
    .unwrap()
}

fn run(schedule: &DriftSchedule, prob: &BvldProblem, p0: &Point) -> IterateTrace {
    run_dynamics(schedule, prob, p0, &ExactSolver, &SolveOptions::default()).unwrap()
}

#[test]
fn halving_operator_gives_quartering_distance() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let trace = run(&DriftSchedule::new(DriftKind::Static, 30, 0), &prob, &dvector![1.0, 0.0]);
    for r in &trace.records {
        let expected = 0.25f64.powi(r.t as i32) * 0.5;
        assert!((r.d - expected).abs() <= 1e-14 * expected, "t={} {} vs {}", r.t, r.d, expected);
    }
    assert!(trace.fejer_checked && trace.fejer_holds());
}

#[test]
fn static_runs_are_fejer_monotone_with_linear_rate() {
    let mut r = rng(31);
    for feasible in [FeasibleSet::Whole, FeasibleSet::uniform_box(4, -1.0, 1.0)] {
        for _ in 0..5 {
            let g = DMatrix::from_fn(4, 4, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0));
            let q = g.qr().q();
            let eig = DVector::from_fn(4, |_, _| rand::Rng::random_range(&mut r, 1.0..5.0));
            let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let prob = quadratic(a, gaussian(&mut r, 4, 1.0), feasible.clone());
            let p0 = feasible.project(&gaussian(&mut r, 4, 3.0));
            let trace = run(&DriftSchedule::new(DriftKind::Static, 100, 1), &prob, &p0);
            assert!(trace.fejer_holds(), "{:?}", trace.fejer_violations);
            let kappa = prob.kappa();
            let slope = trace.log_slope().unwrap();
            assert!(slope <= (1.0 - kappa).ln() + 0.05, "{slope}");
            let est = trace.rate_estimate().unwrap();
            assert_eq!(est.regime, RateRegime::Linear);
            let rho = est.rho_hat.unwrap();
            assert!(rho >= kappa / 2.0 && rho < 1.0 && rho >= kappa - 0.1, "{rho}");
        }
    }
}

#[test]
fn weakly_curved_loss_breaks_fejer() {
    // Far from its center the loss is nearly linear and T barely contracts.
    let prob = BvldProblem::new(
        Arc::new(LogSumExp::new(1.0, dvector![0.0]).unwrap()),
        Arc::new(Euclidean::new(1)),
        FeasibleSet::Whole,
    )
    .unwrap();
    let trace = run(&DriftSchedule::new(DriftKind::Static, 5, 0), &prob, &dvector![20.0]);
    assert!(!trace.fejer_holds());
}

#[test]
fn zero_random_walk_reproduces_static() {
    let prob = quadratic(DMatrix::identity(3, 3) * 2.0, dvector![1.0, 0.0, -1.0], FeasibleSet::Whole);
    let p0 = dvector![3.0, 3.0, 3.0];
    let a = run(&DriftSchedule::new(DriftKind::Static, 50, 5), &prob, &p0);
    let b = run(&DriftSchedule::new(DriftKind::RandomWalk { sigma_env: 0.0 }, 50, 5), &prob, &p0);
    assert_eq!(a.records, b.records);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let prob = quadratic(DMatrix::identity(2, 2) * 2.0, dvector![0.0, 0.0], FeasibleSet::Whole);
    let schedule = DriftSchedule::new(DriftKind::RandomWalk { sigma_env: 0.3 }, 100, 42).with_sigma_obs(0.2);
    let p0 = dvector![0.5, 0.5];
    let a = run(&schedule, &prob, &p0);
    let b = run(&schedule, &prob, &p0);
    assert_eq!(a, b);
    let mut other = schedule.clone();
    other.seed = 43;
    assert_ne!(a.records, run(&other, &prob, &p0).records);
}

#[test]
fn drift_budget_is_the_running_sum() {
    let prob = quadratic(DMatrix::identity(2, 2) * 2.0, dvector![0.0, 0.0], FeasibleSet::Whole);
    let trace = run(
        &DriftSchedule::new(DriftKind::Sinusoidal { amplitude: 1.0, period: 20.0 }, 60, 3),
        &prob,
        &dvector![0.0, 0.0],
    );
    let mut v = 0.0;
    for r in &trace.records {
        v += r.w;
        assert_eq!(r.v, v);
        assert!(r.d >= 0.0 && r.w >= 0.0);
    }
    assert_eq!(trace.drift_budget(), v);
}

#[test]
fn drift_bound_holds_on_random_walks() {
    let prob = quadratic(DMatrix::identity(3, 3) * 2.0, dvector![0.0, 0.0, 0.0], FeasibleSet::Whole);
    let kappa = prob.kappa();
    for seed in 0..5 {
        for sigma in [0.1, 0.5, 1.0] {
            let schedule = DriftSchedule::new(DriftKind::RandomWalk { sigma_env: sigma }, 200, seed);
            let trace = run(&schedule, &prob, &dvector![1.0, -1.0, 0.5]);
            let report = check_drift_bound(&trace, kappa, 2.0 * (1.0 - kappa));
            assert!(report.pass, "ratio {}", report.ratio);
            assert!(report.lemma_holds(), "{:?}", report.lemma_violations);
        }
    }
}

#[test]
fn static_drift_bound_is_a_geometric_series() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let trace = run(&DriftSchedule::new(DriftKind::Static, 40, 0), &prob, &dvector![1.0, 0.0]);
    let kappa = prob.kappa();
    let report = check_drift_bound(&trace, kappa, 2.0 * (1.0 - kappa));
    let d0 = trace.records[0].d;
    assert!((report.ratio - kappa * trace.total_deviation() / d0).abs() < 1e-15);
    assert!(report.pass);
}

#[test]
fn fabricated_violation_fails_the_checks() {
    let mut trace = IterateTrace::new(0.8, 0.0, false);
    let p = dvector![0.0];
    for t in 0..5 {
        trace.push(TraceRecord {
            t,
            p: p.clone(),
            pstar: p.clone(),
            d: 1.0,
            w: 0.0,
            v: 0.0,
            kkt: 0.0,
            status: None,
            regret: 0.0,
            cum_regret: 0.0,
        });
    }
    let report = check_drift_bound(&trace, 0.8, 0.4);
    assert!(!report.pass);
    assert_eq!(report.lemma_violations, vec![1, 2, 3, 4]);
    assert!(!report.one_step_holds());
}

#[test]
fn solvers_give_matching_traces() {
    let prob = quadratic(DMatrix::identity(2, 2) * 2.0, dvector![1.0, 1.0], FeasibleSet::Whole);
    let schedule = DriftSchedule::new(DriftKind::RandomWalk { sigma_env: 0.2 }, 30, 9);
    let p0 = dvector![2.0, -2.0];
    let opts = SolveOptions {
        delta0: 0.0,
        ..Default::default()
    };
    let exact = run_dynamics(&schedule, &prob, &p0, &ExactSolver, &opts).unwrap();
    let qn = run_dynamics(&schedule, &prob, &p0, &QuasiNewtonSolver, &opts).unwrap();
    let inexact = run_dynamics(&schedule, &prob, &p0, &InexactSolver, &opts).unwrap();
    for ((a, b), c) in exact.records.iter().zip(&qn.records).zip(&inexact.records) {
        assert!((&a.p - &b.p).norm() < 1e-8);
        assert!((&a.p - &c.p).norm() < 1e-8);
    }
}

#[test]
fn trace_csv_layout() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let trace = run(&DriftSchedule::new(DriftKind::Static, 2, 0), &prob, &dvector![1.0, 0.0]);
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,p_0,p_1,pstar_0,pstar_1,D,W,kkt,regret");
    assert_eq!(lines.len(), 4);
    let row: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row.len(), 9);
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 0.5).abs() < 1e-15 && (row[5] - 0.125).abs() < 1e-15);
}

#[test]
fn schedule_validation() {
    let prob = quadratic(DMatrix::identity(1, 1), dvector![0.0], FeasibleSet::Whole);
    let p0 = dvector![0.0];
    let bad = [
        DriftSchedule::new(DriftKind::Static, 0, 0),
        DriftSchedule::new(DriftKind::Piecewise { jumps: vec![20], magnitude: 1.0 }, 10, 0),
        DriftSchedule::new(DriftKind::Series { values: vec![0.0, 1.0] }, 10, 0),
        DriftSchedule::new(DriftKind::Sinusoidal { amplitude: 1.0, period: 0.0 }, 10, 0),
        DriftSchedule::new(DriftKind::Static, 10, 0).with_sigma_obs(-1.0),
    ];
    for s in &bad {
        assert!(matches!(
            run_dynamics(s, &prob, &p0, &ExactSolver, &SolveOptions::default()),
            Err(Error::Schedule(_))
        ));
    }
}

#[test]
fn piecewise_and_series_move_the_equilibrium() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let p0 = dvector![0.0, 0.0];
    let trace = run(&DriftSchedule::new(DriftKind::Piecewise { jumps: vec![3], magnitude: 2.0 }, 6, 1), &prob, &p0);
    assert_eq!(trace.records[2].pstar, p0);
    assert!((trace.records[3].pstar.norm() - 2.0).abs() < 1e-12);
    assert!((trace.records[3].w - 2.0).abs() < 1e-12);
    let trace = run(&DriftSchedule::new(DriftKind::Series { values: vec![0.0, 1.0, -1.0] }, 2, 0), &prob, &p0);
    assert_eq!(trace.records[2].pstar, dvector![-1.0, -1.0]);
}

#[test]
fn flow_on_unit_quadratic_decays_at_rate_two() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let flow = integrate_evi_flow(&prob, &dvector![1.0, -0.5], 5.0, 1e-3).unwrap();
    let lambda = flow.lambda_hat.unwrap();
    assert!((lambda - 2.0).abs() < 0.01 * 2.0, "{lambda}");
    assert!(flow.decay_bound_holds());
    assert_eq!(flow.forcing, 0.0);
    let e0 = flow.energy[0];
    for (t, e) in flow.times.iter().zip(&flow.energy) {
        assert!((e - e0 * (-2.0 * t).exp()).abs() <= 1e-9 * e0);
    }
}

#[test]
fn flow_rate_on_general_quadratics() {
    let mut r = rng(12);
    for _ in 0..5 {
        // A spectral gap keeps the slowest mode dominant over the fit window.
        let eig = DVector::from_fn(3, |i, _| {
            if i == 0 {
                rand::Rng::random_range(&mut r, 1.0..1.5)
            } else {
                rand::Rng::random_range(&mut r, 2.0..3.0)
            }
        });
        let g = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0));
        let q = g.qr().q();
        let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let lmin = a.symmetric_eigenvalues().min();
        let prob = quadratic(a, gaussian(&mut r, 3, 1.0), FeasibleSet::Whole);
        let dt = 1e-3 / prob.lipschitz();
        let flow = integrate_evi_flow(&prob, &gaussian(&mut r, 3, 2.0), 10.0, dt).unwrap();
        let lambda = flow.lambda_hat.unwrap();
        assert!((lambda - 2.0 * lmin).abs() < 0.01 * 2.0 * lmin, "{lambda} vs {}", 2.0 * lmin);
        assert!(lambda >= 0.8 * prob.kappa());
        assert!(flow.decay_bound_holds());
    }
}

#[test]
fn flow_from_equilibrium_stays_put() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![1.0, 2.0], FeasibleSet::Whole);
    let flow = integrate_evi_flow(&prob, &dvector![1.0, 2.0], 1.0, 1e-3).unwrap();
    assert!(flow.energy.iter().all(|&e| e == 0.0));
    assert_eq!(flow.lambda_hat, None);
}

#[test]
fn flow_rejects_large_steps() {
    let prob = quadratic(DMatrix::identity(2, 2) * 4.0, dvector![0.0, 0.0], FeasibleSet::Whole);
    assert!(matches!(
        integrate_evi_flow(&prob, &dvector![1.0, 1.0], 1.0, 1e-2),
        Err(Error::StepSize { .. })
    ));
    assert!(matches!(
        integrate_evi_flow(&prob, &dvector![1.0, 1.0], 1.0, 0.0),
        Err(Error::StepSize { .. })
    ));
}

#[test]
fn small_sweep_is_deterministic_and_calm_at_the_origin() {
    let prob = quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0], FeasibleSet::Whole);
    let spec = SweepSpec {
        sigma_env_max: 0.5,
        sigma_obs_max: 0.5,
        points: 3,
        reps: 2,
        horizon: 40,
        seed: 7,
    };
    let p0 = dvector![0.0, 0.0];
    let a = stability_sweep(&spec, &prob, &p0, &ExactSolver, &SolveOptions::default()).unwrap();
    let b = stability_sweep(&spec, &prob, &p0, &ExactSolver, &SolveOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cell(0, 0).class, Stability::Stable);
    assert_eq!(a.cell(0, 0).mean_regret, 0.0);
    assert!(a.cell(2, 2).mean_regret > 0.0);
}

#[test]
fn plane_fit_recovers_exact_plane() {
    let xs = [0.0, 1.0, 0.0, 1.0, 2.0];
    let ys = [0.0, 0.0, 1.0, 1.0, 0.5];
    let zs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| 0.3 * x + 0.7 * y).collect();
    let (c1, c2, r2) = sweep::fit_plane(&xs, &ys, &zs);
    assert!((c1 - 0.3).abs() < 1e-12 && (c2 - 0.7).abs() < 1e-12);
    assert!((r2 - 1.0).abs() < 1e-12);
}

#[test]
fn drift_rules_are_registered() {
    assert_eq!(
        drift_registry().names(),
        vec!["piecewise", "random-walk", "series", "sinusoidal", "static"]
    );
}
