use std::sync::Arc;

use bvld::dynamics::{check_drift_bound, integrate_evi_flow, run_dynamics, DriftKind, DriftSchedule};
use bvld::envelope::{dual_gap, envelope_eval, RateRegime};
use bvld::extensions::{
    dominated_pairs, dro_bvld_step, dro_envelope, pareto_frontier, quadratic_atom_losses, weight_grid, AmbiguitySet,
    CenteredQuadratic, Divergence, ParetoProblem,
};
use bvld::geometry::{domain_samples, three_point_residual, Potential};
use bvld::problems::{make_quadratic, Huberized, LogSumExp, Objective, Quadratic};
use bvld::sampling::{gaussian, mix_seed, rng, simplex_interior, uniform_box};
use bvld::solver::ExactSolver;
use bvld::{
    apply_exact, apply_inexact, apply_qn, bregman_div, BvldProblem, Euclidean, FeasibleSet, NegativeEntropy, Point,
    SolveOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{random_quadratic, VerifyConfig};
use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub name: String,
    /// The module invariant the row checks.
    pub invariant: String,
    pub metric: String,
    pub value: f64,
    pub bound: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl VerifyRow {
    fn new(name: &str, invariant: &str, metric: &str, value: f64, comparison: Comparison, bound: f64) -> Self {
        let pass = match comparison {
            Comparison::AtMost => value <= bound,
            Comparison::AtLeast => value >= bound,
        };
        Self {
            name: name.into(),
            invariant: invariant.into(),
            metric: metric.into(),
            value,
            bound,
            comparison,
            pass,
        }
    }

    /// Overrides the flag when the invariant needs more than the headline
    /// number (e.g. a ratio plus an additive slack).
    fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect()
    }

    /// Fixed-width table for the terminal.
    pub fn table(&self) -> String {
        let mut out = format!("{:<34} {:<46} {:>13} {:>2} {:>10}  {}\n", "check", "metric", "value", "", "bound", "pass");
        for r in &self.rows {
            let cmp = match r.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            out.push_str(&format!(
                "{:<34} {:<46} {:>13.6e} {:>2} {:>10.3e}  {}\n",
                r.name,
                r.metric,
                r.value,
                cmp,
                r.bound,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn euclid(n: usize) -> Arc<dyn Potential> {
    Arc::new(Euclidean::new(n))
}

fn quad_problem(f: Quadratic, feasible: FeasibleSet) -> bvld::Result<BvldProblem> {
    let n = f.dim();
    BvldProblem::new(Arc::new(f), euclid(n), feasible)
}

/// Runs every check; row order is fixed.
pub fn run_verify(cfg: &VerifyConfig, seed: u64) -> CliResult<VerifyReport> {
    let mut rows = Vec::new();
    rows.extend(geometry_rows(cfg, mix_seed(seed, 1))?);
    rows.push(contraction_row(cfg, mix_seed(seed, 2))?);
    rows.extend(solver_rows(mix_seed(seed, 3))?);
    rows.extend(envelope_rows(mix_seed(seed, 4))?);
    rows.extend(fejer_rows(cfg, mix_seed(seed, 5))?);
    rows.extend(drift_rows(cfg, mix_seed(seed, 6))?);
    rows.extend(flow_rows(mix_seed(seed, 7))?);
    rows.extend(dro_rows(cfg, mix_seed(seed, 8))?);
    rows.extend(pareto_rows(cfg, mix_seed(seed, 9))?);
    let pass = rows.iter().all(|r| r.pass);
    Ok(VerifyReport { rows, pass })
}

fn geometry_rows(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<VerifyRow>> {
    let pots: [Arc<dyn Potential>; 2] = [euclid(5), Arc::new(NegativeEntropy::simplex(5))];
    let mut three_point: f64 = 0.0;
    let mut lower: f64 = 0.0;
    for (k, psi) in pots.iter().enumerate() {
        let pts = domain_samples(psi.as_ref(), cfg.geometry_samples + 2, mix_seed(seed, k as u64));
        for w in pts.windows(3) {
            three_point = three_point.max(three_point_residual(psi.as_ref(), &w[0], &w[1], &w[2])?.abs());
            let d = bregman_div(psi.as_ref(), &w[0], &w[1])?;
            lower = lower.max(0.5 * psi.mu() * (&w[0] - &w[1]).norm_squared() - d);
        }
    }
    Ok(vec![
        VerifyRow::new(
            "three-point identity",
            "geometry: D(x‖y)+D(y‖z)−D(x‖z) = ⟨∇ψ(z)−∇ψ(y), x−y⟩",
            "max |residual|",
            three_point,
            Comparison::AtMost,
            1e-9,
        ),
        VerifyRow::new(
            "Bregman lower bound",
            "geometry: D(x‖y) ≥ μ/2‖x−y‖²",
            "max μ/2‖x−y‖² − D(x‖y)",
            lower,
            Comparison::AtMost,
            1e-12,
        ),
    ])
}

fn contraction_row(cfg: &VerifyConfig, seed: u64) -> CliResult<VerifyRow> {
    let opts = SolveOptions::default();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    let problems = cfg.contraction_problems.max(1);
    for k in 0..problems {
        let dim = 2 + k * (cfg.max_dim.max(2) - 2) / (problems.max(2) - 1);
        let f = random_quadratic(dim, 1.0, 5.0, 1.0, mix_seed(seed, k as u64))?;
        let prob = quad_problem(f, FeasibleSet::Whole)?;
        let kappa = prob.kappa();
        let psi = prob.potential.as_ref();
        let mut r = rng(mix_seed(seed, 1000 + k as u64));
        for _ in 0..cfg.contraction_pairs {
            let p = gaussian(&mut r, dim, 2.0);
            let q = gaussian(&mut r, dim, 2.0);
            let tp = apply_exact(&prob, &p, &opts)?.q;
            let tq = apply_exact(&prob, &q, &opts)?.q;
            let lhs = bregman_div(psi, &tp, &tq)?;
            let rhs = (1.0 - kappa) * bregman_div(psi, &p, &q)?;
            worst_excess = worst_excess.max(lhs - rhs);
            if rhs > 0.0 {
                worst_ratio = worst_ratio.max(lhs / rhs);
            }
        }
    }
    Ok(VerifyRow::new(
        "contraction slope κ",
        "solver: D(Tp‖Tq) ≤ (1−κ)D(p‖q) + 1e-9",
        "max D(Tp‖Tq)/((1−κ)D(p‖q))",
        worst_ratio,
        Comparison::AtMost,
        1.0,
    )
    .with_pass(worst_excess <= 1e-9))
}

/// One instance of every built-in family, with a start point.
pub fn family_instances(seed: u64) -> bvld::Result<Vec<(&'static str, BvldProblem, Point)>> {
    let mut r = rng(seed);
    let n = 5;
    let mut out = Vec::new();
    let a = random_quadratic(n, 1.0, 5.0, 1.0, mix_seed(seed, 1))?;
    out.push(("quadratic", quad_problem(a.clone(), FeasibleSet::Whole)?, gaussian(&mut r, n, 1.0)));
    let boxed = FeasibleSet::uniform_box(n, -0.3, 0.3);
    out.push(("box quadratic", quad_problem(a, boxed.clone())?, uniform_box(&mut r, n, -0.3, 0.3)));
    out.push((
        "log-sum-exp",
        BvldProblem::new(Arc::new(LogSumExp::new(0.5, gaussian(&mut r, n, 1.0))?), euclid(n), FeasibleSet::Whole)?,
        gaussian(&mut r, n, 1.0),
    ));
    out.push((
        "huberized",
        BvldProblem::new(Arc::new(Huberized::new(0.5, gaussian(&mut r, n, 1.0))?), euclid(n), FeasibleSet::Whole)?,
        gaussian(&mut r, n, 1.0),
    ));
    out.push((
        "entropy-simplex linear",
        BvldProblem::new(
            Arc::new(Quadratic::linear(gaussian(&mut r, n, 1.0))),
            Arc::new(NegativeEntropy::simplex(n)),
            FeasibleSet::Simplex,
        )?,
        simplex_interior(&mut r, n, 0.02),
    ));
    let b = uniform_box(&mut r, n, 0.2, 1.0);
    out.push((
        "entropy-orthant quadratic",
        BvldProblem::new(
            Arc::new(make_quadratic(DMatrix::identity(n, n), b)?),
            Arc::new(NegativeEntropy::orthant(n)),
            FeasibleSet::Whole,
        )?,
        uniform_box(&mut r, n, 0.2, 1.0),
    ));
    Ok(out)
}

fn solver_rows(seed: u64) -> CliResult<Vec<VerifyRow>> {
    let opts = SolveOptions {
        delta0: 0.0,
        ..SolveOptions::default()
    };
    let mut gap: f64 = 0.0;
    for (_, prob, p) in family_instances(seed)? {
        let e = apply_exact(&prob, &p, &opts)?.q;
        let i = apply_inexact(&prob, &p, 0, &opts)?.q;
        let q = apply_qn(&prob, &p, &opts)?.q;
        gap = gap.max((&e - &i).amax()).max((&e - &q).amax()).max((&i - &q).amax());
    }
    let mut kkt: f64 = 0.0;
    let mut iters = 0;
    let mut r = rng(mix_seed(seed, 77));
    for (k, dim) in [10usize, 50, 100].into_iter().enumerate() {
        let prob = quad_problem(random_quadratic(dim, 1.0, 5.0, 1.0, mix_seed(seed, k as u64))?, FeasibleSet::Whole)?;
        let res = apply_qn(&prob, &gaussian(&mut r, dim, 1.0), &SolveOptions::default())?;
        kkt = kkt.max(res.kkt_residual);
        iters = iters.max(res.inner_iters);
    }
    Ok(vec![
        VerifyRow::new(
            "solver agreement",
            "solver: exact, inexact (δ=0) and quasi-Newton agree on every family",
            "max ‖q_a − q_b‖∞",
            gap,
            Comparison::AtMost,
            1e-6,
        ),
        VerifyRow::new(
            "quasi-Newton accuracy",
            "solver: kkt_residual < 1e-9 on quadratics up to dim 100",
            "max kkt_residual",
            kkt,
            Comparison::AtMost,
            1e-9,
        ),
        VerifyRow::new(
            "quasi-Newton iterations",
            "solver: at most 50 inner iterations on quadratics up to dim 100",
            "max inner iterations",
            iters as f64,
            Comparison::AtMost,
            50.0,
        ),
    ])
}

fn envelope_rows(seed: u64) -> CliResult<Vec<VerifyRow>> {
    let mut r = rng(seed);
    let n = 4;
    let quad = quad_problem(random_quadratic(n, 0.5, 3.0, 1.0, mix_seed(seed, 1))?, FeasibleSet::Whole)?;
    let mut fd_err: f64 = 0.0;
    for _ in 0..20 {
        let p = gaussian(&mut r, n, 1.0);
        let g = envelope_eval(&quad, &p)?.mirror_grad;
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1e-5;
            let fd = (envelope_eval(&quad, &(&p + &e))?.value - envelope_eval(&quad, &(&p - &e))?.value) / 2e-5;
            fd_err = fd_err.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
        }
    }
    let simplex = BvldProblem::new(
        Arc::new(Quadratic::linear(gaussian(&mut r, n, 1.0))),
        Arc::new(NegativeEntropy::simplex(n)),
        FeasibleSet::Simplex,
    )?;
    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        gap = gap.max(dual_gap(&quad, &gaussian(&mut r, n, 1.0))?.abs());
        gap = gap.max(dual_gap(&simplex, &simplex_interior(&mut r, n, 0.01))?.abs());
    }
    Ok(vec![
        VerifyRow::new(
            "envelope mirror gradient",
            "envelope: ∇ψ(p) − ∇ψ(Tp) matches central differences of E",
            "max relative error",
            fd_err,
            Comparison::AtMost,
            1e-5,
        ),
        VerifyRow::new(
            "envelope dual gap",
            "envelope: primal and Fenchel dual values coincide",
            "max |gap|",
            gap,
            Comparison::AtMost,
            1e-8,
        ),
    ])
}

fn fejer_rows(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<VerifyRow>> {
    let opts = SolveOptions::default();
    let mut violations = 0usize;
    let mut slope_excess = f64::NEG_INFINITY;
    let mut not_linear = 0usize;
    for k in 0..cfg.static_runs {
        let dim = 2 + k % 5;
        let f = random_quadratic(dim, 1.0, 5.0, 1.0, mix_seed(seed, k as u64))?;
        let feasible = if k % 2 == 0 {
            FeasibleSet::Whole
        } else {
            FeasibleSet::uniform_box(dim, -1.0, 1.0)
        };
        let prob = quad_problem(f, feasible.clone())?;
        let mut r = rng(mix_seed(seed, 100 + k as u64));
        let p0 = feasible.project(&gaussian(&mut r, dim, 3.0));
        let trace = run_dynamics(&DriftSchedule::new(DriftKind::Static, 100, 0), &prob, &p0, &ExactSolver, &opts)?;
        violations += trace.fejer_violations.len();
        match trace.log_slope() {
            Some(s) => slope_excess = slope_excess.max(s - (1.0 - prob.kappa()).ln()),
            None => not_linear += 1,
        }
        match trace.rate_estimate() {
            Ok(est) if est.regime == RateRegime::Linear => {}
            _ => not_linear += 1,
        }
    }
    Ok(vec![
        VerifyRow::new(
            "Lyapunov orbit behavior",
            "dynamics: static runs satisfy D_{t+1} ≤ (1−κ)D_t + 1e-9",
            "Fejér violations",
            violations as f64,
            Comparison::AtMost,
            0.0,
        ),
        VerifyRow::new(
            "linear rate",
            "dynamics: fitted log-slope ≤ log(1−κ) + 0.05",
            "max slope − log(1−κ)",
            slope_excess,
            Comparison::AtMost,
            0.05,
        ),
        VerifyRow::new(
            "rate regime",
            "envelope: static runs classify as Linear",
            "runs not classified Linear",
            not_linear as f64,
            Comparison::AtMost,
            0.0,
        ),
    ])
}

fn drift_rows(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<VerifyRow>> {
    let opts = SolveOptions::default();
    let prob = quad_problem(make_quadratic(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3))?, FeasibleSet::Whole)?;
    let kappa = prob.kappa();
    let c = 2.0 * (1.0 - kappa);
    let mut ratio: f64 = 0.0;
    let mut lemma = 0usize;
    let mut one_step = 0usize;
    let p0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    for s in 0..cfg.drift_seeds {
        for (j, sigma) in [0.1, 0.5, 1.0].into_iter().enumerate() {
            let schedule = DriftSchedule::new(
                DriftKind::RandomWalk { sigma_env: sigma },
                cfg.drift_horizon,
                mix_seed(seed, (s * 3 + j) as u64),
            );
            let trace = run_dynamics(&schedule, &prob, &p0, &ExactSolver, &opts)?;
            let report = check_drift_bound(&trace, kappa, c);
            ratio = ratio.max(report.ratio);
            lemma += report.lemma_violations.len();
            one_step += report.one_step_violations.len();
        }
    }
    Ok(vec![
        VerifyRow::new(
            "drift ratio",
            "dynamics: Σ D_t ≤ (1/κ)D₀ + (C/κ)V_T with C = 2(1−κ)",
            "max LHS/RHS over random walks",
            ratio,
            Comparison::AtMost,
            1.0,
        ),
        VerifyRow::new(
            "drift lemma",
            "dynamics: D_t ≤ 2(1−κ)(D_{t−1} + W_t)",
            "violating steps",
            lemma as f64,
            Comparison::AtMost,
            0.0,
        ),
        VerifyRow::new(
            "drift one-step bound",
            "dynamics: D_t ≤ (1−κ)D_{t−1} + C·W_t",
            "violating steps",
            one_step as f64,
            Comparison::AtMost,
            0.0,
        ),
    ])
}

fn flow_rows(seed: u64) -> CliResult<Vec<VerifyRow>> {
    let unit = quad_problem(make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2))?, FeasibleSet::Whole)?;
    let flow = integrate_evi_flow(&unit, &DVector::from_vec(vec![1.0, -0.5]), 5.0, 1e-3)?;
    let err = flow.lambda_hat.map(|l| (l - 2.0).abs() / 2.0).unwrap_or(f64::INFINITY);
    let mut worst = f64::INFINITY;
    let mut r = rng(seed);
    for k in 0..5 {
        let prob = quad_problem(random_quadratic(3, 1.0, 3.0, 1.0, mix_seed(seed, k))?, FeasibleSet::Whole)?;
        let dt = 1e-3 / prob.lipschitz();
        let flow = integrate_evi_flow(&prob, &gaussian(&mut r, 3, 2.0), 5.0, dt)?;
        worst = worst.min(flow.lambda_hat.unwrap_or(0.0) / prob.kappa());
    }
    Ok(vec![
        VerifyRow::new(
            "decay rate λ",
            "dynamics: flow on ½‖q‖² decays at rate 2",
            "|λ̂ − 2|/2",
            err,
            Comparison::AtMost,
            0.01,
        ),
        VerifyRow::new(
            "decay rate vs κ",
            "dynamics: fitted flow rate ≥ 0.8κ on static quadratics",
            "min λ̂/κ",
            worst,
            Comparison::AtLeast,
            0.8,
        ),
    ])
}

fn dro_rows(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<VerifyRow>> {
    let mut r = rng(seed);
    let mut cert: f64 = 0.0;
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        for _ in 0..cfg.dro_instances {
            let raw: Vec<f64> = (0..5).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            w[4] = 1.0 - w[..4].iter().sum::<f64>();
            let atoms = (0..5).map(|j| DVector::from_element(1, j as f64)).collect();
            let amb = AmbiguitySet::new(div, r.random_range(0.02..0.5), atoms, w)?;
            let loss: Vec<f64> = (0..5).map(|_| r.random_range(0.0..5.0)).collect();
            let env = dro_envelope(&amb, &loss)?;
            let primal: f64 = env.weights.iter().zip(&loss).map(|(a, b)| a * b).sum();
            let excess = (amb.divergence_of(&env.weights) - amb.rho).max(0.0);
            cert = cert.max((primal - env.value).abs()).max(excess);
        }
    }
    let a = DMatrix::identity(3, 3) * 2.0;
    let opts = SolveOptions::default();
    let mut ratio: f64 = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for div in [Divergence::Kl, Divergence::ChiSquared] {
        let atoms: Vec<DVector<f64>> = (0..5).map(|_| gaussian(&mut r, 3, 1.0)).collect();
        let amb = AmbiguitySet::uniform(div, 0.3, atoms)?;
        let losses = quadratic_atom_losses(&a, &amb)?;
        let kappa = 1.0 / 3.0;
        for _ in 0..25 {
            let p = gaussian(&mut r, 3, 2.0);
            let q = gaussian(&mut r, 3, 2.0);
            let tp = dro_bvld_step(euclid(3), FeasibleSet::Whole, &p, &amb, losses.clone(), &opts)?.q;
            let tq = dro_bvld_step(euclid(3), FeasibleSet::Whole, &q, &amb, losses.clone(), &opts)?.q;
            let lhs = 0.5 * (&tp - &tq).norm_squared();
            let rhs = (1.0 - kappa) * 0.5 * (&p - &q).norm_squared();
            excess = excess.max(lhs - rhs);
            ratio = ratio.max(lhs / rhs);
        }
    }
    Ok(vec![
        VerifyRow::new(
            "DRO dual = primal",
            "extensions: worst-case reweighting is feasible and attains the dual value",
            "max |E_Q*[ℓ] − dual| + ball excess",
            cert,
            Comparison::AtMost,
            1e-7,
        ),
        VerifyRow::new(
            "DRO contraction",
            "extensions: robust step is κ-contractive",
            "max D(Tp‖Tq)/((1−κ)D(p‖q))",
            ratio,
            Comparison::AtMost,
            1.0,
        )
        .with_pass(excess <= 1e-8),
    ])
}

fn pareto_rows(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<VerifyRow>> {
    let mut r = rng(seed);
    let mut dominated = 0usize;
    let mut kkt: f64 = 0.0;
    for _ in 0..3 {
        let objectives: Vec<Arc<dyn Objective>> = (0..2)
            .map(|_| {
                let c = r.random_range(0.5..3.0);
                Ok(Arc::new(CenteredQuadratic::new(DMatrix::identity(3, 3) * c, gaussian(&mut r, 3, 2.0))?)
                    as Arc<dyn Objective>)
            })
            .collect::<bvld::Result<_>>()?;
        let pp = ParetoProblem::new(objectives)?;
        let p = gaussian(&mut r, 3, 1.0);
        let front = pareto_frontier(
            &pp,
            &weight_grid(cfg.frontier_weights),
            euclid(3),
            FeasibleSet::Whole,
            &p,
            &SolveOptions::default(),
        )?;
        dominated += dominated_pairs(&front, 1e-12).len();
        kkt = front.iter().map(|f| f.kkt_residual).fold(kkt, f64::max);
    }
    Ok(vec![
        VerifyRow::new(
            "Pareto nondominance",
            "extensions: no frontier point dominates another",
            "dominated pairs",
            dominated as f64,
            Comparison::AtMost,
            0.0,
        ),
        VerifyRow::new(
            "Pareto KKT",
            "extensions: scalarized steps satisfy the weighted KKT system",
            "max kkt_residual",
            kkt,
            Comparison::AtMost,
            1e-8,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failing_rows_fail_the_report() {
        let rows = vec![
            VerifyRow::new("a", "", "", 0.5, Comparison::AtMost, 1.0),
            VerifyRow::new("b", "", "", 0.5, Comparison::AtLeast, 1.0),
        ];
        assert!(rows[0].pass && !rows[1].pass);
        let report = VerifyReport {
            pass: rows.iter().all(|r| r.pass),
            rows,
        };
        assert!(!report.pass);
        assert_eq!(report.failed(), vec!["b"]);
    }

    #[test]
    fn ratio_rows_use_the_additive_criterion() {
        let row = VerifyRow::new("c", "", "", 1.2, Comparison::AtMost, 1.0).with_pass(true);
        assert!(row.pass);
    }

    #[test]
    fn families_cover_every_builtin() {
        let fams = family_instances(1).unwrap();
        assert_eq!(fams.len(), 6);
        for (_, prob, p) in &fams {
            assert!(prob.is_admissible(p));
        }
    }
}

