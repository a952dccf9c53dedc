use std::path::Path;
use std::sync::Arc;

use bvld::dynamics::{
    check_drift_bound, integrate_evi_flow, run_dynamics, stability_sweep, DriftBoundReport, DriftKind,
    DriftSchedule, StabilityMap, SweepSpec,
};
use bvld::envelope::RateEstimate;
use bvld::extensions::{
    dominated_pairs, dro_bvld_step, dro_sweep, pareto_frontier, quadratic_atom_losses, weight_grid,
    write_dro_csv, write_pareto_csv, AmbiguitySet, CenteredQuadratic, DroEnvelope, DroSweepRow, FrontierPoint,
    ParetoProblem, RobustObjective,
};
use bvld::geometry::potential_registry;
use bvld::problems::Objective;
use bvld::{FeasibleSet, SolveStatus};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_series, IngestedSeries};
use crate::output::{Document, Metadata, Output};
use crate::verify::run_verify;

/// What a finished command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<String>,
    /// Human-readable summary for the terminal.
    pub summary: String,
    /// Non-fatal diagnostics (e.g. a constant input series).
    pub warnings: Vec<String>,
}

/// Runs the configured command and writes its files under `prefix`.
///
/// A failing `verify` still writes its report before returning
/// `CliError::VerifyFailed`.
pub fn run(cfg: &RunConfig, prefix: &Path) -> CliResult<Outcome> {
    let meta = Metadata::new(cfg);
    let mut out = Output::new(prefix);
    let mut warnings = Vec::new();
    let summary = match cfg.command {
        Command::Solve => solve(cfg, &meta, &mut out)?,
        Command::Dynamics => dynamics(cfg, &meta, &mut out, &mut warnings)?,
        Command::Sweep => sweep(cfg, &meta, &mut out)?,
        Command::Flow => flow(cfg, &meta, &mut out)?,
        Command::Dro => dro(cfg, &meta, &mut out)?,
        Command::Pareto => pareto(cfg, &meta, &mut out)?,
        Command::Verify => {
            let report = run_verify(&cfg.verify.clone().unwrap_or_default(), cfg.seed)?;
            write_doc(&mut out, "report", &meta, &report)?;
            if !report.pass {
                return Err(CliError::VerifyFailed(format!(
                    "{} (report: {})",
                    report.failed().join(", "),
                    out.path("report", "json").display()
                )));
            }
            report.table()
        }
    };
    Ok(Outcome {
        files: out.written().to_vec(),
        summary,
        warnings,
    })
}

/// Writes `<prefix>.<kind>.json` listing the files written before it.
fn write_doc<T: Serialize>(out: &mut Output, kind: &str, meta: &Metadata, result: &T) -> CliResult<()> {
    let mut files = out.written().to_vec();
    files.push(out.path(kind, "json").display().to_string());
    let doc = Document {
        metadata: meta,
        result,
        files,
    };
    out.json(kind, &doc)?;
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    solver: String,
    p: Vec<f64>,
    q: Vec<f64>,
    objective_value: f64,
    kkt_residual: f64,
    tolerance: f64,
    inner_iters: usize,
    status: SolveStatus,
    mirror_residual: Vec<f64>,
    mu: f64,
    lipschitz: f64,
    kappa: f64,
}

fn solve(cfg: &RunConfig, meta: &Metadata, out: &mut Output) -> CliResult<String> {
    let prob = cfg.problem()?;
    let p = cfg.start_point(&prob)?;
    let solver = cfg.operator_solver()?;
    let res = solver.apply(&prob, &p, 0, &cfg.options)?;
    let summary = SolveSummary {
        solver: solver.name().to_string(),
        p: p.iter().cloned().collect(),
        q: res.q.iter().cloned().collect(),
        objective_value: res.objective_value,
        kkt_residual: res.kkt_residual,
        tolerance: res.tolerance,
        inner_iters: res.inner_iters,
        status: res.status,
        mirror_residual: res.mirror_residual.iter().cloned().collect(),
        mu: prob.mu(),
        lipschitz: prob.lipschitz(),
        kappa: prob.kappa(),
    };
    write_doc(out, "solve", meta, &summary)?;
    Ok(format!(
        "solve: {:?} in {} iterations, kkt {:.3e}, Φ = {:.12}",
        res.status, res.inner_iters, res.kkt_residual, res.objective_value
    ))
}

#[derive(Serialize)]
struct DynamicsSummary {
    schedule: DriftKind,
    horizon: usize,
    sigma_obs: f64,
    kappa: f64,
    drift_bound: DriftBoundReport,
    fejer_checked: bool,
    fejer_violations: Vec<usize>,
    rate: Option<RateEstimate>,
    regret: f64,
    normalized_regret: f64,
    total_deviation: f64,
    drift_budget: f64,
    /// Present when the schedule came from an input series.
    series: Option<SeriesInfo>,
}

#[derive(Serialize)]
struct SeriesInfo {
    path: String,
    column: String,
    rows: usize,
    mean: f64,
    sigma: f64,
    sigma_increments: f64,
    normalized: bool,
    constant: bool,
}

impl SeriesInfo {
    fn new(path: &str, s: &IngestedSeries) -> Self {
        Self {
            path: path.to_string(),
            column: s.column.clone(),
            rows: s.values.len(),
            mean: s.mean,
            sigma: s.sigma,
            sigma_increments: s.sigma_increments,
            normalized: s.normalized,
            constant: s.constant,
        }
    }
}

fn dynamics(cfg: &RunConfig, meta: &Metadata, out: &mut Output, warnings: &mut Vec<String>) -> CliResult<String> {
    let prob = cfg.problem()?;
    let p0 = cfg.start_point(&prob)?;
    let solver = cfg.operator_solver()?;
    let spec = cfg.schedule.clone().unwrap_or_default();

    let (kind, default_horizon, series) = match (&spec.drift, &cfg.input) {
        (Some(kind), _) => (kind.clone(), None, None),
        (None, Some(input)) => {
            let s = ingest_series(Path::new(&input.path), &input.column, input.normalize)?;
            let info = SeriesInfo::new(&input.path, &s);
            let horizon = s.values.len() - 1;
            if s.constant {
                warnings.push(format!(
                    "column '{}' of {} has zero variance; running a static schedule",
                    s.column, input.path
                ));
                (DriftKind::Static, Some(horizon), Some(info))
            } else {
                (DriftKind::Series { values: s.values }, Some(horizon), Some(info))
            }
        }
        (None, None) => return Err(CliError::config("schedule.drift is required without an input series")),
    };
    let horizon = spec
        .horizon
        .or(default_horizon)
        .ok_or_else(|| CliError::config("schedule.horizon is required"))?;
    let schedule = DriftSchedule::new(kind.clone(), horizon, cfg.seed).with_sigma_obs(spec.sigma_obs);
    let trace = run_dynamics(&schedule, &prob, &p0, solver.as_ref(), &cfg.options)?;
    let kappa = prob.kappa();
    let report = check_drift_bound(&trace, kappa, 2.0 * (1.0 - kappa));
    let rate = if schedule.is_noiseless_static() {
        trace.rate_estimate().ok()
    } else {
        None
    };

    out.csv("trace", |w| trace.write_csv(w))?;
    let summary = DynamicsSummary {
        schedule: kind,
        horizon,
        sigma_obs: spec.sigma_obs,
        kappa,
        fejer_checked: trace.fejer_checked,
        fejer_violations: trace.fejer_violations.clone(),
        rate,
        regret: trace.regret(),
        normalized_regret: trace.normalized_regret(),
        total_deviation: trace.total_deviation(),
        drift_budget: trace.drift_budget(),
        series,
        drift_bound: report,
    };
    write_doc(out, "dynamics", meta, &summary)?;
    Ok(format!(
        "dynamics: T = {horizon}, κ = {kappa:.6}, drift ratio {:.4} ({}), R_T/T = {:.6}",
        summary.drift_bound.ratio,
        if summary.drift_bound.pass { "within bound" } else { "bound violated" },
        summary.normalized_regret
    ))
}

fn sweep(cfg: &RunConfig, meta: &Metadata, out: &mut Output) -> CliResult<String> {
    let prob = cfg.problem()?;
    let p0 = cfg.start_point(&prob)?;
    let solver = cfg.operator_solver()?;
    let s = cfg.sweep.as_ref().ok_or_else(|| CliError::config("missing 'sweep' section"))?;
    let spec = SweepSpec {
        sigma_env_max: s.sigma_env_max,
        sigma_obs_max: s.sigma_obs_max,
        points: s.points,
        reps: s.reps,
        horizon: s.horizon,
        seed: cfg.seed,
    };
    spec.validate().map_err(|e| CliError::config(format!("sweep: {e}")))?;
    let map: StabilityMap = stability_sweep(&spec, &prob, &p0, solver.as_ref(), &cfg.options)?;
    write_doc(out, "map", meta, &map)?;
    Ok(format!(
        "sweep: {}×{} grid, R_T/T ≈ {:.4}·σ_env + {:.4}·σ_obs (R² = {:.3}), corner {:?}",
        s.points,
        s.points,
        map.c1,
        map.c2,
        map.r2,
        map.cell(0, 0).class
    ))
}

#[derive(Serialize)]
struct FlowSummary {
    dt: f64,
    t_end: f64,
    kappa: f64,
    lambda_hat: Option<f64>,
    forcing: f64,
    decay_bound_holds: bool,
    initial_energy: f64,
    final_energy: f64,
}

fn flow(cfg: &RunConfig, meta: &Metadata, out: &mut Output) -> CliResult<String> {
    let prob = cfg.problem()?;
    let p0 = cfg.start_point(&prob)?;
    let f = cfg.flow.as_ref().ok_or_else(|| CliError::config("missing 'flow' section"))?;
    let res = integrate_evi_flow(&prob, &p0, f.t_end, f.dt)?;
    out.csv("flow", |w| {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| bvld::Error::Invalid(format!("csv: {e}"));
        wr.write_record(["t", "energy"]).map_err(csv_err)?;
        for (t, e) in res.times.iter().zip(&res.energy) {
            wr.write_record([t.to_string(), e.to_string()]).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| bvld::Error::Invalid(format!("csv: {e}")))
    })?;
    let summary = FlowSummary {
        dt: res.dt,
        t_end: f.t_end,
        kappa: res.kappa,
        lambda_hat: res.lambda_hat,
        forcing: res.forcing,
        decay_bound_holds: res.decay_bound_holds(),
        initial_energy: res.energy[0],
        final_energy: *res.energy.last().unwrap_or(&0.0),
    };
    write_doc(out, "flow", meta, &summary)?;
    Ok(match res.lambda_hat {
        Some(l) => format!("flow: λ̂ = {l:.6} (κ = {:.6}), dt = {}", res.kappa, res.dt),
        None => "flow: start is the equilibrium, energy stays zero".to_string(),
    })
}

#[derive(Serialize)]
struct DroSummary {
    p: Vec<f64>,
    q: Vec<f64>,
    kkt_residual: f64,
    status: SolveStatus,
    /// Worst-case value and reweighting at the step's solution.
    envelope: DroEnvelope,
    sweep: Vec<DroSweepRow>,
}

fn dro(cfg: &RunConfig, meta: &Metadata, out: &mut Output) -> CliResult<String> {
    let d = cfg.dro.as_ref().ok_or_else(|| CliError::config("missing 'dro' section"))?;
    let atoms: Vec<DVector<f64>> = d.atoms.iter().map(|a| DVector::from_vec(a.clone())).collect();
    let n = atoms[0].len();
    let amb = match &d.weights {
        Some(w) => AmbiguitySet::new(d.divergence, d.rho, atoms, w.clone()),
        None => AmbiguitySet::uniform(d.divergence, d.rho, atoms),
    }
    .map_err(|e| CliError::config(format!("dro: {e}")))?;
    let a = DMatrix::identity(n, n) * d.curvature;
    let losses = quadratic_atom_losses(&a, &amb)?;
    let potential = potential_registry().create(&cfg.potential, &n)?;
    let p = match &cfg.start {
        Some(v) if v.len() == n => DVector::from_vec(v.clone()),
        Some(v) => return Err(CliError::config(format!("start has length {}, atoms have dimension {n}", v.len()))),
        None => DVector::zeros(n),
    };
    let step = dro_bvld_step(potential, cfg.feasible.clone(), &p, &amb, losses.clone(), &cfg.options)?;
    let robust = RobustObjective::new(losses.clone(), amb.clone())?;
    let envelope = robust.envelope(&step.q)?;

    let rhos = d.rhos.clone().unwrap_or_else(|| vec![d.rho]);
    let points: Vec<DVector<f64>> = match &d.points {
        Some(pts) => pts.iter().map(|x| DVector::from_vec(x.clone())).collect(),
        None => vec![step.q.clone()],
    };
    if points.iter().any(|x| x.len() != n) {
        return Err(CliError::config(format!("dro.points must have dimension {n}")));
    }
    let rows = dro_sweep(&losses, &amb, &rhos, &points)?;
    out.csv("dro", |w| write_dro_csv(&rows, w))?;
    let summary = DroSummary {
        p: p.iter().cloned().collect(),
        q: step.q.iter().cloned().collect(),
        kkt_residual: step.kkt_residual,
        status: step.status,
        envelope,
        sweep: rows,
    };
    write_doc(out, "dro", meta, &summary)?;
    Ok(format!(
        "dro: robust value {:.10} at the step (λ* = {:.6}), kkt {:.3e}",
        summary.envelope.value, summary.envelope.lambda_star, summary.kkt_residual
    ))
}

#[derive(Serialize)]
struct ParetoSummary {
    p: Vec<f64>,
    frontier: Vec<FrontierPoint>,
    dominated_pairs: Vec<(usize, usize)>,
    max_kkt_residual: f64,
}

fn pareto(cfg: &RunConfig, meta: &Metadata, out: &mut Output) -> CliResult<String> {
    let pc = cfg.pareto.as_ref().ok_or_else(|| CliError::config("missing 'pareto' section"))?;
    if pc.centers.len() != 2 {
        return Err(CliError::config(format!(
            "pareto.centers: the weight grid needs exactly 2 objectives, got {}",
            pc.centers.len()
        )));
    }
    let curv = pc.curvatures.clone().unwrap_or_else(|| vec![1.0; pc.centers.len()]);
    if curv.len() != pc.centers.len() {
        return Err(CliError::config("pareto.curvatures must match pareto.centers"));
    }
    let n = pc.centers[0].len();
    let objectives: Vec<Arc<dyn Objective>> = pc
        .centers
        .iter()
        .zip(&curv)
        .map(|(c, &k)| {
            Ok(Arc::new(CenteredQuadratic::new(DMatrix::identity(c.len(), c.len()) * k, DVector::from_vec(c.clone()))?)
                as Arc<dyn Objective>)
        })
        .collect::<bvld::Result<_>>()
        .map_err(|e| CliError::config(format!("pareto: {e}")))?;
    let pp = ParetoProblem::new(objectives).map_err(|e| CliError::config(format!("pareto: {e}")))?;
    let potential = potential_registry().create(&cfg.potential, &n)?;
    let p = match &cfg.start {
        Some(v) if v.len() == n => DVector::from_vec(v.clone()),
        Some(v) => return Err(CliError::config(format!("start has length {}, centers have dimension {n}", v.len()))),
        None => default_in(&cfg.feasible, n),
    };
    let frontier = pareto_frontier(&pp, &weight_grid(pc.weights), potential, cfg.feasible.clone(), &p, &cfg.options)?;
    out.csv("pareto", |w| write_pareto_csv(&frontier, w))?;
    let summary = ParetoSummary {
        p: p.iter().cloned().collect(),
        dominated_pairs: dominated_pairs(&frontier, 1e-12),
        max_kkt_residual: frontier.iter().map(|f| f.kkt_residual).fold(0.0, f64::max),
        frontier,
    };
    write_doc(out, "pareto", meta, &summary)?;
    Ok(format!(
        "pareto: {} points, {} dominated pairs, max kkt {:.3e}",
        summary.frontier.len(),
        summary.dominated_pairs.len(),
        summary.max_kkt_residual
    ))
}

fn default_in(feasible: &FeasibleSet, n: usize) -> DVector<f64> {
    match feasible {
        FeasibleSet::Simplex => DVector::from_element(n, 1.0 / n as f64),
        other => other.project(&DVector::zeros(n)),
    }
}

