use std::path::Path;
use std::sync::Arc;

use bvld::dynamics::DriftKind;
use bvld::extensions::Divergence;
use bvld::geometry::potential_registry;
use bvld::problems::{make_quadratic, Huberized, LogSumExp, Objective, Quadratic};
use bvld::sampling::{gaussian, mix_seed, rng};
use bvld::solver::{solver_registry, OperatorSolver};
use bvld::{BvldProblem, FeasibleSet, Point, SolveOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Dynamics,
    Sweep,
    Flow,
    Dro,
    Pareto,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Dynamics => "dynamics",
            Command::Sweep => "sweep",
            Command::Flow => "flow",
            Command::Dro => "dro",
            Command::Pareto => "pareto",
            Command::Verify => "verify",
        }
    }
}

/// A full run description. Every field not given in the file is filled with
/// its default, and the resolved config is written into output metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default = "default_potential")]
    pub potential: String,
    #[serde(default = "default_feasible")]
    pub feasible: FeasibleSet,
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default)]
    pub options: SolveOptions,
    /// Starting point p₀; defaults to the centre of the potential's domain.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub dro: Option<DroConfig>,
    #[serde(default)]
    pub pareto: Option<ParetoConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

fn default_potential() -> String {
    "euclidean".into()
}

fn default_feasible() -> FeasibleSet {
    FeasibleSet::Whole
}

fn default_solver() -> String {
    "exact".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// ½qᵀAq − bᵀq with A given in full or by its diagonal.
    Quadratic {
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        diag: Option<Vec<f64>>,
        b: Vec<f64>,
    },
    /// ½qᵀAq − bᵀq with a seeded random rotation and spectrum in [mu, l].
    RandomQuadratic {
        dim: usize,
        mu: f64,
        l: f64,
        #[serde(default)]
        b_scale: f64,
    },
    Linear {
        c: Vec<f64>,
    },
    LogSumExp {
        scale: f64,
        center: Vec<f64>,
    },
    Huberized {
        delta: f64,
        center: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// Required unless the drift comes from an `input` series.
    #[serde(default)]
    pub drift: Option<DriftKind>,
    /// Defaults to the series length minus one when driven by `input`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub sigma_obs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: String,
    pub column: String,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma_env_max: f64,
    pub sigma_obs_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_points() -> usize {
    8
}

fn default_reps() -> usize {
    5
}

fn default_horizon() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroConfig {
    pub divergence: Divergence,
    pub rho: f64,
    /// Atom locations θⱼ; atom j contributes ½c‖q − θⱼ‖².
    pub atoms: Vec<Vec<f64>>,
    /// Nominal weights; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    /// Radii for the envelope sweep; `[rho]` when omitted.
    #[serde(default)]
    pub rhos: Option<Vec<f64>>,
    /// Evaluation points for the sweep; the atoms and the start when omitted.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
}

fn default_curvature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoConfig {
    /// Objective i is ½cᵢ‖q − centerᵢ‖².
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub curvatures: Option<Vec<f64>>,
    /// Number of weights w₁ ∈ [0, 1] (two objectives only).
    #[serde(default = "default_weights")]
    pub weights: usize,
}

fn default_weights() -> usize {
    21
}

/// Sizes of the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub geometry_samples: usize,
    pub contraction_problems: usize,
    pub contraction_pairs: usize,
    pub max_dim: usize,
    pub static_runs: usize,
    pub drift_seeds: usize,
    pub drift_horizon: usize,
    pub dro_instances: usize,
    pub frontier_weights: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            geometry_samples: 10_000,
            contraction_problems: 10,
            contraction_pairs: 1000,
            max_dim: 20,
            static_runs: 10,
            drift_seeds: 20,
            drift_horizon: 500,
            dro_instances: 20,
            frontier_weights: 21,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Field-level checks beyond the schema.
    pub fn validate(&self) -> CliResult<()> {
        if let Some(p) = &self.problem {
            p.validate()?;
        }
        if !potential_registry().contains(&self.potential) {
            return Err(CliError::config(format!(
                "potential: unknown '{}' (available: {})",
                self.potential,
                potential_registry().names().join(", ")
            )));
        }
        if !solver_registry().contains(&self.solver) {
            return Err(CliError::config(format!(
                "solver: unknown '{}' (available: {})",
                self.solver,
                solver_registry().names().join(", ")
            )));
        }
        self.options.validate().map_err(|e| CliError::config(format!("options: {e}")))?;
        if let Some(s) = &self.schedule {
            match (&s.drift, &self.input) {
                (Some(_), Some(_)) => {
                    return Err(CliError::config("schedule.drift and input are mutually exclusive"))
                }
                (None, None) => return Err(CliError::config("schedule.drift is required without an input series")),
                _ => {}
            }
            if !(s.sigma_obs >= 0.0 && s.sigma_obs.is_finite()) {
                return Err(CliError::config(format!(
                    "schedule.sigma_obs must be nonnegative, got {}",
                    s.sigma_obs
                )));
            }
        }
        if let Some(f) = &self.flow {
            positive("flow.t_end", f.t_end)?;
            positive("flow.dt", f.dt)?;
        }
        if let Some(d) = &self.dro {
            positive("dro.rho", d.rho)?;
            positive("dro.curvature", d.curvature)?;
            for r in d.rhos.iter().flatten() {
                positive("dro.rhos", *r)?;
            }
            if d.atoms.is_empty() {
                return Err(CliError::config("dro.atoms must not be empty"));
            }
        }
        if let Some(p) = &self.pareto {
            if p.centers.is_empty() {
                return Err(CliError::config("pareto.centers must not be empty"));
            }
            for c in p.curvatures.iter().flatten() {
                positive("pareto.curvatures", *c)?;
            }
        }
        let needs = |what: bool, field: &str| {
            if what {
                Ok(())
            } else {
                Err(CliError::config(format!(
                    "command '{}' needs a '{field}' section",
                    self.command.name()
                )))
            }
        };
        match self.command {
            Command::Solve | Command::Flow => needs(self.problem.is_some(), "problem")?,
            Command::Dynamics => {
                needs(self.problem.is_some(), "problem")?;
                needs(self.schedule.is_some() || self.input.is_some(), "schedule")?;
            }
            Command::Sweep => {
                needs(self.problem.is_some(), "problem")?;
                needs(self.sweep.is_some(), "sweep")?;
            }
            Command::Dro => needs(self.dro.is_some(), "dro")?,
            Command::Pareto => needs(self.pareto.is_some(), "pareto")?,
            Command::Verify => {}
        }
        if self.command == Command::Flow {
            needs(self.flow.is_some(), "flow")?;
        }
        Ok(())
    }

    pub fn problem(&self) -> CliResult<BvldProblem> {
        let spec = self
            .problem
            .as_ref()
            .ok_or_else(|| CliError::config("missing 'problem' section"))?;
        let objective = spec.build(self.seed)?;
        let potential = potential_registry().create(&self.potential, &objective.dim())?;
        Ok(BvldProblem::new(objective, potential, self.feasible.clone())?)
    }

    pub fn operator_solver(&self) -> CliResult<Arc<dyn OperatorSolver>> {
        Ok(solver_registry().create(&self.solver, &())?)
    }

    /// The configured start, or the centre of the domain.
    pub fn start_point(&self, prob: &BvldProblem) -> CliResult<Point> {
        let n = prob.dim();
        let p = match &self.start {
            Some(v) => DVector::from_vec(v.clone()),
            None => default_start(prob),
        };
        if p.len() != n {
            return Err(CliError::config(format!("start has length {}, problem dimension is {n}", p.len())));
        }
        prob.check_point(&p).map_err(|e| CliError::config(format!("start: {e}")))?;
        Ok(p)
    }
}

pub fn default_start(prob: &BvldProblem) -> Point {
    let n = prob.dim();
    let base = if prob.potential.on_simplex() {
        DVector::from_element(n, 1.0 / n as f64)
    } else if prob.potential.in_domain(&DVector::zeros(n)) {
        DVector::zeros(n)
    } else {
        DVector::from_element(n, 1.0)
    };
    prob.feasible.project(&base)
}

fn positive(field: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("{field} must be positive, got {v}")))
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> CliResult<()> {
        match self {
            ProblemSpec::Quadratic { matrix, diag, b } => {
                match (matrix, diag) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::config("problem: give either 'matrix' or 'diag', not both"))
                    }
                    (None, None) => return Err(CliError::config("problem: quadratic needs 'matrix' or 'diag'")),
                    (Some(m), None) => {
                        if m.len() != b.len() || m.iter().any(|row| row.len() != b.len()) {
                            return Err(CliError::config(format!(
                                "problem.matrix must be {n}x{n} to match problem.b",
                                n = b.len()
                            )));
                        }
                    }
                    (None, Some(d)) => {
                        if d.len() != b.len() {
                            return Err(CliError::config("problem.diag and problem.b differ in length"));
                        }
                        if let Some(v) = d.iter().find(|v| v.is_nan() || **v < 0.0) {
                            return Err(CliError::config(format!("problem.diag entries must be nonnegative, got {v}")));
                        }
                    }
                }
                nonempty("problem.b", b.len())
            }
            ProblemSpec::RandomQuadratic { dim, mu, l, b_scale } => {
                nonempty("problem.dim", *dim)?;
                positive("problem.mu", *mu)?;
                positive("problem.l", *l)?;
                if l < mu {
                    return Err(CliError::config(format!("problem.l ({l}) must be at least problem.mu ({mu})")));
                }
                if b_scale.is_nan() || *b_scale < 0.0 {
                    return Err(CliError::config(format!("problem.b_scale must be nonnegative, got {b_scale}")));
                }
                Ok(())
            }
            ProblemSpec::Linear { c } => nonempty("problem.c", c.len()),
            ProblemSpec::LogSumExp { scale, center } => {
                positive("problem.scale", *scale)?;
                nonempty("problem.center", center.len())
            }
            ProblemSpec::Huberized { delta, center } => {
                positive("problem.delta", *delta)?;
                nonempty("problem.center", center.len())
            }
        }
    }

    pub fn build(&self, seed: u64) -> CliResult<Arc<dyn Objective>> {
        self.validate()?;
        let f: Arc<dyn Objective> = match self {
            ProblemSpec::Quadratic { matrix, diag, b } => {
                let n = b.len();
                let a = match (matrix, diag) {
                    (Some(m), _) => DMatrix::from_fn(n, n, |i, j| m[i][j]),
                    (_, Some(d)) => DMatrix::from_diagonal(&DVector::from_vec(d.clone())),
                    _ => unreachable!("validated above"),
                };
                Arc::new(make_quadratic(a, DVector::from_vec(b.clone()))?)
            }
            ProblemSpec::RandomQuadratic { dim, mu, l, b_scale } => {
                Arc::new(random_quadratic(*dim, *mu, *l, *b_scale, seed)?)
            }
            ProblemSpec::Linear { c } => Arc::new(Quadratic::linear(DVector::from_vec(c.clone()))),
            ProblemSpec::LogSumExp { scale, center } => {
                Arc::new(LogSumExp::new(*scale, DVector::from_vec(center.clone()))?)
            }
            ProblemSpec::Huberized { delta, center } => {
                Arc::new(Huberized::new(*delta, DVector::from_vec(center.clone()))?)
            }
        };
        Ok(f)
    }
}

fn nonempty(field: &str, n: usize) -> CliResult<()> {
    if n == 0 {
        Err(CliError::config(format!("{field} must be nonempty")))
    } else {
        Ok(())
    }
}

/// QΛQᵀ with Q from the QR factor of a Gaussian matrix and Λ evenly spread
/// over [mu, l]; b is Gaussian with standard deviation `b_scale`.
pub fn random_quadratic(dim: usize, mu: f64, l: f64, b_scale: f64, seed: u64) -> bvld::Result<Quadratic> {
    let mut r = rng(mix_seed(seed, 0x9a));
    let g = DMatrix::from_iterator(dim, dim, gaussian(&mut r, dim * dim, 1.0).iter().cloned());
    let q = g.qr().q();
    let spectrum = DVector::from_fn(dim, |i, _| {
        if dim == 1 {
            mu
        } else {
            mu + (l - mu) * i as f64 / (dim - 1) as f64
        }
    });
    let a = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    make_quadratic(a, gaussian(&mut r, dim, b_scale))
}
