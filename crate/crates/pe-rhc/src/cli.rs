//! Experiment harness: JSON config ingestion, seeded batch execution over
//! a `(T, seed)` grid, per-run CSV logs, a fixed-schema batch summary, and
//! the invariant check suite.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::controller::{
    run_etc, run_hindsight, run_online_rhc, run_oracle_baseline, ControllerError,
    IntervalSchedule, PolicyKind, RunConfig, TrajectoryLog,
};
use crate::costs::{synth_terminal, CostFamily, Schedule, SigmaKind, StageCostSpec, TerminalCostSpec};
use crate::explorer::InputWindow;
use crate::linsys::{NoiseModel, SystemParams};
use crate::metrics::{slope_fit_robust, BatchSummary, MetricsError, ReferenceCost};
use crate::rhc::{riccati, solve_horizon, HorizonProblem, PolytopeU, SolverStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Fixed schema the batch summary must satisfy; shipped in-repo so
/// external consumers can validate the file independently.
pub const SUMMARY_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["slope_regret", "slope_violation", "coverage_rate", "poe_pass_rate"],
  "properties": {
    "slope_regret": {"type": ["number", "null"]},
    "slope_violation": {"type": ["number", "null"]},
    "coverage_rate": {"type": ["number", "null"]},
    "poe_pass_rate": {"type": ["number", "null"]}
  },
  "additionalProperties": false
}"#;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run failure (T={t_horizon}, seed={seed}): {source}")]
    Run {
        t_horizon: usize,
        seed: u64,
        source: ControllerError,
    },
    #[error("check suite failed: {failed} of {total} checks did not pass")]
    ChecksFailed { failed: usize, total: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::ChecksFailed { .. } => EXIT_CHECK_FAILED,
            _ => EXIT_RUNTIME,
        }
    }
}

// ---------------------------------------------------------------------
// configuration files
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    /// Row-major state matrix.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub eps_c: f64,
    pub s: f64,
    /// Initial state; all-ones when omitted.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum CostConfig {
    Quadratic {
        q: ScheduleConfig,
        r: ScheduleConfig,
    },
    Power {
        a: f64,
    },
    Tracking {
        b: Vec<f64>,
        a: f64,
        beta_ref: f64,
    },
}

/// Matrix schedules: one matrix held constant, a cycle, or one entry per
/// step (which must then cover `T + M` steps of look-ahead).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ScheduleConfig {
    Constant(Vec<Vec<f64>>),
    Periodic(Vec<Vec<Vec<f64>>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    #[serde(default, rename = "box")]
    pub box_bounds: Option<BoxConfig>,
    #[serde(default)]
    pub halfspaces: Option<HalfspaceConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceConfig {
    pub f: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub h: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    /// Estimation-phase split for the two-phase policy; `ceil(T^{2/3})`
    /// when omitted.
    pub n: Option<usize>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma_terminal: Option<f64>,
    pub gamma_poe: Option<f64>,
    /// "auto" synthesizes the quadratic terminal weight; "none" runs d = 0.
    pub terminal: Option<String>,
    pub drop_interval_starts: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Path of the system JSON, relative to this config file.
    pub system: String,
    pub cost: CostConfig,
    pub constraint: ConstraintConfig,
    pub controller: String,
    pub t_list: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub overrides: Overrides,
}

/// Everything a batch needs, resolved and validated.
#[derive(Debug)]
pub struct Experiment {
    pub sys: SystemParams,
    pub noise: NoiseModel,
    pub costs: StageCostSpec,
    pub terminal: Option<TerminalCostSpec>,
    pub u_set: PolytopeU,
    pub policy: PolicyKind,
    pub t_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub overrides: ResolvedOverrides,
    pub x0: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolvedOverrides {
    pub h: usize,
    pub rhc_horizon: usize,
    pub k: usize,
    pub l: usize,
    pub etc_split: Option<usize>,
    pub delta: f64,
    pub lambda: Option<f64>,
    pub gamma_poe: Option<f64>,
    pub drop_interval_starts: bool,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Config(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn schedule_from_config(
    cfg: &ScheduleConfig,
    what: &str,
) -> Result<Schedule<DMatrix<f64>>, CliError> {
    match cfg {
        ScheduleConfig::Constant(rows) => Ok(Schedule::Constant(matrix_from_rows(rows, what)?)),
        ScheduleConfig::Periodic(list) => {
            let mats = list
                .iter()
                .map(|rows| matrix_from_rows(rows, what))
                .collect::<Result<Vec<_>, _>>()?;
            if mats.is_empty() {
                return Err(CliError::Config(format!("{what}: empty periodic schedule")));
            }
            Ok(Schedule::Periodic(mats))
        }
        ScheduleConfig::PerStep(list) => {
            let mats = list
                .iter()
                .map(|rows| matrix_from_rows(rows, what))
                .collect::<Result<Vec<_>, _>>()?;
            if mats.is_empty() {
                return Err(CliError::Config(format!("{what}: empty per-step schedule")));
            }
            Ok(Schedule::PerStep(mats))
        }
    }
}

/// CLI-level flag overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub controller: Option<String>,
}

pub fn load_experiment(
    config_path: &Path,
    flags: &FlagOverrides,
) -> Result<Experiment, CliError> {
    let spec: ExperimentSpec = read_json(config_path)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let system_file: SystemFile = read_json(&base.join(&spec.system))?;

    let a = matrix_from_rows(&system_file.a, "system.a")?;
    let b = matrix_from_rows(&system_file.b, "system.b")?;
    let n = a.nrows();
    let m = b.ncols();
    let sys = SystemParams::new(a.clone(), b, system_file.s)
        .map_err(|e| CliError::Config(format!("system: {e}")))?;
    let noise = if system_file.eps_c > 0.0 {
        NoiseModel::uniform_ball(system_file.eps_c)
    } else {
        NoiseModel::zero()
    };
    let x0 = match &system_file.x0 {
        Some(v) => {
            if v.len() != n {
                return Err(CliError::Config("system.x0 dimension mismatch".into()));
            }
            DVector::from_row_slice(v)
        }
        None => DVector::from_element(n, 1.0),
    };

    let costs = match &spec.cost {
        CostConfig::Quadratic { q, r } => StageCostSpec::new(CostFamily::Quadratic {
            q: schedule_from_config(q, "cost.q")?,
            r: schedule_from_config(r, "cost.r")?,
        }),
        CostConfig::Power { a } => StageCostSpec::new(CostFamily::Power { a: *a }),
        CostConfig::Tracking { b, a, beta_ref } => StageCostSpec::new(CostFamily::Tracking {
            b: DVector::from_row_slice(b),
            a: *a,
            beta_ref: *beta_ref,
        }),
    }
    .map_err(|e| CliError::Config(format!("cost: {e}")))?;

    let u_set = match (&spec.constraint.box_bounds, &spec.constraint.halfspaces) {
        (Some(bx), None) => PolytopeU::bounded_box(
            DVector::from_row_slice(&bx.lo),
            DVector::from_row_slice(&bx.hi),
        ),
        (None, Some(hs)) => {
            let f = matrix_from_rows(&hs.f, "constraint.f")?;
            PolytopeU::from_halfspaces(f, DVector::from_row_slice(&hs.b))
        }
        _ => {
            return Err(CliError::Config(
                "constraint: exactly one of `box` or `halfspaces` required".into(),
            ))
        }
    }
    .map_err(|e| CliError::Config(format!("constraint: {e}")))?;
    if u_set.dim() != m {
        return Err(CliError::Config(
            "constraint dimension does not match the input dimension".into(),
        ));
    }

    let controller_name = flags
        .controller
        .clone()
        .unwrap_or_else(|| spec.controller.clone());
    let policy = match controller_name.as_str() {
        "online-rhc" => PolicyKind::OnlineRhc,
        "etc" => PolicyKind::Etc,
        "oracle" => PolicyKind::Oracle,
        "hindsight" => PolicyKind::Hindsight,
        other => {
            return Err(CliError::Config(format!(
                "unknown controller '{other}' (expected online-rhc | etc | oracle | hindsight)"
            )))
        }
    };

    if spec.t_list.is_empty() {
        return Err(CliError::Config("t_list must be nonempty".into()));
    }
    let seeds = match flags.seed {
        Some(s) => vec![s],
        None => spec.seeds.clone(),
    };
    if seeds.is_empty() {
        return Err(CliError::Config("seeds must be nonempty".into()));
    }

    let ov = &spec.overrides;
    let resolved = ResolvedOverrides {
        h: ov.h.unwrap_or(16),
        rhc_horizon: ov.m.unwrap_or(8),
        k: ov.k.unwrap_or(8),
        l: ov.l.unwrap_or(4),
        etc_split: ov.n,
        delta: ov.delta.unwrap_or(0.1),
        lambda: ov.lambda,
        gamma_poe: ov.gamma_poe,
        drop_interval_starts: ov.drop_interval_starts.unwrap_or(false),
    };

    // per-step schedules must cover the RHC look-ahead past the horizon
    if let CostFamily::Quadratic { q, r } = costs.family() {
        let t_max = spec.t_list.iter().max().copied().unwrap_or(0);
        for (sched, name) in [(q, "q"), (r, "r")] {
            if let Some(len) = sched.finite_len() {
                if len < t_max + resolved.rhc_horizon {
                    return Err(CliError::Config(format!(
                        "cost.{name}: per-step schedule covers {len} steps but T + M = {}",
                        t_max + resolved.rhc_horizon
                    )));
                }
            }
        }
    }

    let gamma_terminal = ov.gamma_terminal.unwrap_or(1.0);
    let terminal_mode = ov.terminal.as_deref().unwrap_or(match costs.family() {
        CostFamily::Quadratic { .. } => "auto",
        _ => "none",
    });
    let terminal = match terminal_mode {
        "none" => None,
        "auto" => Some(
            synth_terminal(
                &[sys.theta().a().clone()],
                gamma_terminal,
                match costs.family() {
                    CostFamily::Quadratic { .. } => SigmaKind::NormSq,
                    CostFamily::Power { a } => SigmaKind::PowerNorm { a: *a },
                    CostFamily::Tracking { b, a, .. } => SigmaKind::TrackingNorm {
                        b: b.clone(),
                        a: *a,
                    },
                },
                costs.u_tilde(m),
            )
            .map_err(|e| CliError::Config(format!("terminal: {e}")))?,
        ),
        other => {
            return Err(CliError::Config(format!(
                "overrides.terminal must be 'auto' or 'none', got '{other}'"
            )))
        }
    };

    let out_dir = flags
        .out
        .clone()
        .or_else(|| spec.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("output directory required (out_dir or --out)".into()))?;

    Ok(Experiment {
        sys,
        noise,
        costs,
        terminal,
        u_set,
        policy,
        t_list: spec.t_list,
        seeds,
        out_dir,
        overrides: resolved,
        x0,
    })
}

impl Experiment {
    pub fn run_config(&self, t_horizon: usize, seed: u64) -> RunConfig {
        let n = self.sys.n();
        let m = self.sys.m();
        let mut cfg = RunConfig::new(t_horizon, self.overrides.h, self.overrides.rhc_horizon, n, m);
        cfg.seed = seed;
        cfg.delta = self.overrides.delta;
        cfg.lambda = self.overrides.lambda;
        cfg.k_candidates = self.overrides.k;
        cfg.l_candidates = self.overrides.l;
        cfg.policy = self.policy;
        cfg.drop_interval_starts = self.overrides.drop_interval_starts;
        cfg.x0 = self.x0.clone();
        if let Some(g) = self.overrides.gamma_poe {
            cfg.gamma_poe = g;
        }
        cfg.etc_split = Some(
            self.overrides
                .etc_split
                .unwrap_or_else(|| (t_horizon as f64).powf(2.0 / 3.0).ceil() as usize),
        );
        cfg
    }

    pub fn execute_run(&self, t_horizon: usize, seed: u64) -> Result<TrajectoryLog, CliError> {
        let cfg = self.run_config(t_horizon, seed);
        let out = match self.policy {
            PolicyKind::OnlineRhc => run_online_rhc(
                &self.sys,
                &self.noise,
                &self.costs,
                self.terminal.as_ref(),
                &self.u_set,
                &cfg,
            ),
            PolicyKind::Etc => run_etc(
                &self.sys,
                &self.noise,
                &self.costs,
                self.terminal.as_ref(),
                &self.u_set,
                &cfg,
            ),
            PolicyKind::Oracle => run_oracle_baseline(
                &self.sys,
                &self.costs,
                self.terminal.as_ref(),
                &self.u_set,
                &cfg,
            ),
            PolicyKind::Hindsight => {
                run_hindsight(&self.sys, &self.costs, &self.u_set, &cfg).map(|(_, log)| log)
            }
        };
        out.map_err(|source| CliError::Run {
            t_horizon,
            seed,
            source,
        })
    }

    /// Hindsight total cost for one horizon (depends only on the instance,
    /// not on the seed: noise never enters the dynamics).
    pub fn hindsight_reference(&self, t_horizon: usize) -> Result<ReferenceCost, CliError> {
        let cfg = self.run_config(t_horizon, 0);
        let (_, log) =
            run_hindsight(&self.sys, &self.costs, &self.u_set, &cfg).map_err(|source| {
                CliError::Run {
                    t_horizon,
                    seed: 0,
                    source,
                }
            })?;
        Ok(ReferenceCost::from_log(&log))
    }
}

// ---------------------------------------------------------------------
// CSV + summary emission
// ---------------------------------------------------------------------

fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string(), "interval".to_string()];
    for (name, d) in [("x", n), ("y", n), ("xbar", n), ("uhat", m), ("du", m), ("u", m)] {
        for i in 0..d {
            cols.push(format!("{name}{i}"));
        }
    }
    cols.push("cost".into());
    cols.push("violation".into());
    cols.join(",")
}

/// Step rows in time order, then one `I,`-prefixed row per interval:
/// `I,i,t_i,beta_i,theta_err_fro,lambda_min_V,poe_bound,covered`.
pub fn trajectory_to_csv(log: &TrajectoryLog, n: usize, m: usize) -> String {
    let mut out = String::new();
    out.push_str(&csv_header(n, m));
    out.push('\n');
    for s in &log.steps {
        let mut fields: Vec<String> = vec![s.t.to_string(), s.interval.to_string()];
        for v in [&s.x, &s.y, &s.xbar] {
            fields.extend(v.iter().map(|x| x.to_string()));
        }
        for v in [&s.uhat, &s.du, &s.u] {
            fields.extend(v.iter().map(|x| x.to_string()));
        }
        fields.push(s.cost.to_string());
        fields.push(s.violation.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    for r in &log.intervals {
        out.push_str(&format!(
            "I,{},{},{},{},{},{},{}\n",
            r.i, r.t_i, r.beta_i, r.theta_err_fro, r.lambda_min_v, r.poe_bound, r.covered
        ));
    }
    out
}

fn summary_to_json(s: &BatchSummary) -> serde_json::Value {
    fn opt(v: Option<f64>) -> serde_json::Value {
        match v {
            Some(x) => serde_json::json!(x),
            None => serde_json::Value::Null,
        }
    }
    serde_json::json!({
        "slope_regret": opt(s.slope_regret),
        "slope_violation": opt(s.slope_violation),
        "coverage_rate": opt(s.coverage_rate),
        "poe_pass_rate": opt(s.poe_pass_rate),
    })
}

/// Structural validation against the shipped schema string: required keys,
/// per-key type lists, and the closed-world property list.
pub fn validate_summary(value: &serde_json::Value) -> Result<(), CliError> {
    let schema: serde_json::Value =
        serde_json::from_str(SUMMARY_SCHEMA).expect("schema constant parses");
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Config("summary: not a JSON object".into()))?;
    let required = schema["required"].as_array().expect("schema required");
    for key in required {
        if !obj.contains_key(key.as_str().unwrap()) {
            return Err(CliError::Config(format!(
                "summary: missing required key {key}"
            )));
        }
    }
    let props = schema["properties"].as_object().expect("schema properties");
    for (key, val) in obj {
        let Some(prop) = props.get(key) else {
            return Err(CliError::Config(format!(
                "summary: unexpected key {key}"
            )));
        };
        let allowed = prop["type"].as_array().expect("type list");
        let ok = allowed.iter().any(|t| match t.as_str().unwrap() {
            "number" => val.is_number(),
            "null" => val.is_null(),
            other => panic!("unhandled schema type {other}"),
        });
        if !ok {
            return Err(CliError::Config(format!(
                "summary: key {key} has invalid type"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------

/// Executes the batch: one CSV per `(T, seed)` pair plus `summary.json`.
/// Deterministic file contents per (spec, seed); completion order does not
/// matter because results are keyed by the grid.
pub fn cmd_run(exp: &Experiment) -> Result<(), CliError> {
    fs::create_dir_all(&exp.out_dir).map_err(|source| CliError::Io {
        path: exp.out_dir.clone(),
        source,
    })?;
    let n = exp.sys.n();
    let m = exp.sys.m();

    // hindsight references per T (seed-independent)
    let mut hindsight: BTreeMap<usize, ReferenceCost> = BTreeMap::new();
    for &t in &exp.t_list {
        hindsight.insert(t, exp.hindsight_reference(t)?);
    }

    let grid: Vec<(usize, u64)> = exp
        .t_list
        .iter()
        .flat_map(|&t| exp.seeds.iter().map(move |&s| (t, s)))
        .collect();
    type RunItem = Result<((usize, u64), TrajectoryLog), CliError>;
    let runs: Vec<RunItem> = grid
        .par_iter()
        .map(|&(t, seed)| exp.execute_run(t, seed).map(|log| ((t, seed), log)))
        .collect();

    let mut per_t_regret: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut per_t_violation: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut covered_runs = 0usize;
    let mut runs_with_intervals = 0usize;
    let mut poe_pass = 0usize;
    let mut poe_total = 0usize;

    for item in runs {
        let ((t, seed), log) = item?;
        let csv = trajectory_to_csv(&log, n, m);
        let path = exp.out_dir.join(format!("run_{t}_{seed}.csv"));
        fs::write(&path, csv).map_err(|source| CliError::Io { path, source })?;

        let reference = hindsight[&t];
        per_t_regret
            .entry(t)
            .or_default()
            .push(log.total_cost - reference.total);
        per_t_violation.entry(t).or_default().push(log.total_violation);
        if !log.intervals.is_empty() {
            runs_with_intervals += 1;
            if log.intervals.iter().all(|r| r.covered) {
                covered_runs += 1;
            }
            poe_total += log.intervals.len();
            poe_pass += log
                .intervals
                .iter()
                .filter(|r| r.lambda_min_v >= r.poe_bound)
                .count();
        }
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let slope_of = |series: &BTreeMap<usize, Vec<f64>>| -> Option<f64> {
        let points: Vec<(f64, f64)> = series
            .iter()
            .map(|(&t, vals)| (t as f64, mean(vals)))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        if points.len() < 3 {
            return None;
        }
        slope_fit_robust(&points).ok().map(|f| f.primary().slope)
    };
    let summary = BatchSummary {
        slope_regret: slope_of(&per_t_regret),
        slope_violation: slope_of(&per_t_violation),
        coverage_rate: (runs_with_intervals > 0)
            .then(|| covered_runs as f64 / runs_with_intervals as f64),
        poe_pass_rate: (poe_total > 0).then(|| poe_pass as f64 / poe_total as f64),
    };
    let json = summary_to_json(&summary);
    validate_summary(&json)?;
    let path = exp.out_dir.join("summary.json");
    let mut file = fs::File::create(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    writeln!(file, "{}", serde_json::to_string_pretty(&json).unwrap()).map_err(|source| {
        CliError::Io {
            path,
            source,
        }
    })?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Invariant suite over the experiment's own instance: dynamic-programming
/// equivalence of the solver, persistence of excitation, confidence
/// coverage, the exploit-input feasibility split, and window integrity.
/// Returns one row per check.
pub fn run_check_suite(exp: &Experiment) -> Result<Vec<CheckResult>, CliError> {
    let mut results = Vec::new();

    // 1. DP equivalence on random unconstrained LQR instances
    results.push(check_dp_equivalence());

    // 2-5. one online-RHC batch at the smallest T of the grid
    let t = *exp.t_list.iter().min().unwrap();
    let logs: Vec<TrajectoryLog> = exp
        .seeds
        .par_iter()
        .map(|&seed| {
            let cfg = exp.run_config(t, seed);
            run_online_rhc(
                &exp.sys,
                &exp.noise,
                &exp.costs,
                exp.terminal.as_ref(),
                &exp.u_set,
                &cfg,
            )
            .map_err(|source| CliError::Run {
                t_horizon: t,
                seed,
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    // persistence of excitation: every interval of every run
    let mut poe_fail = 0usize;
    let mut poe_total = 0usize;
    for log in &logs {
        for r in &log.intervals {
            poe_total += 1;
            if r.lambda_min_v < r.poe_bound {
                poe_fail += 1;
            }
        }
    }
    results.push(CheckResult {
        name: "poe",
        pass: poe_fail == 0,
        detail: format!("{poe_fail} of {poe_total} interval certificates below the bound"),
    });

    // coverage: >= 90% of runs covered at every interval
    let covered = logs
        .iter()
        .filter(|l| l.intervals.iter().all(|r| r.covered))
        .count();
    let rate = covered as f64 / logs.len() as f64;
    results.push(CheckResult {
        name: "coverage",
        pass: rate >= 0.9,
        detail: format!("{covered}/{} runs covered at every interval", logs.len()),
    });

    // feasibility split: the exploit input never violates
    let mut worst = 0.0f64;
    for log in &logs {
        for s in &log.steps {
            worst = worst.max(exp.u_set.violation(&s.uhat));
        }
    }
    results.push(CheckResult {
        name: "feasibility-split",
        pass: worst <= 1e-8,
        detail: format!("max exploit-input violation {worst:.3e}"),
    });

    // window integrity: rebuild the ring from the logged inputs
    let sched = IntervalSchedule::new(exp.overrides.h);
    let mut min_sv = f64::INFINITY;
    let mut col_floor_ok = true;
    for log in &logs {
        let mut window = InputWindow::new(exp.sys.n(), exp.sys.m());
        for s in &log.steps {
            window.push(s.u.clone());
            if window.is_warm() {
                if let Ok(sv) = window.min_singular_value() {
                    min_sv = min_sv.min(sv);
                }
                // newest completed window column spans the last n+1 inputs
                let ncol: f64 = log.steps[s.t - 1 - exp.sys.n()..s.t]
                    .iter()
                    .map(|r| r.u.norm_squared())
                    .sum::<f64>()
                    .sqrt();
                if ncol < sched.c_p(s.interval).sqrt() - 1e-10 {
                    col_floor_ok = false;
                }
            }
        }
    }
    results.push(CheckResult {
        name: "window-integrity",
        pass: min_sv > 1e-10 && col_floor_ok,
        detail: format!("min window singular value {min_sv:.3e}, column floor ok: {col_floor_ok}"),
    });

    Ok(results)
}

fn check_dp_equivalence() -> CheckResult {
    use crate::linsys::Theta;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = 1 + (trial % 2);
        let m = 1 + ((trial / 2) % 2);
        let horizon = 1 + (trial % 5);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0f64));
        let rho = crate::linsys::spectral_radius(&raw);
        let a = raw * (rng.random_range(0.3..0.95f64) / rho.max(0.05));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0f64));
        let theta = Theta::new(a, b).expect("shape");
        let costs = StageCostSpec::quadratic_constant(
            DMatrix::identity(n, n) * rng.random_range(0.5..2.0f64),
            DMatrix::identity(m, m) * rng.random_range(0.5..2.0f64),
        )
        .expect("valid");
        let set = PolytopeU::symmetric_box(m, 1e6).expect("box");
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0f64));
        let p = HorizonProblem {
            theta: &theta,
            x0: &x0,
            t0: 1,
            horizon,
            costs: &costs,
            terminal: None,
            constraint: &set,
        };
        let Ok(seq) = solve_horizon(&p) else {
            return CheckResult {
                name: "dp-equivalence",
                pass: false,
                detail: format!("solver failed on trial {trial}"),
            };
        };
        if seq.status != SolverStatus::Converged {
            return CheckResult {
                name: "dp-equivalence",
                pass: false,
                detail: format!("trial {trial} did not converge"),
            };
        }
        let dp = riccati::finite_horizon_lqr(&theta, &costs, None, &x0, 1, horizon)
            .expect("quadratic");
        for k in 0..horizon {
            worst = worst.max((&seq.inputs[k] - &dp.inputs[k]).norm());
        }
    }
    CheckResult {
        name: "dp-equivalence",
        pass: worst <= 1e-6,
        detail: format!("max input deviation from the recursion {worst:.3e}"),
    }
}

/// Runs the check suite and prints one pass/fail line per check.
pub fn cmd_check(exp: &Experiment) -> Result<(), CliError> {
    let results = run_check_suite(exp)?;
    let mut failed = 0usize;
    for r in &results {
        println!(
            "[{}] {:<18} {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: results.len(),
        });
    }
    Ok(())
}

/// Worker-pool size: `--workers` flag, else `PE_RHC_WORKERS`, else the
/// rayon default.
pub fn resolve_workers(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("PE_RHC_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}
