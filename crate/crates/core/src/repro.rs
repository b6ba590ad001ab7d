//! Run configuration, the end-to-end pipeline and the desk-scale
//! reproduction presets with their pass/fail checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{self, builtin_system, Counts, DataError, Dataset, Sampler, SystemDef};
use crate::dictionary::{Dictionary, DictionarySpec};
use crate::eval::{
    describe_model, energy_entropy_rates, model_velocity, render_equations, render_potential, time_instant_mse,
    EvalError, EvalOptions, FitReport, ProgressRecord,
};
use crate::integrate::{solve_ivp, SolveError, SolverConfig};
use crate::models::{GenericSpec, Model, ModelError, ModelSpec, PortSpec};
use crate::params::ParameterStore;
use crate::train::{train_loop, TrainConfig, TrainError};

/// A built-in system name or a full inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemRef {
    Builtin(String),
    Inline(Box<SystemDef>),
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemRef,
    /// Replaces the system's horizon.
    #[serde(default)]
    pub t_final: Option<f64>,
    /// Replaces the system's initial-condition sampler.
    #[serde(default)]
    pub sampler: Option<Sampler>,
    /// Dataset directory. Loaded if it holds a dataset, otherwise the
    /// generated dataset is written there.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub counts: Counts,
    /// Shorthand for `model.dictionary`.
    #[serde(default)]
    pub dictionary: Option<DictionarySpec>,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Replaces `train.solver`.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Seeds both dataset generation and training; `train.seed` is ignored.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalOptions,
}

/// A config problem, tagged with the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl fmt::Display) -> Self {
        Self { key: key.to_string(), message: message.to_string() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

impl RunConfig {
    pub fn new(system: &str, model: ModelSpec, train: TrainConfig) -> Self {
        Self {
            system: SystemRef::Builtin(system.to_string()),
            t_final: None,
            sampler: None,
            dataset: None,
            counts: Counts::default(),
            dictionary: None,
            model,
            train,
            solver: None,
            output: None,
            seed: 0,
            eval: EvalOptions::default(),
        }
    }

    /// The system definition with overrides applied.
    pub fn system_def(&self) -> Result<SystemDef, ConfigError> {
        let mut def = match &self.system {
            SystemRef::Builtin(name) => builtin_system(name).map_err(|e| ConfigError::new("system", e))?,
            SystemRef::Inline(def) => (**def).clone(),
        };
        if let Some(t) = self.t_final {
            def.t_final = t;
        }
        if let Some(s) = &self.sampler {
            def.sampler = s.clone();
        }
        def.validate().map_err(|e| ConfigError::new("system", e))?;
        Ok(def)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let mut spec = self.model.clone();
        if let Some(d) = &self.dictionary {
            if spec.dictionary.is_some() {
                return Err(ConfigError::new("dictionary", "also given as model.dictionary"));
            }
            spec.dictionary = Some(d.clone());
        }
        Ok(spec)
    }

    /// Training config with the run seed and solver override applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if let Some(s) = &self.solver {
            t.solver = s.clone();
        }
        t
    }

    /// Checks every section without doing any numerical work.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let def = self.system_def()?;
        if self.counts.train == 0 || self.counts.val == 0 || self.counts.test == 0 {
            return Err(ConfigError::new("counts", "every split needs at least one trajectory"));
        }
        let spec = self.model_spec()?;
        let model = Model::from_spec(&spec, def.n(), Some(&def.var_names)).map_err(|e| ConfigError::new("model", e))?;
        let train = self.train_config();
        train.validate().map_err(|e| ConfigError::new("train", e))?;
        model.step_scales(&train.state_scale, train.time_scale).map_err(|e| ConfigError::new("train.state_scale", e))?;
        if let Some(h) = self.eval.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ConfigError::new("eval.horizon", "must be positive and finite"));
            }
        }
        self.eval.resolve_metrics(spec.kind).map_err(|e| ConfigError::new("eval.metrics", e))?;
        self.eval.solver.validate().map_err(|e| ConfigError::new("eval.solver", e))?;
        Ok(())
    }

    /// Loads the configured dataset directory, or generates the dataset (and
    /// writes it when a directory is configured).
    pub fn dataset(&self) -> Result<Dataset, RunError> {
        if let Some(dir) = &self.dataset {
            if dir.join("meta.json").exists() {
                let ds = data::load(dir)?;
                log::info!("loaded dataset {} ({} samples per trajectory)", dir.display(), ds.num_samples());
                return Ok(ds);
            }
        }
        let ds = data::generate(&self.system_def()?, self.counts, self.seed)?;
        if let Some(dir) = &self.dataset {
            data::save(&ds, dir)?;
        }
        Ok(ds)
    }
}

/// Dataset, model and report of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub model: Model,
    pub report: FitReport,
    pub elapsed: Duration,
}

/// Validates, builds the dataset and trains.
pub fn run(
    cfg: &RunConfig,
    progress: impl FnMut(&ProgressRecord, &ParameterStore),
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let dataset = cfg.dataset()?;
    let (model, report) = train_loop(&dataset, &cfg.model_spec()?, &cfg.train_config(), progress)?;
    Ok(RunOutput { dataset, model, report, elapsed: start.elapsed() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Table1,
    Table2,
    Table3,
    Duffing,
    /// The same hyperbolic run with and without pruning.
    Ablation,
    /// Dictionary model against the MLP velocity baseline.
    Baseline,
}

impl Table {
    pub const ALL: [Table; 6] = [Table::Table1, Table::Table2, Table::Table3, Table::Duffing, Table::Ablation, Table::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Table::Table1 => "table1",
            Table::Table2 => "table2",
            Table::Table3 => "table3",
            Table::Duffing => "duffing",
            Table::Ablation => "ablation",
            Table::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Derived quantities some checks compare across rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stat {
    /// Median time-instantaneous test MSE over the second half of the horizon.
    LateMedianMse,
    /// Largest `|H(t) - H(0)| / |H(0)|` along rollouts of `horizon` seconds
    /// from the first test states. Structured models use their learned
    /// Hamiltonian, plain models the true one.
    HamiltonianDrift { horizon: f64 },
}

impl Stat {
    pub fn key(self) -> &'static str {
        match self {
            Stat::LateMedianMse => "late_median_mse",
            Stat::HamiltonianDrift { .. } => "hamiltonian_drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckSpec {
    SupportExact,
    MaxAbsErr(f64),
    /// Per-term relative error over the true support.
    MaxRelErr(f64),
    /// Identified damping `δ` within `tol` of the system's.
    Delta(f64),
    NnzEquals(usize),
    NnzAbove(usize),
    StatAtMost(Stat, f64),
    /// This row's stat divided by the same stat of an earlier row.
    RatioAtLeast { stat: Stat, reference: usize, min: f64 },
    /// `|dE/dt| ≤ tol·‖∇E‖‖f‖` and `dS/dt ≥ floor` along learned rollouts.
    Degeneracy { rate_tol: f64, entropy_floor: f64 },
    RuntimeAtMost(Duration),
}

/// One experiment of a table.
#[derive(Debug, Clone)]
pub struct Row {
    pub label: String,
    pub config: RunConfig,
    pub stats: Vec<Stat>,
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} = {:.6e} ({})", self.name, self.value, self.bound)
    }
}

#[derive(Debug, Clone)]
pub struct RowOutcome {
    pub label: String,
    pub identified: Vec<String>,
    pub truth: Vec<String>,
    pub stats: BTreeMap<&'static str, f64>,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
    /// Set when the run itself failed; `checks` then holds a single failure.
    pub error: Option<String>,
    pub output: Option<RunOutput>,
}

impl RowOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }
}

fn potential_truth(system: &SystemDef, dict: &Dictionary) -> Option<Vec<f64>> {
    let terms = system.structure.hamiltonian.as_ref().or(system.structure.energy.as_ref())?;
    system.truth_potential(terms, dict).ok()
}

/// Ground-truth counterpart of [`describe_model`].
pub fn describe_truth(model: &Model, system: &SystemDef) -> Vec<String> {
    match model {
        Model::Plain(m) => system.truth_matrix(&m.dict).map(|xi| render_equations(&xi, &m.dict)).unwrap_or_default(),
        Model::Hamiltonian(m) => potential_truth(system, &m.dict).map(|c| vec![render_potential("H", &c, &m.dict)]).unwrap_or_default(),
        Model::Port(m) => {
            let mut out: Vec<String> =
                potential_truth(system, &m.ham.dict).map(|c| vec![render_potential("H", &c, &m.ham.dict)]).unwrap_or_default();
            if let Some(n) = system.structure.damping {
                out.push(format!("delta = {:.6}", -n));
            }
            out
        }
        Model::Generic(m) => potential_truth(system, &m.dict).map(|c| vec![render_potential("E", &c, &m.dict)]).unwrap_or_default(),
        Model::Mlp(_) => Vec::new(),
    }
}

const TRACE_TRAJECTORIES: usize = 5;

fn trace_times(dt: f64, horizon: f64) -> Vec<f64> {
    let m = (horizon / dt).round() as usize + 1;
    (0..m).map(|i| i as f64 * dt).collect()
}

fn hamiltonian_drift(out: &RunOutput, horizon: f64, solver: &SolverConfig) -> Result<f64, RunError> {
    let ds = &out.dataset;
    let n = ds.n();
    let params = out.report.params.values();
    let system = &ds.meta.system;
    let h: Box<dyn Fn(&[f64]) -> f64> = match &out.model {
        Model::Hamiltonian(m) => Box::new(move |x| m.hamiltonian(params, x)),
        Model::Port(m) => Box::new(move |x| m.ham.hamiltonian(&params[..m.ham.dict.len()], x)),
        Model::Plain(m) => {
            let c = potential_truth(system, &m.dict)
                .ok_or_else(|| ConfigError::new("stats", "system has no Hamiltonian"))?;
            Box::new(move |x| m.dict.potential(&c, x))
        }
        _ => return Err(ConfigError::new("stats", "no Hamiltonian for this model kind").into()),
    };
    let times = trace_times(ds.meta.dt, horizon);
    let mut worst: f64 = 0.0;
    for tr in ds.test.iter().take(TRACE_TRAJECTORIES) {
        let r = solve_ivp(model_velocity(&out.model, params), tr.state(0, n), &times, solver)?;
        let h0 = h(&r.states[0]);
        for s in &r.states {
            worst = worst.max((h(s) - h0).abs() / h0.abs());
        }
    }
    Ok(worst)
}

fn compute_stat(stat: Stat, out: &RunOutput, solver: &SolverConfig) -> Result<f64, RunError> {
    match stat {
        Stat::LateMedianMse => {
            let ds = &out.dataset;
            let r = time_instant_mse(
                model_velocity(&out.model, out.report.params.values()),
                &ds.times,
                ds.n(),
                &ds.test,
                solver,
            );
            for (k, e) in &r.failures {
                log::warn!("test trajectory {k} excluded: {e}");
            }
            Ok(r.series.median_from(0.5 * ds.times.last().copied().unwrap_or(0.0)))
        }
        Stat::HamiltonianDrift { horizon } => hamiltonian_drift(out, horizon, solver),
    }
}

/// Worst normalized `|dE/dt|` and smallest `dS/dt` along learned rollouts.
fn degeneracy(out: &RunOutput, solver: &SolverConfig) -> Result<(f64, f64), RunError> {
    let Model::Generic(g) = &out.model else {
        return Err(EvalError::WrongKind { metric: "dEdt/dSdt", kind: out.model.kind().name() }.into());
    };
    let ds = &out.dataset;
    let n = ds.n();
    let params = out.report.params.values();
    let (xi, lam, d) = g.split(params);
    let (mut rate, mut entropy) = (0.0f64, f64::INFINITY);
    for tr in ds.test.iter().take(TRACE_TRAJECTORIES) {
        let r = solve_ivp(model_velocity(&out.model, params), tr.state(0, n), &ds.times, solver)?;
        let (de, dsdt) = energy_entropy_rates(&out.model, params, &ds.times, &r.states)?;
        for ((x, e), s) in r.states.iter().zip(&de.values).zip(&dsdt.values) {
            let p = g.parts(xi, lam, d, x);
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let f: Vec<f64> = p.reversible.iter().zip(&p.irreversible).map(|(a, b)| a + b).collect();
            let scale = norm(&p.grad_energy) * norm(&f);
            if scale > 0.0 {
                rate = rate.max(e.abs() / scale);
            }
            entropy = entropy.min(*s);
        }
    }
    Ok((rate, entropy))
}

fn check(name: impl Into<String>, value: f64, bound: String, pass: bool) -> Check {
    Check { name: name.into(), value, bound, pass: pass && !value.is_nan() }
}

fn evaluate_checks(row: &Row, out: &RunOutput, earlier: &[RowOutcome], stats: &BTreeMap<&'static str, f64>) -> Vec<Check> {
    let solver = &row.config.eval.solver;
    let report = &out.report;
    let score = report.score.as_ref();
    let mut checks = Vec::new();
    for spec in &row.checks {
        let c = match spec {
            CheckSpec::SupportExact => {
                let ok = score.is_some_and(|s| s.support_exact);
                check("support_exact", ok as u8 as f64, "== 1".into(), ok)
            }
            CheckSpec::MaxAbsErr(tol) => {
                let v = score.map_or(f64::NAN, |s| s.max_abs_err);
                check("max_abs_err", v, format!("<= {tol}"), v <= *tol)
            }
            CheckSpec::MaxRelErr(tol) => {
                let v = score.map_or(f64::NAN, |s| {
                    s.terms.iter().filter(|t| t.truth != 0.0).map(|t| t.abs_err / t.truth.abs()).fold(0.0, f64::max)
                });
                check("max_rel_err", v, format!("<= {tol}"), v <= *tol)
            }
            CheckSpec::Delta(tol) => {
                let truth = out.dataset.meta.system.structure.damping.map(|n| -n);
                let v = match (report.delta, truth) {
                    (Some(d), Some(t)) => (d - t).abs(),
                    _ => f64::NAN,
                };
                check("delta_abs_err", v, format!("<= {tol}"), v <= *tol)
            }
            CheckSpec::NnzEquals(k) => {
                let v = report.nnz();
                check("nnz", v as f64, format!("== {k}"), v == *k)
            }
            CheckSpec::NnzAbove(k) => {
                let v = report.nnz();
                check("nnz", v as f64, format!("> {k}"), v > *k)
            }
            CheckSpec::StatAtMost(stat, max) => {
                let v = stats.get(stat.key()).copied().unwrap_or(f64::NAN);
                check(stat.key(), v, format!("<= {max:e}"), v <= *max)
            }
            CheckSpec::RatioAtLeast { stat, reference, min } => {
                let mine = stats.get(stat.key()).copied().unwrap_or(f64::NAN);
                let theirs = earlier.get(*reference).and_then(|r| r.stats.get(stat.key())).copied().unwrap_or(f64::NAN);
                let label = earlier.get(*reference).map_or("?", |r| r.label.as_str());
                let v = mine / theirs;
                check(format!("{} ratio vs {label}", stat.key()), v, format!(">= {min}"), v >= *min)
            }
            CheckSpec::Degeneracy { rate_tol, entropy_floor } => match degeneracy(out, solver) {
                Ok((rate, entropy)) => {
                    checks.push(check("max |dE/dt| / (|grad E| |f|)", rate, format!("<= {rate_tol:e}"), rate <= *rate_tol));
                    check("min dS/dt", entropy, format!(">= {entropy_floor:e}"), entropy >= *entropy_floor)
                }
                Err(e) => check(format!("degeneracy ({e})"), f64::NAN, String::new(), false),
            },
            CheckSpec::RuntimeAtMost(limit) => {
                let v = out.elapsed.as_secs_f64();
                check("runtime_s", v, format!("<= {}", limit.as_secs()), out.elapsed <= *limit)
            }
        };
        checks.push(c);
    }
    checks
}

/// Trains one row and evaluates its checks against the earlier rows.
pub fn run_row(
    row: &Row,
    earlier: &[RowOutcome],
    progress: impl FnMut(&ProgressRecord, &ParameterStore),
) -> RowOutcome {
    let start = Instant::now();
    let failed = |e: String| RowOutcome {
        label: row.label.clone(),
        identified: Vec::new(),
        truth: Vec::new(),
        stats: BTreeMap::new(),
        checks: vec![check("run", f64::NAN, e.clone(), false)],
        elapsed: start.elapsed(),
        error: Some(e),
        output: None,
    };
    let out = match run(&row.config, progress) {
        Ok(o) => o,
        Err(e) => return failed(e.to_string()),
    };
    let mut stats = BTreeMap::new();
    for s in &row.stats {
        match compute_stat(*s, &out, &row.config.eval.solver) {
            Ok(v) => {
                stats.insert(s.key(), v);
            }
            Err(e) => log::warn!("{}: {} unavailable: {e}", row.label, s.key()),
        }
    }
    let checks = evaluate_checks(row, &out, earlier, &stats);
    RowOutcome {
        label: row.label.clone(),
        identified: describe_model(&out.model, &out.report.params),
        truth: describe_truth(&out.model, &out.dataset.meta.system),
        stats,
        checks,
        elapsed: start.elapsed(),
        error: None,
        output: Some(out),
    }
}

/// Runs every row of a table in order.
pub fn run_table(rows: &[Row], mut on_row: impl FnMut(&RowOutcome)) -> Vec<RowOutcome> {
    let mut done: Vec<RowOutcome> = Vec::with_capacity(rows.len());
    for row in rows {
        let r = run_row(row, &done, |_, _| {});
        on_row(&r);
        done.push(r);
    }
    done
}

/// Settings shared by the dictionary presets: zero initial coefficients and
/// a fast-decaying step size, so soft pruning settles within a few hundred
/// iterations.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        n_max: 500,
        n_batch: 100,
        l_batch: 50,
        lr0: 0.2,
        lr_decay: 0.985,
        lambda_l1: 1e-4,
        tau: 0.005,
        coefficient_init: 0.0,
        ..TrainConfig::default()
    }
}

fn dict(n: usize, d: u32, trig: &[usize]) -> DictionarySpec {
    DictionarySpec::new(n, d, trig)
}

fn minutes(m: u64) -> CheckSpec {
    CheckSpec::RuntimeAtMost(Duration::from_secs(60 * m))
}

fn config(system: &str, model: ModelSpec, train: TrainConfig, t_final: Option<f64>) -> RunConfig {
    RunConfig { t_final, ..RunConfig::new(system, model, train) }
}

fn boxed(low: &[f64], high: &[f64]) -> Option<Sampler> {
    Some(Sampler::Box { low: low.to_vec(), high: high.to_vec() })
}

fn row(label: &str, config: RunConfig, stats: Vec<Stat>, checks: Vec<CheckSpec>) -> Row {
    Row { label: label.to_string(), config, stats, checks }
}

fn dno_generic() -> GenericSpec {
    GenericSpec {
        num_lambda: None,
        poisson: vec![vec![0.0, 1.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        entropy_index: 2,
    }
}

fn duffing_port(system: &str) -> PortSpec {
    let f = builtin_system(system).ok().and_then(|s| s.forcing).expect("duffing systems are forced");
    PortSpec { gamma: f.gamma, omega: f.omega }
}

pub fn hyperbolic_preset() -> RunConfig {
    config("hyperbolic", ModelSpec::plain(dict(2, 2, &[])), TrainConfig { n_max: 200, ..desk_train() }, Some(5.12))
}

pub fn cubic_preset() -> RunConfig {
    config("cubic", ModelSpec::plain(dict(2, 3, &[])), desk_train(), None)
}

/// Drift is read off 100 s rollouts, so these rows integrate with tight
/// tolerances to keep solver error well below the bound.
pub fn mass_spring_preset(model: ModelSpec) -> RunConfig {
    let mut cfg = config("mass_spring", model, TrainConfig { l_batch: 10, ..desk_train() }, None);
    cfg.eval.solver = SolverConfig::dopri5(1e-12, 1e-14);
    cfg
}

/// Desk-scale rows of a table.
pub fn preset(table: Table) -> Vec<Row> {
    use CheckSpec::*;
    match table {
        Table::Table1 => {
            let lorenz = TrainConfig {
                n_max: 2000,
                lr0: 0.1,
                lr_decay: 0.998,
                tau: 0.05,
                state_scale: vec![10.0; 3],
                time_scale: 0.1,
                ..desk_train()
            };
            vec![
                row("hyperbolic", hyperbolic_preset(), vec![], vec![SupportExact, MaxAbsErr(0.02), minutes(10)]),
                row("cubic", cubic_preset(), vec![], vec![SupportExact, MaxAbsErr(0.05), minutes(10)]),
                row(
                    "vanderpol",
                    config("vanderpol", ModelSpec::plain(dict(2, 3, &[])), desk_train(), Some(2.56)),
                    vec![],
                    vec![SupportExact, MaxAbsErr(0.05), minutes(10)],
                ),
                row(
                    "hopf",
                    config("hopf", ModelSpec::plain(dict(3, 3, &[])), desk_train(), Some(5.12)),
                    vec![],
                    vec![SupportExact, MaxAbsErr(0.05), minutes(10)],
                ),
                row(
                    "lorenz",
                    config("lorenz", ModelSpec::plain(dict(3, 2, &[])), lorenz, None),
                    vec![],
                    vec![SupportExact, MaxRelErr(0.02), minutes(15)],
                ),
            ]
        }
        Table::Table2 => {
            let drift = Stat::HamiltonianDrift { horizon: 100.0 };
            let pendulum = TrainConfig {
                n_max: 1000,
                n_batch: 200,
                l_batch: 5,
                lr0: 0.1,
                lr_decay: 0.996,
                tau: 0.01,
                ..desk_train()
            };
            vec![
                row(
                    "mass_spring hamiltonian",
                    mass_spring_preset(ModelSpec::hamiltonian(dict(2, 3, &[]))),
                    vec![drift],
                    vec![SupportExact, MaxAbsErr(0.02), StatAtMost(drift, 1e-4)],
                ),
                row(
                    "mass_spring plain",
                    mass_spring_preset(ModelSpec::plain(dict(2, 3, &[]))),
                    vec![drift],
                    vec![SupportExact, MaxAbsErr(0.05), RatioAtLeast { stat: drift, reference: 0, min: 10.0 }],
                ),
                row(
                    "pendulum hamiltonian",
                    RunConfig {
                        sampler: boxed(&[-2.5, -1.0], &[2.5, 1.0]),
                        ..config("pendulum", ModelSpec::hamiltonian(dict(2, 3, &[0, 1])), pendulum, None)
                    },
                    vec![],
                    vec![SupportExact, MaxAbsErr(0.05)],
                ),
            ]
        }
        Table::Table3 => {
            let train = TrainConfig { n_max: 300, lr0: 0.1, lr_decay: 0.99, tau: 0.01, ..desk_train() };
            vec![row(
                "dno generic",
                RunConfig {
                    sampler: boxed(&[-3.0, -1.5, 0.0], &[3.0, 1.5, 0.0]),
                    ..config("dno", ModelSpec::generic(dict(3, 2, &[0, 1]), dno_generic()), train, None)
                },
                vec![],
                vec![SupportExact, MaxAbsErr(0.05), Degeneracy { rate_tol: 1e-10, entropy_floor: -1e-12 }],
            )]
        }
        Table::Duffing => {
            let train = |l_batch| TrainConfig { l_batch, lr0: 0.1, lr_decay: 0.99, tau: 0.01, ..desk_train() };
            vec![
                row(
                    "duffing",
                    config("duffing", ModelSpec::port(dict(2, 4, &[]), duffing_port("duffing")), train(20), None),
                    vec![],
                    vec![SupportExact, MaxAbsErr(0.02), Delta(0.005)],
                ),
                row(
                    "duffing_chaotic",
                    config(
                        "duffing_chaotic",
                        ModelSpec::port(dict(2, 4, &[]), duffing_port("duffing_chaotic")),
                        train(10),
                        None,
                    ),
                    vec![],
                    vec![SupportExact, MaxAbsErr(0.02), Delta(0.005)],
                ),
            ]
        }
        Table::Ablation => {
            let mut unpruned = hyperbolic_preset();
            unpruned.train.prune_enabled = false;
            vec![
                row("hyperbolic pruned", hyperbolic_preset(), vec![], vec![SupportExact, NnzEquals(3)]),
                row("hyperbolic unpruned", unpruned, vec![], vec![NnzAbove(3)]),
            ]
        }
        Table::Baseline => {
            let shared = TrainConfig { n_batch: 20, ..desk_train() };
            let mlp = TrainConfig { lr0: 0.01, lr_decay: 0.9987, ..shared.clone() };
            let mut cubic = cubic_preset();
            cubic.train = shared;
            cubic.eval.solver = SolverConfig::default();
            let mut baseline = config("cubic", ModelSpec::mlp(), mlp, None);
            baseline.eval.solver = SolverConfig::default();
            vec![
                row("cubic dictionary", cubic, vec![Stat::LateMedianMse], vec![]),
                row(
                    "cubic mlp",
                    baseline,
                    vec![Stat::LateMedianMse],
                    vec![RatioAtLeast { stat: Stat::LateMedianMse, reference: 0, min: 100.0 }],
                ),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn presets_validate() {
        for t in Table::ALL {
            let rows = preset(t);
            assert!(!rows.is_empty());
            for r in rows {
                r.config.validate().unwrap_or_else(|e| panic!("{}: {e}", r.label));
            }
        }
        assert_eq!(Table::parse("table3"), Some(Table::Table3));
        assert_eq!(Table::parse("table4"), None);
    }

    #[test]
    fn config_errors_name_the_key() {
        let mut c = hyperbolic_preset();
        c.system = SystemRef::Builtin("nope".into());
        assert_eq!(c.validate().unwrap_err().key, "system");

        let mut c = hyperbolic_preset();
        c.model.dictionary = Some(dict(3, 2, &[]));
        assert_eq!(c.validate().unwrap_err().key, "model");

        let mut c = hyperbolic_preset();
        c.dictionary = Some(dict(2, 2, &[]));
        assert_eq!(c.validate().unwrap_err().key, "dictionary");

        let mut c = hyperbolic_preset();
        c.train.l_batch = 1;
        assert_eq!(c.validate().unwrap_err().key, "train");

        let mut c = hyperbolic_preset();
        c.counts.val = 0;
        assert_eq!(c.validate().unwrap_err().key, "counts");

        let mut c = hyperbolic_preset();
        c.eval.metrics = vec![crate::eval::Metric::EntropyRate];
        assert_eq!(c.validate().unwrap_err().key, "eval.metrics");

        let mut c = mass_spring_preset(ModelSpec::hamiltonian(dict(2, 3, &[])));
        c.train.state_scale = vec![2.0, 2.0];
        assert_eq!(c.validate().unwrap_err().key, "train.state_scale");
    }

    #[test]
    fn overrides_and_seed() {
        let mut c = hyperbolic_preset();
        c.seed = 9;
        c.solver = Some(SolverConfig::rk4(0.01));
        c.sampler = boxed(&[0.0, 0.0], &[1.0, 1.0]);
        let t = c.train_config();
        assert_eq!(t.seed, 9);
        assert_eq!(t.solver, SolverConfig::rk4(0.01));
        let def = c.system_def().unwrap();
        assert_eq!(def.t_final, 5.12);
        assert_eq!(def.sampler, Sampler::Box { low: vec![0.0, 0.0], high: vec![1.0, 1.0] });
        assert_eq!(c.model_spec().unwrap().kind, ModelKind::Plain);
    }

    #[test]
    fn tiny_run_and_checks() {
        let mut c = hyperbolic_preset();
        c.t_final = Some(0.5);
        c.counts = Counts { train: 4, val: 2, test: 2 };
        c.train.n_max = 3;
        c.train.n_batch = 2;
        c.train.l_batch = 5;
        let r = row(
            "tiny",
            c,
            vec![Stat::LateMedianMse],
            vec![
                CheckSpec::NnzAbove(100),
                CheckSpec::StatAtMost(Stat::LateMedianMse, f64::INFINITY),
                CheckSpec::RuntimeAtMost(Duration::from_secs(600)),
            ],
        );
        let out = run_table(&[r], |_| {});
        let o = &out[0];
        assert!(o.error.is_none());
        assert!(!o.checks[0].pass);
        assert!(o.checks[1].pass && o.checks[2].pass);
        assert!(!o.passed());
        assert_eq!(o.truth, ["dx/dt = -0.050000*x", "dy/dt = -1.000000*y + 1.000000*x^2"]);
        assert!(o.checks[0].to_string().starts_with("FAIL nnz"));
    }
}
