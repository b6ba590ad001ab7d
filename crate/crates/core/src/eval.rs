//! Metrics and reporting for fitted models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generation_solver, regenerate, DataError, Dataset, SystemDef, Trajectory};
use crate::dictionary::{Dictionary, TermKind};
use crate::integrate::{solve_ivp, SolveError, SolverConfig};
use crate::models::{Model, ModelError, ModelKind, ModelSpec, StructureCheck};
use crate::params::ParameterStore;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metric `{metric}` is not defined for `{kind}` models")]
    WrongKind { metric: &'static str, kind: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid evaluation options: {0}")]
    Options(String),
    #[error("every rollout failed; first failure: {0}")]
    AllRolloutsFailed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Two tab-separated columns, one row per time.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("t\tvalue\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(out, "{t:e}\t{v:e}");
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    /// Median of the values whose time is at least `t_from`.
    pub fn median_from(&self, t_from: f64) -> f64 {
        let mut v: Vec<f64> =
            self.times.iter().zip(&self.values).filter(|(t, _)| **t >= t_from).map(|(_, v)| *v).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    }
}

/// Per-time MSE plus the trajectories whose rollout failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSeries {
    pub series: MetricSeries,
    pub failures: Vec<(usize, String)>,
}

impl MseSeries {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Mean over trajectories of `‖x̃(t_i) − x(t_i)‖² / n`, rolling out `f`
/// from each trajectory's initial state over `times`.
pub fn time_instant_mse<F>(
    f: F,
    times: &[f64],
    n: usize,
    trajectories: &[Trajectory],
    cfg: &SolverConfig,
) -> MseSeries
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    let m = times.len();
    let results: Vec<Result<Vec<f64>, SolveError>> = trajectories
        .par_iter()
        .map(|tr| {
            let r = solve_ivp(|t, x: &[f64]| f(t, x), tr.state(0, n), times, cfg)?;
            Ok((0..m)
                .map(|i| {
                    let truth = tr.state(i, n);
                    r.states[i].iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64
                })
                .collect())
        })
        .collect();
    let mut sum = vec![0.0; m];
    let mut ok = 0usize;
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => {
                ok += 1;
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    let values = sum.into_iter().map(|s| if ok == 0 { f64::NAN } else { s / ok as f64 }).collect();
    MseSeries { series: MetricSeries { times: times.to_vec(), values }, failures }
}

/// Velocity closure for a model with fixed parameters.
pub fn model_velocity<'a>(model: &'a Model, params: &'a [f64]) -> impl Fn(f64, &[f64]) -> Vec<f64> + Sync + 'a {
    move |t, x| model.velocity(params, t, x)
}

/// `dE/dt = ∇E·f` and `dS/dt = f_S` along given states.
pub fn energy_entropy_rates(
    model: &Model,
    params: &[f64],
    times: &[f64],
    states: &[Vec<f64>],
) -> Result<(MetricSeries, MetricSeries), EvalError> {
    let Model::Generic(g) = model else {
        return Err(EvalError::WrongKind { metric: "dEdt/dSdt", kind: model.kind().name() });
    };
    let (xi, lam, d) = g.split(params);
    let mut de = Vec::with_capacity(states.len());
    let mut ds = Vec::with_capacity(states.len());
    for x in states {
        let p = g.parts(xi, lam, d, x);
        let f: Vec<f64> = p.reversible.iter().zip(&p.irreversible).map(|(a, b)| a + b).collect();
        de.push(p.grad_energy.iter().zip(&f).map(|(a, b)| a * b).sum());
        ds.push(f[g.entropy_index]);
    }
    Ok((
        MetricSeries { times: times.to_vec(), values: de },
        MetricSeries { times: times.to_vec(), values: ds },
    ))
}

/// `H_Θ` along given states.
pub fn hamiltonian_trace(
    model: &Model,
    params: &[f64],
    times: &[f64],
    states: &[Vec<f64>],
) -> Result<MetricSeries, EvalError> {
    let (ham, coeffs) = match model {
        Model::Hamiltonian(h) => (h, params),
        Model::Port(p) => (&p.ham, &params[..p.ham.dict.len()]),
        _ => return Err(EvalError::WrongKind { metric: "hamiltonian", kind: model.kind().name() }),
    };
    let values = states.iter().map(|x| ham.hamiltonian(coeffs, x)).collect();
    Ok(MetricSeries { times: times.to_vec(), values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub label: String,
    pub learned: f64,
    pub truth: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientScore {
    pub support_exact: bool,
    /// Over the union of both supports.
    pub max_abs_err: f64,
    pub terms: Vec<TermScore>,
}

impl CoefficientScore {
    pub fn term(&self, label: &str) -> Option<&TermScore> {
        self.terms.iter().find(|t| t.label == label)
    }
}

/// Compares learned coefficients with ground truth entry by entry.
pub fn score_coefficients(learned: &[f64], truth: &[f64], labels: &[String]) -> Result<CoefficientScore, EvalError> {
    if learned.len() != truth.len() || labels.len() != truth.len() {
        return Err(EvalError::Shape(format!(
            "{} learned, {} true coefficients, {} labels",
            learned.len(),
            truth.len(),
            labels.len()
        )));
    }
    let mut support_exact = true;
    let mut max_abs_err: f64 = 0.0;
    let mut terms = Vec::new();
    for ((&l, &t), label) in learned.iter().zip(truth).zip(labels) {
        if (l != 0.0) != (t != 0.0) {
            support_exact = false;
        }
        if l != 0.0 || t != 0.0 {
            let abs_err = (l - t).abs();
            max_abs_err = max_abs_err.max(abs_err);
            terms.push(TermScore { label: label.clone(), learned: l, truth: t, abs_err });
        }
    }
    Ok(CoefficientScore { support_exact, max_abs_err, terms })
}

fn render_sum(coeffs: impl Iterator<Item = (f64, String)>) -> String {
    let parts: Vec<String> = coeffs
        .filter(|(c, _)| *c != 0.0)
        .map(|(c, name)| if name == "1" { format!("{c:.6}") } else { format!("{c:.6}*{name}") })
        .collect();
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    }
}

/// One `d<var>/dt = …` line per state, nonzero terms in dictionary order.
pub fn render_equations(xi: &[f64], dict: &Dictionary) -> Vec<String> {
    let n = dict.arity();
    (0..n)
        .map(|j| {
            let rhs = render_sum(dict.terms().iter().enumerate().map(|(k, t)| (xi[k * n + j], t.name.clone())));
            format!("d{}/dt = {rhs}", dict.var_names()[j])
        })
        .collect()
}

/// `<symbol> = …` for a scalar potential.
pub fn render_potential(symbol: &str, coeffs: &[f64], dict: &Dictionary) -> String {
    let rhs = render_sum(dict.terms().iter().zip(coeffs).map(|(t, &c)| (c, t.name.clone())));
    format!("{symbol} = {rhs}")
}

/// Human-readable description of a fitted model.
pub fn describe_model(model: &Model, params: &ParameterStore) -> Vec<String> {
    let v = params.values();
    match model {
        Model::Plain(m) => render_equations(v, &m.dict),
        Model::Hamiltonian(m) => vec![render_potential("H", v, &m.dict)],
        Model::Port(m) => {
            let p = m.ham.dict.len();
            vec![render_potential("H", &v[..p], &m.ham.dict), format!("delta = {:.6}", -v[p])]
        }
        Model::Generic(m) => vec![render_potential("E", &v[..m.dict.len()], &m.dict)],
        Model::Mlp(_) => Vec::new(),
    }
}

/// Labels for the coefficient entries of a model, in parameter order.
pub fn coefficient_labels(model: &Model) -> Vec<String> {
    match model {
        Model::Plain(m) => {
            let names = m.dict.var_names();
            m.dict
                .terms()
                .iter()
                .flat_map(|t| names.iter().map(move |v| format!("d{v}/dt:{}", t.name)))
                .collect()
        }
        _ => match model.dictionary() {
            Some(d) => d.terms().iter().map(|t| t.name.clone()).collect(),
            None => Vec::new(),
        },
    }
}

/// Learned coefficients against the system's ground truth. Potentials are
/// compared without their constant term, which does not affect dynamics.
pub fn score_against_truth(
    model: &Model,
    params: &ParameterStore,
    system: &SystemDef,
) -> Result<Option<CoefficientScore>, EvalError> {
    let labels = coefficient_labels(model);
    let v = params.values();
    let potential = |terms: &Option<Vec<crate::data::TruthTerm>>, dict: &Dictionary| -> Result<Option<CoefficientScore>, EvalError> {
        let Some(terms) = terms else { return Ok(None) };
        let mut truth = system.truth_potential(terms, dict)?;
        let mut learned = v[..dict.len()].to_vec();
        if let Some(k) = dict.position(&TermKind::Monomial(vec![0; dict.arity()])) {
            truth[k] = 0.0;
            learned[k] = 0.0;
        }
        Ok(Some(score_coefficients(&learned, &truth, &labels)?))
    };
    match model {
        Model::Plain(m) => {
            let truth = system.truth_matrix(&m.dict)?;
            Ok(Some(score_coefficients(v, &truth, &labels)?))
        }
        Model::Hamiltonian(m) => potential(&system.structure.hamiltonian, &m.dict),
        Model::Port(m) => potential(&system.structure.hamiltonian, &m.ham.dict),
        Model::Generic(m) => potential(&system.structure.energy, &m.dict),
        Model::Mlp(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub nnz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelSpec,
    pub system: String,
    pub var_names: Vec<String>,
    pub params: ParameterStore,
    pub equations: Vec<String>,
    /// Nonzero pattern of the dictionary coefficients, in parameter order.
    pub support: Vec<bool>,
    pub score: Option<CoefficientScore>,
    /// Identified damping `δ = -N` for port-Hamiltonian models.
    pub delta: Option<f64>,
    pub structure: Option<StructureSummary>,
    pub loss_history: Vec<f64>,
    /// `(iteration, validation MSE)` pairs; `None` when a rollout failed.
    pub val_mse: Vec<(usize, Option<f64>)>,
    pub metrics: BTreeMap<String, MetricSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub skew_residual: f64,
    pub min_eig_d: f64,
    pub norm_d: f64,
}

impl From<StructureCheck> for StructureSummary {
    fn from(c: StructureCheck) -> Self {
        Self { skew_residual: c.skew_residual, min_eig_d: c.min_eig_d, norm_d: c.norm_d }
    }
}

impl FitReport {
    /// Assembles a report from trained parameters.
    pub fn build(
        spec: &ModelSpec,
        model: &Model,
        params: ParameterStore,
        dataset: &Dataset,
        loss_history: Vec<f64>,
        val_mse: Vec<(usize, Option<f64>)>,
    ) -> Result<Self, EvalError> {
        let equations = describe_model(model, &params);
        let support = params.coefficient_indices().map(|i| params.values()[i] != 0.0).collect();
        let score = score_against_truth(model, &params, &dataset.meta.system)?;
        let delta = match model {
            Model::Port(_) => params.get("damping").map(|d| -d[0]),
            _ => None,
        };
        let structure = model.structure_check(params.values()).map(Into::into);
        Ok(Self {
            model: spec.clone(),
            system: dataset.meta.system.name.clone(),
            var_names: dataset.meta.var_names.clone(),
            params,
            equations,
            support,
            score,
            delta,
            structure,
            loss_history,
            val_mse,
            metrics: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind
    }

    pub fn nnz(&self) -> usize {
        self.support.iter().filter(|s| **s).count()
    }

    /// Writes `report.json` and `equations.txt`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("report.json");
        fs::write(&p, serde_json::to_string_pretty(self)?).map_err(io_err(&p))?;
        let p = dir.join("equations.txt");
        let mut text = self.equations.join("\n");
        text.push('\n');
        fs::write(&p, text).map_err(io_err(&p))
    }

    pub fn read(dir: &Path) -> Result<Self, EvalError> {
        let p = dir.join("report.json");
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Metric series that [`evaluate`] can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "dEdt")]
    EnergyRate,
    #[serde(rename = "dSdt")]
    EntropyRate,
    #[serde(rename = "hamiltonian")]
    Hamiltonian,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::EnergyRate, Metric::EntropyRate, Metric::Hamiltonian];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::EnergyRate => "dEdt",
            Metric::EntropyRate => "dSdt",
            Metric::Hamiltonian => "hamiltonian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn file_name(self) -> String {
        format!("{}.tsv", self.name())
    }

    pub fn supports(self, kind: ModelKind) -> bool {
        match self {
            Metric::Mse => true,
            Metric::EnergyRate | Metric::EntropyRate => kind == ModelKind::Generic,
            Metric::Hamiltonian => matches!(kind, ModelKind::Hamiltonian | ModelKind::PortHamiltonian),
        }
    }

    /// Every metric defined for `kind`.
    pub fn defaults(kind: ModelKind) -> Vec<Metric> {
        Self::ALL.into_iter().filter(|m| m.supports(kind)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Rollout horizon; the dataset horizon when unset. Longer horizons
    /// re-integrate the ground truth from the stored test seeds.
    pub horizon: Option<f64>,
    /// Empty: every metric defined for the model kind.
    pub metrics: Vec<Metric>,
    pub solver: SolverConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { horizon: None, metrics: Vec::new(), solver: generation_solver() }
    }
}

impl EvalOptions {
    /// Requested metrics, checked against the model kind.
    pub fn resolve_metrics(&self, kind: ModelKind) -> Result<Vec<Metric>, EvalError> {
        if self.metrics.is_empty() {
            return Ok(Metric::defaults(kind));
        }
        for m in &self.metrics {
            if !m.supports(kind) {
                return Err(EvalError::WrongKind { metric: m.name(), kind: kind.name() });
            }
        }
        Ok(self.metrics.clone())
    }
}

/// Computes the requested metric series for a fitted model. Trace metrics
/// (`dEdt`, `dSdt`, `hamiltonian`) follow the learned-model rollout from the
/// first test trajectory's initial state.
pub fn evaluate(report: &FitReport, ds: &Dataset, opts: &EvalOptions) -> Result<BTreeMap<String, MetricSeries>, EvalError> {
    let metrics = opts.resolve_metrics(report.kind())?;
    opts.solver.validate()?;
    let n = ds.n();
    let model = Model::from_spec(&report.model, n, Some(&report.var_names))?;
    let params = report.params.values();
    if !report.params.same_layout(&model.layout()) {
        return Err(EvalError::Shape("report parameters do not match the model layout".into()));
    }
    let ds_horizon = *ds.times.last().unwrap_or(&0.0);
    let horizon = opts.horizon.unwrap_or(ds_horizon);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(EvalError::Options(format!("horizon must be positive, got {horizon}")));
    }
    let eps = 1e-9 * ds.meta.dt;
    let (times, test): (Vec<f64>, std::borrow::Cow<[Trajectory]>) = if horizon <= ds_horizon + eps {
        let m = ds.times.iter().take_while(|t| **t <= horizon + eps).count();
        (ds.times[..m].to_vec(), ds.test.as_slice().into())
    } else {
        let def = SystemDef { t_final: horizon, ..ds.meta.system.clone() };
        let trs = if metrics.contains(&Metric::Mse) {
            regenerate(&def, &ds.meta.trajectory_seeds.test)?
        } else {
            ds.test[..1].to_vec()
        };
        (def.time_grid(), trs.into())
    };
    if times.len() < 2 || test.is_empty() {
        return Err(EvalError::Options("evaluation needs at least two grid points and one test trajectory".into()));
    }

    let mut out = BTreeMap::new();
    if metrics.contains(&Metric::Mse) {
        let r = time_instant_mse(model_velocity(&model, params), &times, n, &test, &opts.solver);
        if r.failures.len() == test.len() {
            return Err(EvalError::AllRolloutsFailed(r.failures[0].1.clone()));
        }
        for (k, e) in &r.failures {
            log::warn!("test trajectory {k}: rollout failed, excluded from mse: {e}");
        }
        out.insert(Metric::Mse.name().to_string(), r.series);
    }
    if metrics.iter().any(|m| *m != Metric::Mse) {
        let states = solve_ivp(model_velocity(&model, params), test[0].state(0, n), &times, &opts.solver)?.states;
        if metrics.contains(&Metric::EnergyRate) || metrics.contains(&Metric::EntropyRate) {
            let (de, dsdt) = energy_entropy_rates(&model, params, &times, &states)?;
            if metrics.contains(&Metric::EnergyRate) {
                out.insert(Metric::EnergyRate.name().to_string(), de);
            }
            if metrics.contains(&Metric::EntropyRate) {
                out.insert(Metric::EntropyRate.name().to_string(), dsdt);
            }
        }
        if metrics.contains(&Metric::Hamiltonian) {
            out.insert(Metric::Hamiltonian.name().to_string(), hamiltonian_trace(&model, params, &times, &states)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{builtin_system, generate, Counts};
    use crate::dictionary::DictionarySpec;

    /// Reads `dv/dt = c*term + …` back into a coefficient column.
    fn parse_equation(line: &str, dict: &Dictionary) -> (usize, Vec<f64>) {
        let (lhs, rhs) = line.split_once(" = ").unwrap();
        let var = lhs.trim_start_matches('d').trim_end_matches("/dt");
        let j = dict.var_names().iter().position(|v| v == var).unwrap();
        let mut col = vec![0.0; dict.len()];
        if rhs != "0" {
            for part in rhs.split(" + ") {
                let (c, term) = part.split_once('*').unwrap_or((part, "1"));
                col[dict.position_by_name(term).unwrap()] = c.parse().unwrap();
            }
        }
        (j, col)
    }

    fn named(n: usize, d: u32, names: &[&str]) -> Dictionary {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        DictionarySpec::new(n, d, &[]).build(Some(&names)).unwrap()
    }

    #[test]
    fn render_examples() {
        let dict = named(2, 2, &["x", "y"]);
        let mut xi = vec![0.0; dict.len() * 2];
        xi[dict.position_by_name("x").unwrap() * 2] = -0.05;
        let eq = render_equations(&xi, &dict);
        assert_eq!(eq, ["dx/dt = -0.050000*x", "dy/dt = 0"]);

        let lz = builtin_system("lorenz").unwrap();
        let d3 = named(3, 2, &["x", "y", "z"]);
        let truth = lz.truth_matrix(&d3).unwrap();
        let eq = render_equations(&truth, &d3);
        assert_eq!(eq[2], "dz/dt = -2.666667*z + 1.000000*x*y");
        assert_eq!(eq[0], "dx/dt = -10.000000*x + 10.000000*y");

        let mut c = vec![0.0; dict.len()];
        c[0] = 6.0;
        c[dict.position_by_name("y^2").unwrap()] = 0.5;
        assert_eq!(render_potential("H", &c, &dict), "H = 6.000000 + 0.500000*y^2");
    }

    #[test]
    fn rendering_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dict = DictionarySpec::new(3, 3, &[0, 2])
            .build(Some(&["q".to_string(), "p".to_string(), "S".to_string()]))
            .unwrap();
        for _ in 0..50 {
            let xi: Vec<f64> = (0..dict.len() * 3)
                .map(|_| if rng.gen_bool(0.3) { rng.gen_range(-30.0..30.0) } else { 0.0 })
                .collect();
            for line in render_equations(&xi, &dict) {
                let (j, col) = parse_equation(&line, &dict);
                for k in 0..dict.len() {
                    assert!((col[k] - xi[k * 3 + j]).abs() <= 5e-7 + 1e-15 * xi[k * 3 + j].abs());
                }
            }
        }
    }

    #[test]
    fn scoring_examples() {
        let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let truth = [-0.05, 1.0, -1.0, 0.0];
        let s = score_coefficients(&truth, &truth, &labels).unwrap();
        assert!(s.support_exact && s.max_abs_err == 0.0);

        let ident = [-0.050006, 1.000063, -1.000063, 0.0];
        let s = score_coefficients(&ident, &truth, &labels).unwrap();
        assert!(s.support_exact);
        assert!((s.max_abs_err - 6.3e-5).abs() < 1e-12);
        let back = score_coefficients(&truth, &ident, &labels).unwrap();
        assert_eq!(back.max_abs_err, s.max_abs_err);

        let spurious = [-0.05, 1.0, -1.0, 1e-3];
        let s = score_coefficients(&spurious, &truth, &labels).unwrap();
        assert!(!s.support_exact);
        assert_eq!(s.term("d").unwrap().abs_err, 1e-3);
        assert!(score_coefficients(&truth[..3], &truth, &labels).is_err());
    }

    #[test]
    fn mse_of_truth_and_of_zero_model() {
        let mut sys = builtin_system("hyperbolic").unwrap();
        sys.t_final = 2.0;
        let ds = generate(&sys, Counts { train: 1, val: 1, test: 4 }, 5).unwrap();
        let truth = sys.compile().unwrap();
        let tight = SolverConfig::dopri5(1e-10, 1e-12);
        let r = time_instant_mse(|t, x| truth.velocity(t, x), &ds.times, 2, &ds.test, &tight);
        assert!(!r.is_partial());
        assert_eq!(r.series.values[0], 0.0);
        assert!(r.series.values.iter().all(|v| *v <= 1e-10), "{:?}", r.series.values.iter().cloned().fold(0.0, f64::max));

        let z = time_instant_mse(|_, x: &[f64]| vec![0.0; x.len()], &ds.times, 2, &ds.test, &tight);
        for (i, v) in z.series.values.iter().enumerate() {
            let oracle = ds
                .test
                .iter()
                .map(|tr| {
                    let (a, b) = (tr.state(i, 2), tr.state(0, 2));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / 2.0
                })
                .sum::<f64>()
                / 4.0;
            assert!((v - oracle).abs() <= 1e-15 * (1.0 + oracle));
        }
        assert_eq!(z.series.median_from(0.0), {
            let mut v = z.series.values.clone();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        });
    }

    #[test]
    fn rates_and_traces_check_kind() {
        let dict = named(2, 2, &["q", "p"]);
        let spec = ModelSpec::hamiltonian(DictionarySpec::new(2, 2, &[]));
        let model = Model::from_spec(&spec, 2, Some(dict.var_names())).unwrap();
        let params = vec![0.0; dict.len()];
        let states = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let tr = hamiltonian_trace(&model, &params, &[0.0, 1.0], &states).unwrap();
        assert_eq!(tr.values, [0.0, 0.0]);
        assert!(matches!(
            energy_entropy_rates(&model, &params, &[0.0, 1.0], &states),
            Err(EvalError::WrongKind { .. })
        ));
        let plain = Model::from_spec(&ModelSpec::plain(DictionarySpec::new(2, 2, &[])), 2, None).unwrap();
        assert!(hamiltonian_trace(&plain, &vec![0.0; 12], &[0.0], &states[..1]).is_err());
    }

    #[test]
    fn dno_truth_entropy_rate() {
        use crate::models::GenericSpec;
        let names: Vec<String> = ["q", "p", "S"].iter().map(|s| s.to_string()).collect();
        let spec = ModelSpec::generic(
            DictionarySpec::new(3, 2, &[0]),
            GenericSpec {
                num_lambda: Some(1),
                poisson: vec![vec![0.0, 1.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
                entropy_index: 2,
            },
        );
        let model = Model::from_spec(&spec, 3, Some(&names)).unwrap();
        let dict = model.dictionary().unwrap().clone();
        let mut params = model.layout();
        let sys = builtin_system("dno").unwrap();
        let e = sys.truth_potential(sys.structure.energy.as_ref().unwrap(), &dict).unwrap();
        params.get_mut("xi_e").unwrap().copy_from_slice(&e);
        params.get_mut("lambda_seed").unwrap()[5] = 2.0;
        params.get_mut("d_seed").unwrap()[0] = 0.2;
        let (de, ds) = energy_entropy_rates(&model, params.values(), &[0.0], &[vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(de.values[0].abs() < 1e-15);
        assert!((ds.values[0] - 0.04).abs() < 1e-15);

        let report_dir = tempfile::tempdir().unwrap();
        let mut ds_meta = generate(
            &SystemDef { t_final: 0.01, ..sys.clone() },
            Counts { train: 1, val: 1, test: 1 },
            1,
        )
        .unwrap();
        ds_meta.meta.system = sys;
        let r = FitReport::build(&spec, &model, params, &ds_meta, vec![1.0], vec![]).unwrap();
        let score = r.score.as_ref().unwrap();
        assert!(score.support_exact && score.max_abs_err == 0.0);
        assert_eq!(r.equations, ["E = 1.000000*S + 0.500000*p^2 + -3.000000*cos(q)"]);
        r.write(report_dir.path()).unwrap();
        assert_eq!(FitReport::read(report_dir.path()).unwrap(), r);
        assert!(fs::read_to_string(report_dir.path().join("equations.txt")).unwrap().starts_with("E = "));
    }

    #[test]
    fn evaluate_selects_metrics_and_extends_horizon() {
        let mut sys = builtin_system("mass_spring").unwrap();
        sys.t_final = 1.0;
        let ds = generate(&sys, Counts { train: 1, val: 1, test: 2 }, 3).unwrap();
        let spec = ModelSpec::hamiltonian(DictionarySpec::new(2, 2, &[]));
        let model = Model::from_spec(&spec, 2, Some(&ds.meta.var_names)).unwrap();
        let mut params = model.layout();
        let dict = model.dictionary().unwrap().clone();
        let h = sys.truth_potential(sys.structure.hamiltonian.as_ref().unwrap(), &dict).unwrap();
        params.values_mut().copy_from_slice(&h);
        let report = FitReport::build(&spec, &model, params, &ds, vec![], vec![]).unwrap();

        let m = evaluate(&report, &ds, &EvalOptions::default()).unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), ["hamiltonian", "mse"]);
        assert_eq!(m["mse"].len(), ds.num_samples());
        assert!(m["mse"].values.iter().all(|v| *v < 1e-12));

        let long = EvalOptions { horizon: Some(3.0), ..EvalOptions::default() };
        let m = evaluate(&report, &ds, &long).unwrap();
        assert_eq!(m["mse"].len(), 31);
        assert!(m["mse"].values.iter().all(|v| *v < 1e-12));
        let tr = &m["hamiltonian"];
        assert_eq!(tr.len(), 31);
        assert!(tr.values.iter().all(|v| (v - tr.values[0]).abs() < 1e-9));

        let short = EvalOptions { horizon: Some(0.5), metrics: vec![Metric::Mse], ..EvalOptions::default() };
        assert_eq!(evaluate(&report, &ds, &short).unwrap()["mse"].len(), 6);

        let bad = EvalOptions { metrics: vec![Metric::EntropyRate], ..EvalOptions::default() };
        assert!(matches!(evaluate(&report, &ds, &bad), Err(EvalError::WrongKind { metric: "dSdt", .. })));
        assert_eq!(Metric::defaults(ModelKind::Generic), [Metric::Mse, Metric::EnergyRate, Metric::EntropyRate]);
        assert_eq!(Metric::parse("dEdt"), Some(Metric::EnergyRate));
        assert_eq!(Metric::Hamiltonian.file_name(), "hamiltonian.tsv");
    }

    #[test]
    fn tsv_layout() {
        let s = MetricSeries { times: vec![0.0, 0.5], values: vec![1.0, 2.5] };
        assert_eq!(s.to_tsv(), "t\tvalue\n0e0\t1e0\n5e-1\t2.5e0\n");
    }
}
