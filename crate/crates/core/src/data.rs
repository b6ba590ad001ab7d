//! Benchmark systems, trajectory generation and the on-disk dataset format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryError, TermKind};
use crate::integrate::{solve_ivp, SolveError, SolverConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAX_CONSECUTIVE_FAILURES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("invalid system `{name}`: {reason}")]
    InvalidSystem { name: String, reason: String },
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("gave up after {failures} consecutive solver failures (last: {last})")]
    Generation { failures: usize, last: SolveError },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed meta.json: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("unsupported dataset format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("dimension mismatch: dataset has state dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("trajectories have {m} samples, need at least {needed}")]
    TooShort { m: usize, needed: usize },
    #[error("counts must be at least 1 per split")]
    Counts,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// `coef * term` where `term` is written as a dictionary term name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthTerm {
    pub coef: f64,
    pub term: String,
}

fn tt(coef: f64, term: &str) -> TruthTerm {
    TruthTerm { coef, term: term.to_string() }
}

/// Known forcing `gamma * sin(omega * t)` added to one state component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forcing {
    pub component: usize,
    pub gamma: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    /// Independent uniform draws per component; `low == high` pins a value.
    Box { low: Vec<f64>, high: Vec<f64> },
    /// `(r cos θ, r sin θ)` with `r` uniform in `[r_min, r_max]`, `θ` uniform.
    Shell { r_min: f64, r_max: f64 },
}

impl Sampler {
    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Sampler::Box { low, high } => low
                .iter()
                .zip(high)
                .map(|(&l, &h)| if l == h { l } else { rng.gen_range(l..h) })
                .collect(),
            Sampler::Shell { r_min, r_max } => {
                let r = if r_min == r_max { *r_min } else { rng.gen_range(*r_min..*r_max) };
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![r * th.cos(), r * th.sin()]
            }
        }
    }
}

/// Ground-truth structure for structured systems, used for scoring.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    /// Hamiltonian (up to an additive constant).
    #[serde(default)]
    pub hamiltonian: Option<Vec<TruthTerm>>,
    #[serde(default)]
    pub energy: Option<Vec<TruthTerm>>,
    #[serde(default)]
    pub entropy_index: Option<usize>,
    /// Damping coefficient `N` of the port form (`δ = -N`).
    #[serde(default)]
    pub damping: Option<f64>,
}

/// A benchmark system: closed-form velocity as a sum of dictionary-style
/// terms per component plus optional forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    pub name: String,
    pub var_names: Vec<String>,
    pub equations: Vec<Vec<TruthTerm>>,
    #[serde(default)]
    pub forcing: Option<Forcing>,
    pub dt: f64,
    pub t_final: f64,
    pub sampler: Sampler,
    #[serde(default)]
    pub structure: Structure,
}

/// A system compiled to a monomial/trig coefficient matrix.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    dict: Dictionary,
    /// `p × n`, row-major.
    xi: Vec<f64>,
    forcing: Option<Forcing>,
}

impl CompiledSystem {
    pub fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let phi = self.dict.features(x);
        let n = self.dict.arity();
        let mut v: Vec<f64> = (0..n)
            .map(|j| {
                let mut acc = 0.0;
                for (k, &f) in phi.iter().enumerate() {
                    let c = self.xi[k * n + j];
                    if c != 0.0 {
                        acc += c * f;
                    }
                }
                acc
            })
            .collect();
        if let Some(f) = self.forcing {
            v[f.component] += f.gamma * (f.omega * t).sin();
        }
        v
    }
}

impl SystemDef {
    pub fn n(&self) -> usize {
        self.var_names.len()
    }

    /// Number of grid points `t_final / dt + 1`.
    pub fn num_samples(&self) -> usize {
        (self.t_final / self.dt).round() as usize + 1
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..self.num_samples()).map(|i| i as f64 * self.dt).collect()
    }

    fn invalid(&self, reason: impl Into<String>) -> DataError {
        DataError::InvalidSystem { name: self.name.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n();
        if n == 0 {
            return Err(self.invalid("no state variables"));
        }
        if self.equations.len() != n {
            return Err(self.invalid(format!("{} equations for {n} variables", self.equations.len())));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(self.invalid("dt and t_final must be positive and finite"));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() * self.dt > 1e-9 {
            return Err(self.invalid("t_final is not a multiple of dt"));
        }
        match &self.sampler {
            Sampler::Box { low, high } => {
                if low.len() != n || high.len() != n {
                    return Err(self.invalid("sampler bounds do not match the state dimension"));
                }
                if low.iter().chain(high).any(|v| !v.is_finite()) || low.iter().zip(high).any(|(l, h)| l > h) {
                    return Err(self.invalid("sampler bounds must be finite with low <= high"));
                }
            }
            Sampler::Shell { r_min, r_max } => {
                if n != 2 || !(r_min.is_finite() && r_max.is_finite() && 0.0 <= *r_min && r_min <= r_max) {
                    return Err(self.invalid("shell sampler needs n = 2 and 0 <= r_min <= r_max"));
                }
            }
        }
        if let Some(f) = self.forcing {
            if f.component >= n {
                return Err(self.invalid("forcing component out of range"));
            }
        }
        self.compile().map(|_| ())
    }

    /// Smallest polynomial-plus-trig dictionary that contains every term.
    fn covering_dictionary(&self) -> Result<Dictionary, DataError> {
        let n = self.n();
        let scratch = Dictionary::polynomial(n, 0).with_var_names(&self.var_names)?;
        let mut degree = 0;
        let mut trig_vars = Vec::new();
        for term in self.equations.iter().flatten() {
            match TermKind::parse(&term.term, scratch.var_names())? {
                TermKind::Monomial(e) => degree = degree.max(e.iter().sum()),
                TermKind::Trig { var, .. } => {
                    if !trig_vars.contains(&var) {
                        trig_vars.push(var);
                    }
                }
            }
        }
        trig_vars.sort_unstable();
        Ok(Dictionary::polynomial(n, degree)
            .with_var_names(&self.var_names)?
            .augment_trig(&trig_vars)?)
    }

    pub fn compile(&self) -> Result<CompiledSystem, DataError> {
        let dict = self.covering_dictionary()?;
        let xi = self.truth_matrix(&dict)?;
        Ok(CompiledSystem { dict, xi, forcing: self.forcing })
    }

    /// Ground-truth `p × n` coefficients over `dict` (row-major).
    pub fn truth_matrix(&self, dict: &Dictionary) -> Result<Vec<f64>, DataError> {
        let n = self.n();
        if dict.arity() != n {
            return Err(DataError::Dimension { expected: n, got: dict.arity() });
        }
        let mut xi = vec![0.0; dict.len() * n];
        for (j, eq) in self.equations.iter().enumerate() {
            for term in eq {
                let k = self.locate(dict, &term.term)?;
                xi[k * n + j] += term.coef;
            }
        }
        Ok(xi)
    }

    /// Ground-truth scalar potential over `dict`.
    pub fn truth_potential(&self, terms: &[TruthTerm], dict: &Dictionary) -> Result<Vec<f64>, DataError> {
        let mut c = vec![0.0; dict.len()];
        for term in terms {
            c[self.locate(dict, &term.term)?] += term.coef;
        }
        Ok(c)
    }

    fn locate(&self, dict: &Dictionary, term: &str) -> Result<usize, DataError> {
        let kind = TermKind::parse(term, &self.var_names)?;
        dict.position(&kind)
            .ok_or_else(|| self.invalid(format!("term `{term}` is not in the dictionary")))
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn square(n: usize, half: f64) -> Sampler {
    Sampler::Box { low: vec![-half; n], high: vec![half; n] }
}

fn duffing(name: &str, gamma: f64, delta: f64, omega: f64) -> SystemDef {
    // H = p²/2 - q²/2 + q⁴/4
    SystemDef {
        name: name.into(),
        var_names: names(&["q", "p"]),
        equations: vec![vec![tt(1.0, "p")], vec![tt(1.0, "q"), tt(-1.0, "q^3"), tt(-delta, "p")]],
        forcing: Some(Forcing { component: 1, gamma, omega }),
        dt: 0.05,
        t_final: 10.0,
        sampler: square(2, 1.0),
        structure: Structure {
            hamiltonian: Some(vec![tt(-0.5, "q^2"), tt(0.5, "p^2"), tt(0.25, "q^4")]),
            damping: Some(-delta),
            ..Default::default()
        },
    }
}

/// Every built-in benchmark system.
pub fn builtin_systems() -> Vec<SystemDef> {
    let xy = names(&["x", "y"]);
    let qp = names(&["q", "p"]);
    vec![
        SystemDef {
            name: "hyperbolic".into(),
            var_names: xy.clone(),
            equations: vec![vec![tt(-0.05, "x")], vec![tt(1.0, "x^2"), tt(-1.0, "y")]],
            forcing: None,
            dt: 0.01,
            t_final: 51.2,
            sampler: square(2, 2.0),
            structure: Structure::default(),
        },
        SystemDef {
            name: "cubic".into(),
            var_names: xy.clone(),
            equations: vec![
                vec![tt(-0.1, "x^3"), tt(2.0, "y^3")],
                vec![tt(-2.0, "x^3"), tt(-0.1, "y^3")],
            ],
            forcing: None,
            dt: 0.01,
            t_final: 51.2,
            sampler: square(2, 2.0),
            structure: Structure::default(),
        },
        SystemDef {
            name: "vanderpol".into(),
            var_names: xy,
            equations: vec![vec![tt(1.0, "y")], vec![tt(-1.0, "x"), tt(2.0, "y"), tt(-2.0, "x^2*y")]],
            forcing: None,
            dt: 0.01,
            t_final: 51.2,
            sampler: square(2, 2.0),
            structure: Structure::default(),
        },
        SystemDef {
            name: "hopf".into(),
            var_names: names(&["x", "y", "mu"]),
            equations: vec![
                vec![tt(1.0, "x*mu"), tt(1.0, "y"), tt(-1.0, "x^3"), tt(-1.0, "x*y^2")],
                vec![tt(1.0, "y*mu"), tt(-1.0, "x"), tt(-1.0, "x^2*y"), tt(-1.0, "y^3")],
                vec![],
            ],
            forcing: None,
            dt: 0.01,
            t_final: 51.2,
            sampler: Sampler::Box { low: vec![-1.0, -1.0, -0.2], high: vec![1.0, 1.0, 0.6] },
            structure: Structure::default(),
        },
        SystemDef {
            name: "lorenz".into(),
            var_names: names(&["x", "y", "z"]),
            equations: vec![
                vec![tt(-10.0, "x"), tt(10.0, "y")],
                vec![tt(28.0, "x"), tt(-1.0, "x*z"), tt(-1.0, "y")],
                vec![tt(1.0, "x*y"), tt(-8.0 / 3.0, "z")],
            ],
            forcing: None,
            dt: 0.0005,
            t_final: 2.56,
            sampler: Sampler::Box { low: vec![-20.0, -20.0, 10.0], high: vec![20.0, 20.0, 40.0] },
            structure: Structure::default(),
        },
        SystemDef {
            name: "dno".into(),
            var_names: names(&["q", "p", "S"]),
            equations: vec![
                vec![tt(1.0, "p")],
                vec![tt(-3.0, "sin(q)"), tt(-0.04, "p")],
                vec![tt(0.04, "p^2")],
            ],
            forcing: None,
            dt: 0.001,
            t_final: 5.12,
            sampler: Sampler::Box { low: vec![-1.5, -1.5, 0.0], high: vec![1.5, 1.5, 0.0] },
            structure: Structure {
                energy: Some(vec![tt(0.5, "p^2"), tt(-3.0, "cos(q)"), tt(1.0, "S")]),
                entropy_index: Some(2),
                ..Default::default()
            },
        },
        SystemDef {
            name: "mass_spring".into(),
            var_names: qp.clone(),
            equations: vec![vec![tt(1.0, "p")], vec![tt(-1.0, "q")]],
            forcing: None,
            dt: 0.1,
            t_final: 3.0,
            sampler: Sampler::Shell { r_min: 0.5, r_max: 1.5 },
            structure: Structure {
                hamiltonian: Some(vec![tt(0.5, "q^2"), tt(0.5, "p^2")]),
                ..Default::default()
            },
        },
        SystemDef {
            name: "pendulum".into(),
            var_names: qp,
            equations: vec![vec![tt(1.0, "p")], vec![tt(-6.0, "sin(q)")]],
            forcing: None,
            dt: 1.0 / 15.0,
            t_final: 9.0,
            sampler: square(2, 1.0),
            structure: Structure {
                hamiltonian: Some(vec![tt(0.5, "p^2"), tt(-6.0, "cos(q)")]),
                ..Default::default()
            },
        },
        duffing("duffing", 0.3, 0.3, 1.2),
        duffing("duffing_chaotic", 0.1, 0.39, 1.4),
    ]
}

pub fn builtin_system(name: &str) -> Result<SystemDef, DataError> {
    builtin_systems()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| DataError::UnknownSystem(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self { train: 200, val: 40, test: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// `m × n`, row-major.
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, i: usize, n: usize) -> &[f64] {
        &self.states[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSeeds {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub system: SystemDef,
    pub n: usize,
    pub dt: f64,
    pub num_samples: usize,
    pub var_names: Vec<String>,
    pub seed: u64,
    pub trajectory_seeds: SplitSeeds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub times: Vec<f64>,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), DataError> {
        if self.n() != expected {
            return Err(DataError::Dimension { expected, got: self.n() });
        }
        Ok(())
    }
}

/// Tolerances used to produce ground-truth trajectories.
pub fn generation_solver() -> SolverConfig {
    SolverConfig::dopri5(1e-9, 1e-11)
}

fn trajectory_seed(seed: u64, split: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index as u64);
    rng.next_u64()
}

fn generate_one(sys: &CompiledSystem, def: &SystemDef, times: &[f64], seed: u64) -> Result<Vec<f64>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = generation_solver();
    let mut failures = 0;
    loop {
        let x0 = def.sampler.sample(&mut rng);
        match solve_ivp(|t, x: &[f64]| sys.velocity(t, x), &x0, times, &cfg) {
            Ok(r) => return Ok(r.states.concat()),
            Err(e) => {
                failures += 1;
                log::warn!("{}: resampling initial condition after solver failure: {e}", def.name);
                if failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(DataError::Generation { failures, last: e });
                }
            }
        }
    }
}

/// Integrates the true velocity from sampled initial conditions.
pub fn generate(def: &SystemDef, counts: Counts, seed: u64) -> Result<Dataset, DataError> {
    def.validate()?;
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(DataError::Counts);
    }
    let sys = def.compile()?;
    let times = def.time_grid();
    let split = |id: u64, count: usize| -> Result<Vec<Trajectory>, DataError> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let s = trajectory_seed(seed, id, i);
                Ok(Trajectory { seed: s, states: generate_one(&sys, def, &times, s)? })
            })
            .collect()
    };
    let train = split(0, counts.train)?;
    let val = split(1, counts.val)?;
    let test = split(2, counts.test)?;
    let seeds = |v: &[Trajectory]| v.iter().map(|t| t.seed).collect();
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        system: def.clone(),
        n: def.n(),
        dt: def.dt,
        num_samples: times.len(),
        var_names: def.var_names.clone(),
        seed,
        trajectory_seeds: SplitSeeds { train: seeds(&train), val: seeds(&val), test: seeds(&test) },
    };
    Ok(Dataset { meta, times, train, val, test })
}

/// Re-integrates trajectories from stored per-trajectory seeds, e.g. over a
/// longer horizon than the original dataset.
pub fn regenerate(def: &SystemDef, seeds: &[u64]) -> Result<Vec<Trajectory>, DataError> {
    def.validate()?;
    let sys = def.compile()?;
    let times = def.time_grid();
    seeds
        .par_iter()
        .map(|&s| Ok(Trajectory { seed: s, states: generate_one(&sys, def, &times, s)? }))
        .collect()
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(DataError::Corrupt(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Writes `meta.json`, `times.bin` and one `<split>.bin` per split.
pub fn save(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&ds.meta)?).map_err(io_err(&meta_path))?;
    write_f64s(&dir.join("times.bin"), ds.times.iter().copied())?;
    for (name, split) in SPLITS.iter().zip([&ds.train, &ds.val, &ds.test]) {
        write_f64s(&dir.join(format!("{name}.bin")), split.iter().flat_map(|t| t.states.iter().copied()))?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<Dataset, DataError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(DataError::Version { found: v as u32 }),
        None => return Err(DataError::Corrupt("meta.json lacks format_version".into())),
    }
    let meta: DatasetMeta = serde_json::from_value(raw)?;
    if meta.var_names.len() != meta.n || meta.system.n() != meta.n {
        return Err(DataError::Corrupt("inconsistent state dimension in meta.json".into()));
    }
    let m = meta.num_samples;
    let times = read_f64s(&dir.join("times.bin"), m)?;
    let seeds = [&meta.trajectory_seeds.train, &meta.trajectory_seeds.val, &meta.trajectory_seeds.test];
    let mut splits = Vec::new();
    for (name, seeds) in SPLITS.iter().zip(seeds) {
        let per = m * meta.n;
        let flat = read_f64s(&dir.join(format!("{name}.bin")), seeds.len() * per)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Corrupt(format!("{name}.bin contains non-finite values")));
        }
        splits.push(
            seeds
                .iter()
                .zip(flat.chunks_exact(per))
                .map(|(&seed, s)| Trajectory { seed, states: s.to_vec() })
                .collect::<Vec<_>>(),
        );
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset { meta, times, train, val, test })
}
