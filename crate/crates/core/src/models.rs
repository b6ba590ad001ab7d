//! Velocity parameterizations built on a dictionary (or, for the baseline,
//! a small fully connected network).
//!
//! All models evaluate generically over [`Scalar`], taking their parameters
//! as a flat slice laid out by [`Model::layout`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::dictionary::{Dictionary, DictionaryError, DictionarySpec, TermKind};
use crate::params::{BlockKind, ParameterStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("`{kind}` models need a `{key}` section")]
    MissingSection { kind: &'static str, key: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("entropy index {index} out of range for state dimension {n}")]
    EntropyIndex { index: usize, n: usize },
    #[error("Poisson matrix: {0}")]
    Poisson(String),
    #[error("state/time scaling: {0}")]
    Scaling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Plain,
    Hamiltonian,
    Generic,
    PortHamiltonian,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Plain => "plain",
            ModelKind::Hamiltonian => "hamiltonian",
            ModelKind::Generic => "generic",
            ModelKind::PortHamiltonian => "port_hamiltonian",
            ModelKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSpec {
    /// Number of skew matrices; defaults to `n(n-1)/2`.
    #[serde(default)]
    pub num_lambda: Option<usize>,
    #[serde(rename = "L")]
    pub poisson: Vec<Vec<f64>>,
    pub entropy_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub gamma: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default)]
    pub generic: Option<GenericSpec>,
    #[serde(default)]
    pub port: Option<PortSpec>,
}

impl ModelSpec {
    pub fn plain(dictionary: DictionarySpec) -> Self {
        Self { kind: ModelKind::Plain, dictionary: Some(dictionary), generic: None, port: None }
    }

    pub fn hamiltonian(dictionary: DictionarySpec) -> Self {
        Self { kind: ModelKind::Hamiltonian, ..Self::plain(dictionary) }
    }

    pub fn generic(dictionary: DictionarySpec, generic: GenericSpec) -> Self {
        Self { kind: ModelKind::Generic, generic: Some(generic), ..Self::plain(dictionary) }
    }

    pub fn port(dictionary: DictionarySpec, port: PortSpec) -> Self {
        Self { kind: ModelKind::PortHamiltonian, port: Some(port), ..Self::plain(dictionary) }
    }

    pub fn mlp() -> Self {
        Self { kind: ModelKind::Mlp, dictionary: None, generic: None, port: None }
    }
}

fn uniform_fill(values: &mut [f64], half_width: f64, rng: &mut impl Rng) {
    for v in values {
        *v = rng.gen_range(-half_width..=half_width);
    }
}

/// `ẋ = Ξᵀ Φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainModel {
    pub dict: Dictionary,
    pub n: usize,
}

impl PlainModel {
    pub fn new(dict: Dictionary) -> Self {
        let n = dict.arity();
        Self { dict, n }
    }

    /// `xi` is the `p × n` coefficient matrix, row-major.
    pub fn velocity<S: Scalar>(&self, xi: &[S], x: &[S]) -> Vec<S> {
        let phi = self.dict.features(x);
        let p = phi.len();
        let mut col = Vec::with_capacity(p);
        (0..self.n)
            .map(|j| {
                col.clear();
                col.extend((0..p).map(|k| xi[k * self.n + j]));
                S::dot(&col, &phi)
            })
            .collect()
    }
}

/// Canonical Hamiltonian flow of `H = Σ ξ_k φ_k(q, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub dict: Dictionary,
}

impl HamiltonianModel {
    pub fn new(dict: Dictionary) -> Result<Self, ModelError> {
        if dict.arity() != 2 {
            return Err(ModelError::Shape(format!(
                "hamiltonian models need a (q, p) state, got dimension {}",
                dict.arity()
            )));
        }
        Ok(Self { dict })
    }

    pub fn velocity<S: Scalar>(&self, xi_h: &[S], x: &[S]) -> Vec<S> {
        let g = self.dict.potential_gradient(xi_h, x);
        vec![g[1], -g[0]]
    }

    pub fn hamiltonian<S: Scalar>(&self, xi_h: &[S], x: &[S]) -> S {
        self.dict.potential(xi_h, x)
    }
}

/// Port-Hamiltonian form with a trainable damping coefficient `N` and a known
/// forcing `γ sin(ωt)` on the momentum equation.
#[derive(Debug, Clone, PartialEq)]
pub struct PortModel {
    pub ham: HamiltonianModel,
    pub forcing: PortSpec,
}

impl PortModel {
    pub fn velocity<S: Scalar>(&self, xi_h: &[S], damping: S, t: f64, x: &[S]) -> Vec<S> {
        let g = self.ham.dict.potential_gradient(xi_h, x);
        let force = self.forcing.gamma * (self.forcing.omega * t).sin();
        vec![g[1], -g[0] + damping * g[1] + force]
    }
}

/// Metriplectic model `ẋ = L ∇E + M(x) ∇S` with a fixed Poisson matrix, a
/// dictionary energy, and a friction bracket assembled from skew matrices
/// `Λᵐ = ½(Λ̃ᵐ − Λ̃ᵐᵀ)` and a PSD coupling `D = D̃ D̃ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericModel {
    pub dict: Dictionary,
    pub poisson: Vec<f64>,
    pub entropy_index: usize,
    pub num_lambda: usize,
}

/// Reversible and irreversible parts of a metriplectic velocity.
#[derive(Debug, Clone)]
pub struct GenericParts<S> {
    pub grad_energy: Vec<S>,
    pub reversible: Vec<S>,
    pub irreversible: Vec<S>,
}

impl GenericModel {
    pub fn new(dict: Dictionary, spec: &GenericSpec) -> Result<Self, ModelError> {
        let n = dict.arity();
        if spec.entropy_index >= n {
            return Err(ModelError::EntropyIndex { index: spec.entropy_index, n });
        }
        if spec.poisson.len() != n || spec.poisson.iter().any(|r| r.len() != n) {
            return Err(ModelError::Poisson(format!("expected a {n}x{n} matrix")));
        }
        let l = &spec.poisson;
        for a in 0..n {
            for b in 0..n {
                if l[a][b] != -l[b][a] {
                    return Err(ModelError::Poisson("not skew-symmetric".into()));
                }
            }
            if l[a][spec.entropy_index] != 0.0 {
                return Err(ModelError::Poisson(
                    "row/column of the entropy coordinate must vanish".into(),
                ));
            }
        }
        let num_lambda = spec.num_lambda.unwrap_or(n * (n - 1) / 2).max(1);
        Ok(Self {
            poisson: l.iter().flatten().copied().collect(),
            entropy_index: spec.entropy_index,
            num_lambda,
            dict,
        })
    }

    pub fn n(&self) -> usize {
        self.dict.arity()
    }

    /// Skew matrices, each `n × n` row-major.
    pub fn assemble_lambda<S: Scalar>(&self, seeds: &[S]) -> Vec<Vec<S>> {
        let n = self.n();
        seeds
            .chunks(n * n)
            .map(|s| {
                let mut out = Vec::with_capacity(n * n);
                for a in 0..n {
                    for b in 0..n {
                        out.push((s[a * n + b] - s[b * n + a]) * 0.5);
                    }
                }
                out
            })
            .collect()
    }

    /// `D̃ D̃ᵀ`, `m × m` row-major.
    pub fn assemble_d<S: Scalar>(&self, seed: &[S]) -> Vec<S> {
        let m = self.num_lambda;
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                out.push(S::dot(&seed[i * m..(i + 1) * m], &seed[j * m..(j + 1) * m]));
            }
        }
        out
    }

    pub fn parts<S: Scalar>(&self, xi_e: &[S], lambda_seed: &[S], d_seed: &[S], x: &[S]) -> GenericParts<S> {
        let n = self.n();
        let m = self.num_lambda;
        let s = self.entropy_index;
        let g = self.dict.potential_gradient(xi_e, x);
        let reversible: Vec<S> =
            (0..n).map(|a| S::dot_const(&self.poisson[a * n..(a + 1) * n], &g)).collect();

        let lambdas = self.assemble_lambda(lambda_seed);
        let d = self.assemble_d(d_seed);
        // v_m = Λᵐ ∇E
        let v: Vec<Vec<S>> = lambdas
            .iter()
            .map(|lam| (0..n).map(|a| S::dot(&lam[a * n..(a + 1) * n], &g)).collect())
            .collect();
        let w: Vec<S> = v.iter().map(|vm| vm[s]).collect();
        let dw: Vec<S> = (0..m).map(|i| S::dot(&d[i * m..(i + 1) * m], &w)).collect();
        let mut col = Vec::with_capacity(m);
        let irreversible = (0..n)
            .map(|a| {
                col.clear();
                col.extend(v.iter().map(|vm| vm[a]));
                S::dot(&col, &dw)
            })
            .collect();
        GenericParts { grad_energy: g, reversible, irreversible }
    }

    pub fn velocity<S: Scalar>(&self, xi_e: &[S], lambda_seed: &[S], d_seed: &[S], x: &[S]) -> Vec<S> {
        let parts = self.parts(xi_e, lambda_seed, d_seed, x);
        parts.reversible.iter().zip(&parts.irreversible).map(|(&r, &i)| r + i).collect()
    }

    pub fn energy<S: Scalar>(&self, xi_e: &[S], x: &[S]) -> S {
        self.dict.potential(xi_e, x)
    }
}

/// Fully connected `n → 100 → 100 → 100 → n` network with `tanh` between
/// layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub widths: Vec<usize>,
}

pub const MLP_HIDDEN: usize = 100;

impl MlpModel {
    pub fn new(n: usize) -> Self {
        Self { widths: vec![n, MLP_HIDDEN, MLP_HIDDEN, MLP_HIDDEN, n] }
    }

    pub fn velocity<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        let mut h: Vec<S> = x.to_vec();
        let mut off = 0;
        let layers = self.widths.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &params[off..off + fan_in * fan_out];
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            h = (0..fan_out)
                .map(|o| {
                    let z = S::dot(&w[o * fan_in..(o + 1) * fan_in], &h) + b[o];
                    if l + 1 < layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Plain(PlainModel),
    Hamiltonian(HamiltonianModel),
    Generic(GenericModel),
    Port(PortModel),
    Mlp(MlpModel),
}

/// Structure diagnostics for the metriplectic blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureCheck {
    /// `max |Λᵐ + Λᵐᵀ|` over all entries.
    pub skew_residual: f64,
    /// Smallest eigenvalue of `D`.
    pub min_eig_d: f64,
    /// Largest absolute eigenvalue of `D`.
    pub norm_d: f64,
}

impl StructureCheck {
    pub fn holds(&self) -> bool {
        self.skew_residual == 0.0 && self.min_eig_d >= -1e-12 * self.norm_d.max(f64::MIN_POSITIVE)
    }
}

impl Model {
    pub fn from_spec(spec: &ModelSpec, n: usize, var_names: Option<&[String]>) -> Result<Self, ModelError> {
        let kind = spec.kind;
        let dict = || -> Result<Dictionary, ModelError> {
            let ds = spec
                .dictionary
                .as_ref()
                .ok_or(ModelError::MissingSection { kind: kind.name(), key: "dictionary" })?;
            if ds.poly.n != n {
                return Err(ModelError::Shape(format!(
                    "dictionary is over {} variables but the state has {n}",
                    ds.poly.n
                )));
            }
            Ok(ds.build(var_names)?)
        };
        Ok(match kind {
            ModelKind::Plain => Model::Plain(PlainModel::new(dict()?)),
            ModelKind::Hamiltonian => Model::Hamiltonian(HamiltonianModel::new(dict()?)?),
            ModelKind::Generic => {
                let g = spec
                    .generic
                    .as_ref()
                    .ok_or(ModelError::MissingSection { kind: kind.name(), key: "generic" })?;
                Model::Generic(GenericModel::new(dict()?, g)?)
            }
            ModelKind::PortHamiltonian => {
                let p = spec.port.ok_or(ModelError::MissingSection { kind: kind.name(), key: "port" })?;
                Model::Port(PortModel { ham: HamiltonianModel::new(dict()?)?, forcing: p })
            }
            ModelKind::Mlp => Model::Mlp(MlpModel::new(n)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Plain(_) => ModelKind::Plain,
            Model::Hamiltonian(_) => ModelKind::Hamiltonian,
            Model::Generic(_) => ModelKind::Generic,
            Model::Port(_) => ModelKind::PortHamiltonian,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Model::Plain(m) => m.n,
            Model::Hamiltonian(_) | Model::Port(_) => 2,
            Model::Generic(m) => m.n(),
            Model::Mlp(m) => m.widths[0],
        }
    }

    pub fn dictionary(&self) -> Option<&Dictionary> {
        match self {
            Model::Plain(m) => Some(&m.dict),
            Model::Hamiltonian(m) => Some(&m.dict),
            Model::Generic(m) => Some(&m.dict),
            Model::Port(m) => Some(&m.ham.dict),
            Model::Mlp(_) => None,
        }
    }

    /// Zero-valued parameters with this model's block layout.
    pub fn layout(&self) -> ParameterStore {
        let b = ParameterStore::layout();
        match self {
            Model::Plain(m) => b.block("xi", BlockKind::Coefficients, m.dict.len(), m.n).zeros(),
            Model::Hamiltonian(m) => b.block("xi_h", BlockKind::Coefficients, m.dict.len(), 1).zeros(),
            Model::Port(m) => b
                .block("xi_h", BlockKind::Coefficients, m.ham.dict.len(), 1)
                .block("damping", BlockKind::Damping, 1, 1)
                .zeros(),
            Model::Generic(m) => {
                let n = m.n();
                b.block("xi_e", BlockKind::Coefficients, m.dict.len(), 1)
                    .block("lambda_seed", BlockKind::LambdaSeed, m.num_lambda, n * n)
                    .block("d_seed", BlockKind::DSeed, m.num_lambda, m.num_lambda)
                    .zeros()
            }
            Model::Mlp(m) => {
                let mut b = b;
                for l in 0..m.widths.len() - 1 {
                    let (fi, fo) = (m.widths[l], m.widths[l + 1]);
                    b = b
                        .block(&format!("w{}", l + 1), BlockKind::Weight, fo, fi)
                        .block(&format!("b{}", l + 1), BlockKind::Bias, fo, 1);
                }
                b.zeros()
            }
        }
    }

    /// Random initial parameters: dictionary coefficients uniform in
    /// `±coefficient_half_width`, metriplectic seeds uniform in `[-0.1, 0.1]`,
    /// damping zero, network weights uniform in `±1/sqrt(fan_in)`.
    pub fn init(&self, coefficient_half_width: f64, rng: &mut impl Rng) -> ParameterStore {
        let mut store = self.layout();
        let blocks = store.blocks().to_vec();
        for b in &blocks {
            let half_width = match b.kind {
                BlockKind::Coefficients => coefficient_half_width,
                BlockKind::LambdaSeed | BlockKind::DSeed => 0.1,
                BlockKind::Damping => 0.0,
                BlockKind::Weight => 1.0 / (b.cols as f64).sqrt(),
                // the weight block immediately precedes its bias
                BlockKind::Bias => {
                    let fan_in = blocks
                        .iter()
                        .find(|w| w.kind == BlockKind::Weight && w.offset + w.len() == b.offset)
                        .map_or(1, |w| w.cols);
                    1.0 / (fan_in as f64).sqrt()
                }
            };
            if half_width > 0.0 {
                uniform_fill(&mut store.values_mut()[b.range()], half_width, rng);
            }
        }
        store
    }

    /// Velocity at `(t, x)` for flat parameters laid out as in [`Model::layout`].
    pub fn velocity<S: Scalar>(&self, params: &[S], t: f64, x: &[S]) -> Vec<S> {
        match self {
            Model::Plain(m) => m.velocity(params, x),
            Model::Hamiltonian(m) => m.velocity(params, x),
            Model::Port(m) => {
                let p = m.ham.dict.len();
                m.velocity(&params[..p], params[p], t, x)
            }
            Model::Generic(m) => {
                let (xi, lam, d) = m.split(params);
                m.velocity(xi, lam, d, x)
            }
            Model::Mlp(m) => m.velocity(params, x),
        }
    }

    /// Per-parameter step multipliers for characteristic state scales `s`
    /// and time scale `T`: coefficient `ξ[k][i]` gets `s_i / (T Π_j s_j^a_kj)`,
    /// i.e. the factor that maps coefficients of the rescaled system back.
    /// Only plain models with a scalable dictionary are supported.
    pub fn step_scales(&self, state_scale: &[f64], time_scale: f64) -> Result<Vec<f64>, ModelError> {
        let len = self.layout().len();
        if state_scale.is_empty() && time_scale == 1.0 {
            return Ok(vec![1.0; len]);
        }
        let Model::Plain(m) = self else {
            return Err(ModelError::Scaling(format!("not supported for {} models", self.kind().name())));
        };
        let s: Vec<f64> = if state_scale.is_empty() { vec![1.0; m.n] } else { state_scale.to_vec() };
        if s.len() != m.n {
            return Err(ModelError::Scaling(format!("{} scales for state dimension {}", s.len(), m.n)));
        }
        let mut out = Vec::with_capacity(len);
        for term in m.dict.terms() {
            let base = match &term.kind {
                TermKind::Monomial(e) => e.iter().zip(&s).map(|(&a, v)| v.powi(a as i32)).product::<f64>(),
                TermKind::Trig { var, .. } if s[*var] == 1.0 => 1.0,
                TermKind::Trig { .. } => {
                    return Err(ModelError::Scaling(format!("trig term {} needs unit scale", term.name)));
                }
            };
            out.extend(s.iter().map(|si| si / (time_scale * base)));
        }
        Ok(out)
    }

    /// Metriplectic structure check on the assembled `Λ`, `D`; `None` for
    /// other kinds.
    pub fn structure_check(&self, params: &[f64]) -> Option<StructureCheck> {
        let Model::Generic(m) = self else { return None };
        let (_, lam, d) = m.split(params);
        let n = m.n();
        let mut skew_residual: f64 = 0.0;
        for l in m.assemble_lambda(lam) {
            for a in 0..n {
                for b in 0..n {
                    skew_residual = skew_residual.max((l[a * n + b] + l[b * n + a]).abs());
                }
            }
        }
        let eig = symmetric_eigenvalues(&m.assemble_d(d), m.num_lambda);
        let min_eig_d = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let norm_d = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        Some(StructureCheck { skew_residual, min_eig_d, norm_d })
    }
}

impl GenericModel {
    pub fn split<'a, S>(&self, params: &'a [S]) -> (&'a [S], &'a [S], &'a [S]) {
        let p = self.dict.len();
        let n = self.n();
        let m = self.num_lambda;
        let (xi, rest) = params.split_at(p);
        let (lam, d) = rest.split_at(m * n * n);
        (xi, lam, &d[..m * m])
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}
