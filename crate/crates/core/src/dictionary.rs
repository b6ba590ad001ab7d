//! Candidate-function libraries: monomials up to a total degree, optionally
//! extended with `cos`/`sin` of individual state variables.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DictionaryError {
    #[error("state has length {got}, dictionary expects {expected}")]
    Arity { expected: usize, got: usize },
    #[error("non-finite state component at index {0}")]
    NonFinite(usize),
    #[error("term index {index} out of range for a dictionary of {len} terms")]
    TermIndex { index: usize, len: usize },
    #[error("variable index {index} out of range for arity {arity}")]
    VariableIndex { index: usize, arity: usize },
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("expected {expected} variable names, got {got}")]
    Names { expected: usize, got: usize },
    #[error("dictionary needs at least one state variable")]
    EmptyState,
    #[error("cannot parse term `{0}`")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigFn {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    /// Exponent per state variable.
    Monomial(Vec<u32>),
    Trig { var: usize, func: TrigFn },
}

impl TermKind {
    pub fn degree(&self) -> u32 {
        match self {
            TermKind::Monomial(e) => e.iter().sum(),
            TermKind::Trig { .. } => 0,
        }
    }

    /// Parses the rendered form (`1`, `x`, `x^2*y`, `cos(q)`) back into a term.
    pub fn parse(s: &str, names: &[String]) -> Result<Self, DictionaryError> {
        let s = s.trim();
        let bad = || DictionaryError::Parse(s.to_string());
        let var = |v: &str| names.iter().position(|n| n == v.trim()).ok_or_else(bad);
        for (prefix, func) in [("sin(", TrigFn::Sin), ("cos(", TrigFn::Cos)] {
            if let Some(rest) = s.strip_prefix(prefix) {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                return Ok(TermKind::Trig { var: var(inner)?, func });
            }
        }
        let mut exps = vec![0u32; names.len()];
        if s == "1" {
            return Ok(TermKind::Monomial(exps));
        }
        for factor in s.split('*') {
            let (v, e) = match factor.split_once('^') {
                Some((v, e)) => (v, e.trim().parse::<u32>().map_err(|_| bad())?),
                None => (factor, 1),
            };
            if e == 0 {
                return Err(bad());
            }
            exps[var(v)?] += e;
        }
        Ok(TermKind::Monomial(exps))
    }

    pub fn render(&self, names: &[String]) -> String {
        match self {
            TermKind::Monomial(exps) => {
                let factors: Vec<String> = exps
                    .iter()
                    .zip(names)
                    .filter(|(&e, _)| e > 0)
                    .map(|(&e, n)| if e == 1 { n.clone() } else { format!("{n}^{e}") })
                    .collect();
                if factors.is_empty() {
                    "1".to_string()
                } else {
                    factors.join("*")
                }
            }
            TermKind::Trig { var, func } => {
                let f = match func {
                    TrigFn::Sin => "sin",
                    TrigFn::Cos => "cos",
                };
                format!("{f}({})", names[*var])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub kind: TermKind,
    pub name: String,
}

/// Serialized form of a dictionary as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    pub poly: PolySpec,
    #[serde(default)]
    pub trig: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolySpec {
    pub n: usize,
    pub d: u32,
}

impl DictionarySpec {
    pub fn new(n: usize, d: u32, trig: &[usize]) -> Self {
        Self { poly: PolySpec { n, d }, trig: trig.to_vec() }
    }

    pub fn build(&self, var_names: Option<&[String]>) -> Result<Dictionary, DictionaryError> {
        if self.poly.n == 0 {
            return Err(DictionaryError::EmptyState);
        }
        let mut dict = Dictionary::polynomial(self.poly.n, self.poly.d);
        if let Some(names) = var_names {
            dict = dict.with_var_names(names)?;
        }
        dict.augment_trig(&self.trig)
    }
}

/// Ordered library of candidate terms over `arity` state variables.
///
/// Monomials come first in graded-lexicographic order; trigonometric terms
/// follow in the order they were added.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    arity: usize,
    max_degree: u32,
    var_names: Vec<String>,
    terms: Vec<Term>,
}

/// All non-decreasing index sequences of `len` drawn from `0..n`, in
/// lexicographic order.
fn multisets(n: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(len);
    fn rec(n: usize, len: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for i in from..n {
            cur.push(i);
            rec(n, len, i, cur, out);
            cur.pop();
        }
    }
    rec(n, len, 0, &mut cur, &mut out);
    out
}

impl Dictionary {
    /// Every monomial of total degree `≤ d` in `n` variables.
    pub fn polynomial(n: usize, d: u32) -> Self {
        let var_names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let mut terms = Vec::new();
        for deg in 0..=d as usize {
            for idx in multisets(n, deg) {
                let mut exps = vec![0u32; n];
                for i in idx {
                    exps[i] += 1;
                }
                let kind = TermKind::Monomial(exps);
                let name = kind.render(&var_names);
                terms.push(Term { kind, name });
            }
        }
        Self { arity: n, max_degree: d, var_names, terms }
    }

    /// Renames the state variables and re-renders every term name.
    pub fn with_var_names(mut self, names: &[String]) -> Result<Self, DictionaryError> {
        if names.len() != self.arity {
            return Err(DictionaryError::Names { expected: self.arity, got: names.len() });
        }
        self.var_names = names.to_vec();
        for t in &mut self.terms {
            t.name = t.kind.render(&self.var_names);
        }
        Ok(self)
    }

    /// Appends `cos(x_i)` then `sin(x_i)` for every listed variable.
    pub fn augment_trig(mut self, vars: &[usize]) -> Result<Self, DictionaryError> {
        for &var in vars {
            if var >= self.arity {
                return Err(DictionaryError::VariableIndex { index: var, arity: self.arity });
            }
            for func in [TrigFn::Cos, TrigFn::Sin] {
                let kind = TermKind::Trig { var, func };
                let name = kind.render(&self.var_names);
                if self.terms.iter().any(|t| t.kind == kind) {
                    return Err(DictionaryError::DuplicateTerm(name));
                }
                self.terms.push(Term { kind, name });
            }
        }
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn term_name(&self, k: usize) -> Result<&str, DictionaryError> {
        self.terms
            .get(k)
            .map(|t| t.name.as_str())
            .ok_or(DictionaryError::TermIndex { index: k, len: self.terms.len() })
    }

    /// Position of the term with this rendered name.
    pub fn position_by_name(&self, name: &str) -> Option<usize> {
        let kind = TermKind::parse(name, &self.var_names).ok()?;
        self.position(&kind)
    }

    /// Position of a term, if present.
    pub fn position(&self, kind: &TermKind) -> Option<usize> {
        self.terms.iter().position(|t| &t.kind == kind)
    }

    fn check<S: Scalar>(&self, x: &[S]) -> Result<(), DictionaryError> {
        if x.len() != self.arity {
            return Err(DictionaryError::Arity { expected: self.arity, got: x.len() });
        }
        match x.iter().position(|v| !v.value().is_finite()) {
            Some(i) => Err(DictionaryError::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// Feature row `[φ_1(x), …, φ_p(x)]`.
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, DictionaryError> {
        self.check(x)?;
        Ok(self.features(x))
    }

    /// Row-major `p × n` matrix of `∂φ_k/∂x_j`.
    pub fn eval_jacobian<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, DictionaryError> {
        self.check(x)?;
        Ok(self.jacobian(x))
    }

    /// `x_j^e` for `e ∈ 0..=max_degree`, built by repeated multiplication.
    fn powers<S: Scalar>(&self, x: &[S]) -> Vec<Vec<S>> {
        x.iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(self.max_degree as usize + 1);
                p.push(S::constant(1.0));
                for e in 1..=self.max_degree as usize {
                    p.push(if e == 1 { xi } else { p[e - 1] * xi });
                }
                p
            })
            .collect()
    }

    fn product<S: Scalar>(pows: &[Vec<S>], exps: impl Iterator<Item = u32>) -> S {
        let mut acc: Option<S> = None;
        for (j, e) in exps.enumerate() {
            if e > 0 {
                let f = pows[j][e as usize];
                acc = Some(match acc {
                    None => f,
                    Some(a) => a * f,
                });
            }
        }
        acc.unwrap_or_else(|| S::constant(1.0))
    }

    pub(crate) fn features<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let pows = self.powers(x);
        self.terms
            .iter()
            .map(|t| match &t.kind {
                TermKind::Monomial(exps) => Self::product(&pows, exps.iter().copied()),
                TermKind::Trig { var, func: TrigFn::Cos } => x[*var].cos(),
                TermKind::Trig { var, func: TrigFn::Sin } => x[*var].sin(),
            })
            .collect()
    }

    pub(crate) fn jacobian<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let n = self.arity;
        let pows = self.powers(x);
        let mut jac = vec![S::zero(); self.terms.len() * n];
        for (k, t) in self.terms.iter().enumerate() {
            let row = &mut jac[k * n..(k + 1) * n];
            match &t.kind {
                TermKind::Monomial(exps) => {
                    for j in 0..n {
                        if exps[j] == 0 {
                            continue;
                        }
                        let lowered = exps
                            .iter()
                            .enumerate()
                            .map(|(i, &e)| if i == j { e - 1 } else { e });
                        let c = exps[j] as f64;
                        let prod = Self::product(&pows, lowered);
                        row[j] = if c == 1.0 { prod } else { prod * c };
                    }
                }
                TermKind::Trig { var, func: TrigFn::Cos } => row[*var] = -x[*var].sin(),
                TermKind::Trig { var, func: TrigFn::Sin } => row[*var] = x[*var].cos(),
            }
        }
        jac
    }

    /// Gradient of the scalar potential `Σ_k c_k φ_k(x)` with respect to `x`.
    pub(crate) fn potential_gradient<S: Scalar>(&self, coeffs: &[S], x: &[S]) -> Vec<S> {
        let n = self.arity;
        let p = self.terms.len();
        let jac = self.jacobian(x);
        let mut col = Vec::with_capacity(p);
        (0..n)
            .map(|j| {
                col.clear();
                col.extend((0..p).map(|k| jac[k * n + j]));
                S::dot(coeffs, &col)
            })
            .collect()
    }

    pub(crate) fn potential<S: Scalar>(&self, coeffs: &[S], x: &[S]) -> S {
        S::dot(coeffs, &self.features(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: &Dictionary) -> Vec<&str> {
        d.terms().iter().map(|t| t.name.as_str()).collect()
    }

    fn qp() -> Vec<String> {
        vec!["q".into(), "p".into()]
    }

    #[test]
    fn poly_2_3_graded_lex() {
        let d = Dictionary::polynomial(2, 3);
        assert_eq!(
            names(&d),
            ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2", "x1^3", "x1^2*x2", "x1*x2^2", "x2^3"]
        );
    }

    #[test]
    fn poly_3_2_includes_every_linear_term() {
        let d = Dictionary::polynomial(3, 2);
        assert_eq!(
            names(&d),
            ["1", "x1", "x2", "x3", "x1^2", "x1*x2", "x1*x3", "x2^2", "x2*x3", "x3^2"]
        );
    }

    #[test]
    fn constant_only_library() {
        let d = Dictionary::polynomial(1, 0);
        assert_eq!(names(&d), ["1"]);
    }

    #[test]
    fn trig_augmentation() {
        let d = Dictionary::polynomial(2, 3).with_var_names(&qp()).unwrap();
        let d = d.augment_trig(&[0, 1]).unwrap();
        assert_eq!(d.len(), 14);
        assert_eq!(&names(&d)[10..], ["cos(q)", "sin(q)", "cos(p)", "sin(p)"]);

        let same = Dictionary::polynomial(2, 3).augment_trig(&[]).unwrap();
        assert_eq!(same, Dictionary::polynomial(2, 3));

        assert_eq!(Dictionary::polynomial(2, 4).len(), 15);
    }

    #[test]
    fn trig_errors() {
        let d = Dictionary::polynomial(2, 1);
        assert!(matches!(
            d.clone().augment_trig(&[0, 0]),
            Err(DictionaryError::DuplicateTerm(n)) if n == "cos(x1)"
        ));
        assert!(matches!(
            d.augment_trig(&[2]),
            Err(DictionaryError::VariableIndex { index: 2, arity: 2 })
        ));
    }

    #[test]
    fn names_parse_back() {
        let d = Dictionary::polynomial(3, 3)
            .with_var_names(&["q".into(), "p".into(), "S".into()])
            .unwrap()
            .augment_trig(&[0, 1])
            .unwrap();
        for (k, t) in d.terms().iter().enumerate() {
            assert_eq!(d.position_by_name(&t.name), Some(k), "{}", t.name);
        }
        assert_eq!(d.position_by_name("p*q"), d.position_by_name("q*p"));
        for bad in ["", "z", "q^0", "tan(q)", "sin(q", "q^x"] {
            assert!(TermKind::parse(bad, d.var_names()).is_err(), "{bad}");
        }
    }

    #[test]
    fn eval_examples() {
        let d = Dictionary::polynomial(2, 3);
        let z = d.eval(&[0.0, 0.0]).unwrap();
        assert_eq!(z, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = d.eval(&[2.0, 1.0]).unwrap();
        // x^a y^b at (2, 1) reduces to 2^a
        let oracle: Vec<f64> = d
            .terms()
            .iter()
            .map(|t| match &t.kind {
                TermKind::Monomial(e) => 2f64.powi(e[0] as i32),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(v, oracle);
        assert_eq!(v, [1.0, 2.0, 1.0, 4.0, 2.0, 1.0, 8.0, 4.0, 2.0, 1.0]);

        let t = Dictionary::polynomial(1, 0).augment_trig(&[0]).unwrap();
        assert_eq!(t.eval(&[0.0]).unwrap(), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn eval_errors() {
        let d = Dictionary::polynomial(2, 1);
        assert_eq!(d.eval(&[1.0]).unwrap_err(), DictionaryError::Arity { expected: 2, got: 1 });
        assert_eq!(d.eval(&[1.0, f64::NAN]).unwrap_err(), DictionaryError::NonFinite(1));
        assert_eq!(
            d.eval_jacobian(&[f64::INFINITY, 0.0]).unwrap_err(),
            DictionaryError::NonFinite(0)
        );
    }

    #[test]
    fn jacobian_examples() {
        let d = Dictionary::polynomial(2, 1);
        let j = d.eval_jacobian(&[0.7, -3.0]).unwrap();
        assert_eq!(j, [0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);

        let d = Dictionary::polynomial(2, 3);
        let k = d.position(&TermKind::Monomial(vec![2, 1])).unwrap();
        let j = d.eval_jacobian(&[2.0, 3.0]).unwrap();
        assert_eq!((j[k * 2], j[k * 2 + 1]), (12.0, 4.0));

        let t = Dictionary::polynomial(1, 0).augment_trig(&[0]).unwrap();
        let j = t.eval_jacobian(&[std::f64::consts::FRAC_PI_2]).unwrap();
        // d/dq sin(q) at pi/2
        assert!(j[2].abs() < 1e-16);
    }

    #[test]
    fn term_names() {
        let d = Dictionary::polynomial(2, 3)
            .with_var_names(&["x".to_string(), "y".to_string()])
            .unwrap();
        let k = d.position(&TermKind::Monomial(vec![2, 1])).unwrap();
        assert_eq!(d.term_name(k).unwrap(), "x^2*y");
        assert_eq!(d.term_name(0).unwrap(), "1");
        let t = Dictionary::polynomial(2, 0).with_var_names(&qp()).unwrap();
        let t = t.augment_trig(&[0]).unwrap();
        assert_eq!(t.term_name(1).unwrap(), "cos(q)");
        assert_eq!(t.term_name(9).unwrap_err(), DictionaryError::TermIndex { index: 9, len: 3 });
    }

    #[test]
    fn spec_build_uses_names() {
        let spec = DictionarySpec::new(2, 2, &[0]);
        let d = spec.build(Some(&qp())).unwrap();
        assert_eq!(names(&d), ["1", "q", "p", "q^2", "q*p", "p^2", "cos(q)", "sin(q)"]);
        assert!(DictionarySpec::new(0, 2, &[]).build(None).is_err());
    }

    #[test]
    fn potential_gradient_matches_jacobian() {
        let d = Dictionary::polynomial(2, 2).with_var_names(&qp()).unwrap();
        // H = q^2/2 + p^2/2
        let mut c = vec![0.0; d.len()];
        c[3] = 0.5;
        c[5] = 0.5;
        assert_eq!(d.potential_gradient(&c, &[1.0, 2.0]), [1.0, 2.0]);
        assert_eq!(d.potential(&c, &[1.0, 2.0]), 2.5);
    }
}
