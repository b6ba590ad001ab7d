use proptest::prelude::*;
use sparse_node::autodiff::{Scalar, Tape, Var};
use sparse_node::integrate::{solve_ivp, SolverConfig};
use sparse_node::models::{Model, ModelSpec};
use sparse_node::train::loss;

const NPARAM: usize = 4;

#[derive(Debug, Clone)]
enum Expr {
    Param(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// `a / (1 + b²)`, safe for any `b`.
    Ratio(Box<Expr>, Box<Expr>),
    Scale(Box<Expr>, f64),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    Powi(Box<Expr>, i32),
    Dot(Vec<Expr>, Vec<Expr>),
    Axpy(Box<Expr>, f64, Vec<Expr>),
}

fn eval<S: Scalar>(e: &Expr, p: &[S]) -> S {
    match e {
        Expr::Param(i) => p[*i],
        Expr::Const(c) => S::constant(*c),
        Expr::Add(a, b) => eval(a, p) + eval(b, p),
        Expr::Sub(a, b) => eval(a, p) - eval(b, p),
        Expr::Mul(a, b) => eval(a, p) * eval(b, p),
        Expr::Ratio(a, b) => {
            let d = eval(b, p);
            eval(a, p) / (d * d + 1.0)
        }
        Expr::Scale(a, c) => eval(a, p) * *c,
        Expr::Sin(a) => eval(a, p).sin(),
        Expr::Cos(a) => eval(a, p).cos(),
        Expr::Tanh(a) => eval(a, p).tanh(),
        Expr::Powi(a, k) => eval(a, p).powi(*k),
        Expr::Dot(a, b) => {
            let a: Vec<S> = a.iter().map(|e| eval(e, p)).collect();
            let b: Vec<S> = b.iter().map(|e| eval(e, p)).collect();
            S::dot(&a, &b)
        }
        Expr::Axpy(base, h, k) => {
            let k: Vec<S> = k.iter().map(|e| eval(e, p)).collect();
            let w: Vec<f64> = (0..k.len()).map(|j| 0.5 - 0.25 * j as f64).collect();
            S::axpy_sum(eval(base, p), *h, &w, &k)
        }
    }
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(0..NPARAM).prop_map(Expr::Param), (-2.0..2.0f64).prop_map(Expr::Const)];
    leaf.prop_recursive(5, 48, 3, |inner| {
        let b = || inner.clone().prop_map(Box::new);
        prop_oneof![
            (b(), b()).prop_map(|(a, c)| Expr::Add(a, c)),
            (b(), b()).prop_map(|(a, c)| Expr::Sub(a, c)),
            (b(), b()).prop_map(|(a, c)| Expr::Mul(a, c)),
            (b(), b()).prop_map(|(a, c)| Expr::Ratio(a, c)),
            (b(), -3.0..3.0f64).prop_map(|(a, c)| Expr::Scale(a, c)),
            b().prop_map(Expr::Sin),
            b().prop_map(Expr::Cos),
            b().prop_map(Expr::Tanh),
            (b(), 0..4i32).prop_map(|(a, k)| Expr::Powi(a, k)),
            prop::collection::vec((inner.clone(), inner.clone()), 1..4)
                .prop_map(|pairs| { let (a, c) = pairs.into_iter().unzip(); Expr::Dot(a, c) }),
            (b(), -1.0..1.0f64, prop::collection::vec(inner.clone(), 1..4)).prop_map(|(a, h, k)| Expr::Axpy(a, h, k)),
        ]
    })
}

fn central_difference(f: impl Fn(&[f64]) -> f64, p: &[f64], i: usize, h: f64) -> f64 {
    let mut up = p.to_vec();
    let mut dn = p.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn taped_gradient(e: &Expr, p: &[f64]) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let vars = tape.variables(p);
    let out = eval(e, &vars);
    let g = tape.backward(out).unwrap();
    (out.value(), g.into_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradients_match_central_differences(e in expr(), p in prop::collection::vec(-1.2..1.2f64, NPARAM)) {
        let (value, grad) = taped_gradient(&e, &p);
        prop_assert_eq!(value.to_bits(), eval::<f64>(&e, &p).to_bits());
        prop_assume!(value.is_finite() && value.abs() < 1e6);
        for i in 0..NPARAM {
            let fd = central_difference(|q| eval::<f64>(&e, q), &p, i, 1e-6);
            let tol = 1e-5 * (1.0 + fd.abs().max(grad[i].abs()));
            prop_assert!((grad[i] - fd).abs() <= tol, "d/dp{} taped {} fd {}", i, grad[i], fd);
        }
    }
}

#[test]
fn mlp_gradient_matches_central_differences() {
    use rand::SeedableRng;
    let model = Model::from_spec(&ModelSpec::mlp(), 2, None).unwrap();
    let params = model.init(0.5, &mut rand_chacha::ChaCha8Rng::seed_from_u64(4));
    let x = [0.3, -0.7];
    let w = [0.8, -1.3];
    let objective = |p: &[f64]| {
        let v = model.velocity(p, 0.0, &x);
        w[0] * v[0] + w[1] * v[1]
    };
    let tape = Tape::new();
    let vars = tape.variables(params.values());
    let xv = [Var::constant(x[0]), Var::constant(x[1])];
    let v = model.velocity(&vars, 0.0, &xv);
    let out = v[0] * w[0] + v[1] * w[1];
    let g = tape.backward(out).unwrap();
    // every weight of the first and last layer plus a sample of the rest
    let n = params.len();
    for i in (0..n).step_by(37).chain(0..300).chain(n - 202..n) {
        let fd = central_difference(objective, params.values(), i, 1e-6);
        assert!((g[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: taped {} fd {fd}", g[i]);
    }
}

#[test]
fn rollout_loss_gradient_matches_central_differences() {
    // Fixed-step RK4 so that the discrete map being differentiated does not
    // change with the parameters.
    let cfg = SolverConfig::rk4(0.01);
    let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let x0 = [1.0, 0.5];
    let target: Vec<Vec<f64>> = times.iter().map(|t| vec![(-t).exp(), 0.5 * (-2.0 * t).exp() + 0.05]).collect();
    let field = |p: &[f64], x: &[f64]| vec![p[0] * x[0] + p[1] * x[1] * x[1], p[2] * x[1] + p[3] * x[0].sin()];
    let objective = |p: &[f64]| {
        let r = solve_ivp(|_, x: &[f64]| field(p, x), &x0, &times, &cfg).unwrap();
        loss(&[r.states], std::slice::from_ref(&target), &[], 0.0).unwrap()
    };
    let p = [-0.9, 0.1, -1.8, 0.2];
    let tape = Tape::new();
    let vars = tape.variables(&p);
    let r = solve_ivp(
        |_, x: &[Var]| vec![vars[0] * x[0] + vars[1] * x[1] * x[1], vars[2] * x[1] + vars[3] * x[0].sin()],
        &[Var::constant(x0[0]), Var::constant(x0[1])],
        &times,
        &cfg,
    )
    .unwrap();
    let l = loss(&[r.states], std::slice::from_ref(&target), &[], 0.0).unwrap();
    assert_eq!(l.value().to_bits(), objective(&p).to_bits());
    let g = tape.backward(l).unwrap();
    for i in 0..4 {
        let fd = central_difference(objective, &p, i, 1e-6);
        assert!((g[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: taped {} fd {fd}", g[i]);
    }
}
