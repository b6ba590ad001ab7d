//! Initial-value solvers: adaptive Dormand-Prince 5(4) and classical RK4.
//!
//! Both solvers are generic over [`Scalar`], so the same code runs on plain
//! `f64` states and on taped [`Var`] states. Step-size decisions only look at
//! `value()`, which means a taped rollout follows exactly the accepted-step
//! sequence of the untaped one and gradients flow through the arithmetic of
//! every accepted step.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dopri5,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// First trial step for dopri5, or the largest sub-step for rk4.
    pub initial_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { method: Method::Dopri5, rtol: 1e-7, atol: 1e-9, max_steps: 100_000, initial_step: None }
    }
}

impl SolverConfig {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    pub fn rk4(step: f64) -> Self {
        Self { method: Method::Rk4, initial_step: Some(step), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if !(self.rtol > 0.0) {
            return bad("rtol must be positive");
        }
        if !(self.atol > 0.0) {
            return bad("atol must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0 && h.is_finite()) {
                return bad("initial_step must be positive and finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("exceeded {steps} steps at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("step size underflow at t = {t} (last step {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("invalid solver config: {0}")]
    Config(String),
}

/// States at every requested time point.
#[derive(Debug, Clone)]
pub struct Rollout<S> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<S>>,
    /// Accepted step sizes, in order.
    pub steps: Vec<f64>,
}

impl<S: Scalar> Rollout<S> {
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|x| x.iter().map(|v| v.value()).collect()).collect()
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] =
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
// B - B*, the embedded error weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// continuous extension
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// `x + h * Σ w[j] * k[j]` component-wise.
fn combine<S: Scalar>(x: &[S], h: f64, w: &[f64], k: &[&[S]]) -> Vec<S> {
    let mut buf = [S::zero(); 7];
    (0..x.len())
        .map(|i| {
            for (b, kj) in buf.iter_mut().zip(k) {
                *b = kj[i];
            }
            S::axpy_sum(x[i], h, w, &buf[..k.len()])
        })
        .collect()
}

fn all_finite<S: Scalar>(x: &[S]) -> bool {
    x.iter().all(|v| v.value().is_finite())
}

struct Stages<S> {
    x_next: Vec<S>,
    k: Vec<Vec<S>>,
    err: Vec<f64>,
}

fn dopri5_stages<S: Scalar, F>(f: &mut F, t: f64, x: &[S], h: f64, k1: Vec<S>) -> Stages<S>
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    let mut k: Vec<Vec<S>> = Vec::with_capacity(7);
    k.push(k1);
    let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
    for (s, row) in rows.iter().enumerate() {
        let refs: Vec<&[S]> = k.iter().map(|v| v.as_slice()).collect();
        let y = combine(x, h, row, &refs);
        let ks = f(t + C[s + 1] * h, &y);
        k.push(ks);
    }
    let refs: Vec<&[S]> = k.iter().map(|v| v.as_slice()).collect();
    let x_next = combine(x, h, &B[..6], &refs);
    let k7 = f(t + h, &x_next);
    k.push(k7);
    let err = (0..x.len())
        .map(|i| {
            let mut acc = 0.0;
            for (ej, kj) in E.iter().zip(&k) {
                if *ej != 0.0 {
                    acc += ej * kj[i].value();
                }
            }
            h * acc
        })
        .collect();
    Stages { x_next, k, err }
}

/// One Dormand-Prince step from `(t, x)` with step `h`.
///
/// Returns the fifth-order solution and the raw (unscaled) difference to the
/// embedded fourth-order solution.
pub fn dopri5_step<S: Scalar, F>(
    mut f: F,
    t: f64,
    x: &[S],
    h: f64,
) -> Result<(Vec<S>, Vec<f64>), SolveError>
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    if !(h > 0.0) {
        return Err(SolveError::Config("step must be positive".into()));
    }
    let k1 = f(t, x);
    let st = dopri5_stages(&mut f, t, x, h, k1);
    if !all_finite(&st.x_next) || st.k.iter().any(|k| !all_finite(k)) {
        return Err(SolveError::NonFinite { t });
    }
    Ok((st.x_next, st.err))
}

fn interpolation_weights(theta: f64) -> [f64; 7] {
    let t1 = 1.0 - theta;
    let mut w = [0.0; 7];
    for j in 0..7 {
        let e1 = if j == 0 { 1.0 } else { 0.0 };
        let e7 = if j == 6 { 1.0 } else { 0.0 };
        w[j] = theta * B[j]
            + theta * t1 * (e1 - B[j])
            + theta * theta * t1 * (2.0 * B[j] - e1 - e7)
            + theta * theta * t1 * t1 * D[j];
    }
    w
}

fn error_norm<S: Scalar>(err: &[f64], x: &[S], x_next: &[S], cfg: &SolverConfig) -> f64 {
    let n = err.len().max(1) as f64;
    let mut acc = 0.0;
    for i in 0..err.len() {
        let scale = cfg.atol + cfg.rtol * x[i].value().abs().max(x_next[i].value().abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    let e = (acc / n).sqrt();
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

fn initial_step<S: Scalar, F>(f: &mut F, t0: f64, x0: &[S], f0: &[S], hmax: f64, cfg: &SolverConfig) -> f64
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    let sk: Vec<f64> = x0.iter().map(|v| cfg.atol + cfg.rtol * v.value().abs()).collect();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..x0.len() {
        dnf += (f0[i].value() / sk[i]).powi(2);
        dny += (x0[i].value() / sk[i]).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h = h.min(hmax);
    let x1: Vec<f64> = x0.iter().zip(f0).map(|(x, v)| x.value() + h * v.value()).collect();
    let x1s: Vec<S> = x1.iter().map(|&v| S::constant(v)).collect();
    let f1 = f(t0 + h, &x1s);
    let mut der2 = 0.0;
    for i in 0..x0.len() {
        der2 += ((f1[i].value() - f0[i].value()) / sk[i]).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if !der12.is_finite() {
        1e-6
    } else if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}

fn check_grid(times: &[f64], n: usize) -> Result<(), SolveError> {
    if times.is_empty() {
        return Err(SolveError::Grid("no time points".into()));
    }
    if n == 0 {
        return Err(SolveError::Grid("empty state".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(SolveError::Grid("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolveError::Grid("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Integrates `dx/dt = f(t, x)` from `x0` at `times[0]` and reports the state
/// at every entry of `times`.
pub fn solve_ivp<S: Scalar, F>(
    mut f: F,
    x0: &[S],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Rollout<S>, SolveError>
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    cfg.validate()?;
    check_grid(times, x0.len())?;
    if !all_finite(x0) {
        return Err(SolveError::NonFinite { t: times[0] });
    }
    match cfg.method {
        Method::Dopri5 => dopri5(&mut f, x0, times, cfg),
        Method::Rk4 => rk4(&mut f, x0, times, cfg),
    }
}

fn dopri5<S: Scalar, F>(f: &mut F, x0: &[S], times: &[f64], cfg: &SolverConfig) -> Result<Rollout<S>, SolveError>
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    let t_end = *times.last().unwrap();
    let mut out = Rollout { times: times.to_vec(), states: vec![x0.to_vec()], steps: Vec::new() };
    if times.len() == 1 {
        return Ok(out);
    }

    let mut t = times[0];
    let mut x = x0.to_vec();
    let mut k1 = f(t, &x);
    if !all_finite(&k1) {
        return Err(SolveError::NonFinite { t });
    }
    let span = t_end - t;
    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => initial_step(f, t, &x, &k1, span, cfg),
    }
    .min(span);
    let mut next = 1;
    let mut attempts = 0;

    while next < times.len() {
        if attempts >= cfg.max_steps {
            return Err(SolveError::MaxSteps { t, steps: attempts });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        if !(h > 10.0 * f64::EPSILON * t.abs().max(1.0)) {
            return Err(SolveError::StepUnderflow { t, h });
        }
        attempts += 1;

        let st = dopri5_stages(f, t, &x, h, k1.clone());
        let stages_ok = all_finite(&st.x_next) && st.k.iter().all(|k| all_finite(k));
        let err = if stages_ok { error_norm(&st.err, &x, &st.x_next, cfg) } else { f64::INFINITY };

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            while next < times.len() && times[next] <= t_new {
                let tn = times[next];
                let state = if tn == t_new {
                    st.x_next.clone()
                } else {
                    let w = interpolation_weights((tn - t) / h);
                    let refs: Vec<&[S]> = st.k.iter().map(|v| v.as_slice()).collect();
                    combine(&x, h, &w, &refs)
                };
                out.states.push(state);
                next += 1;
            }
            out.steps.push(h);
            let Stages { x_next, mut k, .. } = st;
            x = x_next;
            k1 = k.pop().unwrap();
            t = t_new;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac.min(1.0);
        }
    }
    Ok(out)
}

fn rk4<S: Scalar, F>(f: &mut F, x0: &[S], times: &[f64], cfg: &SolverConfig) -> Result<Rollout<S>, SolveError>
where
    F: FnMut(f64, &[S]) -> Vec<S>,
{
    let mut out = Rollout { times: times.to_vec(), states: vec![x0.to_vec()], steps: Vec::new() };
    let mut x = x0.to_vec();
    let mut taken = 0;
    for w in times.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let span = tb - ta;
        let sub = match cfg.initial_step {
            Some(hmax) if hmax < span => (span / hmax - 1e-9).ceil() as usize,
            _ => 1,
        };
        let h = span / sub as f64;
        for s in 0..sub {
            if taken >= cfg.max_steps {
                return Err(SolveError::MaxSteps { t: ta + s as f64 * h, steps: taken });
            }
            let t = ta + s as f64 * h;
            let k1 = f(t, &x);
            let k2 = f(t + 0.5 * h, &combine(&x, h, &[0.5], &[&k1]));
            let k3 = f(t + 0.5 * h, &combine(&x, h, &[0.5], &[&k2]));
            let k4 = f(t + h, &combine(&x, h, &[1.0], &[&k3]));
            x = combine(&x, h, &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0], &[&k1, &k2, &k3, &k4]);
            if !all_finite(&x) {
                return Err(SolveError::NonFinite { t: t + h });
            }
            out.steps.push(h);
            taken += 1;
        }
        out.states.push(x.clone());
    }
    Ok(out)
}

/// Taped rollout: the initial state is constant and `f` is expected to close
/// over parameter variables registered on `tape`.
pub fn rollout_with_grad<'t, F>(
    _tape: &'t Tape,
    f: F,
    x0: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Rollout<Var<'t>>, SolveError>
where
    F: FnMut(f64, &[Var<'t>]) -> Vec<Var<'t>>,
{
    let x0: Vec<Var<'t>> = x0.iter().map(|&v| Var::constant(v)).collect();
    solve_ivp(f, &x0, times, cfg)
}
