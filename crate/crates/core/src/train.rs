//! Mini-batched sub-trajectory training: L1-penalized MAE through the solver,
//! Adamax with exponential learning-rate decay, then magnitude pruning.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, TapeError};
use crate::data::{DataError, Dataset, Trajectory};
use crate::eval::{EvalError, FitReport, ProgressRecord};
use crate::integrate::{rollout_with_grad, solve_ivp, SolveError, SolverConfig};
use crate::models::{Model, ModelError, ModelSpec};
use crate::params::ParameterStore;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(
        "solver failed at iteration {iter}: {source}; try a different seed or a smaller l_batch"
    )]
    Solve { iter: usize, source: SolveError },
    #[error("non-finite loss at iteration {iter} (data term {data}, penalty {penalty})")]
    NonFiniteLoss { iter: usize, data: f64, penalty: f64 },
    #[error("gradient failed at iteration {iter}: {source}")]
    Gradient { iter: usize, source: TapeError },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Re-applied every iteration; zeroed entries may regrow.
    #[default]
    Soft,
    /// Zeroed entries stay zero for the rest of the run.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_max: usize,
    pub n_batch: usize,
    pub l_batch: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lambda_l1: f64,
    pub tau: f64,
    /// Dictionary coefficients start uniform in `[-w, w]`.
    pub coefficient_init: f64,
    /// Characteristic magnitude per state variable (empty: all 1). Together
    /// with `time_scale` this rescales per-coefficient step sizes so that
    /// coefficients of very different magnitude train at comparable rates.
    pub state_scale: Vec<f64>,
    pub time_scale: f64,
    /// Adamax first-moment decay.
    pub beta1: f64,
    /// Adamax infinity-norm decay.
    pub beta2: f64,
    pub prune_enabled: bool,
    pub prune_mode: PruneMode,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Validation MSE every this many iterations (0: only after the last).
    pub val_every: usize,
    /// Validation trajectories used (0: all).
    pub val_count: usize,
    /// Grid points of each validation rollout (0: full horizon).
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_max: 500,
            n_batch: 100,
            l_batch: 50,
            lr0: 0.01,
            lr_decay: 0.9987,
            lambda_l1: 1e-4,
            tau: 1e-6,
            coefficient_init: 0.5,
            state_scale: Vec::new(),
            time_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            prune_enabled: true,
            prune_mode: PruneMode::Soft,
            seed: 0,
            solver: SolverConfig::default(),
            val_every: 0,
            val_count: 0,
            val_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_batch == 0 {
            return bad("n_batch must be at least 1");
        }
        if self.l_batch < 2 {
            return bad("l_batch must be at least 2");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive and finite");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return bad("lambda_l1 must be non-negative");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be non-negative");
        }
        if !(self.coefficient_init >= 0.0 && self.coefficient_init.is_finite()) {
            return bad("coefficient_init must be non-negative");
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite())
            || self.state_scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("state_scale and time_scale entries must be positive and finite");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        self.solver.validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Learning rate used at (0-based) iteration `k`.
    pub fn lr_at(&self, k: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(k as i32)
    }
}

/// One training sub-sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub trajectory: usize,
    pub start: usize,
    pub x0: Vec<f64>,
    /// `l_batch + 1` target states, the first equal to `x0`.
    pub target: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

/// Draws `n_batch` distinct trajectories and a random window of
/// `l_batch + 1` consecutive samples from each.
pub fn sample_batch(
    trajectories: &[Trajectory],
    times: &[f64],
    n: usize,
    n_batch: usize,
    l_batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem>, TrainError> {
    let m = times.len();
    if m < l_batch + 1 {
        return Err(DataError::TooShort { m, needed: l_batch + 1 }.into());
    }
    if n_batch > trajectories.len() {
        return Err(TrainError::Config(format!(
            "n_batch = {n_batch} exceeds the {} training trajectories",
            trajectories.len()
        )));
    }
    let picks = sample(rng, trajectories.len(), n_batch);
    Ok(picks
        .iter()
        .map(|r| {
            let start = rng.gen_range(0..=m - l_batch - 1);
            let tr = &trajectories[r];
            let target: Vec<Vec<f64>> = (start..=start + l_batch).map(|i| tr.state(i, n).to_vec()).collect();
            BatchItem {
                trajectory: r,
                start,
                x0: target[0].clone(),
                target,
                times: times[start..=start + l_batch].to_vec(),
            }
        })
        .collect())
}

/// `Σ_i ‖pred_i − target_i‖₁` for one sub-trajectory.
fn l1_error<S: Scalar>(pred: &[Vec<S>], target: &[Vec<f64>]) -> S {
    let diffs: Vec<S> = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a - b).abs()))
        .collect();
    let ones = vec![1.0; diffs.len()];
    S::dot_const(&ones, &diffs)
}

/// `(1/n_batch) Σ_r Σ_i ‖x̃ − x‖₁ + λ Σ |ξ|`.
pub fn loss<S: Scalar>(
    predicted: &[Vec<Vec<S>>],
    targets: &[Vec<Vec<f64>>],
    coefficients: &[S],
    lambda: f64,
) -> Result<S, TrainError> {
    if predicted.len() != targets.len()
        || predicted.iter().zip(targets).any(|(p, t)| {
            p.len() != t.len() || p.iter().zip(t).any(|(a, b)| a.len() != b.len())
        })
    {
        return Err(TrainError::Shape("predicted and target trajectories differ in shape".into()));
    }
    let nb = predicted.len().max(1) as f64;
    let mut data = S::zero();
    for (p, t) in predicted.iter().zip(targets) {
        data = data + l1_error(p, t);
    }
    let abs: Vec<S> = coefficients.iter().map(|c| c.abs()).collect();
    let penalty = S::dot_const(&vec![1.0; abs.len()], &abs);
    Ok(data / nb + penalty * lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-parameter step multipliers (empty: all 1).
    #[serde(default)]
    pub step_scale: Vec<f64>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], u: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_scale: Vec::new() }
    }
}

/// One Adamax update in place.
pub fn adamax_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<(), TrainError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, optimizer sized {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let step = lr / (1.0 - state.beta1.powi(state.t as i32));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.u[i] = (state.beta2 * state.u[i]).max(g.abs());
        let scale = state.step_scale.get(i).copied().unwrap_or(1.0);
        params[i] -= scale * step * state.m[i] / (state.u[i] + state.eps);
    }
    Ok(())
}

/// Zeroes dictionary coefficients with `|ξ| < τ`; returns how many were
/// zeroed. With a mask, masked-out entries are forced to zero and newly
/// pruned entries are masked out.
pub fn prune(params: &mut ParameterStore, tau: f64, mut mask: Option<&mut [bool]>) -> usize {
    let idx: Vec<usize> = params.coefficient_indices().collect();
    let values = params.values_mut();
    let mut zeroed = 0;
    for (k, i) in idx.into_iter().enumerate() {
        let keep = mask.as_ref().is_none_or(|m| m[k]);
        if !keep || values[i].abs() < tau {
            if values[i] != 0.0 {
                zeroed += 1;
            }
            values[i] = 0.0;
            if let Some(m) = mask.as_deref_mut() {
                m[k] = false;
            }
        }
    }
    zeroed
}

fn batch_gradient(
    model: &Model,
    params: &[f64],
    batch: &[BatchItem],
    solver: &SolverConfig,
    iter: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    let scale = 1.0 / batch.len() as f64;
    let per_item: Vec<Result<(f64, Vec<f64>), TrainError>> = batch
        .par_iter()
        .map_init(Tape::new, |tape, item| {
            tape.reset();
            let vars = tape.variables(params);
            let r = rollout_with_grad(tape, |t, x| model.velocity(&vars, t, x), &item.x0, &item.times, solver)
                .map_err(|source| TrainError::Solve { iter, source })?;
            let err = l1_error(&r.states, &item.target) * scale;
            let g = tape.backward(err).map_err(|source| TrainError::Gradient { iter, source })?;
            Ok((err.value(), g.into_vec()))
        })
        .collect();
    let mut data = 0.0;
    let mut grad = vec![0.0; params.len()];
    for r in per_item {
        let (v, g) = r?;
        data += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((data, grad))
}

/// Mean over validation trajectories and grid points of `‖x̃ − x‖²/n`;
/// `None` if any rollout fails.
pub fn validation_mse(model: &Model, params: &[f64], ds: &Dataset, cfg: &TrainConfig) -> Option<f64> {
    let n = ds.n();
    let count = if cfg.val_count == 0 { ds.val.len() } else { cfg.val_count.min(ds.val.len()) };
    let samples = if cfg.val_samples == 0 { ds.num_samples() } else { cfg.val_samples.min(ds.num_samples()) };
    let times = &ds.times[..samples];
    let per: Vec<Option<f64>> = ds.val[..count]
        .par_iter()
        .map(|tr| match solve_ivp(|t, x: &[f64]| model.velocity(params, t, x), tr.state(0, n), times, &cfg.solver) {
            Ok(r) => Some(
                r.states
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.iter().zip(tr.state(i, n)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum::<f64>()
                    / (n * samples) as f64,
            ),
            Err(_) => None,
        })
        .collect();
    let total: Option<f64> = per.into_iter().sum();
    total.map(|t| t / count.max(1) as f64)
}

/// Parameters and histories produced by [`train_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    pub loss_history: Vec<f64>,
    pub val_mse: Vec<(usize, Option<f64>)>,
}

/// Runs the training loop from the given initial parameters. `progress` is
/// called after every iteration with the updated parameters.
pub fn train_from(
    dataset: &Dataset,
    model: &Model,
    init: ParameterStore,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&ProgressRecord, &ParameterStore),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    dataset.check_dim(model.state_dim())?;
    if !init.same_layout(&model.layout()) {
        return Err(TrainError::Shape("initial parameters do not match the model layout".into()));
    }
    let n = dataset.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut params = init;
    let step_scale = model.step_scales(&cfg.state_scale, cfg.time_scale)?;
    let mut opt = OptimizerState { beta1: cfg.beta1, beta2: cfg.beta2, step_scale, ..OptimizerState::new(params.len()) };
    let coeff_idx: Vec<usize> = params.coefficient_indices().collect();
    let mut mask = match cfg.prune_mode {
        PruneMode::Hard if cfg.prune_enabled => Some(vec![true; coeff_idx.len()]),
        _ => None,
    };
    let mut loss_history = Vec::with_capacity(cfg.n_max);
    let mut val_mse = Vec::new();

    for iter in 0..cfg.n_max {
        let batch = sample_batch(&dataset.train, &dataset.times, n, cfg.n_batch, cfg.l_batch, &mut rng)?;
        let (data, mut grad) = batch_gradient(model, params.values(), &batch, &cfg.solver, iter)?;
        let penalty = params.coefficient_l1();
        let loss = data + cfg.lambda_l1 * penalty;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss { iter, data, penalty });
        }
        for &i in &coeff_idx {
            let v = params.values()[i];
            if v != 0.0 {
                grad[i] += cfg.lambda_l1 * v.signum();
            }
        }
        if let Some(m) = &mask {
            for (k, &i) in coeff_idx.iter().enumerate() {
                if !m[k] {
                    grad[i] = 0.0;
                }
            }
        }
        let lr = cfg.lr_at(iter);
        adamax_step(params.values_mut(), &grad, &mut opt, lr)?;
        if cfg.prune_enabled {
            prune(&mut params, cfg.tau, mask.as_deref_mut());
        }
        debug_assert!(model.structure_check(params.values()).is_none_or(|c| c.holds()));
        loss_history.push(loss);
        progress(&ProgressRecord { iter, loss, lr, nnz: params.nnz() }, &params);
        let last = iter + 1 == cfg.n_max;
        if last || (cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0) {
            val_mse.push((iter + 1, validation_mse(model, params.values(), dataset, cfg)));
        }
    }
    Ok(TrainOutcome { params, loss_history, val_mse })
}

/// Random initial parameters drawn from the configured seed.
pub fn initial_params(model: &Model, cfg: &TrainConfig) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    model.init(cfg.coefficient_init, &mut rng)
}

/// Builds the model, trains from a seeded random initialization and
/// assembles the report.
pub fn train_loop(
    dataset: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    progress: impl FnMut(&ProgressRecord, &ParameterStore),
) -> Result<(Model, FitReport), TrainError> {
    let model = Model::from_spec(spec, dataset.n(), Some(&dataset.meta.var_names))?;
    let init = initial_params(&model, cfg);
    let out = train_from(dataset, &model, init, cfg, progress)?;
    let report = FitReport::build(spec, &model, out.params, dataset, out.loss_history, out.val_mse)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Var;
    use crate::data::{builtin_system, generate, Counts};
    use crate::dictionary::DictionarySpec;
    use crate::params::BlockKind;

    fn traj(m: usize, n: usize, id: f64) -> Trajectory {
        Trajectory { seed: 0, states: (0..m * n).map(|i| id * 1000.0 + i as f64).collect() }
    }

    #[test]
    fn batch_sampling() {
        let trs: Vec<Trajectory> = (0..5).map(|k| traj(10, 2, k as f64)).collect();
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&trs, &times, 2, 3, 9, &mut rng).unwrap();
        assert!(b.iter().all(|it| it.start == 0 && it.target.len() == 10));

        let all = sample_batch(&trs, &times, 2, 5, 4, &mut rng).unwrap();
        let mut seen: Vec<usize> = all.iter().map(|it| it.trajectory).collect();
        seen.sort();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
        for it in &all {
            assert!(it.start <= 10 - 4 - 1);
            assert_eq!(it.x0, trs[it.trajectory].state(it.start, 2));
            assert_eq!(it.times[0], times[it.start]);
            assert_eq!(it.target.last().unwrap(), trs[it.trajectory].state(it.start + 4, 2));
        }

        let a = sample_batch(&trs, &times, 2, 3, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let c = sample_batch(&trs, &times, 2, 3, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, c);
        assert!(sample_batch(&trs, &times, 2, 3, 10, &mut rng).is_err());
        assert!(sample_batch(&trs, &times, 2, 6, 4, &mut rng).is_err());
    }

    #[test]
    fn loss_examples() {
        let t = vec![vec![vec![1.0, 2.0], vec![3.0, 4.0]]];
        assert_eq!(loss(&t, &t, &[], 0.0).unwrap(), 0.0);
        assert!((loss(&t, &t, &[2.0, -3.0], 1e-4).unwrap() - 5e-4).abs() < 1e-18);
        let p = vec![vec![vec![0.25]]];
        let q = vec![vec![vec![0.0]]];
        assert_eq!(loss(&p, &q, &[], 0.0).unwrap(), 0.25);
        assert!(loss(&p, &t, &[], 0.0).is_err());

        // taped loss gives sign gradients
        let tape = Tape::new();
        let c = tape.variables(&[2.0, -3.0]);
        let pred: Vec<Vec<Vec<Var>>> = vec![vec![vec![Var::constant(1.0)]]];
        let l = loss(&pred, &[vec![vec![0.5]]], &c, 0.1).unwrap();
        assert!((l.value() - (0.5 + 0.5)).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.as_slice(), [0.1, -0.1]);
    }

    #[test]
    fn adamax_examples() {
        let mut p = vec![1.0, -2.0];
        let mut s = OptimizerState::new(2);
        adamax_step(&mut p, &[0.0, 0.0], &mut s, 0.01).unwrap();
        assert_eq!(p, [1.0, -2.0]);

        let mut p = vec![0.5];
        let mut s = OptimizerState::new(1);
        adamax_step(&mut p, &[1.0], &mut s, 0.01).unwrap();
        assert!((p[0] - (0.5 - 0.01)).abs() < 1e-9);

        let g = [0.3, -1.2, 5.0];
        let (mut a, mut b) = (vec![0.0; 3], vec![0.0; 3]);
        let (mut sa, mut sb) = (OptimizerState::new(3), OptimizerState::new(3));
        for _ in 0..4 {
            adamax_step(&mut a, &g, &mut sa, 0.02).unwrap();
            adamax_step(&mut b, &g.map(|v| -v), &mut sb, 0.02).unwrap();
        }
        assert_eq!(a, b.iter().map(|v| -v).collect::<Vec<_>>());
        assert!(sa.u.iter().all(|u| *u >= 0.0));
        assert!(adamax_step(&mut a, &[1.0], &mut sa, 0.1).is_err());
    }

    fn store(vals: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::layout()
            .block("xi", BlockKind::Coefficients, vals.len(), 1)
            .block("damping", BlockKind::Damping, 1, 1)
            .zeros();
        s.get_mut("xi").unwrap().copy_from_slice(vals);
        s.get_mut("damping").unwrap()[0] = 1e-9;
        s
    }

    #[test]
    fn prune_examples() {
        let mut s = store(&[1e-7, 0.5]);
        assert_eq!(prune(&mut s, 1e-6, None), 1);
        assert_eq!(s.get("xi").unwrap(), [0.0, 0.5]);
        assert_eq!(s.get("damping").unwrap(), [1e-9]);
        let mut s = store(&[-1e-7]);
        prune(&mut s, 1e-6, None);
        assert_eq!(s.get("xi").unwrap(), [0.0]);
        let mut s = store(&[1e-7, -3e-9]);
        prune(&mut s, 0.0, None);
        assert_eq!(s.get("xi").unwrap(), [1e-7, -3e-9]);

        let mut mask = vec![true, false];
        let mut s = store(&[1e-7, 0.5]);
        prune(&mut s, 1e-6, Some(&mut mask));
        assert_eq!(s.get("xi").unwrap(), [0.0, 0.0]);
        assert_eq!(mask, [false, false]);
    }

    #[test]
    fn lr_schedule_and_config_checks() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(3), 0.01 * 0.9987f64.powi(3));
        assert!(TrainConfig { l_batch: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { tau: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lambda_l1: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    fn small_hyperbolic() -> Dataset {
        let mut sys = builtin_system("hyperbolic").unwrap();
        sys.t_final = 2.0;
        generate(&sys, Counts { train: 8, val: 2, test: 2 }, 11).unwrap()
    }

    fn hyperbolic_spec() -> ModelSpec {
        ModelSpec::plain(DictionarySpec::new(2, 3, &[]))
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let ds = small_hyperbolic();
        let spec = hyperbolic_spec();
        let model = Model::from_spec(&spec, 2, Some(&ds.meta.var_names)).unwrap();
        let mut init = model.layout();
        let truth = ds.meta.system.truth_matrix(model.dictionary().unwrap()).unwrap();
        init.set_values(&truth);
        let cfg = TrainConfig {
            n_max: 10,
            n_batch: 4,
            l_batch: 20,
            lr0: 1e-5,
            lambda_l1: 0.0,
            tau: 0.0,
            solver: SolverConfig::dopri5(1e-10, 1e-12),
            ..TrainConfig::default()
        };
        let out = train_from(&ds, &model, init, &cfg, |_, _| {}).unwrap();
        let drift = out.params.values().iter().zip(&truth).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(drift <= 1e-4, "drift {drift}");
        assert!(out.loss_history[0] < 1e-8, "{:?}", out.loss_history);
        assert!(out.loss_history.iter().all(|l| *l < 1e-2), "{:?}", out.loss_history);
    }

    #[test]
    fn runs_are_deterministic_and_thread_independent() {
        let ds = small_hyperbolic();
        let cfg = TrainConfig { n_max: 5, n_batch: 4, l_batch: 10, seed: 3, ..TrainConfig::default() };
        let run = || train_loop(&ds, &hyperbolic_spec(), &cfg, |_, _| {}).unwrap().1;
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(run);
        assert_eq!(a, c);

        let mut records = Vec::new();
        train_loop(&ds, &hyperbolic_spec(), &cfg, |r, p| {
            records.push(*r);
            for &i in &p.coefficient_indices().collect::<Vec<_>>() {
                let v = p.values()[i].abs();
                assert!(v == 0.0 || v >= cfg.tau);
            }
        })
        .unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.iter().enumerate().all(|(k, r)| r.iter == k && r.lr == cfg.lr_at(k) && r.loss >= 0.0));
        assert_eq!(a.val_mse.len(), 1);
    }

    #[test]
    fn dimension_and_solver_errors() {
        let ds = small_hyperbolic();
        let spec = ModelSpec::plain(DictionarySpec::new(3, 2, &[]));
        assert!(train_loop(&ds, &spec, &TrainConfig::default(), |_, _| {}).is_err());

        let model = Model::from_spec(&hyperbolic_spec(), 2, None).unwrap();
        let mut init = model.layout();
        // ẋ = 5x³ blows up well within the window
        let k = model.dictionary().unwrap().position_by_name("x1^3").unwrap();
        init.values_mut()[k * 2] = 5.0;
        let cfg = TrainConfig {
            n_max: 2,
            n_batch: 8,
            l_batch: 150,
            solver: SolverConfig { max_steps: 2000, ..SolverConfig::default() },
            ..TrainConfig::default()
        };
        match train_from(&ds, &model, init, &cfg, |_, _| {}) {
            Err(e @ TrainError::Solve { iter: 0, .. }) => assert!(e.to_string().contains("l_batch")),
            other => panic!("expected a solver failure, got {other:?}"),
        }
    }
}
