//! The training loop: mini-batch sampling, sweeps, the closed-form
//! Hamiltonian update and the sufficient-decrease search over ε.

use std::collections::VecDeque;
use std::time::Instant;

use log::{debug, info};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_weights, Dataset};
use crate::error::{Error, Result};
use crate::hamiltonian::{aug_hp_value, update_params, AugmentationWeight};
use crate::metrics::{accuracy, sparsity_pct};
use crate::network::{
    backward_sweep, batch_objective, forward_logits, forward_sweep, hamiltonian_gradient, init_params,
    terminal_loss, Batch, HamiltonianGradient, Model, ParamSet, Trajectory,
};
use crate::regularization::Regularizer;

/// Retained iterates: six consecutive differences need seven points.
pub const HISTORY_DEPTH: usize = 7;

/// Samples per chunk when evaluating on a whole dataset.
const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// `ε̂_{k+1} = ζ ε_k`
    Sqh,
    /// Moving average of the last `ω + 1` accepted values after an escalation.
    MovingAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Mini-batch size; `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub k_max: usize,
    pub eps0: f64,
    pub mu: f64,
    pub eta: f64,
    pub strategy: Strategy,
    pub zeta: f64,
    pub omega: usize,
    pub reg: Regularizer,
    /// Evaluate accuracy and the full objective every this many iterations
    /// (and after the last one); 0 disables periodic evaluation.
    pub eval_every: usize,
    pub j_max: usize,
    pub eps_min: f64,
    pub class_weighting: bool,
    /// Compute Δh / Δu every iteration (costs one extra full-batch sweep in
    /// mini-batch mode).
    pub diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: None,
            k_max: 100,
            eps0: 1.0,
            mu: 7.0,
            eta: 1e-9,
            strategy: Strategy::Sqh,
            zeta: 0.01,
            omega: 5,
            reg: Regularizer::none(),
            eval_every: 0,
            j_max: 60,
            eps_min: 1e-8,
            class_weighting: false,
            diagnostics: false,
        }
    }
}

impl TrainConfig {
    /// Moving-average settings used for mini-batch training.
    pub fn minibatch_profile(batch_size: usize) -> Self {
        TrainConfig {
            batch_size: Some(batch_size),
            mu: 1.1,
            strategy: Strategy::MovingAverage,
            zeta: 1.0,
            omega: 5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::ConfigValue { key: key.into(), message });
        if let Some(m) = self.batch_size {
            if m == 0 || m > dataset_len {
                return bad("M", format!("must lie in 1..={dataset_len}, got {m}"));
            }
        }
        if dataset_len == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        if !(self.mu > 1.0 && self.mu.is_finite()) {
            return bad("mu", format!("must be > 1, got {}", self.mu));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be > 0, got {}", self.eta));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return bad("eps0", format!("must be > 0, got {}", self.eps0));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad("zeta", format!("must lie in (0, 1], got {}", self.zeta));
        }
        if self.omega == 0 {
            return bad("omega", "must be >= 1".into());
        }
        if self.k_max == 0 {
            return bad("k_max", "must be >= 1".into());
        }
        if !(self.eps_min > 0.0 && self.eps_min.is_finite()) {
            return bad("eps_min", format!("must be > 0, got {}", self.eps_min));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ε proposals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonController {
    strategy: Strategy,
    zeta: f64,
    omega: usize,
    eps_min: f64,
    history: VecDeque<f64>,
    proposal: f64,
    last_trials: usize,
}

impl EpsilonController {
    pub fn new(strategy: Strategy, eps0: f64, zeta: f64, omega: usize, eps_min: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) || !(zeta > 0.0 && zeta <= 1.0) || omega == 0 || eps_min.is_nan() || eps_min <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "controller needs eps0 > 0, zeta in (0, 1], omega >= 1, eps_min > 0 (got {eps0}, {zeta}, {omega}, {eps_min})"
            )));
        }
        Ok(EpsilonController {
            strategy,
            zeta,
            omega,
            eps_min,
            history: VecDeque::with_capacity(omega + 1),
            proposal: eps0,
            last_trials: 0,
        })
    }

    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        EpsilonController::new(config.strategy, config.eps0, config.zeta, config.omega, config.eps_min)
    }

    /// Current `ε̂_k`.
    pub fn proposal(&self) -> f64 {
        self.proposal
    }

    pub fn last_trials(&self) -> usize {
        self.last_trials
    }

    /// Accepted values still inside the averaging window, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &f64> {
        self.history.iter()
    }

    /// Store the accepted `ε_k` and its escalation count.
    pub fn record(&mut self, eps: f64, trials: usize) -> Result<()> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!("accepted epsilon must be positive, got {eps}")));
        }
        if self.history.len() == self.omega + 1 {
            self.history.pop_front();
        }
        self.history.push_back(eps);
        self.last_trials = trials;
        Ok(())
    }

    /// `ε̂_{k+1}` from the recorded history; also becomes the new proposal.
    pub fn propose_epsilon(&mut self, last_j: usize, k: usize) -> f64 {
        let Some(&last) = self.history.back() else {
            return self.proposal;
        };
        let next = match self.strategy {
            Strategy::Sqh => self.zeta * last,
            Strategy::MovingAverage if last_j == 0 => self.zeta * self.proposal,
            Strategy::MovingAverage => {
                let n = (k.min(self.omega) + 1).min(self.history.len());
                self.history.iter().rev().take(n).sum::<f64>() / n as f64
            }
        };
        self.proposal = next.max(self.eps_min);
        self.proposal
    }
}

// ---------------------------------------------------------------------------
// sampling and line search
// ---------------------------------------------------------------------------

/// `m` distinct positions of `0..n`, uniform over all subsets, sorted.
pub fn sample_minibatch(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("mini-batch size {m} outside 1..={n}")));
    }
    if m == n {
        return Ok((0..n).collect());
    }
    let mut idx = index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub mu: f64,
    pub eta: f64,
    pub j_max: usize,
    /// Record the forward sweep of the accepted trial so the next iteration
    /// on the same batch can skip it.
    pub keep_trajectory: bool,
}

impl LineSearch {
    pub fn from_config(config: &TrainConfig) -> Self {
        LineSearch {
            mu: config.mu,
            eta: config.eta,
            j_max: config.j_max,
            keep_trajectory: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub params: ParamSet,
    pub epsilon: f64,
    /// Escalations `j`; the accepted value is `μ^j ε̂`.
    pub trials: usize,
    /// Objective evaluations spent, always `trials + 1`.
    pub forward_evals: usize,
    /// `J_B(w)` at the accepted point.
    pub objective: f64,
    /// `|||w − u|||`.
    pub step_sq: f64,
    pub trajectory: Option<Trajectory>,
}

/// Escalate `ε = μ^j ε̂` until `J_B(w) − J_B(u) ≤ −η |||w − u|||`.
///
/// A trial whose forward pass overflows counts as a rejection.
#[allow(clippy::too_many_arguments)]
pub fn linesearch_step(
    model: &Model,
    u: &ParamSet,
    batch: &Batch,
    reg: &Regularizer,
    grad: &HamiltonianGradient,
    objective_u: f64,
    eps_hat: f64,
    search: &LineSearch,
    iteration: usize,
) -> Result<LineSearchOutcome> {
    let mut eps = eps_hat;
    for j in 0..=search.j_max {
        eps = eps_hat * search.mu.powi(j as i32);
        let weight = AugmentationWeight::new(eps)?;
        let w = ParamSet::from_layers(model, update_params(grad, u, reg, weight))?;
        let trial = if search.keep_trajectory {
            forward_sweep(model, &w, batch).and_then(|t| {
                let (loss, _) = terminal_loss(t.logits(), batch.targets(), batch.classes(), batch.class_weights())?;
                Ok((loss + reg.penalty(&w), Some(t)))
            })
        } else {
            batch_objective(model, &w, batch, reg).map(|v| (v, None))
        };
        let (objective, trajectory) = match trial {
            Ok(v) => v,
            Err(Error::NumericOverflow { .. }) => (f64::INFINITY, None),
            Err(e) => return Err(e),
        };
        let step_sq = w.dist_sq(u);
        if objective - objective_u <= -search.eta * step_sq {
            return Ok(LineSearchOutcome {
                params: w,
                epsilon: eps,
                trials: j,
                forward_evals: j + 1,
                objective,
                step_sq,
                trajectory,
            });
        }
    }
    Err(Error::LineSearchFailed {
        iteration,
        trials: search.j_max + 1,
        epsilon: eps,
    })
}

/// `J_B(u)` plus the Hamiltonian gradient at `u`, from one forward and one
/// backward sweep.
pub fn objective_and_gradient(
    model: &Model,
    params: &ParamSet,
    batch: &Batch,
    reg: &Regularizer,
) -> Result<(f64, HamiltonianGradient)> {
    let traj = forward_sweep(model, params, batch)?;
    objective_and_gradient_from(model, params, batch, reg, &traj)
}

/// [`objective_and_gradient`] with the forward sweep already done.
pub fn objective_and_gradient_from(
    model: &Model,
    params: &ParamSet,
    batch: &Batch,
    reg: &Regularizer,
    traj: &Trajectory,
) -> Result<(f64, HamiltonianGradient)> {
    let (loss, dphi) = terminal_loss(traj.logits(), batch.targets(), batch.classes(), batch.class_weights())?;
    let adjoints = backward_sweep(model, params, traj, &dphi, batch.len())?;
    let grad = hamiltonian_gradient(model, params, traj, &adjoints)?;
    Ok((loss + reg.penalty(params), grad))
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Ring buffer of the most recent iterates.
#[derive(Debug, Clone)]
pub struct ParamHistory {
    depth: usize,
    items: VecDeque<ParamSet>,
}

impl ParamHistory {
    pub fn new(depth: usize) -> Self {
        ParamHistory {
            depth: depth.max(1),
            items: VecDeque::with_capacity(depth.max(1)),
        }
    }

    pub fn push(&mut self, params: ParamSet) {
        if self.items.len() == self.depth {
            self.items.pop_front();
        }
        self.items.push_back(params);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.depth
    }

    /// Oldest first.
    pub fn iterates(&self) -> impl DoubleEndedIterator<Item = &ParamSet> {
        self.items.iter()
    }

    pub fn latest(&self) -> Option<&ParamSet> {
        self.items.back()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub delta_h: f64,
    pub delta_u: f64,
}

/// `Σ_l [max_w H^ε_l(w) − H^ε_l(u^{k+1})]` with the full-batch gradient
/// taken at `u^k`.
pub fn delta_h(
    model: &Model,
    u_k: &ParamSet,
    u_next: &ParamSet,
    full: &Batch,
    reg: &Regularizer,
    eps: f64,
) -> Result<f64> {
    let (_, grad) = objective_and_gradient(model, u_k, full, reg)?;
    delta_h_from_gradient(&grad, u_k, u_next, reg, eps)
}

fn delta_h_from_gradient(
    grad: &HamiltonianGradient,
    u_k: &ParamSet,
    u_next: &ParamSet,
    reg: &Regularizer,
    eps: f64,
) -> Result<f64> {
    let weight = AugmentationWeight::new(eps)?;
    let best = update_params(grad, u_k, reg, weight);
    let mut gap = 0.0;
    for (((f, b), n), u) in grad.layers().iter().zip(&best).zip(u_next.layers()).zip(u_k.layers()) {
        gap += aug_hp_value(f, b, u, reg, weight) - aug_hp_value(f, n, u, reg, weight);
    }
    // the closed form is the exact maximizer; anything below zero is rounding
    Ok(gap.max(0.0))
}

/// `Σ` of the last six `|||u^{(i+1)} − u^{(i)}|||`.
pub fn delta_u(history: &ParamHistory) -> Result<f64> {
    if history.len() < HISTORY_DEPTH {
        return Err(Error::InvalidInput(format!(
            "need {HISTORY_DEPTH} iterates for the step sum, have {}",
            history.len()
        )));
    }
    let recent: Vec<&ParamSet> = history.iterates().rev().take(HISTORY_DEPTH).collect();
    Ok(recent.windows(2).map(|p| p[0].dist_sq(p[1])).sum())
}

/// Both convergence diagnostics at the newest pair of iterates in `history`.
pub fn diagnostics(
    model: &Model,
    history: &ParamHistory,
    full: &Batch,
    reg: &Regularizer,
    eps: f64,
) -> Result<Diagnostics> {
    let du = delta_u(history)?;
    let mut newest = history.iterates().rev();
    let (u_next, u_k) = (newest.next().unwrap(), newest.next().unwrap());
    Ok(Diagnostics {
        delta_h: delta_h(model, u_k, u_next, full, reg, eps)?,
        delta_u: du,
    })
}

// ---------------------------------------------------------------------------
// run log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Zero-based `k`; the record describes the move `u^(k) → u^(k+1)`.
    pub iter: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub forward_evals: usize,
    pub ls_steps_cum: usize,
    /// `J_{B_k}(u^(k))`, penalty included.
    pub mb_loss_before: f64,
    /// `J_{B_k}(u^(k+1))`, penalty included.
    pub mb_loss_after: f64,
    pub step_sq_norm: f64,
    pub full_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub sparsity_pct: f64,
    pub delta_h: Option<f64>,
    pub delta_u: Option<f64>,
    pub wall_s: f64,
}

impl IterationRecord {
    /// Equality of everything except wall-clock time, bit for bit.
    pub fn same_outcome(&self, other: &IterationRecord) -> bool {
        let bits = |v: Option<f64>| v.map(f64::to_bits);
        self.iter == other.iter
            && self.epsilon.to_bits() == other.epsilon.to_bits()
            && self.trials == other.trials
            && self.forward_evals == other.forward_evals
            && self.ls_steps_cum == other.ls_steps_cum
            && self.mb_loss_before.to_bits() == other.mb_loss_before.to_bits()
            && self.mb_loss_after.to_bits() == other.mb_loss_after.to_bits()
            && self.step_sq_norm.to_bits() == other.step_sq_norm.to_bits()
            && bits(self.full_loss) == bits(other.full_loss)
            && bits(self.train_acc) == bits(other.train_acc)
            && bits(self.test_acc) == bits(other.test_acc)
            && self.sparsity_pct.to_bits() == other.sparsity_pct.to_bits()
            && bits(self.delta_h) == bits(other.delta_h)
            && bits(self.delta_u) == bits(other.delta_u)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn total_line_search_steps(&self) -> usize {
        self.records.last().map_or(0, |r| r.ls_steps_cum)
    }
}

// ---------------------------------------------------------------------------
// the loop
// ---------------------------------------------------------------------------

/// Chunked `J_B(u)` over a whole dataset.
pub fn dataset_objective(
    model: &Model,
    params: &ParamSet,
    dataset: &Dataset,
    class_weights: &[f64],
    reg: &Regularizer,
) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk, class_weights)?;
        let logits = forward_logits(model, params, batch.inputs())?;
        let (loss, _) = terminal_loss(&logits, batch.targets(), batch.classes(), batch.class_weights())?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64 + reg.penalty(params))
}

/// Step-by-step driver of the training loop.
pub struct Trainer<'a> {
    config: TrainConfig,
    model: &'a Model,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    class_weights: Vec<f64>,
    full_batch: Option<Batch>,
    /// Full-batch forward sweep at `params`, carried over from the search.
    cached: Option<Trajectory>,
    params: ParamSet,
    controller: EpsilonController,
    search: LineSearch,
    rng: ChaCha8Rng,
    history: ParamHistory,
    log: RunLog,
    k: usize,
    ls_steps: usize,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, model: &'a Model, train: &'a Dataset, init: ParamSet) -> Result<Self> {
        config.validate(train.len())?;
        init.check(model)?;
        if train.image_len() != model.input_len() || train.classes() != model.classes() {
            return Err(Error::Shape(format!(
                "dataset ({} inputs, {} classes) does not fit the model ({} inputs, {} classes)",
                train.image_len(),
                train.classes(),
                model.input_len(),
                model.classes()
            )));
        }
        let class_weights = if config.class_weighting {
            class_weights(train)?
        } else {
            vec![1.0; train.classes()]
        };
        let full_batch = if config.batch_size.is_none_or(|m| m == train.len()) || config.diagnostics {
            Some(train.full_batch(&class_weights)?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut history = ParamHistory::new(HISTORY_DEPTH);
        history.push(init.clone());
        let search = LineSearch {
            keep_trajectory: config.batch_size.is_none_or(|m| m == train.len()),
            ..LineSearch::from_config(&config)
        };
        Ok(Trainer {
            controller: EpsilonController::from_config(&config)?,
            search,
            config,
            model,
            train,
            test: None,
            class_weights,
            full_batch,
            cached: None,
            params: init,
            rng,
            history,
            log: RunLog::default(),
            k: 0,
            ls_steps: 0,
            started: Instant::now(),
        })
    }

    pub fn with_test_set(mut self, test: &'a Dataset) -> Self {
        self.test = Some(test);
        self
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn controller(&self) -> &EpsilonController {
        &self.controller
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn history(&self) -> &ParamHistory {
        &self.history
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.config.k_max
    }

    fn is_full_batch(&self) -> bool {
        self.config.batch_size.is_none_or(|m| m == self.train.len())
    }

    /// One outer iteration: sample, sweep, search, accept, propose.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let k = self.k;
        self.step_inner().map_err(|e| e.at_iteration(k))?;
        Ok(self.log.records.last().expect("record pushed"))
    }

    fn step_inner(&mut self) -> Result<()> {
        let k = self.k;
        let reg = self.config.reg;
        let sampled;
        let batch = if self.is_full_batch() {
            self.full_batch.as_ref().expect("full batch cached")
        } else {
            let m = self.config.batch_size.expect("mini-batch size");
            let idx = sample_minibatch(&mut self.rng, self.train.len(), m)?;
            sampled = self.train.batch(&idx, &self.class_weights)?;
            &sampled
        };
        let (objective_u, grad) = match self.cached.take() {
            Some(traj) => objective_and_gradient_from(self.model, &self.params, batch, &reg, &traj)?,
            None => objective_and_gradient(self.model, &self.params, batch, &reg)?,
        };
        let eps_hat = self.controller.proposal();
        let mut outcome = linesearch_step(
            self.model,
            &self.params,
            batch,
            &reg,
            &grad,
            objective_u,
            eps_hat,
            &self.search,
            k,
        )?;

        let mut dh = None;
        if self.config.diagnostics {
            dh = Some(if self.is_full_batch() {
                delta_h_from_gradient(&grad, &self.params, &outcome.params, &reg, outcome.epsilon)?
            } else {
                let full = self.full_batch.as_ref().expect("full batch cached");
                delta_h(self.model, &self.params, &outcome.params, full, &reg, outcome.epsilon)?
            });
        }

        self.ls_steps += outcome.forward_evals;
        self.controller.record(outcome.epsilon, outcome.trials)?;
        self.controller.propose_epsilon(outcome.trials, k);
        self.cached = outcome.trajectory.take();
        self.params = outcome.params;
        self.history.push(self.params.clone());
        self.k += 1;

        let du = if self.config.diagnostics && self.history.is_full() {
            Some(delta_u(&self.history)?)
        } else {
            None
        };
        let evaluate = self.config.eval_every > 0
            && (self.k.is_multiple_of(self.config.eval_every) || self.k == self.config.k_max);
        let mut full_loss = self.is_full_batch().then_some(outcome.objective);
        let (mut train_acc, mut test_acc) = (None, None);
        if evaluate {
            if full_loss.is_none() {
                full_loss = Some(dataset_objective(self.model, &self.params, self.train, &self.class_weights, &reg)?);
            }
            train_acc = Some(accuracy(self.model, &self.params, self.train)?);
            if let Some(test) = self.test {
                test_acc = Some(accuracy(self.model, &self.params, test)?);
            }
        }
        let record = IterationRecord {
            iter: k,
            epsilon: outcome.epsilon,
            trials: outcome.trials,
            forward_evals: outcome.forward_evals,
            ls_steps_cum: self.ls_steps,
            mb_loss_before: objective_u,
            mb_loss_after: outcome.objective,
            step_sq_norm: outcome.step_sq,
            full_loss,
            train_acc,
            test_acc,
            sparsity_pct: sparsity_pct(&self.params, reg.include_bias),
            delta_h: dh,
            delta_u: du,
            wall_s: self.started.elapsed().as_secs_f64(),
        };
        debug!(
            "k={k} eps={:.3e} j={} J={:.6} -> {:.6}",
            record.epsilon, record.trials, record.mb_loss_before, record.mb_loss_after
        );
        if evaluate {
            info!(
                "k={} J={:.6} train_acc={:.2} test_acc={} sparsity={:.2}%",
                self.k,
                full_loss.unwrap_or(f64::NAN),
                train_acc.unwrap_or(f64::NAN),
                test_acc.map_or("-".to_string(), |a| format!("{a:.2}")),
                record.sparsity_pct
            );
        }
        self.log.records.push(record);
        Ok(())
    }

    pub fn into_parts(self) -> (ParamSet, RunLog) {
        (self.params, self.log)
    }
}

/// Run `k_max` iterations from `init`, handing every record to `observer`.
pub fn train_with(
    config: TrainConfig,
    model: &Model,
    train: &Dataset,
    test: Option<&Dataset>,
    init: ParamSet,
    mut observer: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<(ParamSet, RunLog)> {
    let mut trainer = Trainer::new(config, model, train, init)?;
    if let Some(t) = test {
        trainer = trainer.with_test_set(t);
    }
    while !trainer.is_done() {
        let record = trainer.step()?;
        observer(record)?;
    }
    Ok(trainer.into_parts())
}

/// Train from the seeded initialization.
pub fn train(config: TrainConfig, model: &Model, dataset: &Dataset) -> Result<(ParamSet, RunLog)> {
    let init = init_params(model, config.seed);
    train_with(config, model, dataset, None, init, |_| Ok(()))
}
