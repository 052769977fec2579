//! PPO-style bit allocation with a dynamic action space.
//!
//! An episode visits the semantics one at a time, most important first. At
//! each step the actor picks a bit count from `1..=upper`, where `upper`
//! keeps one bit in reserve for every semantic not yet visited; the width of
//! the actor's output is fixed at `max_bits` and the rest is masked. The
//! step reward scores the partial allocation, with unvisited semantics
//! provisionally given one bit, through a caller-supplied [`Episode`].

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{rank_descending, BitAllocation};
use crate::nn::{argmax, masked_softmax, Activation, Mlp, Optimizer};
use crate::rng::{derive, rng_from, stage};
use crate::semcodec::FeatureMaps;
use crate::{Error, Result};

pub const STATE_DIM: usize = 9;

/// Reward for an action the unmasked policy could not afford.
pub const INFEASIBLE_PENALTY: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppoHyper {
    /// Discount.
    pub eta: f64,
    /// Distortion weight in the reward.
    pub beta: f64,
    pub epsilon_clip: f64,
    /// Value loss weight.
    pub c1: f64,
    /// Entropy bonus weight.
    pub c2: f64,
    pub lr: f64,
    /// Optimizer passes over each collected batch.
    pub epochs: usize,
    /// Reward offset keeping rewards positive.
    pub l0: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Actor output width; `None` means `min(16, B - C + 1)`.
    pub max_bits: Option<u32>,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    /// Dropout rate on the actor's hidden layers during updates.
    pub dropout: f64,
    /// When false, the actor chooses over all `max_bits` actions and
    /// unaffordable choices are penalized and clamped.
    pub masked: bool,
    /// Stop once the mean reward of the last `window` iterations moves by
    /// less than `tolerance` (relative) against the window before it.
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
    /// Rescale each batch's advantages to zero mean and unit variance.
    pub normalize_advantages: bool,
}

impl Default for DppoHyper {
    fn default() -> Self {
        Self {
            eta: 0.99,
            beta: 0.5,
            epsilon_clip: 0.25,
            c1: 0.5,
            c2: 0.01,
            lr: 1e-3,
            epochs: 20,
            l0: 10.0,
            seed: 0,
            hidden: 64,
            max_bits: None,
            episodes_per_iteration: 8,
            iterations: 500,
            dropout: 0.0,
            masked: true,
            convergence_window: 50,
            convergence_tolerance: 0.0,
            normalize_advantages: false,
        }
    }
}

impl DppoHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("beta", self.beta),
            ("epsilon_clip", self.epsilon_clip),
            ("c1", self.c1),
            ("c2", self.c2),
            ("lr", self.lr),
            ("l0", self.l0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epsilon_clip >= 1.0 {
            return Err(Error::Config("epsilon_clip must be below 1".into()));
        }
        if self.epochs == 0 || self.episodes_per_iteration == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "epochs, episodes_per_iteration and hidden must be nonzero".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn max_bits_for(&self, budget: u32, count: usize) -> u32 {
        self.max_bits
            .unwrap_or_else(|| 16.min(budget.saturating_sub(count as u32) + 1))
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlState(pub [f64; STATE_DIM]);

impl RlState {
    pub fn budget_frac(&self) -> f64 {
        self.0[7]
    }

    pub fn progress(&self) -> f64 {
        self.0[8]
    }
}

/// State before allocating semantic `order[step]`.
///
/// Layout: mean, std, min and max of the semantic's map; its importance,
/// and the mean and max importance of the semantics still to come, all
/// scaled by `C` so a uniform weight reads as 1; the fraction of the budget
/// left; and `(step + 1) / C`.
pub fn encode_state(
    a: &FeatureMaps,
    omega: &[f64],
    order: &[usize],
    step: usize,
    allocated: u64,
    budget: u32,
) -> RlState {
    let c = order.len() as f64;
    let map = a.map(order[step]);
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest = &order[step + 1..];
    let (rest_mean, rest_max) = if rest.is_empty() {
        (0.0, 0.0)
    } else {
        let ws = rest.iter().map(|&j| omega[j]);
        (
            ws.clone().sum::<f64>() / rest.len() as f64,
            ws.fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let left = u64::from(budget).saturating_sub(allocated) as f64;
    RlState([
        mean,
        var.sqrt(),
        min,
        max,
        c * omega[order[step]],
        c * rest_mean,
        c * rest_max,
        left / f64::from(budget),
        (step + 1) as f64 / c,
    ])
}

/// Legal actions at one step: `1..=upper`, out of `max_bits` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub max_bits: u32,
    pub valid_upper: u32,
}

impl ActionSpace {
    /// `remaining` bits left and `later` semantics still needing one each.
    pub fn at_step(max_bits: u32, remaining: u64, later: usize) -> Self {
        let spare = remaining.saturating_sub(later as u64);
        Self {
            max_bits,
            valid_upper: spare.min(u64::from(max_bits)) as u32,
        }
    }

    pub fn upper(&self) -> u32 {
        self.valid_upper.min(self.max_bits)
    }

    pub fn mask(&self) -> Vec<bool> {
        (1..=self.max_bits).map(|a| a <= self.upper()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyParams {
    pub fn new(max_bits: u32, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        Self {
            actor: Mlp::new(
                &[STATE_DIM, hidden, hidden, max_bits as usize],
                Activation::Tanh,
                &mut rng,
            ),
            critic: Mlp::new(&[STATE_DIM, hidden, hidden, 1], Activation::Tanh, &mut rng),
        }
    }

    pub fn zeros(max_bits: u32, hidden: usize) -> Self {
        Self {
            actor: Mlp::zeros(&[STATE_DIM, hidden, hidden, max_bits as usize], Activation::Tanh),
            critic: Mlp::zeros(&[STATE_DIM, hidden, hidden, 1], Activation::Tanh),
        }
    }

    pub fn max_bits(&self) -> u32 {
        self.actor.n_outputs() as u32
    }

    pub fn n_params(&self) -> usize {
        self.actor.n_params() + self.critic.n_params()
    }

    /// Actor parameters followed by critic parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.actor.params().to_vec();
        v.extend_from_slice(self.critic.params());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let (a, c) = flat.split_at(self.actor.n_params());
        self.actor.set_params(a)?;
        self.critic.set_params(c)
    }
}

fn space_mask(space: &ActionSpace, masked: bool) -> Vec<bool> {
    if masked {
        space.mask()
    } else {
        vec![true; space.max_bits as usize]
    }
}

/// Action probabilities; index `k` is the probability of choosing `k + 1` bits.
pub fn actor_forward(state: &RlState, params: &PolicyParams, space: ActionSpace) -> Result<Vec<f64>> {
    if space.upper() < 1 {
        return Err(Error::Infeasible("no affordable action".into()));
    }
    if space.max_bits != params.max_bits() {
        return Err(Error::ShapeMismatch(format!(
            "action space of {} for an actor with {} outputs",
            space.max_bits,
            params.max_bits()
        )));
    }
    Ok(masked_softmax(&params.actor.forward(&state.0), &space.mask()))
}

/// Critic network output: the estimated return in excess of
/// [`value_offset`].
pub fn critic_forward(state: &RlState, params: &PolicyParams) -> f64 {
    params.critic.forward(&state.0)[0]
}

/// Discounted return of `remaining` rewards all equal to `L0`. Every reward
/// carries the constant `L0`, so this part of the return is known from the
/// step index alone; the critic learns only the remainder.
pub fn value_offset(hyper: &DppoHyper, remaining: usize) -> f64 {
    if hyper.eta == 1.0 {
        hyper.l0 * remaining as f64
    } else {
        hyper.l0 * (1.0 - hyper.eta.powi(remaining as i32)) / (1.0 - hyper.eta)
    }
}

/// Log-probabilities of a masked softmax; masked entries are `-inf`.
fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&z, _)| (z - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Task performance and distortion of a complete allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub task_perf: f64,
    pub distortion: f64,
}

/// One allocation problem: features, their importance, a budget, and a way to
/// score an allocation under fixed randomness.
pub trait Episode {
    fn features(&self) -> &FeatureMaps;
    fn omega(&self) -> &[f64];
    fn budget(&self) -> u32;
    fn outcome(&self, b: &[u32]) -> Result<Outcome>;
}

/// Order in which an episode visits the semantics.
pub fn step_order(omega: &[f64]) -> Vec<usize> {
    rank_descending(omega)
}

/// `L0 + L - beta * d` for a partial allocation, unvisited entries set to 1.
pub fn step_reward<E: Episode + ?Sized>(partial: &[Option<u32>], episode: &E, hyper: &DppoHyper) -> Result<f64> {
    let b: Vec<u32> = partial.iter().map(|x| x.unwrap_or(1)).collect();
    let out = episode.outcome(&b)?;
    Ok(hyper.l0 + out.task_perf - hyper.beta * out.distortion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: RlState,
    pub space: ActionSpace,
    /// Sampled action, in bits.
    pub action: u32,
    /// Bits actually assigned (differs from `action` only after a penalty).
    pub applied: u32,
    pub reward: f64,
    pub value: f64,
    pub logp_old: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub allocation: BitAllocation,
}

impl Trajectory {
    pub fn mean_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len() as f64
    }
}

/// `R_t = sum_{k >= t} eta^(k - t) r_k`.
pub fn discounted_returns(rewards: &[f64], eta: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + eta * acc;
        *o = acc;
    }
    Ok(out)
}

pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: returns.len(),
            actual: values.len(),
        });
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// `min(p m, clip(p, 1 - eps, 1 + eps) m)`.
pub fn clipped_surrogate(p: f64, m: f64, epsilon: f64) -> f64 {
    (p * m).min(p.clamp(1.0 - epsilon, 1.0 + epsilon) * m)
}

/// Mean clipped surrogate over paired ratios and advantages.
pub fn clipped_surrogate_mean(p: &[f64], m: &[f64], epsilon: f64) -> f64 {
    p.iter()
        .zip(m)
        .map(|(&p, &m)| clipped_surrogate(p, m, epsilon))
        .sum::<f64>()
        / p.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Training sample: a step with its return and advantage.
#[derive(Debug, Clone, Copy)]
struct Sample<'a> {
    step: &'a Step,
    ret: f64,
    adv: f64,
    offset: f64,
}

fn samples<'a>(batch: &'a [Trajectory], hyper: &DppoHyper) -> Vec<Sample<'a>> {
    batch
        .iter()
        .flat_map(|t| {
            let c = t.steps.len();
            t.steps
                .iter()
                .zip(t.returns.iter().zip(&t.advantages))
                .enumerate()
                .map(move |(i, (step, (&ret, &adv)))| Sample {
                    step,
                    ret,
                    adv,
                    offset: value_offset(hyper, c - i),
                })
        })
        .collect()
}

fn loss_and_grad<R: Rng>(
    batch: &[Trajectory],
    params: &PolicyParams,
    hyper: &DppoHyper,
    dropout_rng: Option<&mut R>,
) -> Result<(LossParts, Vec<f64>)> {
    let samples = samples(batch, hyper);
    if samples.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    let n = samples.len() as f64;
    let states = DMatrix::from_fn(STATE_DIM, samples.len(), |r, c| samples[c].step.state.0[r]);
    let actor = match dropout_rng {
        Some(rng) if hyper.dropout > 0.0 => params.actor.forward_batch_dropout(&states, hyper.dropout, rng),
        _ => params.actor.forward_batch(&states),
    };
    let critic = params.critic.forward_batch(&states);
    let mut gz = DMatrix::zeros(actor.output.nrows(), samples.len());
    let mut gv = DMatrix::zeros(1, samples.len());
    let mut parts = LossParts::default();
    for (j, s) in samples.iter().enumerate() {
        let logits: Vec<f64> = actor.output.column(j).iter().copied().collect();
        let mask = space_mask(&s.step.space, hyper.masked);
        let logp = masked_log_softmax(&logits, &mask);
        let pi: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = (s.step.action - 1) as usize;
        let ratio = prob_ratio(logp[a], s.step.logp_old);
        let clipped = ratio.clamp(1.0 - hyper.epsilon_clip, 1.0 + hyper.epsilon_clip);
        let surrogate = clipped_surrogate(ratio, s.adv, hyper.epsilon_clip);
        let entropy: f64 = pi
            .iter()
            .zip(&logp)
            .filter(|(&p, _)| p > 0.0)
            .map(|(p, l)| -p * l)
            .sum();
        let e = critic.output[(0, j)] + s.offset;
        parts.surrogate += surrogate / n;
        parts.value += (e - s.ret) * (e - s.ret) / n;
        parts.entropy += entropy / n;

        // d(-surrogate)/dz, active only on the unclipped branch.
        let surrogate_active = ratio * s.adv <= clipped * s.adv;
        for k in 0..pi.len() {
            if !mask[k] {
                continue;
            }
            let onehot = if k == a { 1.0 } else { 0.0 };
            let mut g = 0.0;
            if surrogate_active {
                g -= s.adv * ratio * (onehot - pi[k]) / n;
            }
            if pi[k] > 0.0 {
                g += hyper.c2 * pi[k] * (logp[k] + entropy) / n;
            }
            gz[(k, j)] = g;
        }
        gv[(0, j)] = 2.0 * hyper.c1 * (e - s.ret) / n;
    }
    parts.total = -parts.surrogate + hyper.c1 * parts.value - hyper.c2 * parts.entropy;
    let mut ga = vec![0.0; params.actor.n_params()];
    let mut gc = vec![0.0; params.critic.n_params()];
    params.actor.backward_batch(&actor, &gz, &mut ga);
    params.critic.backward_batch(&critic, &gv, &mut gc);
    ga.extend(gc);
    Ok((parts, ga))
}

/// Loss of a batch of trajectories and its gradient with respect to
/// [`PolicyParams::flat`].
pub fn total_loss(batch: &[Trajectory], params: &PolicyParams, hyper: &DppoHyper) -> Result<(LossParts, Vec<f64>)> {
    loss_and_grad::<rand_chacha::ChaCha8Rng>(batch, params, hyper, None)
}

/// One optimizer step on the flat parameters.
pub fn update(params: &mut PolicyParams, grad: &[f64], optimizer: &mut Optimizer) -> Result<()> {
    let mut flat = params.flat();
    optimizer.step(&mut flat, grad)?;
    params.set_flat(&flat)
}

/// How actions are picked during a rollout.
#[derive(Debug)]
pub enum Selection<'a, R: Rng> {
    Sample(&'a mut R),
    Greedy,
    /// Replay a fixed allocation, indexed by semantic.
    Fixed(&'a [u32]),
}

/// Runs one episode, scoring every step.
pub fn rollout<E: Episode + ?Sized, R: Rng>(
    episode: &E,
    params: &PolicyParams,
    hyper: &DppoHyper,
    mut selection: Selection<'_, R>,
) -> Result<Trajectory> {
    let omega = episode.omega();
    let c = omega.len();
    let budget = episode.budget();
    if (budget as usize) < c {
        return Err(Error::InsufficientBudget {
            budget: budget as usize,
            count: c,
        });
    }
    let order = step_order(omega);
    let max_bits = params.max_bits();
    let mut partial: Vec<Option<u32>> = vec![None; c];
    let mut used = 0u64;
    let mut steps = Vec::with_capacity(c);
    for (t, &sem) in order.iter().enumerate() {
        let state = encode_state(episode.features(), omega, &order, t, used, budget);
        let space = ActionSpace::at_step(max_bits, u64::from(budget) - used, c - t - 1);
        let mask = space_mask(&space, hyper.masked);
        let logp = masked_log_softmax(&params.actor.forward(&state.0), &mask);
        let action = match &mut selection {
            Selection::Sample(rng) => {
                let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let dist = WeightedIndex::new(&probs)
                    .map_err(|e| Error::Divergence(format!("action distribution: {e}")))?;
                dist.sample(*rng) as u32 + 1
            }
            Selection::Greedy => argmax(&logp) as u32 + 1,
            Selection::Fixed(b) => b[sem],
        };
        let upper = space.upper();
        let (applied, reward) = if action > upper || action == 0 {
            if hyper.masked && !matches!(selection, Selection::Fixed(_)) {
                return Err(Error::Infeasible(format!("masked action {action} above {upper}")));
            }
            partial[sem] = Some(upper.max(1));
            (upper.max(1), INFEASIBLE_PENALTY)
        } else {
            partial[sem] = Some(action);
            (action, step_reward(&partial, episode, hyper)?)
        };
        used += u64::from(applied);
        let logp_old = if (action as usize) <= logp.len() && action >= 1 {
            logp[action as usize - 1]
        } else {
            f64::NEG_INFINITY
        };
        steps.push(Step {
            state,
            space,
            action,
            applied,
            reward,
            value: critic_forward(&state, params) + value_offset(hyper, c - t),
            logp_old,
        });
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let returns = discounted_returns(&rewards, hyper.eta)?;
    let values: Vec<f64> = steps.iter().map(|s| s.value).collect();
    let advantages = advantages(&returns, &values)?;
    let allocation = BitAllocation::new(partial.into_iter().map(|x| x.unwrap_or(1)).collect(), budget)?;
    Ok(Trajectory {
        steps,
        returns,
        advantages,
        allocation,
    })
}

/// Greedy allocation from a trained policy.
pub fn infer_allocation(
    params: &PolicyParams,
    a: &FeatureMaps,
    omega: &[f64],
    budget: u32,
) -> Result<BitAllocation> {
    let c = omega.len();
    if (budget as usize) < c {
        return Err(Error::InsufficientBudget {
            budget: budget as usize,
            count: c,
        });
    }
    let order = step_order(omega);
    let mut b = vec![1; c];
    let mut used = 0u64;
    for (t, &sem) in order.iter().enumerate() {
        let state = encode_state(a, omega, &order, t, used, budget);
        let space = ActionSpace::at_step(params.max_bits(), u64::from(budget) - used, c - t - 1);
        let logits = params.actor.forward(&state.0);
        let probs = masked_softmax(&logits, &space.mask());
        b[sem] = argmax(&probs) as u32 + 1;
        used += u64::from(b[sem]);
    }
    BitAllocation::new(b, budget)
}

/// Mean per-step reward of a fixed allocation walked through the same MDP.
pub fn allocation_reward<E: Episode + ?Sized>(b: &BitAllocation, episode: &E, hyper: &DppoHyper) -> Result<f64> {
    let order = step_order(episode.omega());
    let mut partial = vec![None; b.len()];
    let mut total = 0.0;
    for &sem in &order {
        partial[sem] = Some(b.b[sem]);
        total += step_reward(&partial, episode, hyper)?;
    }
    Ok(total / order.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub iterations: Vec<IterationStats>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_reward,loss,entropy\n");
        for s in &self.iterations {
            let _ = writeln!(out, "{},{:.9},{:.9},{:.9}", s.iteration, s.mean_reward, s.loss, s.entropy);
        }
        out
    }

    /// Mean reward over the last `n` iterations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.iterations[self.iterations.len().saturating_sub(n)..];
        tail.iter().map(|s| s.mean_reward).sum::<f64>() / tail.len().max(1) as f64
    }

    fn converged(&self, window: usize, tolerance: f64) -> bool {
        let n = self.iterations.len();
        if window == 0 || tolerance <= 0.0 || n < 2 * window {
            return false;
        }
        let mean = |s: &[IterationStats]| s.iter().map(|x| x.mean_reward).sum::<f64>() / s.len() as f64;
        let last = mean(&self.iterations[n - window..]);
        let prev = mean(&self.iterations[n - 2 * window..n - window]);
        ((last - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < tolerance
    }
}

/// Shifts and scales the advantages of a batch to zero mean and unit
/// variance. A batch with no spread is only centered.
pub fn normalize_advantages(batch: &mut [Trajectory]) {
    let all: Vec<f64> = batch.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for t in batch.iter_mut() {
        for a in &mut t.advantages {
            *a = (*a - mean) * scale;
        }
    }
}

/// Trains a policy on episodes drawn from `make_episode(iteration, index)`.
/// Episodes within an iteration are collected in parallel with the frozen
/// policy; updates run serially.
pub fn train<E, F>(initial: PolicyParams, hyper: &DppoHyper, make_episode: F) -> Result<(PolicyParams, TrainingCurve)>
where
    E: Episode + Send,
    F: Fn(usize, usize) -> Result<E> + Sync,
{
    hyper.validate()?;
    let mut params = initial;
    let mut optimizer = Optimizer::adam(hyper.lr, params.n_params());
    let mut curve = TrainingCurve::default();
    let mut dropout_rng = rng_from(derive(hyper.seed, &[stage::DROPOUT]));
    for iteration in 0..hyper.iterations {
        let old = params.clone();
        let batch: Vec<Trajectory> = (0..hyper.episodes_per_iteration)
            .into_par_iter()
            .map(|k| {
                let episode = make_episode(iteration, k)?;
                let mut rng = rng_from(derive(hyper.seed, &[stage::POLICY, iteration as u64, k as u64]));
                rollout(&episode, &old, hyper, Selection::Sample(&mut rng))
            })
            .collect::<Result<_>>()?;
        let mut batch = batch;
        if hyper.normalize_advantages {
            normalize_advantages(&mut batch);
        }
        let mut parts = LossParts::default();
        for _ in 0..hyper.epochs {
            let (p, grad) = loss_and_grad(&batch, &params, hyper, Some(&mut dropout_rng))?;
            if !p.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "iteration {iteration}: loss {} (surrogate {}, value {}, entropy {})",
                    p.total, p.surrogate, p.value, p.entropy
                )));
            }
            parts = p;
            update(&mut params, &grad, &mut optimizer)?;
        }
        let mean_reward = batch.iter().map(Trajectory::mean_reward).sum::<f64>() / batch.len() as f64;
        curve.iterations.push(IterationStats {
            iteration,
            mean_reward,
            loss: parts.total,
            entropy: parts.entropy,
        });
        if curve.converged(hyper.convergence_window, hyper.convergence_tolerance) {
            break;
        }
    }
    Ok((params, curve))
}
