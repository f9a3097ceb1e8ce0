//! Clipped-surrogate policy optimization for the shared actor and the
//! centralized critic.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::critic::{critic_backward, critic_forward, CriticDims};
use super::rollout::RolloutBatch;
use crate::bidding::nn::{sigmoid, softplus};
use crate::bidding::{actor_sequence_backward, actor_sequence_forward, gaussian_log_prob, Observation, PolicyParameters};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Bounds applied to the exploration log standard deviation after every
/// step.
pub const LOG_STD_RANGE: (f64, f64) = (-20.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Passes over each rollout batch.
    pub update_epochs: usize,
    /// Transitions per minibatch; whole agent streams are kept together.
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub worlds_per_epoch: usize,
    /// Global gradient-norm limit per network.
    pub max_grad_norm: Option<f64>,
    pub optimizer: OptimizerKind,
    pub init_log_std: f64,
    pub normalize_advantages: bool,
    /// Round parameters to `f32` after every step so checkpoints hold
    /// exactly the trained values.
    pub f32_params: bool,
    /// Consensus round limit during rollouts.
    pub max_iterations: usize,
    pub critic: CriticDims,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            learning_rate: 3e-4,
            critic_learning_rate: 1e-3,
            update_epochs: 4,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            worlds_per_epoch: 32,
            max_grad_norm: Some(0.5),
            optimizer: OptimizerKind::Adam,
            init_log_std: -1.5,
            normalize_advantages: true,
            f32_params: true,
            max_iterations: 50,
            critic: CriticDims::default(),
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.update_epochs == 0 || self.minibatch_size == 0 || self.worlds_per_epoch == 0 || self.max_iterations == 0 {
            return bad("update_epochs, minibatch_size, worlds_per_epoch and max_iterations must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be nonnegative");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite");
        }
        self.critic.validate()
    }
}

/// First and second moment estimates of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// Optimizer state of both networks, persisted with training checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl OptimizerState {
    pub fn new(actor: &PolicyParameters, critic: &PolicyParameters) -> Self {
        Self { actor: AdamState::new(actor.len()), critic: AdamState::new(critic.len()) }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam step along `grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], lr: f64, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Descends along `grad` in place.
fn step(params: &mut [f64], grad: &[f64], lr: f64, kind: OptimizerKind, state: &mut AdamState) {
    match kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => adam_step(params, grad, lr, state),
    }
}

fn clip_norm(grad: &mut [f64], max: Option<f64>) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(max) = max {
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Entropy of the factorized Gaussian over `n` bids.
pub fn gaussian_entropy(n: usize, log_std: f64) -> f64 {
    n as f64 * (log_std + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate loss, value loss and entropy of one minibatch with
/// their gradients. Losses are means over the minibatch transitions.
struct MinibatchResult {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    clipped: usize,
    ratio_sum: f64,
    n: usize,
    actor_grad: Vec<f64>,
    critic_grad: Vec<f64>,
}

fn minibatch_gradients(
    actor: &PolicyParameters,
    critic: &PolicyParameters,
    batch: &RolloutBatch,
    streams: &[usize],
    config: &PPOConfig,
) -> Result<MinibatchResult> {
    let n: usize = streams.iter().map(|&s| batch.streams[s].transitions.len()).sum();
    let inv_n = 1.0 / n.max(1) as f64;
    let log_std = actor.log_std().ok_or_else(|| Error::invalid("actor has no log_std"))?;
    let var = (2.0 * log_std).exp();
    let ls_index = actor.offset("log_std");
    let mut r = MinibatchResult {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clipped: 0,
        ratio_sum: 0.0,
        n,
        actor_grad: vec![0.0; actor.len()],
        critic_grad: vec![0.0; critic.len()],
    };
    for &s in streams {
        let stream = &batch.streams[s];
        let obs: Vec<Observation> = stream.transitions.iter().map(|t| t.observation.clone()).collect();
        let (logits, trace) = actor_sequence_forward(actor, &obs)?;
        let mut d_logits = Vec::with_capacity(logits.len());
        let mut d_log_std = 0.0;
        for (t, logit) in stream.transitions.iter().zip(&logits) {
            let mean: Vec<f64> = logit.iter().map(|&x| softplus(x)).collect();
            let logp = gaussian_log_prob(&t.action, &mean, log_std);
            let ratio = (logp - t.log_prob).exp();
            let a = t.advantage;
            r.policy_loss -= clipped_surrogate(ratio, a, config.clip) * inv_n;
            r.ratio_sum += ratio;
            if (ratio - 1.0).abs() > config.clip {
                r.clipped += 1;
            }
            let h = gaussian_entropy(t.action.len(), log_std);
            r.entropy += h * inv_n;
            r.policy_loss -= config.entropy_coef * h * inv_n;
            d_log_std -= config.entropy_coef * t.action.len() as f64 * inv_n;

            let unclipped = ratio * a <= ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * a;
            let d_logp = if unclipped { -a * ratio * inv_n } else { 0.0 };
            let mut dl = vec![0.0; logit.len()];
            if d_logp != 0.0 {
                for j in 0..logit.len() {
                    let z = t.action[j] - mean[j];
                    dl[j] = d_logp * z / var * sigmoid(logit[j]);
                    d_log_std += d_logp * (z * z / var - 1.0);
                }
            }
            d_logits.push(dl);

            let (v, cache) = critic_forward(critic, &t.critic_input)?;
            let err = v - t.ret;
            r.value_loss += 0.5 * err * err * inv_n;
            critic_backward(critic, &t.critic_input, &cache, config.value_coef * err * inv_n, &mut r.critic_grad)?;
        }
        actor_sequence_backward(actor, &trace, &d_logits, &mut r.actor_grad)?;
        r.actor_grad[ls_index] += d_log_std;
    }
    Ok(r)
}

/// Several passes of minibatch updates over `batch`. Agent streams are
/// shuffled with `rng` and grouped into minibatches of at least
/// `minibatch_size` transitions. Aborts with [`Error::NonFiniteLoss`]
/// before applying a step whose loss or gradient is not finite.
pub fn ppo_update(
    actor: &mut PolicyParameters,
    critic: &mut PolicyParameters,
    batch: &RolloutBatch,
    config: &PPOConfig,
    opt: &mut OptimizerState,
    rng: &mut StreamRng,
) -> Result<UpdateStats> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("cannot update on an empty batch"));
    }
    if opt.actor.m.len() != actor.len() || opt.critic.m.len() != critic.len() {
        return Err(Error::invalid("optimizer state does not match the networks"));
    }
    let mut stats = UpdateStats::default();
    let mut seen = 0usize;
    let mut order: Vec<usize> = (0..batch.streams.len()).collect();
    for _ in 0..config.update_epochs {
        order.shuffle(rng);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new()];
        let mut size = 0;
        for &s in &order {
            if size >= config.minibatch_size {
                groups.push(Vec::new());
                size = 0;
            }
            groups.last_mut().unwrap().push(s);
            size += batch.streams[s].transitions.len();
        }
        for group in groups.iter().filter(|g| !g.is_empty()) {
            let mut mb = minibatch_gradients(actor, critic, batch, group, config)?;
            let finite = mb.policy_loss.is_finite()
                && mb.value_loss.is_finite()
                && mb.actor_grad.iter().chain(&mb.critic_grad).all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFiniteLoss(format!(
                    "policy loss {}, value loss {}",
                    mb.policy_loss, mb.value_loss
                )));
            }
            let an = clip_norm(&mut mb.actor_grad, config.max_grad_norm);
            let cn = clip_norm(&mut mb.critic_grad, config.max_grad_norm);
            step(&mut actor.data, &mb.actor_grad, config.learning_rate, config.optimizer, &mut opt.actor);
            step(&mut critic.data, &mb.critic_grad, config.critic_learning_rate, config.optimizer, &mut opt.critic);
            let ls = actor.offset("log_std");
            actor.data[ls] = actor.data[ls].clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
            if config.f32_params {
                actor.quantize();
                critic.quantize();
            }

            let w = mb.n as f64;
            stats.policy_loss += mb.policy_loss * w;
            stats.value_loss += mb.value_loss * w;
            stats.entropy += mb.entropy * w;
            stats.clip_fraction += mb.clipped as f64;
            stats.mean_ratio += mb.ratio_sum;
            stats.actor_grad_norm += an;
            stats.critic_grad_norm += cn;
            stats.minibatches += 1;
            seen += mb.n;
        }
    }
    let seen = seen.max(1) as f64;
    stats.policy_loss /= seen;
    stats.value_loss /= seen;
    stats.entropy /= seen;
    stats.clip_fraction /= seen;
    stats.mean_ratio /= seen;
    let m = stats.minibatches.max(1) as f64;
    stats.actor_grad_norm /= m;
    stats.critic_grad_norm /= m;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_takes_clipped_branch() {
        let eps = 0.2;
        let r = 1.0 + 2.0 * eps;
        assert_eq!(clipped_surrogate(r, 2.0, eps), (1.0 + eps) * 2.0);
        // Negative advantage keeps the unclipped, more pessimistic value.
        assert_eq!(clipped_surrogate(r, -2.0, eps), r * -2.0);
        let r = 1.0 - 2.0 * eps;
        assert_eq!(clipped_surrogate(r, -1.0, eps), -(1.0 - eps));
        assert_eq!(clipped_surrogate(1.0, 3.0, eps), 3.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -1.0, 0.0];
        let mut s = AdamState::new(3);
        step(&mut p, &[2.0, -0.5, 0.0], 0.1, OptimizerKind::Adam, &mut s);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn norm_clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_norm(&mut g, Some(1.0)), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut g = vec![3.0, 4.0];
        clip_norm(&mut g, None);
        assert_eq!(g, vec![3.0, 4.0]);
    }

    #[test]
    fn config_validation() {
        assert!(PPOConfig::default().validate().is_ok());
        assert!(PPOConfig { clip: 1.5, ..PPOConfig::default() }.validate().is_err());
        assert!(PPOConfig { gamma: 0.0, ..PPOConfig::default() }.validate().is_err());
        assert!(PPOConfig { max_grad_norm: Some(0.0), ..PPOConfig::default() }.validate().is_err());
    }
}
