//! Optional supervised warm start: regress the actor's mean bids onto the
//! classic scorer's bids along classic-bidder trajectories.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ppo::AdamState;
use crate::bidding::nn::{sigmoid, softplus};
use crate::bidding::{actor_sequence_backward, actor_sequence_forward, build_observation, classic_bid, Bidder, Observation, PolicyParameters};
use crate::consensus::{run_allocation, AgentState, RunConfig};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::world::WorldInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitationConfig {
    /// Passes over the demonstrations; 0 disables the warm start.
    pub epochs: usize,
    /// Dataset worlds the demonstrations are drawn from (the first ones).
    pub worlds: usize,
    /// Bid calls kept per agent and world.
    pub max_calls: usize,
    pub learning_rate: f64,
    /// Agent streams per gradient step.
    pub batch_streams: usize,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self { epochs: 0, worlds: 200, max_calls: 20, learning_rate: 1e-3, batch_streams: 32 }
    }
}

impl ImitationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && (self.worlds == 0 || self.max_calls == 0 || self.batch_streams == 0) {
            return Err(Error::invalid("imitation worlds, max_calls and batch_streams must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("imitation learning rate must be positive"));
        }
        Ok(())
    }
}

/// Observations of one agent with the classic bids as targets.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub observations: Vec<Observation>,
    pub targets: Vec<Vec<f64>>,
}

/// Classic scorer called once per round, recording what it sees.
struct Recorder {
    max_calls: usize,
    demos: Vec<Demonstration>,
}

impl Bidder for Recorder {
    fn name(&self) -> &str {
        "classic-demo"
    }

    fn reset(&mut self, world: &WorldInstance) {
        self.demos = (0..world.n_agents())
            .map(|_| Demonstration { observations: Vec::new(), targets: Vec::new() })
            .collect();
    }

    fn bid(&mut self, state: &AgentState, world: &WorldInstance, _iteration: usize) -> Vec<f64> {
        let bids = classic_bid(state, world);
        let d = &mut self.demos[state.agent_id];
        if d.observations.len() < self.max_calls {
            d.observations.push(build_observation(state, world));
            d.targets.push(bids.clone());
        }
        bids
    }
}

/// Demonstrations of every agent on every world, in world then agent
/// order.
pub fn demonstrations(worlds: &[WorldInstance], max_calls: usize, max_iterations: usize) -> Result<Vec<Demonstration>> {
    let config = RunConfig { max_iterations, record_trajectory: false, ..RunConfig::default() };
    let per_world = worlds
        .par_iter()
        .map(|w| {
            let mut rec = Recorder { max_calls, demos: Vec::new() };
            run_allocation(w, &mut rec, &config)?;
            Ok(rec.demos)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_world.into_iter().flatten().filter(|d| !d.observations.is_empty()).collect())
}

/// Mean squared bid error over `demos` and its gradient.
pub fn imitation_loss(actor: &PolicyParameters, demos: &[&Demonstration]) -> Result<(f64, Vec<f64>)> {
    let count: usize = demos.iter().flat_map(|d| &d.targets).map(Vec::len).sum();
    let scale = 1.0 / count.max(1) as f64;
    let mut grad = vec![0.0; actor.len()];
    let mut loss = 0.0;
    for d in demos {
        let (logits, trace) = actor_sequence_forward(actor, &d.observations)?;
        let d_logits: Vec<Vec<f64>> = logits
            .iter()
            .zip(&d.targets)
            .map(|(l, t)| {
                l.iter()
                    .zip(t)
                    .map(|(&x, &y)| {
                        let e = softplus(x) - y;
                        loss += e * e * scale;
                        2.0 * e * scale * sigmoid(x)
                    })
                    .collect()
            })
            .collect();
        actor_sequence_backward(actor, &trace, &d_logits, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Adam on the imitation loss. Returns the mean loss of every pass.
pub fn imitation_pretrain(
    actor: &mut PolicyParameters,
    demos: &[Demonstration],
    config: &ImitationConfig,
    seed: u64,
    f32_params: bool,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut adam = AdamState::new(actor.len());
    let mut rng = stream_rng(seed, Stream::Minibatch, u64::MAX);
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let ls = actor.spec("log_std").map(|s| s.offset);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_streams) {
            let batch: Vec<&Demonstration> = chunk.iter().map(|&i| &demos[i]).collect();
            let (loss, mut grad) = imitation_loss(actor, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(format!("imitation loss {loss}")));
            }
            if let Some(i) = ls {
                grad[i] = 0.0;
            }
            super::ppo::adam_step(&mut actor.data, &grad, config.learning_rate, &mut adam);
            if f32_params {
                actor.quantize();
            }
            total += loss;
            steps += 1;
        }
        history.push(total / steps.max(1) as f64);
    }
    Ok(history)
}
