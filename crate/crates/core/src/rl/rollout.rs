//! Stochastic rollouts through the consensus engine and per-agent
//! advantage estimation.

use rayon::prelude::*;

use super::critic::{build_critic_input, critic_forward, CriticInput};
use super::ppo::PPOConfig;
use super::reward::{add_terminal_bonus, add_timeout_penalty, compute_reward_for, Reward, RewardWeights, Snapshot};
use crate::bidding::{policy_bid, Bidder, ClassicBidder, Observation, PolicyParameters, RecurrentContext};
use crate::consensus::{run_allocation, team_distance, AgentState, RunConfig};
use crate::error::{Error, Result};
use crate::oracle::{OptimalAssignment, OracleCache};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::world::WorldInstance;

/// One bid call of one agent.
#[derive(Debug, Clone)]
pub struct Transition {
    pub agent: usize,
    /// Consensus round (1-based) in which the bids were placed.
    pub iteration: usize,
    pub observation: Observation,
    /// Sampled bid vector.
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Team reward accrued from this call up to the agent's next call.
    pub reward: f64,
    pub value: f64,
    /// Set on the final transition of a finished episode: converged, or
    /// timed out while timeouts are penalized.
    pub done: bool,
    pub critic_input: CriticInput,
    pub advantage: f64,
    pub ret: f64,
}

/// Ordered transitions of one agent in one world. Recurrent actors are
/// replayed over the whole stream.
#[derive(Debug, Clone)]
pub struct AgentStream {
    pub world: usize,
    pub agent: usize,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct WorldRollout {
    pub world_id: String,
    pub timed_out: bool,
    pub iterations: usize,
    /// Team reward of every executed round.
    pub round_rewards: Vec<Reward>,
    pub final_distance: f64,
    pub oracle_distance: f64,
    pub covered: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub streams: Vec<AgentStream>,
    pub worlds: Vec<WorldRollout>,
}

impl RolloutBatch {
    pub fn n_transitions(&self) -> usize {
        self.streams.iter().map(|s| s.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_transitions() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.streams.iter().flat_map(|s| &s.transitions)
    }

    pub fn timeouts(&self) -> usize {
        self.worlds.iter().filter(|w| w.timed_out).count()
    }

    /// Mean undiscounted team return per world.
    pub fn mean_return(&self) -> f64 {
        if self.worlds.is_empty() {
            return 0.0;
        }
        let total: f64 = self.worlds.iter().map(|w| w.round_rewards.iter().map(|r| r.total).sum::<f64>()).sum();
        total / self.worlds.len() as f64
    }
}

/// Bid call record kept by [`RolloutBidder`].
#[derive(Debug, Clone)]
pub struct BidRecord {
    pub iteration: usize,
    pub observation: Observation,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Samples bids from a Gaussian around the policy mean and records every
/// call per agent.
pub struct RolloutBidder<'a> {
    params: &'a PolicyParameters,
    rng: StreamRng,
    contexts: Vec<RecurrentContext>,
    pub records: Vec<Vec<BidRecord>>,
}

impl<'a> RolloutBidder<'a> {
    pub fn new(params: &'a PolicyParameters, rng: StreamRng) -> Self {
        Self { params, rng, contexts: Vec::new(), records: Vec::new() }
    }
}

impl Bidder for RolloutBidder<'_> {
    fn name(&self) -> &str {
        "rollout"
    }

    fn reset(&mut self, world: &WorldInstance) {
        self.contexts = (0..world.n_agents())
            .map(|_| RecurrentContext::for_policy(self.params, world.n_tasks()))
            .collect();
        self.records = vec![Vec::new(); world.n_agents()];
    }

    fn bid(&mut self, state: &AgentState, world: &WorldInstance, iteration: usize) -> Vec<f64> {
        let me = state.agent_id;
        let draw = policy_bid(self.params, state, world, &self.contexts[me], Some(&mut self.rng))
            .expect("actor validated before rollout");
        self.contexts[me] = draw.context;
        self.records[me].push(BidRecord {
            iteration,
            observation: draw.observation,
            action: draw.bids.clone(),
            log_prob: draw.log_prob.unwrap_or(0.0),
        });
        draw.bids
    }
}

/// Generalized advantage estimates and value targets for one stream.
/// `bootstrap` is the value after the last step (0 for a finished
/// episode).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales the batch advantages to zero mean and unit standard
/// deviation.
pub fn normalize_advantages(batch: &mut RolloutBatch) {
    let n = batch.n_transitions();
    if n == 0 {
        return;
    }
    let mean = batch.transitions().map(|t| t.advantage).sum::<f64>() / n as f64;
    let var = batch.transitions().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for t in batch.streams.iter_mut().flat_map(|s| s.transitions.iter_mut()) {
        t.advantage = if std > 1e-12 { (t.advantage - mean) / std } else { 0.0 };
    }
}

fn value_of(critic: &PolicyParameters, x: &CriticInput) -> Result<f64> {
    Ok(critic_forward(critic, x)?.0)
}

fn rollout_world(
    index: usize,
    world: &WorldInstance,
    oracle: &OptimalAssignment,
    actor: &PolicyParameters,
    critic: &PolicyParameters,
    config: &PPOConfig,
    weights: &RewardWeights,
    seed: u64,
) -> Result<(WorldRollout, Vec<AgentStream>)> {
    let run_config = RunConfig { max_iterations: config.max_iterations, ..RunConfig::default() };
    let mut bidder = RolloutBidder::new(actor, stream_rng(seed, Stream::Exploration, index as u64));
    let run = run_allocation(world, &mut bidder, &run_config)?;
    let owners = oracle.owners(world.n_tasks());
    let d_star = oracle.total_distance;
    let snaps: Vec<Snapshot> = run.trajectory.iter().map(|team| Snapshot::of(team, world, &owners)).collect();
    let mut round_rewards = snaps
        .windows(2)
        .map(|p| compute_reward_for(&p[0], &p[1], d_star, weights, world.id.as_str()))
        .collect::<Result<Vec<_>>>()?;
    let final_distance = team_distance(&run.states, world);
    if weights.terminal_bonus {
        if let Some(last) = round_rewards.last_mut() {
            if run.timed_out {
                add_timeout_penalty(last, weights);
            } else {
                let classic = run_allocation(world, &mut ClassicBidder, &RunConfig { record_trajectory: false, ..run_config.clone() })?;
                add_terminal_bonus(last, final_distance, team_distance(&classic.states, world), d_star, weights)?;
            }
        }
    }

    let rounds = run.rounds_executed;
    let inputs = (0..=rounds)
        .map(|t| build_critic_input(world, &run.trajectory[t], oracle, t + 1, config.max_iterations, &config.critic))
        .collect::<Result<Vec<_>>>()?;
    let values = inputs.iter().map(|x| value_of(critic, x)).collect::<Result<Vec<_>>>()?;
    // The iteration limit ends the episode when timeouts are penalized;
    // otherwise a timeout is a truncation and bootstraps from the critic.
    let bootstrap = if run.timed_out && !weights.terminal_bonus { values[rounds] } else { 0.0 };

    let mut streams = Vec::new();
    for (agent, records) in bidder.records.into_iter().enumerate() {
        if records.is_empty() {
            continue;
        }
        let k = records.len();
        let mut rewards = Vec::with_capacity(k);
        for (i, r) in records.iter().enumerate() {
            let until = records.get(i + 1).map_or(rounds, |n| n.iteration - 1);
            rewards.push((r.iteration..=until).map(|t| round_rewards[t - 1].total).sum::<f64>());
        }
        let vals: Vec<f64> = records.iter().map(|r| values[r.iteration - 1]).collect();
        let (adv, ret) = gae(&rewards, &vals, bootstrap, config.gamma, config.lambda);
        let transitions = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| Transition {
                agent,
                iteration: r.iteration,
                critic_input: inputs[r.iteration - 1].clone(),
                observation: r.observation,
                action: r.action,
                log_prob: r.log_prob,
                reward: rewards[i],
                value: vals[i],
                done: i + 1 == k && (!run.timed_out || weights.terminal_bonus),
                advantage: adv[i],
                ret: ret[i],
            })
            .collect();
        streams.push(AgentStream { world: index, agent, transitions });
    }
    let summary = WorldRollout {
        world_id: world.id.to_string(),
        timed_out: run.timed_out,
        iterations: run.iterations_used,
        round_rewards,
        final_distance,
        oracle_distance: d_star,
        covered: snaps.last().map_or(0, |s| s.covered),
    };
    Ok((summary, streams))
}

/// Runs the stochastic actor on every world (in parallel, each world with
/// its own exploration stream derived from `seed`) and returns the
/// per-agent transition streams with GAE advantages, normalized over the
/// batch when the config asks for it.
pub fn collect_rollouts(
    worlds: &[&WorldInstance],
    actor: &PolicyParameters,
    critic: &PolicyParameters,
    oracles: &OracleCache,
    config: &PPOConfig,
    weights: &RewardWeights,
    seed: u64,
) -> Result<RolloutBatch> {
    if !actor.architecture.is_actor() {
        return Err(Error::invalid(format!("{} is not a trainable actor", actor.architecture.tag())));
    }
    let oracle_of = |w: &WorldInstance| oracles.get(&w.id).ok_or_else(|| Error::MissingOracle(w.id.to_string()));
    for w in worlds {
        oracle_of(w)?;
    }
    let results = worlds
        .par_iter()
        .enumerate()
        .map(|(i, w)| rollout_world(i, w, oracle_of(w)?, actor, critic, config, weights, seed))
        .collect::<Vec<_>>();
    let mut batch = RolloutBatch::default();
    for r in results {
        let (summary, streams) = r?;
        batch.worlds.push(summary);
        batch.streams.extend(streams);
    }
    if config.normalize_advantages {
        normalize_advantages(&mut batch);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_with_unit_lambda_is_return_minus_value() {
        let rewards = [0.5, -0.2, 1.0];
        let values = [0.1, 0.4, -0.3];
        let gamma = 0.9;
        let (adv, ret) = gae(&rewards, &values, 0.7, gamma, 1.0);
        for t in 0..3 {
            let mut g = 0.0;
            let mut disc = 1.0;
            for r in &rewards[t..] {
                g += disc * r;
                disc *= gamma;
            }
            g += disc * 0.7;
            assert!((adv[t] - (g - values[t])).abs() < 1e-12);
            assert!((ret[t] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_zero_lambda_is_td_error() {
        let (adv, _) = gae(&[1.0, 2.0], &[0.5, 0.25], 0.0, 0.5, 0.0);
        assert!((adv[0] - (1.0 + 0.5 * 0.25 - 0.5)).abs() < 1e-12);
        assert!((adv[1] - (2.0 - 0.25)).abs() < 1e-12);
    }
}
