//! Bidding policies: the observation builder, the classical insertion-cost
//! scorer and the learned NAM and LSTM bidders.

mod features;
mod lstm;
mod nam;
pub mod nn;
mod params;

use rand::Rng;
use rand_distr::StandardNormal;

pub use features::{build_observation, Observation, FEATURE_DIM, FEATURE_NAMES};
pub use lstm::{lstm_forward, lstm_logits, lstm_sequence_backward, lstm_sequence_forward, LstmTrace, RecurrentContext};
pub use nam::{nam_backward, nam_contributions, nam_forward, nam_logits, softplus_grad};
pub use params::{bin_path, Architecture, ParamSpec, PolicyParameters, CHECKPOINT_FORMAT};

use crate::consensus::AgentState;
use crate::error::{Error, Result};
use crate::world::{best_insertion, WorldInstance};

/// Bid per task; larger means a stronger claim.
pub type BidVector = Vec<f64>;

/// Magnitude bound applied to sampled bids.
pub const BID_LIMIT: f64 = 1e9;

/// Source of bids for the auction phase. Implementations may keep
/// per-agent memory between calls within one world.
pub trait Bidder {
    fn name(&self) -> &str;

    /// Called once before the first round of every world.
    fn reset(&mut self, _world: &WorldInstance) {}

    /// Bid vector of `state`'s agent at `iteration` (1-based).
    fn bid(&mut self, state: &AgentState, world: &WorldInstance, iteration: usize) -> BidVector;

    /// When true, bundle construction caps each newly claimed bid at the
    /// bid of the previous bundle entry so reported bids never increase
    /// along the bundle.
    fn enforces_dmg(&self) -> bool {
        false
    }

    /// When true, bids are recomputed after every claim instead of once per
    /// bundle-construction call.
    fn rescores_each_step(&self) -> bool {
        false
    }
}

/// Classical scorer `exp(-dD / sigma)` with `dD` the cheapest-insertion
/// increase of the agent's own route and `sigma` the workspace diagonal.
/// Tasks already in the path score as zero-cost insertions.
pub fn classic_bid(state: &AgentState, world: &WorldInstance) -> BidVector {
    let pos = world.agents[state.agent_id];
    let sigma = world.diagonal();
    (0..world.n_tasks())
        .map(|j| {
            let delta = if state.path.contains(j) { 0.0 } else { best_insertion(pos, &state.path.tasks, j, world).1 };
            (-delta / sigma).exp()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassicBidder;

impl Bidder for ClassicBidder {
    fn name(&self) -> &str {
        "classic"
    }

    fn bid(&mut self, state: &AgentState, world: &WorldInstance, _iteration: usize) -> BidVector {
        classic_bid(state, world)
    }

    fn enforces_dmg(&self) -> bool {
        true
    }

    fn rescores_each_step(&self) -> bool {
        true
    }
}

/// Result of one policy evaluation.
#[derive(Debug, Clone)]
pub struct BidDraw {
    pub observation: Observation,
    /// Deterministic (mean) bids.
    pub mean: BidVector,
    /// Bids actually placed: the mean, or a Gaussian sample around it.
    pub bids: BidVector,
    /// Joint log-density of `bids`, present only when sampled.
    pub log_prob: Option<f64>,
    pub context: RecurrentContext,
}

/// Evaluates `policy` for one agent. With `rng` set, each bid is drawn
/// from `N(mean, exp(log_std)^2)` and the joint log-density returned;
/// otherwise the mean is used.
pub fn policy_bid<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    state: &AgentState,
    world: &WorldInstance,
    ctx: &RecurrentContext,
    rng: Option<&mut R>,
) -> Result<BidDraw> {
    let observation = build_observation(state, world);
    let (mean, context) = match policy.architecture {
        Architecture::Classic => (classic_bid(state, world), ctx.clone()),
        Architecture::Nam { .. } => (nam_forward(policy, &observation)?, ctx.clone()),
        Architecture::Lstm { .. } => lstm_forward(policy, &observation, ctx)?,
        Architecture::Critic { .. } => return Err(Error::invalid("a critic cannot bid")),
    };
    let (bids, log_prob) = match rng {
        None => (mean.clone(), None),
        Some(rng) => {
            let log_std = policy.log_std().unwrap_or(f64::NEG_INFINITY);
            let std = log_std.exp();
            let bids: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let eps: f64 = rng.sample(StandardNormal);
                    (m + std * eps).clamp(-BID_LIMIT, BID_LIMIT)
                })
                .collect();
            let lp = gaussian_log_prob(&bids, &mean, log_std);
            (bids, Some(lp))
        }
    };
    Ok(BidDraw { observation, mean, bids, log_prob, context })
}

/// `sum_j log N(action_j; mean_j, exp(log_std)^2)`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: f64) -> f64 {
    let inv_var = (-2.0 * log_std).exp();
    let norm = log_std + 0.5 * (2.0 * std::f64::consts::PI).ln();
    action
        .iter()
        .zip(mean)
        .map(|(a, m)| -0.5 * (a - m) * (a - m) * inv_var - norm)
        .sum()
}

/// Deterministic bidder backed by a parameter set. Keeps one recurrent
/// context per agent, reset at every new world.
pub struct PolicyBidder<'a> {
    name: String,
    params: &'a PolicyParameters,
    contexts: Vec<RecurrentContext>,
}

impl<'a> PolicyBidder<'a> {
    pub fn new(params: &'a PolicyParameters) -> Self {
        Self { name: params.architecture.tag().to_string(), params, contexts: Vec::new() }
    }

    pub fn named(name: impl Into<String>, params: &'a PolicyParameters) -> Self {
        Self { name: name.into(), params, contexts: Vec::new() }
    }
}

impl Bidder for PolicyBidder<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self, world: &WorldInstance) {
        self.contexts = (0..world.n_agents())
            .map(|_| RecurrentContext::for_policy(self.params, world.n_tasks()))
            .collect();
    }

    fn bid(&mut self, state: &AgentState, world: &WorldInstance, _iteration: usize) -> BidVector {
        let ctx = &self.contexts[state.agent_id];
        let draw = policy_bid::<rand_chacha::ChaCha8Rng>(self.params, state, world, ctx, None)
            .expect("policy parameters validated at construction");
        self.contexts[state.agent_id] = draw.context;
        draw.mean
    }
}

/// Saved forward activations of an actor over one agent's observation
/// sequence.
pub enum ActorTrace {
    Nam(Vec<Observation>),
    Lstm(LstmTrace),
}

/// Logits of every step of an observation sequence, starting from a fresh
/// recurrent context.
pub fn actor_sequence_forward(params: &PolicyParameters, obs_seq: &[Observation]) -> Result<(Vec<Vec<f64>>, ActorTrace)> {
    match params.architecture {
        Architecture::Nam { .. } => {
            let logits = obs_seq.iter().map(|o| nam_logits(params, o)).collect::<Result<Vec<_>>>()?;
            Ok((logits, ActorTrace::Nam(obs_seq.to_vec())))
        }
        Architecture::Lstm { .. } => {
            let n_tasks = obs_seq.first().map_or(0, |o| o.n_tasks);
            let ctx0 = RecurrentContext::for_policy(params, n_tasks);
            let (logits, trace) = lstm_sequence_forward(params, obs_seq, &ctx0)?;
            Ok((logits, ActorTrace::Lstm(trace)))
        }
        _ => Err(Error::invalid(format!("{} is not a trainable actor", params.architecture.tag()))),
    }
}

/// Accumulates the parameter gradient of `sum_t sum_j d_logits[t][j] *
/// logit_tj` into `grad`.
pub fn actor_sequence_backward(params: &PolicyParameters, trace: &ActorTrace, d_logits: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
    match trace {
        ActorTrace::Nam(obs_seq) => {
            for (obs, d) in obs_seq.iter().zip(d_logits) {
                nam_backward(params, obs, d, grad)?;
            }
            Ok(())
        }
        ActorTrace::Lstm(trace) => lstm_sequence_backward(params, trace, d_logits, grad),
    }
}
