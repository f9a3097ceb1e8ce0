use serde::{Deserialize, Serialize};

use super::bundle::build_bundle;
use super::rules::resolve_conflicts;
use super::state::{AgentState, Message};
use crate::bidding::Bidder;
use crate::error::{Error, Result};
use crate::world::{route_length, Path, WorldInstance};

/// Who hears whom during the consensus phase.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Complete,
    /// `neighbors[i]` lists the agents whose messages `i` receives.
    Graph(Vec<Vec<usize>>),
}

impl Topology {
    fn senders(&self, receiver: usize, n_agents: usize) -> Vec<usize> {
        match self {
            Topology::Complete => (0..n_agents).filter(|&k| k != receiver).collect(),
            Topology::Graph(adj) => {
                let mut v: Vec<usize> = adj
                    .get(receiver)
                    .map(|n| n.iter().copied().filter(|&k| k != receiver && k < n_agents).collect())
                    .unwrap_or_default();
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub topology: Topology,
    /// Consecutive unchanged rounds required to declare convergence.
    pub convergence_window: usize,
    /// Keep every round's team state in the result.
    pub record_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            topology: Topology::Complete,
            convergence_window: 1,
            record_trajectory: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if self.convergence_window == 0 {
            return Err(Error::invalid("convergence_window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Final state of every agent.
    pub states: Vec<AgentState>,
    /// Last round that changed any agent's beliefs; `max_iterations` on
    /// timeout.
    pub iterations_used: usize,
    /// Rounds actually executed, including the confirming quiet rounds.
    pub rounds_executed: usize,
    pub timed_out: bool,
    /// Team state before round 1 and after every executed round.
    pub trajectory: Vec<Vec<AgentState>>,
}

impl RunResult {
    pub fn paths(&self) -> Vec<Path> {
        self.states.iter().map(|s| s.path.clone()).collect()
    }
}

/// Summed open-route length of every agent's current path.
pub fn team_distance(states: &[AgentState], world: &WorldInstance) -> f64 {
    states
        .iter()
        .map(|s| route_length(world.agents[s.agent_id], &s.path.tasks, world))
        .sum()
}

/// Number of tasks held in at least one bundle.
pub fn covered_tasks(states: &[AgentState], n_tasks: usize) -> usize {
    let mut seen = vec![false; n_tasks];
    for s in states {
        for &t in &s.bundle {
            seen[t] = true;
        }
    }
    seen.into_iter().filter(|&b| b).count()
}

/// One synchronous round: every agent builds its bundle from its own
/// state, then all post-build messages are delivered at once and merged in
/// agent order. Returns whether any `(y, z)` entry changed.
pub fn run_round(
    states: &mut [AgentState],
    world: &WorldInstance,
    bidder: &mut dyn Bidder,
    config: &RunConfig,
    iteration: usize,
) -> Result<bool> {
    let before: Vec<(Vec<f64>, Vec<Option<usize>>)> = states
        .iter()
        .map(|s| (s.winning_bids.clone(), s.winners.clone()))
        .collect();
    let stamp = iteration as u64;
    for state in states.iter_mut() {
        let me = state.agent_id;
        state.timestamps[me] = stamp;
        build_bundle(state, world, bidder, iteration);
    }
    let messages: Vec<Message> = states.iter().map(Message::from).collect();
    let n = states.len();
    for state in states.iter_mut() {
        for k in config.topology.senders(state.agent_id, n) {
            resolve_conflicts(state, &messages[k])?;
        }
    }
    Ok(states
        .iter()
        .zip(&before)
        .any(|(s, (y, z))| &s.winning_bids != y || &s.winners != z))
}

/// Iterates auction and consensus rounds until no agent's beliefs change
/// for `convergence_window` consecutive rounds, or `max_iterations` rounds
/// have run.
pub fn run_allocation(world: &WorldInstance, bidder: &mut dyn Bidder, config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    bidder.reset(world);
    let mut states = AgentState::fresh_team(world);
    let mut trajectory = Vec::new();
    if config.record_trajectory {
        trajectory.push(states.clone());
    }
    let mut last_change = 0;
    let mut quiet = 0;
    let mut rounds = 0;
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let changed = run_round(&mut states, world, bidder, config, iteration)?;
        rounds = iteration;
        if config.record_trajectory {
            trajectory.push(states.clone());
        }
        if changed {
            last_change = iteration;
            quiet = 0;
        } else {
            quiet += 1;
            if quiet >= config.convergence_window {
                converged = true;
                break;
            }
        }
    }
    Ok(RunResult {
        states,
        iterations_used: if converged { last_change } else { config.max_iterations },
        rounds_executed: rounds,
        timed_out: !converged,
        trajectory,
    })
}
