use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Path, WorldInstance};

/// Local auction state held by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: usize,
    /// Highest known bid per task (`y_i`).
    pub winning_bids: Vec<f64>,
    /// Believed winner per task (`z_i`), `None` when unassigned.
    pub winners: Vec<Option<usize>>,
    /// Won tasks in the order they were added.
    pub bundle: Vec<usize>,
    /// Execution order of the bundle tasks.
    pub path: Path,
    /// Round at which information from each agent was last received.
    pub timestamps: Vec<u64>,
}

impl AgentState {
    pub fn new(agent_id: usize, n_agents: usize, n_tasks: usize) -> Self {
        Self {
            agent_id,
            winning_bids: vec![0.0; n_tasks],
            winners: vec![None; n_tasks],
            bundle: Vec::new(),
            path: Path::new(agent_id),
            timestamps: vec![0; n_agents],
        }
    }

    pub fn fresh_team(world: &WorldInstance) -> Vec<AgentState> {
        (0..world.n_agents())
            .map(|i| AgentState::new(i, world.n_agents(), world.n_tasks()))
            .collect()
    }

    pub fn n_tasks(&self) -> usize {
        self.winning_bids.len()
    }

    /// `(y, z)` equality, the quantity convergence is judged on.
    pub fn same_beliefs(&self, other: &AgentState) -> bool {
        self.winners == other.winners && self.winning_bids == other.winning_bids
    }

    pub fn bundle_position(&self, task: usize) -> Option<usize> {
        self.bundle.iter().position(|&t| t == task)
    }
}

/// Broadcast snapshot of an agent's beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: usize,
    pub winning_bids: Vec<f64>,
    pub winners: Vec<Option<usize>>,
    pub timestamps: Vec<u64>,
}

impl From<&AgentState> for Message {
    fn from(state: &AgentState) -> Self {
        Self {
            sender: state.agent_id,
            winning_bids: state.winning_bids.clone(),
            winners: state.winners.clone(),
            timestamps: state.timestamps.clone(),
        }
    }
}

/// Checks every [`AgentState`] invariant against `world`.
pub fn validate_state(state: &AgentState, world: &WorldInstance) -> Result<()> {
    let fail = |msg: String| Err(Error::invalid(format!("agent {}: {msg}", state.agent_id)));
    let n_tasks = world.n_tasks();
    if state.winning_bids.len() != n_tasks || state.winners.len() != n_tasks {
        return fail("belief vectors do not match task count".into());
    }
    if state.timestamps.len() != world.n_agents() {
        return fail("timestamp vector does not match agent count".into());
    }
    for (j, (&y, z)) in state.winning_bids.iter().zip(&state.winners).enumerate() {
        if !(y.is_finite() && y >= 0.0) {
            return fail(format!("task {j} has invalid bid {y}"));
        }
        if (y > 0.0) != z.is_some() {
            return fail(format!("task {j}: bid {y} inconsistent with winner {z:?}"));
        }
        if let Some(w) = z {
            if *w >= world.n_agents() {
                return fail(format!("task {j} names unknown winner {w}"));
            }
        }
    }
    if state.bundle.len() > world.capacity {
        return fail(format!("bundle holds {} tasks over capacity {}", state.bundle.len(), world.capacity));
    }
    if state.path.owner != state.agent_id {
        return fail("path owned by another agent".into());
    }
    state.path.validate(world)?;
    if state.bundle.len() != state.path.len() {
        return fail("bundle and path differ in length".into());
    }
    for (k, &t) in state.bundle.iter().enumerate() {
        if t >= n_tasks || state.bundle[..k].contains(&t) {
            return fail(format!("bundle entry {t} invalid or repeated"));
        }
        if !state.path.contains(t) {
            return fail(format!("bundle task {t} missing from path"));
        }
        if state.winners[t] != Some(state.agent_id) {
            return fail(format!("bundle task {t} not believed won"));
        }
    }
    Ok(())
}

/// Checks the post-convergence properties of a team: all agents share the
/// same `(y, z)`, no task sits in two bundles, and each bundled task is
/// believed won by its holder.
pub fn validate_agreement(states: &[AgentState], world: &WorldInstance) -> Result<()> {
    for s in states {
        validate_state(s, world)?;
    }
    if let Some(first) = states.first() {
        if let Some(other) = states.iter().find(|s| !s.same_beliefs(first)) {
            return Err(Error::invalid(format!(
                "agents {} and {} disagree on winners",
                first.agent_id, other.agent_id
            )));
        }
    }
    let mut holder = vec![None; world.n_tasks()];
    for s in states {
        for &t in &s.bundle {
            if let Some(prev) = holder[t].replace(s.agent_id) {
                return Err(Error::invalid(format!("task {t} held by agents {prev} and {}", s.agent_id)));
            }
        }
    }
    Ok(())
}
