//! Centralized value network over a padded global encoding of the team
//! state. Used only during training.

use serde::{Deserialize, Serialize};

use crate::bidding::nn::{affine, affine_backward};
use crate::bidding::{Architecture, PolicyParameters};
use crate::consensus::AgentState;
use crate::error::{Error, Result};
use crate::oracle::OptimalAssignment;
use crate::rl::reward::Snapshot;
use crate::world::WorldInstance;

/// Padding limits of the critic encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticDims {
    pub max_agents: usize,
    pub max_tasks: usize,
    pub hidden: usize,
}

impl Default for CriticDims {
    fn default() -> Self {
        Self { max_agents: 8, max_tasks: 32, hidden: 64 }
    }
}

const SCALARS: usize = 6;
const AGENT_FEATURES: usize = 4;
const TASK_FEATURES: usize = 3;
const CELL_FEATURES: usize = 3;

impl CriticDims {
    pub fn input_dim(&self) -> usize {
        SCALARS
            + self.max_agents * AGENT_FEATURES
            + self.max_tasks * TASK_FEATURES
            + self.max_agents * self.max_tasks * CELL_FEATURES
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Critic { input_dim: self.input_dim(), hidden: self.hidden }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_agents == 0 || self.max_tasks == 0 || self.hidden == 0 {
            return Err(Error::invalid("critic dimensions must be positive"));
        }
        Ok(())
    }
}

/// Global state encoding. The first entries are scalar summaries:
/// coverage fraction, team distance over `D*` (capped at 4, scaled to
/// `[0, 1]`), oracle agreement fraction, iteration fraction, and the agent
/// and task counts over their maxima. Then per-agent blocks (present,
/// x/side, y/side, bundle fill), per-task blocks (present, x/side,
/// y/side) and, per (agent, task), the believed winning bid, the believed
/// winner as `(index + 1) / max_agents` (0 for none) and a self-claim
/// flag. Absent agents and tasks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticInput {
    pub features: Vec<f64>,
}

impl CriticInput {
    pub fn coverage(&self) -> f64 {
        self.features[0]
    }

    pub fn distance_ratio(&self) -> f64 {
        self.features[1] * 4.0
    }

    pub fn agreement(&self) -> f64 {
        self.features[2]
    }
}

/// Encodes the team state at the start of `iteration` (1-based) of a run
/// limited to `max_iterations`.
pub fn build_critic_input(
    world: &WorldInstance,
    states: &[AgentState],
    oracle: &OptimalAssignment,
    iteration: usize,
    max_iterations: usize,
    dims: &CriticDims,
) -> Result<CriticInput> {
    let (m, n) = (world.n_agents(), world.n_tasks());
    if m > dims.max_agents || n > dims.max_tasks {
        return Err(Error::invalid(format!(
            "world {} ({m} agents, {n} tasks) exceeds critic limits ({} agents, {} tasks)",
            world.id, dims.max_agents, dims.max_tasks
        )));
    }
    if states.len() != m {
        return Err(Error::invalid("one agent state per agent required"));
    }
    let snap = Snapshot::of(states, world, &oracle.owners(n));
    let side = world.workspace_side;
    let mut f = vec![0.0; dims.input_dim()];
    let nt = n.max(1) as f64;
    f[0] = snap.covered as f64 / nt;
    f[1] = if oracle.total_distance > 0.0 { (snap.distance / oracle.total_distance).min(4.0) / 4.0 } else { 0.0 };
    f[2] = snap.agreed as f64 / nt;
    f[3] = (iteration as f64 / max_iterations.max(1) as f64).min(1.0);
    f[4] = m as f64 / dims.max_agents as f64;
    f[5] = n as f64 / dims.max_tasks as f64;

    let agents_at = SCALARS;
    for (i, (p, s)) in world.agents.iter().zip(states).enumerate() {
        let b = agents_at + i * AGENT_FEATURES;
        f[b] = 1.0;
        f[b + 1] = p.x / side;
        f[b + 2] = p.y / side;
        f[b + 3] = s.bundle.len() as f64 / nt;
    }
    let tasks_at = agents_at + dims.max_agents * AGENT_FEATURES;
    for (j, q) in world.tasks.iter().enumerate() {
        let b = tasks_at + j * TASK_FEATURES;
        f[b] = 1.0;
        f[b + 1] = q.x / side;
        f[b + 2] = q.y / side;
    }
    let cells_at = tasks_at + dims.max_tasks * TASK_FEATURES;
    for (i, s) in states.iter().enumerate() {
        for j in 0..n {
            let b = cells_at + (i * dims.max_tasks + j) * CELL_FEATURES;
            f[b] = s.winning_bids[j].clamp(0.0, 1.0);
            if let Some(z) = s.winners[j] {
                f[b + 1] = (z + 1) as f64 / dims.max_agents as f64;
                f[b + 2] = f64::from(z == s.agent_id);
            }
        }
    }
    Ok(CriticInput { features: f })
}

struct CriticLayout {
    input: usize,
    hidden: usize,
    l1w: usize,
    l1b: usize,
    l2w: usize,
    l2b: usize,
    l3w: usize,
    l3b: usize,
}

impl CriticLayout {
    fn of(params: &PolicyParameters) -> Result<Self> {
        let Architecture::Critic { input_dim, hidden } = params.architecture else {
            return Err(Error::invalid(format!("expected a critic, got {}", params.architecture.tag())));
        };
        let l1w = 0;
        let l1b = l1w + hidden * input_dim;
        let l2w = l1b + hidden;
        let l2b = l2w + hidden * hidden;
        let l3w = l2b + hidden;
        let l3b = l3w + hidden;
        Ok(Self { input: input_dim, hidden, l1w, l1b, l2w, l2b, l3w, l3b })
    }
}

/// Hidden activations kept for [`critic_backward`].
#[derive(Debug, Clone)]
pub struct CriticCache {
    a1: Vec<f64>,
    a2: Vec<f64>,
}

/// State value `l3(tanh(l2(tanh(l1(x)))))`.
pub fn critic_forward(params: &PolicyParameters, input: &CriticInput) -> Result<(f64, CriticCache)> {
    let l = CriticLayout::of(params)?;
    if input.features.len() != l.input {
        return Err(Error::invalid(format!(
            "critic expects {} inputs, got {}",
            l.input,
            input.features.len()
        )));
    }
    let p = &params.data;
    let h = l.hidden;
    let mut a1 = vec![0.0; h];
    affine(&p[l.l1w..l.l1b], &p[l.l1b..l.l2w], &input.features, &mut a1);
    a1.iter_mut().for_each(|v| *v = v.tanh());
    let mut a2 = vec![0.0; h];
    affine(&p[l.l2w..l.l2b], &p[l.l2b..l.l3w], &a1, &mut a2);
    a2.iter_mut().for_each(|v| *v = v.tanh());
    let v = p[l.l3b] + crate::bidding::nn::dot(&p[l.l3w..l.l3b], &a2);
    Ok((v, CriticCache { a1, a2 }))
}

/// Accumulates `dv * d value / d params` into `grad`.
pub fn critic_backward(params: &PolicyParameters, input: &CriticInput, cache: &CriticCache, dv: f64, grad: &mut [f64]) -> Result<()> {
    let l = CriticLayout::of(params)?;
    if grad.len() != params.len() {
        return Err(Error::invalid("gradient buffer shape mismatch"));
    }
    let p = &params.data;
    let h = l.hidden;
    grad[l.l3b] += dv;
    let mut dz2 = vec![0.0; h];
    for r in 0..h {
        grad[l.l3w + r] += dv * cache.a2[r];
        dz2[r] = dv * p[l.l3w + r] * (1.0 - cache.a2[r] * cache.a2[r]);
    }
    let mut da1 = vec![0.0; h];
    {
        let (head, tail) = grad.split_at_mut(l.l2b);
        affine_backward(&p[l.l2w..l.l2b], &cache.a1, &dz2, &mut head[l.l2w..], &mut tail[..h], Some(&mut da1));
    }
    let dz1: Vec<f64> = da1.iter().zip(&cache.a1).map(|(d, a)| d * (1.0 - a * a)).collect();
    let (head, tail) = grad.split_at_mut(l.l1b);
    affine_backward(&p[l.l1w..l.l1b], &input.features, &dz1, &mut head[l.l1w..], &mut tail[..h], None);
    Ok(())
}
