use crate::consensus::AgentState;
use crate::world::{best_insertion, WorldInstance};

/// Names of the per-task observation columns, in order.
pub const FEATURE_NAMES: [&str; 8] = [
    "agent_distance",
    "insertion_cost",
    "winning_bid",
    "owned_by_self",
    "unassigned",
    "task_x",
    "task_y",
    "bundle_fill",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// Per-agent partial observation: one feature row per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub n_tasks: usize,
    pub feature_dim: usize,
    /// Row-major `n_tasks x feature_dim`.
    pub features: Vec<f64>,
}

impl Observation {
    pub fn zeros(n_tasks: usize, feature_dim: usize) -> Self {
        Self { n_tasks, feature_dim, features: vec![0.0; n_tasks * feature_dim] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let feature_dim = rows.first().map_or(0, Vec::len);
        Self {
            n_tasks: rows.len(),
            feature_dim,
            features: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn row(&self, task: usize) -> &[f64] {
        &self.features[task * self.feature_dim..(task + 1) * self.feature_dim]
    }

    pub fn feature_spec() -> Vec<String> {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Builds the observation of `state`'s agent from its own beliefs, bundle,
/// path and position plus the public task positions. Distances are scaled
/// by the workspace diagonal and coordinates by the side, so every entry
/// lies in `[0, 1]`.
pub fn build_observation(state: &AgentState, world: &WorldInstance) -> Observation {
    let me = state.agent_id;
    let pos = world.agents[me];
    let diag = world.diagonal();
    let side = world.workspace_side;
    let fill = (state.bundle.len() as f64 / world.capacity as f64).clamp(0.0, 1.0);
    let mut obs = Observation::zeros(world.n_tasks(), FEATURE_DIM);
    for (j, q) in world.tasks.iter().enumerate() {
        let insertion = if state.path.contains(j) {
            0.0
        } else {
            best_insertion(pos, &state.path.tasks, j, world).1
        };
        let row = &mut obs.features[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
        row[0] = (pos.dist(q) / diag).clamp(0.0, 1.0);
        row[1] = (insertion / diag).clamp(0.0, 1.0);
        row[2] = state.winning_bids[j].clamp(0.0, 1.0);
        row[3] = f64::from(state.winners[j] == Some(me));
        row[4] = f64::from(state.winners[j].is_none());
        row[5] = (q.x / side).clamp(0.0, 1.0);
        row[6] = (q.y / side).clamp(0.0, 1.0);
        row[7] = fill;
    }
    obs
}
