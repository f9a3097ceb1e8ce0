//! Min-sum reference solutions: exact branch-and-bound, an exhaustive
//! enumerator for small instances, and a local-search upper bound for
//! worlds too large to solve exactly.

mod brute;
mod cache;
mod exact;
mod heuristic;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force, BRUTE_FORCE_MAX_TASKS};
pub use cache::{load_cache, save_cache, OracleCache, OracleEntry};
pub use exact::{root_lower_bound, solve_exact};
pub use heuristic::best_known;

use crate::error::{Error, Result};
use crate::world::{route_length, Path, WorldInstance};

/// Distances are compared with this absolute tolerance.
pub const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalAssignment {
    /// One route per agent, in agent order.
    pub routes: Vec<Path>,
    pub total_distance: f64,
    /// `true` only when the search proved optimality.
    pub proof_of_optimality: bool,
}

impl OptimalAssignment {
    pub(crate) fn from_routes(world: &WorldInstance, routes: Vec<Vec<usize>>, proof: bool) -> Self {
        let total_distance = routes
            .iter()
            .enumerate()
            .map(|(a, r)| route_length(world.agents[a], r, world))
            .sum();
        let routes = routes.into_iter().enumerate().map(|(a, r)| Path::with_tasks(a, r)).collect();
        Self { routes, total_distance, proof_of_optimality: proof }
    }

    /// Agent serving each task, `None` for uncovered tasks.
    pub fn owners(&self, n_tasks: usize) -> Vec<Option<usize>> {
        let mut owner = vec![None; n_tasks];
        for r in &self.routes {
            for &t in &r.tasks {
                if t < n_tasks {
                    owner[t] = Some(r.owner);
                }
            }
        }
        owner
    }

    /// Checks coverage, capacity and the stored distance against `world`.
    pub fn validate(&self, world: &WorldInstance) -> Result<()> {
        if self.routes.len() != world.n_agents() {
            return Err(Error::invalid("assignment must hold one route per agent"));
        }
        let mut seen = vec![false; world.n_tasks()];
        for (a, r) in self.routes.iter().enumerate() {
            r.validate(world)?;
            if r.owner != a {
                return Err(Error::invalid(format!("route {a} labelled with owner {}", r.owner)));
            }
            if r.len() > world.capacity {
                return Err(Error::invalid(format!("route {a} exceeds capacity")));
            }
            for &t in &r.tasks {
                if std::mem::replace(&mut seen[t], true) {
                    return Err(Error::invalid(format!("task {t} served twice")));
                }
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("task {t} is not served")));
        }
        let d: f64 = self
            .routes
            .iter()
            .map(|r| route_length(world.agents[r.owner], &r.tasks, world))
            .sum();
        if (d - self.total_distance).abs() > DIST_TOL * d.max(1.0) {
            return Err(Error::invalid(format!("stored distance {} differs from route sum {d}", self.total_distance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBudget {
    /// Branch-and-bound node limit.
    pub max_nodes: u64,
    /// Optional wall-clock limit. Results under a time limit are not
    /// reproducible; leave unset when determinism matters.
    #[serde(with = "opt_secs")]
    pub time_limit: Option<Duration>,
    /// Largest task count that [`solve`] hands to the exact search.
    pub exact_threshold: usize,
    /// Local-search restarts for [`best_known`].
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self { max_nodes: 50_000_000, time_limit: None, exact_threshold: 20, restarts: 8, seed: 0 }
    }
}

impl SolverBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 || self.restarts == 0 {
            return Err(Error::invalid("solver budget limits must be positive"));
        }
        if self.time_limit.is_some_and(|d| d.is_zero()) {
            return Err(Error::invalid("time limit must be positive"));
        }
        Ok(())
    }
}

mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let secs: Option<f64> = Option::deserialize(d)?;
        Ok(secs.map(Duration::from_secs_f64))
    }
}

/// Exact search when the task count is within `exact_threshold`, local
/// search otherwise.
pub fn solve(world: &WorldInstance, budget: &SolverBudget) -> Result<OptimalAssignment> {
    if world.n_tasks() <= budget.exact_threshold {
        solve_exact(world, budget)
    } else {
        best_known(world, budget)
    }
}
