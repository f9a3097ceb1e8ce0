//! Per-iteration team reward: normalized changes in team distance, task
//! coverage and agreement with the oracle assignment.

use serde::{Deserialize, Serialize};

use crate::consensus::{covered_tasks, team_distance, AgentState};
use crate::error::{Error, Result};
use crate::oracle::{OptimalAssignment, DIST_TOL};
use crate::world::WorldInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_d: f64,
    pub w_c: f64,
    pub w_a: f64,
    /// Add `w_d * clip((D_classic - D_final) / D*)` on the converged
    /// final transition, and `-w_d` on the final transition of a timeout.
    pub terminal_bonus: bool,
    /// Charge every uncovered task `D* / N_t` in the distance term, so an
    /// empty allocation starts at `D*` instead of 0.
    pub charge_uncovered: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w_d: 0.5, w_c: 0.2, w_a: 0.3, terminal_bonus: true, charge_uncovered: true }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_d", self.w_d), ("w_c", self.w_c), ("w_a", self.w_a)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("reward weight {name} must be finite and nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// The quantities the reward is a difference of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    /// Summed route length of every agent's current path.
    pub distance: f64,
    /// Tasks in at least one bundle.
    pub covered: usize,
    /// Tasks held by exactly one agent, that agent being the oracle's
    /// owner.
    pub agreed: usize,
    pub n_tasks: usize,
}

impl Snapshot {
    pub fn of(states: &[AgentState], world: &WorldInstance, owners: &[Option<usize>]) -> Self {
        let n = world.n_tasks();
        let mut holders = vec![(0usize, None); n];
        for s in states {
            for &t in &s.bundle {
                holders[t].0 += 1;
                holders[t].1 = Some(s.agent_id);
            }
        }
        let agreed = holders
            .iter()
            .zip(owners)
            .filter(|((count, holder), owner)| *count == 1 && holder == *owner)
            .count();
        Self { distance: team_distance(states, world), covered: covered_tasks(states, n), agreed, n_tasks: n }
    }
}

/// Reward components of one transition, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Reward {
    pub r_d: f64,
    pub r_c: f64,
    pub r_a: f64,
    /// Terminal comparison against the classic bidder; 0 when unused.
    pub terminal: f64,
    pub total: f64,
}

impl Reward {
    pub fn components(&self) -> [f64; 4] {
        [self.r_d, self.r_c, self.r_a, self.terminal]
    }
}

fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Normalized distance change `(before - after) / D*`, clipped.
fn distance_gain(before: f64, after: f64, d_star: f64, world: &str) -> Result<f64> {
    if d_star > DIST_TOL {
        return Ok(clip_unit((before - after) / d_star));
    }
    if before.abs() > DIST_TOL || after.abs() > DIST_TOL {
        return Err(Error::DegenerateWorld(world.to_string()));
    }
    Ok(0.0)
}

/// Team reward for the move from `prev` to `curr`.
pub fn compute_reward(prev: &Snapshot, curr: &Snapshot, oracle: &OptimalAssignment, weights: &RewardWeights) -> Result<Reward> {
    compute_reward_for(prev, curr, oracle.total_distance, weights, "")
}

pub(crate) fn compute_reward_for(
    prev: &Snapshot,
    curr: &Snapshot,
    d_star: f64,
    weights: &RewardWeights,
    world: &str,
) -> Result<Reward> {
    let n = curr.n_tasks.max(1) as f64;
    let mut r_d = distance_gain(prev.distance, curr.distance, d_star, world)?;
    if weights.charge_uncovered && d_star > DIST_TOL {
        let charged = |s: &Snapshot| s.distance + (s.n_tasks - s.covered) as f64 * d_star / n;
        r_d = clip_unit((charged(prev) - charged(curr)) / d_star);
    }
    let r_c = clip_unit((curr.covered as f64 - prev.covered as f64) / n);
    let r_a = clip_unit((curr.agreed as f64 - prev.agreed as f64) / n);
    let total = weights.w_d * r_d + weights.w_c * r_c + weights.w_a * r_a;
    Ok(Reward { r_d, r_c, r_a, terminal: 0.0, total })
}

/// Terminal comparison of the final team distance against the classic
/// bidder's, added to `reward` with weight `w_d`.
pub fn add_terminal_bonus(reward: &mut Reward, final_distance: f64, classic_distance: f64, d_star: f64, weights: &RewardWeights) -> Result<()> {
    reward.terminal = distance_gain(classic_distance, final_distance, d_star, "")?;
    reward.total += weights.w_d * reward.terminal;
    Ok(())
}

/// Worst terminal value, `-w_d`, on the final transition of a run that
/// hit the iteration limit.
pub fn add_timeout_penalty(reward: &mut Reward, weights: &RewardWeights) {
    reward.terminal = -1.0;
    reward.total -= weights.w_d;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Path, Point2, WorldId};

    fn world() -> WorldInstance {
        WorldInstance::new(
            WorldId("r".into()),
            10.0,
            2,
            vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)],
            vec![Point2::new(1.0, 0.0), Point2::new(9.0, 0.0)],
        )
        .unwrap()
    }

    fn oracle() -> OptimalAssignment {
        OptimalAssignment {
            routes: vec![Path::with_tasks(0, vec![0]), Path::with_tasks(1, vec![1])],
            total_distance: 2.0,
            proof_of_optimality: true,
        }
    }

    fn hold(states: &mut [AgentState], agent: usize, task: usize) {
        let s = &mut states[agent];
        s.bundle.push(task);
        s.path.tasks.push(task);
    }

    #[test]
    fn unchanged_snapshot_gives_zero() {
        let w = world();
        let o = oracle();
        let mut states = AgentState::fresh_team(&w);
        hold(&mut states, 0, 1);
        let s = Snapshot::of(&states, &w, &o.owners(2));
        let r = compute_reward(&s, &s, &o, &RewardWeights::default()).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.components(), [0.0; 4]);
    }

    #[test]
    fn new_coverage_is_rewarded() {
        let w = world();
        let o = oracle();
        let weights = RewardWeights { w_d: 0.0, ..RewardWeights::default() };
        let states = AgentState::fresh_team(&w);
        let prev = Snapshot::of(&states, &w, &o.owners(2));
        let mut states2 = states.clone();
        hold(&mut states2, 1, 0);
        let curr = Snapshot::of(&states2, &w, &o.owners(2));
        let r = compute_reward(&prev, &curr, &o, &weights).unwrap();
        assert!(r.total >= weights.w_c / 2.0);
        assert_eq!(r.r_a, 0.0);
    }

    #[test]
    fn path_to_oracle_telescopes() {
        let w = world();
        let o = oracle();
        let weights = RewardWeights::default();
        let mut states = AgentState::fresh_team(&w);
        let mut snaps = vec![Snapshot::of(&states, &w, &o.owners(2))];
        // Wrong owner, then a conflict, then the oracle assignment.
        hold(&mut states, 0, 1);
        snaps.push(Snapshot::of(&states, &w, &o.owners(2)));
        hold(&mut states, 1, 1);
        snaps.push(Snapshot::of(&states, &w, &o.owners(2)));
        states = AgentState::fresh_team(&w);
        hold(&mut states, 0, 0);
        hold(&mut states, 1, 1);
        snaps.push(Snapshot::of(&states, &w, &o.owners(2)));
        let sum: f64 = snaps
            .windows(2)
            .map(|p| {
                let r = compute_reward(&p[0], &p[1], &o, &weights).unwrap();
                weights.w_c * r.r_c + weights.w_a * r.r_a
            })
            .sum();
        assert!((sum - (weights.w_c + weights.w_a)).abs() < 1e-12);
    }

    #[test]
    fn zero_oracle_distance_is_degenerate() {
        let o = OptimalAssignment { routes: vec![], total_distance: 0.0, proof_of_optimality: true };
        let a = Snapshot { distance: 0.0, covered: 0, agreed: 0, n_tasks: 1 };
        let b = Snapshot { distance: 1.0, covered: 1, agreed: 0, n_tasks: 1 };
        assert!(matches!(compute_reward(&a, &b, &o, &RewardWeights::default()), Err(Error::DegenerateWorld(_))));
        assert!(compute_reward(&a, &a, &o, &RewardWeights::default()).is_ok());
    }

    #[test]
    fn components_are_clipped() {
        let o = OptimalAssignment { routes: vec![], total_distance: 1.0, proof_of_optimality: true };
        let a = Snapshot { distance: 0.0, covered: 0, agreed: 0, n_tasks: 1 };
        let b = Snapshot { distance: 50.0, covered: 1, agreed: 1, n_tasks: 1 };
        for charge_uncovered in [false, true] {
            let weights = RewardWeights { charge_uncovered, ..RewardWeights::default() };
            let r = compute_reward(&a, &b, &o, &weights).unwrap();
            assert_eq!(r.r_d, -1.0);
            assert!(r.components().iter().all(|c| (-1.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn uncovered_tasks_are_charged_the_mean_oracle_cost() {
        let o = OptimalAssignment { routes: vec![], total_distance: 10.0, proof_of_optimality: true };
        let weights = RewardWeights::default();
        let empty = Snapshot { distance: 0.0, covered: 0, agreed: 0, n_tasks: 2 };
        let optimal = Snapshot { distance: 10.0, covered: 2, agreed: 2, n_tasks: 2 };
        let r = compute_reward(&empty, &optimal, &o, &weights).unwrap();
        assert_eq!(r.r_d, 0.0);
        // Covering one task at 4 instead of the mean 5 gains 1 / D*.
        let one = Snapshot { distance: 4.0, covered: 1, agreed: 1, n_tasks: 2 };
        let r = compute_reward(&empty, &one, &o, &weights).unwrap();
        assert!((r.r_d - 0.1).abs() < 1e-12);
        let raw = compute_reward(&empty, &one, &o, &RewardWeights { charge_uncovered: false, ..weights }).unwrap();
        assert!((raw.r_d + 0.4).abs() < 1e-12);
    }

    #[test]
    fn timeout_penalty_is_the_worst_terminal() {
        let weights = RewardWeights::default();
        let mut r = Reward::default();
        add_timeout_penalty(&mut r, &weights);
        assert_eq!(r.terminal, -1.0);
        assert_eq!(r.total, -weights.w_d);
    }
}
