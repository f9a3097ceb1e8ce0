//! Problem instances, random generation and route geometry.

use std::ops::RangeInclusive;
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{stream_rng, Stream};

/// A planar position in distance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Identifier of a world. Generated worlds use `"{seed}-{ordinal}"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorldId(pub String);

impl WorldId {
    pub fn generated(seed: u64, ordinal: u64) -> Self {
        WorldId(format!("{seed}-{ordinal}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for WorldId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Immutable allocation problem: agents, tasks, a square workspace and the
/// per-agent task capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldInstance {
    pub id: WorldId,
    pub workspace_side: f64,
    pub capacity: usize,
    pub agents: Vec<Point2>,
    pub tasks: Vec<Point2>,
}

impl WorldInstance {
    pub fn new(
        id: WorldId,
        workspace_side: f64,
        capacity: usize,
        agents: Vec<Point2>,
        tasks: Vec<Point2>,
    ) -> Result<Self> {
        let world = Self { id, workspace_side, capacity, agents, tasks };
        world.validate()?;
        Ok(world)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.workspace_side * std::f64::consts::SQRT_2
    }

    pub fn is_coverable(&self) -> bool {
        self.n_agents() * self.capacity >= self.n_tasks()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.workspace_side.is_finite() && self.workspace_side > 0.0) {
            return Err(Error::invalid(format!(
                "world {}: workspace side must be positive, got {}",
                self.id, self.workspace_side
            )));
        }
        if self.agents.is_empty() {
            return Err(Error::invalid(format!("world {}: no agents", self.id)));
        }
        if self.tasks.is_empty() {
            return Err(Error::invalid(format!("world {}: no tasks", self.id)));
        }
        if self.capacity == 0 {
            return Err(Error::invalid(format!("world {}: capacity must be positive", self.id)));
        }
        let side = self.workspace_side;
        let inside = |p: &Point2| p.is_finite() && (0.0..=side).contains(&p.x) && (0.0..=side).contains(&p.y);
        if let Some(p) = self.agents.iter().chain(&self.tasks).find(|p| !inside(p)) {
            return Err(Error::invalid(format!(
                "world {}: position ({}, {}) outside [0, {side}]^2",
                self.id, p.x, p.y
            )));
        }
        Ok(())
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task < self.n_tasks() {
            Ok(())
        } else {
            Err(Error::invalid(format!("task index {task} out of range for {} tasks", self.n_tasks())))
        }
    }
}

/// Ordered task route of one agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub owner: usize,
    pub tasks: Vec<usize>,
}

impl Path {
    pub fn new(owner: usize) -> Self {
        Self { owner, tasks: Vec::new() }
    }

    pub fn with_tasks(owner: usize, tasks: Vec<usize>) -> Self {
        Self { owner, tasks }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn contains(&self, task: usize) -> bool {
        self.tasks.contains(&task)
    }

    pub fn validate(&self, world: &WorldInstance) -> Result<()> {
        for (i, &t) in self.tasks.iter().enumerate() {
            world.check_task(t)?;
            if self.tasks[..i].contains(&t) {
                return Err(Error::invalid(format!("task {t} appears twice in path")));
            }
        }
        Ok(())
    }
}

/// How the per-agent capacity of a generated world is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum CapacityRule {
    /// Capacity equals the task count, so capacity never binds.
    #[default]
    Unconstrained,
    /// A fixed capacity, raised to the smallest value that keeps the world
    /// coverable.
    Fixed(usize),
}

impl CapacityRule {
    pub fn capacity(self, n_agents: usize, n_tasks: usize) -> usize {
        match self {
            CapacityRule::Unconstrained => n_tasks.max(1),
            CapacityRule::Fixed(l) => l.max(n_tasks.div_ceil(n_agents)).max(1),
        }
    }
}

/// Distribution parameters for [`generate_world`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub n_agents: usize,
    pub task_count: RangeInclusive<usize>,
    pub side: RangeInclusive<f64>,
    pub capacity: CapacityRule,
}

impl WorldSpec {
    /// Training distribution: 5 agents, 10 to 20 tasks, sides 25 to 55.
    pub fn training() -> Self {
        Self {
            n_agents: 5,
            task_count: 10..=20,
            side: 25.0..=55.0,
            capacity: CapacityRule::Unconstrained,
        }
    }

    /// Validation distribution for `n_agents`: 2 to 4 tasks per agent.
    pub fn validation(n_agents: usize) -> Self {
        Self {
            n_agents,
            task_count: 2 * n_agents..=4 * n_agents,
            side: 25.0..=55.0,
            capacity: CapacityRule::Unconstrained,
        }
    }
}

/// Samples world `ordinal` of the dataset rooted at `seed`. Identical
/// arguments always give a bit-identical world.
pub fn generate_world(seed: u64, ordinal: u64, spec: &WorldSpec) -> Result<WorldInstance> {
    if spec.n_agents == 0 {
        return Err(Error::invalid("n_agents must be at least 1"));
    }
    if spec.task_count.is_empty() || *spec.task_count.start() == 0 {
        return Err(Error::invalid(format!(
            "task count range {:?} must be nonempty and positive",
            spec.task_count
        )));
    }
    let (side_lo, side_hi) = (*spec.side.start(), *spec.side.end());
    if !(side_lo.is_finite() && side_hi.is_finite() && side_lo > 0.0 && side_lo <= side_hi) {
        return Err(Error::invalid(format!("side range {:?} must be nonempty and positive", spec.side)));
    }

    let mut rng = stream_rng(seed, Stream::WorldGen, ordinal);
    let n_tasks = rng.gen_range(spec.task_count.clone());
    let side = if side_lo == side_hi { side_lo } else { rng.gen_range(side_lo..=side_hi) };
    let point = |rng: &mut crate::rng::StreamRng| Point2::new(rng.gen::<f64>() * side, rng.gen::<f64>() * side);
    let agents = (0..spec.n_agents).map(|_| point(&mut rng)).collect();
    let tasks = (0..n_tasks).map(|_| point(&mut rng)).collect();
    WorldInstance::new(
        WorldId::generated(seed, ordinal),
        side,
        spec.capacity.capacity(spec.n_agents, n_tasks),
        agents,
        tasks,
    )
}

/// Length of the open route `agent_pos -> task_1 -> ... -> task_k`.
pub fn path_length(agent_pos: Point2, path: &Path, world: &WorldInstance) -> Result<f64> {
    for &t in &path.tasks {
        world.check_task(t)?;
    }
    Ok(route_length(agent_pos, &path.tasks, world))
}

/// Unchecked variant of [`path_length`] over a bare task sequence.
pub(crate) fn route_length(agent_pos: Point2, tasks: &[usize], world: &WorldInstance) -> f64 {
    let mut total = 0.0;
    let mut at = agent_pos;
    for &t in tasks {
        let next = world.tasks[t];
        total += at.dist(&next);
        at = next;
    }
    total
}

/// Cost of inserting `task` before position `slot` (or appending when
/// `slot == tasks.len()`).
#[inline]
pub(crate) fn insertion_delta(agent_pos: Point2, tasks: &[usize], task: usize, slot: usize, world: &WorldInstance) -> f64 {
    let q = world.tasks[task];
    let prev = if slot == 0 { agent_pos } else { world.tasks[tasks[slot - 1]] };
    let delta = match tasks.get(slot) {
        Some(&next) => {
            let next = world.tasks[next];
            prev.dist(&q) + q.dist(&next) - prev.dist(&next)
        }
        None => prev.dist(&q),
    };
    delta.max(0.0)
}

/// Slot minimizing the route-length increase and that increase, ignoring
/// capacity and membership checks. Ties go to the smallest slot.
pub(crate) fn best_insertion(agent_pos: Point2, tasks: &[usize], task: usize, world: &WorldInstance) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for slot in 0..=tasks.len() {
        let delta = insertion_delta(agent_pos, tasks, task, slot, world);
        if delta < best.1 {
            best = (slot, delta);
        }
    }
    best
}

/// Cheapest insertion of `task` into `path`: returns the slot `n` and the
/// increase `D(p with task at n) - D(p)`.
pub fn cheapest_insertion(agent_pos: Point2, path: &Path, task: usize, world: &WorldInstance) -> Result<(usize, f64)> {
    world.check_task(task)?;
    if path.contains(task) {
        return Err(Error::invalid(format!("task {task} is already in the path")));
    }
    if path.len() >= world.capacity {
        return Err(Error::Capacity { len: path.len(), capacity: world.capacity });
    }
    Ok(best_insertion(agent_pos, &path.tasks, task, world))
}

pub fn read_worlds(path: &FsPath) -> Result<Vec<WorldInstance>> {
    let worlds: Vec<WorldInstance> = io::read_jsonl(path)?;
    for (i, w) in worlds.iter().enumerate() {
        w.validate().map_err(|e| Error::InvalidRecord { line: i + 1, reason: e.to_string() })?;
    }
    Ok(worlds)
}

pub fn write_worlds(path: &FsPath, worlds: &[WorldInstance]) -> Result<()> {
    io::write_jsonl(path, worlds)
}
