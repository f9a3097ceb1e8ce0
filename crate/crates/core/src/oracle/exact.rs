//! Branch-and-bound over route extensions.
//!
//! Agents are routed one after another: at each node the current agent
//! either extends its route with an unserved task or closes it, handing
//! over to the next agent. The lower bound on the remaining cost is a
//! minimum spanning tree over the unserved tasks plus one super-root whose
//! edge to task `j` costs the distance from the nearest open route end
//! (the current agent's last stop or a later agent's start). Every
//! completion is such a spanning forest, so the bound is admissible.
//! A transposition table prunes nodes reached again at no lower cost.

use std::collections::HashMap;
use std::time::Instant;

use super::{best_known, OptimalAssignment, SolverBudget};
use crate::error::{Error, Result};
use crate::world::WorldInstance;

const EPS: f64 = 1e-12;
const MAX_MEMO: usize = 4_000_000;

struct Search<'w> {
    n: usize,
    m: usize,
    capacity: usize,
    dt: Vec<f64>,
    da: Vec<f64>,
    /// `suffix_start[a * n + j]`: min start distance to `j` over agents `>= a`.
    suffix_start: Vec<f64>,
    full: u64,
    best: f64,
    best_routes: Vec<Vec<usize>>,
    routes: Vec<Vec<usize>>,
    nodes: u64,
    budget: &'w SolverBudget,
    started: Instant,
    aborted: bool,
    memo: HashMap<(u64, u32), f64>,
    track_count: bool,
}

impl<'w> Search<'w> {
    fn new(world: &WorldInstance, budget: &'w SolverBudget) -> Self {
        let n = world.n_tasks();
        let m = world.n_agents();
        let mut dt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dt[i * n + j] = world.tasks[i].dist(&world.tasks[j]);
            }
        }
        let mut da = vec![0.0; m * n];
        for a in 0..m {
            for j in 0..n {
                da[a * n + j] = world.agents[a].dist(&world.tasks[j]);
            }
        }
        let mut suffix_start = vec![f64::INFINITY; (m + 1) * n];
        for a in (0..m).rev() {
            for j in 0..n {
                suffix_start[a * n + j] = da[a * n + j].min(suffix_start[(a + 1) * n + j]);
            }
        }
        Self {
            n,
            m,
            capacity: world.capacity,
            dt,
            da,
            suffix_start,
            full: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
            best: f64::INFINITY,
            best_routes: vec![Vec::new(); m],
            routes: vec![Vec::new(); m],
            nodes: 0,
            budget,
            started: Instant::now(),
            aborted: false,
            memo: HashMap::new(),
            track_count: world.capacity < n,
        }
    }

    #[inline]
    fn step_cost(&self, a: usize, end: Option<usize>, j: usize) -> f64 {
        match end {
            Some(e) => self.dt[e * self.n + j],
            None => self.da[a * self.n + j],
        }
    }

    /// Spanning-forest bound on the cost of serving every task outside
    /// `mask`, given agent `a` at `end` with `count` tasks routed.
    fn lower_bound(&self, a: usize, end: Option<usize>, count: usize, mask: u64) -> f64 {
        let n = self.n;
        let mut key = [f64::INFINITY; 64];
        let mut open = [0usize; 64];
        let mut k = 0;
        let can_extend = a < self.m && count < self.capacity;
        for j in 0..n {
            if mask & (1 << j) != 0 {
                continue;
            }
            let mut root = if a < self.m { self.suffix_start[(a + 1) * n + j] } else { f64::INFINITY };
            if can_extend {
                root = root.min(self.step_cost(a, end, j));
            }
            key[k] = root;
            open[k] = j;
            k += 1;
        }
        let mut total = 0.0;
        while k > 0 {
            let mut pick = 0;
            for q in 1..k {
                if key[q] < key[pick] {
                    pick = q;
                }
            }
            let cost = key[pick];
            if !cost.is_finite() {
                return f64::INFINITY;
            }
            total += cost;
            let v = open[pick];
            k -= 1;
            key[pick] = key[k];
            open[pick] = open[k];
            for q in 0..k {
                let d = self.dt[v * n + open[q]];
                if d < key[q] {
                    key[q] = d;
                }
            }
        }
        total
    }

    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        self.nodes += 1;
        if self.nodes > self.budget.max_nodes {
            self.aborted = true;
        } else if self.nodes % 4096 == 0 {
            if let Some(limit) = self.budget.time_limit {
                if self.started.elapsed() > limit {
                    self.aborted = true;
                }
            }
        }
        self.aborted
    }

    fn dfs(&mut self, a: usize, end: Option<usize>, count: usize, mask: u64, g: f64) {
        if self.out_of_budget() {
            return;
        }
        if mask == self.full {
            if g < self.best - EPS {
                self.best = g;
                self.best_routes = self.routes.clone();
            }
            return;
        }
        if a >= self.m {
            return;
        }
        let end_code = end.map_or(0, |e| e as u32 + 1);
        let key = (mask, ((a as u32) << 16) | (end_code << 8) | if self.track_count { count as u32 } else { 0 });
        let room = self.memo.len() < MAX_MEMO;
        match self.memo.get_mut(&key) {
            Some(seen) if *seen <= g + EPS => return,
            Some(seen) => *seen = g,
            None if room => {
                self.memo.insert(key, g);
            }
            None => {}
        }

        let remaining = self.n - mask.count_ones() as usize;
        let last = a + 1 == self.m;
        if last && remaining > self.capacity - count {
            return;
        }

        // (bound, child) where child = Some(j) extends, None closes.
        let mut children: Vec<(f64, Option<usize>)> = Vec::with_capacity(remaining + 1);
        if count < self.capacity {
            for j in 0..self.n {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let g2 = g + self.step_cost(a, end, j);
                let b = g2 + self.lower_bound(a, Some(j), count + 1, mask | (1 << j));
                if b < self.best - EPS {
                    children.push((b, Some(j)));
                }
            }
        }
        if !last {
            let b = g + self.lower_bound(a + 1, None, 0, mask);
            if b < self.best - EPS {
                children.push((b, None));
            }
        }
        children.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (b, child) in children {
            if b >= self.best - EPS {
                break;
            }
            match child {
                Some(j) => {
                    self.routes[a].push(j);
                    self.dfs(a, Some(j), count + 1, mask | (1 << j), g + self.step_cost(a, end, j));
                    self.routes[a].pop();
                }
                None => self.dfs(a + 1, None, 0, mask, g),
            }
            if self.aborted {
                return;
            }
        }
    }
}

/// Lower bound on the optimal team distance used at the search root.
pub fn root_lower_bound(world: &WorldInstance) -> f64 {
    let budget = SolverBudget::default();
    let s = Search::new(world, &budget);
    s.lower_bound(0, None, 0, 0)
}

/// Minimizes the summed open-route length over all capacity-respecting
/// assignments of tasks to ordered agent routes. The local-search solution
/// seeds the incumbent; if the node or time budget runs out the incumbent
/// is returned with `proof_of_optimality = false`.
pub fn solve_exact(world: &WorldInstance, budget: &SolverBudget) -> Result<OptimalAssignment> {
    budget.validate()?;
    if world.n_tasks() > 64 {
        return Err(Error::invalid(format!("exact search supports at most 64 tasks, got {}", world.n_tasks())));
    }
    if !world.is_coverable() {
        return Err(Error::invalid(format!("world {} cannot be covered under its capacity", world.id)));
    }
    let seed = best_known(world, budget)?;
    let mut search = Search::new(world, budget);
    search.best = seed.total_distance;
    search.best_routes = seed.routes.iter().map(|r| r.tasks.clone()).collect();
    search.dfs(0, None, 0, 0, 0.0);
    let proof = !search.aborted;
    Ok(OptimalAssignment::from_routes(world, search.best_routes, proof))
}
