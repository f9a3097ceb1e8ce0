//! Multi-start insertion construction followed by local search
//! (relocate, intra-route segment reversal, exchange, tail swap).

use rand::seq::SliceRandom;

use super::{OptimalAssignment, SolverBudget};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::world::{best_insertion, route_length, WorldInstance};

const GAIN_EPS: f64 = 1e-10;

struct Routes<'w> {
    world: &'w WorldInstance,
    routes: Vec<Vec<usize>>,
}

impl<'w> Routes<'w> {
    fn cost_of(&self, a: usize, r: &[usize]) -> f64 {
        route_length(self.world.agents[a], r, self.world)
    }

    fn total(&self) -> f64 {
        self.routes.iter().enumerate().map(|(a, r)| self.cost_of(a, r)).sum()
    }

    /// Best `(agent, slot, delta)` for inserting `task`, honoring capacity.
    fn best_slot(&self, task: usize, skip: Option<usize>) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (a, r) in self.routes.iter().enumerate() {
            if Some(a) == skip || r.len() >= self.world.capacity {
                continue;
            }
            let (slot, delta) = best_insertion(self.world.agents[a], r, task, self.world);
            if best.is_none_or(|b| delta < b.2) {
                best = Some((a, slot, delta));
            }
        }
        best
    }

    fn relocate(&mut self) -> bool {
        let mut improved = false;
        for a in 0..self.routes.len() {
            let mut p = 0;
            while p < self.routes[a].len() {
                let task = self.routes[a][p];
                let before = self.cost_of(a, &self.routes[a]);
                let mut without = self.routes[a].clone();
                without.remove(p);
                let saving = before - self.cost_of(a, &without);
                let own = best_insertion(self.world.agents[a], &without, task, self.world);
                let other = self.best_slot(task, Some(a));
                let (target, slot, delta) = match other {
                    Some(o) if o.2 < own.1 => o,
                    _ => (a, own.0, own.1),
                };
                if delta < saving - GAIN_EPS {
                    self.routes[a] = without;
                    self.routes[target].insert(slot, task);
                    improved = true;
                    if target != a {
                        continue;
                    }
                }
                p += 1;
            }
        }
        improved
    }

    fn reverse_segments(&mut self) -> bool {
        let mut improved = false;
        for a in 0..self.routes.len() {
            let len = self.routes[a].len();
            let mut current = self.cost_of(a, &self.routes[a]);
            for i in 0..len {
                for k in i + 1..len {
                    let mut cand = self.routes[a].clone();
                    cand[i..=k].reverse();
                    let c = self.cost_of(a, &cand);
                    if c < current - GAIN_EPS {
                        self.routes[a] = cand;
                        current = c;
                        improved = true;
                    }
                }
            }
        }
        improved
    }

    fn exchange(&mut self) -> bool {
        let mut improved = false;
        let m = self.routes.len();
        for a in 0..m {
            for b in a + 1..m {
                for p in 0..self.routes[a].len() {
                    for q in 0..self.routes[b].len() {
                        let before = self.cost_of(a, &self.routes[a]) + self.cost_of(b, &self.routes[b]);
                        let (mut ra, mut rb) = (self.routes[a].clone(), self.routes[b].clone());
                        std::mem::swap(&mut ra[p], &mut rb[q]);
                        if self.cost_of(a, &ra) + self.cost_of(b, &rb) < before - GAIN_EPS {
                            self.routes[a] = ra;
                            self.routes[b] = rb;
                            improved = true;
                        }
                    }
                }
            }
        }
        improved
    }

    fn swap_tails(&mut self) -> bool {
        let mut improved = false;
        let m = self.routes.len();
        for a in 0..m {
            for b in a + 1..m {
                while self.swap_tail_pair(a, b) {
                    improved = true;
                }
            }
        }
        improved
    }

    /// Applies the first improving tail swap between routes `a` and `b`.
    fn swap_tail_pair(&mut self, a: usize, b: usize) -> bool {
        let cap = self.world.capacity;
        let (ra, rb) = (&self.routes[a], &self.routes[b]);
        let before = self.cost_of(a, ra) + self.cost_of(b, rb);
        for p in 0..=ra.len() {
            for q in 0..=rb.len() {
                if p + rb.len() - q > cap || q + ra.len() - p > cap {
                    continue;
                }
                let na: Vec<usize> = ra[..p].iter().chain(&rb[q..]).copied().collect();
                let nb: Vec<usize> = rb[..q].iter().chain(&ra[p..]).copied().collect();
                if self.cost_of(a, &na) + self.cost_of(b, &nb) < before - GAIN_EPS {
                    self.routes[a] = na;
                    self.routes[b] = nb;
                    return true;
                }
            }
        }
        false
    }

    fn local_search(&mut self) {
        loop {
            let mut improved = self.relocate();
            improved |= self.reverse_segments();
            improved |= self.exchange();
            improved |= self.swap_tails();
            if !improved {
                break;
            }
        }
    }
}

/// Repeatedly inserts the globally cheapest `(task, agent, slot)`.
fn global_cheapest(world: &WorldInstance) -> Option<Vec<Vec<usize>>> {
    let mut r = Routes { world, routes: vec![Vec::new(); world.n_agents()] };
    let mut pending: Vec<usize> = (0..world.n_tasks()).collect();
    while !pending.is_empty() {
        let mut pick: Option<(usize, usize, usize, f64)> = None;
        for (i, &t) in pending.iter().enumerate() {
            if let Some((a, slot, d)) = r.best_slot(t, None) {
                if pick.is_none_or(|p| d < p.3) {
                    pick = Some((i, a, slot, d));
                }
            }
        }
        let (i, a, slot, _) = pick?;
        let t = pending.swap_remove(i);
        r.routes[a].insert(slot, t);
    }
    Some(r.routes)
}

/// Inserts tasks in the given order, each at its cheapest feasible place.
fn sequential(world: &WorldInstance, order: &[usize]) -> Option<Vec<Vec<usize>>> {
    let mut r = Routes { world, routes: vec![Vec::new(); world.n_agents()] };
    for &t in order {
        let (a, slot, _) = r.best_slot(t, None)?;
        r.routes[a].insert(slot, t);
    }
    Some(r.routes)
}

/// Upper bound on the optimal team distance by multi-start construction
/// and local search. Deterministic for a fixed `budget.seed`; never claims
/// optimality.
pub fn best_known(world: &WorldInstance, budget: &SolverBudget) -> Result<OptimalAssignment> {
    budget.validate()?;
    if !world.is_coverable() {
        return Err(Error::invalid(format!("world {} cannot be covered under its capacity", world.id)));
    }
    let mut rng = stream_rng(budget.seed, Stream::SolverRestarts, 0);
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    for restart in 0..budget.restarts {
        let start = if restart == 0 {
            global_cheapest(world)
        } else {
            let mut order: Vec<usize> = (0..world.n_tasks()).collect();
            order.shuffle(&mut rng);
            sequential(world, &order)
        };
        let Some(routes) = start else { continue };
        let mut r = Routes { world, routes };
        r.local_search();
        let cost = r.total();
        if best.as_ref().is_none_or(|b| cost < b.0 - GAIN_EPS) {
            best = Some((cost, r.routes));
        }
    }
    let (_, routes) = best.ok_or_else(|| Error::invalid("no feasible construction found"))?;
    Ok(OptimalAssignment::from_routes(world, routes, false))
}
