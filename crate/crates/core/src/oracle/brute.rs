use super::OptimalAssignment;
use crate::error::{Error, Result};
use crate::world::{route_length, WorldInstance};

pub const BRUTE_FORCE_MAX_TASKS: usize = 8;

/// Shortest open route over exactly the tasks of `subset`, by trying every
/// permutation.
fn best_order(world: &WorldInstance, agent: usize, subset: &[usize]) -> (f64, Vec<usize>) {
    fn permute(world: &WorldInstance, agent: usize, items: &mut Vec<usize>, k: usize, best: &mut (f64, Vec<usize>)) {
        if k == items.len() {
            let d = route_length(world.agents[agent], items, world);
            if d < best.0 {
                *best = (d, items.clone());
            }
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(world, agent, items, k + 1, best);
            items.swap(k, i);
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut items = subset.to_vec();
    permute(world, agent, &mut items, 0, &mut best);
    best
}

/// Exhaustive enumeration of every split of the tasks among agents and
/// every visiting order within each agent's share. Refuses worlds with
/// more than [`BRUTE_FORCE_MAX_TASKS`] tasks.
pub fn brute_force(world: &WorldInstance) -> Result<OptimalAssignment> {
    let n = world.n_tasks();
    let m = world.n_agents();
    if n > BRUTE_FORCE_MAX_TASKS {
        return Err(Error::invalid(format!("brute force refuses {n} tasks (limit {BRUTE_FORCE_MAX_TASKS})")));
    }
    let subsets = 1usize << n;
    let mut table: Vec<Vec<(f64, Vec<usize>)>> = Vec::with_capacity(m);
    for a in 0..m {
        let row = (0..subsets)
            .map(|s| {
                let members: Vec<usize> = (0..n).filter(|j| s & (1 << j) != 0).collect();
                if members.len() > world.capacity {
                    (f64::INFINITY, members)
                } else {
                    best_order(world, a, &members)
                }
            })
            .collect();
        table.push(row);
    }

    fn split(a: usize, remaining: usize, table: &[Vec<(f64, Vec<usize>)>], chosen: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        let m = table.len();
        if a + 1 == m {
            let cost: f64 = chosen.iter().enumerate().map(|(b, &s)| table[b][s].0).sum::<f64>() + table[a][remaining].0;
            if cost < best.0 {
                let mut assignment = chosen.clone();
                assignment.push(remaining);
                *best = (cost, assignment);
            }
            return;
        }
        // Every submask of `remaining`, including the empty one.
        let mut sub = remaining;
        loop {
            chosen.push(sub);
            split(a + 1, remaining & !sub, table, chosen, best);
            chosen.pop();
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & remaining;
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    split(0, subsets - 1, &table, &mut Vec::new(), &mut best);
    if !best.0.is_finite() {
        return Err(Error::invalid(format!("world {} has no feasible assignment", world.id)));
    }
    let routes = best.1.iter().enumerate().map(|(a, &s)| table[a][s].1.clone()).collect();
    Ok(OptimalAssignment::from_routes(world, routes, true))
}
