use super::state::AgentState;
use crate::bidding::Bidder;
use crate::world::{best_insertion, WorldInstance};

/// Replaces the bids of bundle tasks with `-inf` so they can never be
/// selected again.
pub fn mask_bundle_bids(bids: &[f64], bundle: &[usize]) -> Vec<f64> {
    let mut masked = bids.to_vec();
    for &t in bundle {
        if let Some(b) = masked.get_mut(t) {
            *b = f64::NEG_INFINITY;
        }
    }
    masked
}

/// Greedy bundle construction for one agent.
///
/// Bids come from the agent's local observation, once per call unless the
/// bidder asks to be rescored after every claim. A task is eligible when its
/// (masked) bid strictly exceeds the agent's current winning-bid belief. The
/// highest eligible bid is taken repeatedly, routed by cheapest insertion and
/// claimed, until the bundle is full or nothing is eligible. Bidders that
/// enforce diminishing marginal gain have every bid capped at the bid of the
/// previous bundle entry.
pub fn build_bundle(state: &mut AgentState, world: &WorldInstance, bidder: &mut dyn Bidder, iteration: usize) {
    if state.bundle.len() >= world.capacity {
        return;
    }
    let dmg = bidder.enforces_dmg();
    let rescore = bidder.rescores_each_step();
    let agent_pos = world.agents[state.agent_id];
    let mut ceiling = match state.bundle.last() {
        Some(&t) if dmg => state.winning_bids[t],
        _ => f64::INFINITY,
    };
    let mut scored = score(state, world, bidder, iteration, ceiling);

    while state.bundle.len() < world.capacity {
        let (masked, eligible) = &scored;
        let mut pick: Option<usize> = None;
        for (j, &ok) in eligible.iter().enumerate() {
            if ok && pick.is_none_or(|p| masked[j] > masked[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        let bid = masked[j];
        let (slot, _) = best_insertion(agent_pos, &state.path.tasks, j, world);
        state.bundle.push(j);
        state.path.tasks.insert(slot, j);
        state.winning_bids[j] = bid;
        state.winners[j] = Some(state.agent_id);
        if dmg {
            ceiling = bid;
        }
        if rescore {
            scored = score(state, world, bidder, iteration, ceiling);
        } else {
            scored.1[j] = false;
        }
    }
}

/// Masked, ceiling-capped bids and the eligibility flags `c > y`.
fn score(
    state: &AgentState,
    world: &WorldInstance,
    bidder: &mut dyn Bidder,
    iteration: usize,
    ceiling: f64,
) -> (Vec<f64>, Vec<bool>) {
    let bids = bidder.bid(state, world, iteration);
    debug_assert_eq!(bids.len(), world.n_tasks());
    let mut masked = mask_bundle_bids(&bids, &state.bundle);
    for c in masked.iter_mut() {
        *c = c.min(ceiling);
    }
    let eligible = masked.iter().zip(&state.winning_bids).map(|(&c, &y)| c > y).collect();
    (masked, eligible)
}
