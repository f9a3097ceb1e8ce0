//! CBBA conflict resolution between one receiver and one message.

use super::state::{AgentState, Message};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Update,
    Reset,
    Leave,
}

/// `true` when bid `a` held by `owner_a` beats bid `b` held by `owner_b`.
/// Equal bids go to the lower agent index.
#[inline]
fn outbids(a: f64, owner_a: usize, b: f64, owner_b: usize) -> bool {
    a > b || (a == b && owner_a < owner_b)
}

/// Decision for one task given the sender's and receiver's beliefs.
///
/// `k` is the sender, `i` the receiver, `s_k`/`s_i` their timestamp
/// vectors before this message is merged.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    i: usize,
    k: usize,
    z_k: Option<usize>,
    y_k: f64,
    z_i: Option<usize>,
    y_i: f64,
    s_k: &[u64],
    s_i: &[u64],
) -> Action {
    use Action::*;
    let newer = |m: usize| s_k[m] > s_i[m];
    match z_k {
        Some(zk) if zk == k => match z_i {
            Some(zi) if zi == i => {
                if outbids(y_k, k, y_i, i) {
                    Update
                } else {
                    Leave
                }
            }
            Some(zi) if zi == k => Update,
            Some(m) => {
                if newer(m) || outbids(y_k, k, y_i, m) {
                    Update
                } else {
                    Leave
                }
            }
            None => Update,
        },
        Some(zk) if zk == i => match z_i {
            Some(zi) if zi == i => Leave,
            Some(zi) if zi == k => Reset,
            Some(m) => {
                if newer(m) {
                    Reset
                } else {
                    Leave
                }
            }
            None => Leave,
        },
        Some(m) => match z_i {
            Some(zi) if zi == i => {
                if newer(m) && outbids(y_k, m, y_i, i) {
                    Update
                } else {
                    Leave
                }
            }
            Some(zi) if zi == k => {
                if newer(m) {
                    Update
                } else {
                    Reset
                }
            }
            Some(zi) if zi == m => {
                if newer(m) {
                    Update
                } else {
                    Leave
                }
            }
            Some(n) => {
                if newer(m) && newer(n) {
                    Update
                } else if newer(m) && outbids(y_k, m, y_i, n) {
                    Update
                } else if newer(n) && s_i[m] > s_k[m] {
                    Reset
                } else {
                    Leave
                }
            }
            None => {
                if newer(m) {
                    Update
                } else {
                    Leave
                }
            }
        },
        None => match z_i {
            Some(zi) if zi == i => Leave,
            Some(zi) if zi == k => Update,
            Some(m) => {
                if newer(m) {
                    Update
                } else {
                    Leave
                }
            }
            None => Leave,
        },
    }
}

/// Merges `msg` into `receiver` task by task, then releases the receiver's
/// bundle from the earliest task it no longer wins. Returns whether any
/// `(y, z)` entry changed.
pub fn resolve_conflicts(receiver: &mut AgentState, msg: &Message) -> Result<bool> {
    let n = receiver.n_tasks();
    if msg.winning_bids.len() != n || msg.winners.len() != n || msg.timestamps.len() != receiver.timestamps.len() {
        return Err(Error::invalid("message dimensions do not match receiver"));
    }
    let i = receiver.agent_id;
    let k = msg.sender;
    if k == i {
        return Ok(false);
    }
    let mut changed = false;
    for j in 0..n {
        let action = decide(
            i,
            k,
            msg.winners[j],
            msg.winning_bids[j],
            receiver.winners[j],
            receiver.winning_bids[j],
            &msg.timestamps,
            &receiver.timestamps,
        );
        match action {
            Action::Update => {
                if receiver.winners[j] != msg.winners[j] || receiver.winning_bids[j] != msg.winning_bids[j] {
                    changed = true;
                }
                receiver.winners[j] = msg.winners[j];
                receiver.winning_bids[j] = msg.winning_bids[j];
            }
            Action::Reset => {
                if receiver.winners[j].is_some() || receiver.winning_bids[j] != 0.0 {
                    changed = true;
                }
                receiver.winners[j] = None;
                receiver.winning_bids[j] = 0.0;
            }
            Action::Leave => {}
        }
    }

    for (m, &ts) in msg.timestamps.iter().enumerate() {
        if m == i {
            continue;
        }
        if m == k {
            receiver.timestamps[m] = receiver.timestamps[m].max(ts);
        } else if ts > receiver.timestamps[m] {
            receiver.timestamps[m] = ts;
        }
    }

    if let Some(lost) = receiver.bundle.iter().position(|&t| receiver.winners[t] != Some(i)) {
        changed |= release_from(receiver, lost)?;
    }
    Ok(changed)
}

/// Drops the bundle task at `bundle_index` and every task added after it.
/// Released tasks the agent still believes it wins are cleared to
/// `(0, None)`; tasks already reassigned keep their new owner. Returns
/// whether any `(y, z)` entry changed.
pub fn release_from(state: &mut AgentState, bundle_index: usize) -> Result<bool> {
    if bundle_index >= state.bundle.len() {
        return Err(Error::invalid(format!(
            "bundle index {bundle_index} out of range for bundle of {}",
            state.bundle.len()
        )));
    }
    let released: Vec<usize> = state.bundle.drain(bundle_index..).collect();
    let mut changed = false;
    for &t in &released {
        if state.winners[t] == Some(state.agent_id) {
            state.winners[t] = None;
            state.winning_bids[t] = 0.0;
            changed = true;
        }
    }
    state.path.tasks.retain(|t| !released.contains(t));
    Ok(changed)
}
