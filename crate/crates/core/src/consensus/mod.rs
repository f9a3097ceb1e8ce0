//! Two-phase auction-consensus protocol: per-agent greedy bundle
//! construction followed by CBBA conflict resolution, repeated in
//! synchronous rounds.

mod bundle;
mod rules;
mod run;
mod state;

pub use bundle::{build_bundle, mask_bundle_bids};
pub use rules::{decide, release_from, resolve_conflicts, Action};
pub use run::{covered_tasks, run_allocation, run_round, team_distance, RunConfig, RunResult, Topology};
pub use state::{validate_agreement, validate_state, AgentState, Message};
