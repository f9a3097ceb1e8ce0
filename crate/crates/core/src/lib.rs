//! Decentralized multi-robot task allocation by auction and consensus,
//! with hand-crafted and learned bidding policies, an exact min-sum
//! oracle, PPO training and evaluation tooling.

pub mod bidding;
pub mod consensus;
pub mod error;
pub mod eval;
pub mod io;
pub mod oracle;
pub mod rl;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
