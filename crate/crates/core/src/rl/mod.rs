//! Centralized-critic PPO training of the shared bidding actor.

pub mod critic;
pub mod imitation;
pub mod ppo;
pub mod reward;
pub mod rollout;
pub mod train;

pub use critic::{build_critic_input, critic_backward, critic_forward, CriticDims, CriticInput};
pub use imitation::{demonstrations, imitation_pretrain, Demonstration, ImitationConfig};
pub use ppo::{adam_step, clipped_surrogate, gaussian_entropy, ppo_update, AdamState, OptimizerKind, OptimizerState, PPOConfig, UpdateStats};
pub use reward::{add_terminal_bonus, compute_reward, Reward, RewardWeights, Snapshot};
pub use rollout::{collect_rollouts, gae, normalize_advantages, AgentStream, RolloutBatch, RolloutBidder, Transition, WorldRollout};
pub use train::{probe_eta, probe_set, read_curve, train, write_curve, ActorKind, CurveRow, TrainConfig, TrainFiles, TrainOutcome};
