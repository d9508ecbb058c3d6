//! Reward shaping and the PPO trainer.

pub mod ppo;
pub mod reward;
pub mod trainer;

pub use ppo::{ppo_update, stage_schedule, Adam, Batch, PPOConfig, TrainScenario};
pub use reward::{total_reward, RewardBreakdown, RewardWeights, TrainStage};
pub use trainer::{IterationReport, TrainSetup, Trainer};
