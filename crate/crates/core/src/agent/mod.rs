//! Soft actor-critic agent with a hybrid continuous/categorical policy.

pub mod nn;
mod policy;
mod replay;
mod sac;

pub use policy::{
    act, actor_heads, argmax, greedy_action, obs_matrix, policy_forward, sample_action, ActMode, Heads, PolicyOutput, PolicyParams,
    RawAction, ACTOR_OUT, CONT_DIM, LOG_STD_MAX, LOG_STD_MIN, N_PIT,
};
pub use replay::{Batch, NStepQueue, ReplayBuffer, Transition};
pub use sac::{actor_loss, critic_targets, standard_normal, ActorPass, Losses, Sac, SacConfig};
mod train;
pub use train::{evaluate, expected_return, train, train_with, EvalMetrics, EvalPoint, Evaluation, TrainConfig, TrainOutcome};
mod checkpoint;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Tensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
