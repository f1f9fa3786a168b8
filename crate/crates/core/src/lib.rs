//! Mean-field type games: exact mean-field maps, benchmark environments,
//! simplex quantization, stage-game solvers, tabular Nash Q-learning,
//! a DDPG trainer, finite-population simulation and exploitability evaluation.

pub mod ddpg;
pub mod envs;
pub mod error;
pub mod eval;
pub mod meanfield;
pub mod nagents;
pub mod nashq;
pub mod neural;
pub mod policy;
pub mod quantize;
pub mod stagegame;

pub use error::{Error, Result};
pub use meanfield::{
    action_distance, l1_distance, mean_field_reward, mean_field_transition, state_distance, DecisionRule, Distribution,
    MeanFieldState,
};
