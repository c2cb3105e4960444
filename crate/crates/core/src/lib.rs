//! Populations of independent deep Q-learning agents with heterogeneous
//! intrinsic moral rewards, playing the iterated prisoner's dilemma with
//! learned partner selection.

pub mod agent;
pub mod error;
pub mod experiment;
pub mod game;
pub mod metrics;
pub mod moral;
pub mod neural;
pub mod simulation;

pub use error::{Error, Result};
pub use game::{payoff, Action, PayoffMatrix};
pub use moral::{intrinsic_reward, learning_reward, GameContext, IntrinsicRewardParams, MoralType};
pub use neural::{adam_step, td_loss_and_grad, AdamConfig, AdamState, Experience, Hyperparams, QNetwork};
pub use simulation::{
    build_population, run_simulation, EpisodeRecord, PopulationConfig, PopulationLabel, RunLog, SelectionReward, Simulation,
};
