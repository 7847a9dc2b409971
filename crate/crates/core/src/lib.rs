//! Continuous-control toolkit for a muscle-driven walking surrogate.
//!
//! The crate trains expert agents with DDPG, PPO and TRPO on a deterministic
//! point-mass pelvis model driven by 19 muscle excitations, then transfers
//! the expert behaviour to a fresh learner with DAgger and three gated or
//! mixed variants of it.
//!
//! * [`env`]: the surrogate environment, snapshots and the reference controller.
//! * [`nn`]: dense networks, backpropagation and Adam.
//! * [`rl`]: replay buffer, GAE, Gaussian policy heads and the three trainers.
//! * [`imitation`]: DAgger iterations, gated labeling and evaluation.
//! * [`harness`]: configuration, checkpoints, CSV reports and the verification suite.

pub mod env;
pub mod error;
pub mod harness;
pub mod imitation;
pub mod nn;
pub mod rl;
pub(crate) mod seeding;

pub use env::{
    reward_fn, EnvConfig, EnvSnapshot, EnvState, Environment, MuscleAction, MuscleMix,
    Observation, OracleController, StepResult, ACTION_DIM, OBS_DIM,
};
pub use error::{Error, Result};
pub use imitation::{
    evaluate, run_dagger, AggregatedDataset, Controller, DaggerConfig, DaggerRun, DaggerVariant,
    IterationReport, Policy,
};
pub use nn::{AdamState, GradBundle, Mat, MlpParams, OutputActivation};
pub use rl::{train, Agent, AlgorithmId, Budget, TrainReport};
