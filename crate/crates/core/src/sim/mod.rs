//! Simulated federated training: time model, strategies, the round and
//! experiment drivers.

mod experiment;
mod round;
mod strategy;
mod time;

pub use experiment::{build_environment, run_experiment, run_strategy, time_to_target, ExperimentOutcome, StopRule};
pub use round::{evaluate, run_round, Environment, RoundMetrics, RoundOutput, RunSettings};
pub use strategy::{Budget, ControllerSettings, RoundFeedback, RoundPlan, StrategyConfig, StrategyState};
pub use time::{simulate_round_time, DeviceDelay, RoundTiming, TimeModel};
