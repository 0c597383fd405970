//! Multi-round driver with round and simulated-time caps.

use super::round::{run_round, Environment, RoundMetrics, RunSettings};
use super::strategy::{ControllerSettings, StrategyConfig, StrategyState};
use crate::io::config::{DatasetConfig, ExperimentConfig};
use crate::io::{idx, synthetic};
use crate::model::{partition, ModelSpec, ParamVector};
use crate::rng::{self, Purpose};
use crate::Result;

/// When to stop: after `rounds` rounds, or after the first round that ends at
/// or beyond `time_budget_s` of simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub rounds: u64,
    pub time_budget_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub final_params: ParamVector,
}

/// Load or generate the data, split it across clients and initialise the
/// model. Shared by every strategy run from the same config.
pub fn build_environment(config: &ExperimentConfig) -> Result<Environment> {
    let (train, eval) = match &config.dataset {
        DatasetConfig::Synthetic(spec) => {
            let s = synthetic::generate_synthetic(spec, config.seed)?;
            (s.train, s.eval)
        }
        DatasetConfig::Idx { train_images, train_labels, eval_images, eval_labels, num_classes } => (
            idx::load_idx_dataset(train_images, train_labels, *num_classes)?,
            idx::load_idx_dataset(eval_images, eval_labels, *num_classes)?,
        ),
    };
    let spec = ModelSpec::new(config.model.clone(), train.feature_dim(), train.num_classes())?;
    let mut part_rng = rng::stream(config.seed, 0, 0, Purpose::Partition);
    let shards = partition(&train, config.num_clients, config.partition, &mut part_rng)?;
    let init = spec.init_params(config.seed);
    Ok(Environment { spec, train, eval, shards, init })
}

/// Run one strategy from `env.init`, handing each round's metrics to `sink`
/// as soon as the round finishes.
pub fn run_strategy(
    env: &Environment,
    settings: &RunSettings,
    controller: &ControllerSettings,
    strategy: StrategyConfig,
    stop: StopRule,
    sink: &mut dyn FnMut(&RoundMetrics) -> Result<()>,
) -> Result<ExperimentOutcome> {
    let mut state = StrategyState::new(strategy, controller)?;
    let mut w = env.init.clone();
    let mut metrics = Vec::new();
    let mut clock = 0.0;
    for round in 1..=stop.rounds {
        if stop.time_budget_s.is_some_and(|budget| clock >= budget) {
            break;
        }
        let out = run_round(env, settings, &mut state, &w, round, clock)?;
        log::debug!(
            "{strategy} round {round}: loss {:.4} acc {:.4} I {} eps {} t {:.3}s",
            out.metrics.global_loss,
            out.metrics.eval_accuracy,
            out.metrics.i_t,
            out.metrics.eps_t,
            out.metrics.cumulative_time_s
        );
        clock = out.metrics.cumulative_time_s;
        sink(&out.metrics)?;
        metrics.push(out.metrics);
        w = out.params;
    }
    Ok(ExperimentOutcome { metrics, final_params: w })
}

/// Validate `config`, build its environment and run its strategy.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let env = build_environment(config)?;
    run_strategy(&env, &config.run_settings(), &config.controller_settings(), config.strategy, config.stop_rule(), &mut |_| Ok(()))
}

/// Simulated time of the first round whose evaluation accuracy reaches
/// `target`.
pub fn time_to_target(metrics: &[RoundMetrics], target: f64) -> Option<f64> {
    metrics.iter().find(|m| m.eval_accuracy >= target).map(|m| m.cumulative_time_s)
}
