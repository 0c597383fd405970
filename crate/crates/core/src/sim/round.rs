//! One federated round: local training, compression, aggregation, global
//! step and time accounting.

use serde::{Deserialize, Serialize};

use super::strategy::{Budget, RoundFeedback, StrategyState};
use super::time::{simulate_round_time, TimeModel};
use crate::compressor::{self, CompressedUpdate, SamplingPlan};
use crate::controller::DeltaEstimate;
use crate::exec::Execution;
use crate::model::{self, local_update_run, ClientShard, Dataset, ModelSpec, ParamVector};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Everything that stays fixed across rounds and strategies.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub eval: Dataset,
    pub shards: Vec<ClientShard>,
    pub init: ParamVector,
}

/// Per-run scalar settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub time_model: TimeModel,
    pub execution: Execution,
}

/// Record emitted after every round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    /// Weighted final-batch loss reported by the clients.
    pub global_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub i_t: u32,
    pub eps_t: f64,
    /// Delay components of the device that finished last.
    pub t_download_s: f64,
    pub t_compute_s: f64,
    pub t_upload_s: f64,
    pub t_round_s: f64,
    pub cumulative_time_s: f64,
    /// Atoms actually uploaded, summed over clients.
    pub atoms_up: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub params: ParamVector,
    pub metrics: RoundMetrics,
    pub feedback: RoundFeedback,
}

struct ClientResult {
    start_loss: f64,
    final_loss: f64,
    update: ParamVector,
    compressed: CompressedUpdate,
}

/// Mean cross-entropy and top-1 accuracy of `params` on `eval_set`.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, eval_set: &Dataset, execution: Execution) -> Result<(f64, f64)> {
    const CHUNK: usize = 512;
    if eval_set.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let n = eval_set.len();
    let chunks = n.div_ceil(CHUNK);
    let parts = execution.try_map_indexed(chunks, |c| -> Result<(f64, usize)> {
        let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(n)).collect();
        let batch = eval_set.gather(&idx);
        let loss = spec.loss(params, &batch)? * batch.len() as f64;
        let correct = batch.iter().filter(|ex| model::argmax(&spec.logits(params, ex.features)) == ex.label).count();
        Ok((loss, correct))
    })?;
    let (loss, correct) = parts.into_iter().fold((0.0, 0), |(l, c), (pl, pc)| (l + pl, c + pc));
    Ok((loss / n as f64, correct as f64 / n as f64))
}

/// Variance constants measured from this round's uncompressed updates: the
/// client means of `‖u‖₁²` and `−‖u‖₂²`, plus the spread of the updates
/// around their mean as the sampling-noise part of `δ₂`.
fn delta_estimate(updates: &[&ParamVector]) -> Option<DeltaEstimate> {
    let n = updates.len() as f64;
    let dim = updates.first()?.dim();
    let mut mean = vec![0.0; dim];
    let (mut d1, mut d2) = (0.0, 0.0);
    for u in updates {
        let l1 = u.norm_l1();
        d1 += l1 * l1;
        d2 -= u.norm_sq();
        for (m, x) in mean.iter_mut().zip(u.as_slice()) {
            *m += x / n;
        }
    }
    let spread: f64 = updates.iter().map(|u| u.as_slice().iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>()).sum::<f64>() / n;
    Some(DeltaEstimate { delta1: d1 / n, delta2: d2 / n + spread })
}

/// Run round `round` (1-based) from `w_t` under the strategy's current plan,
/// then feed the outcome back to the strategy.
pub fn run_round(
    env: &Environment,
    settings: &RunSettings,
    strategy: &mut StrategyState,
    w_t: &ParamVector,
    round: u64,
    cumulative_before: f64,
) -> Result<RoundOutput> {
    let plan = strategy.plan();
    let num_clients = env.shards.len();
    if num_clients == 0 {
        return Err(Error::config("no clients"));
    }
    let dim = env.spec.dim();
    w_t.check_dim(dim)?;

    let results = settings.execution.try_map_indexed(num_clients, |n| -> Result<ClientResult> {
        let shard = &env.shards[n];
        let client = shard.client_id as u64;
        let mut batch_rng = rng::stream(settings.seed, round, client, Purpose::MiniBatch);
        let run = local_update_run(&env.spec, w_t, &env.train, shard, plan.local_steps, settings.lr, settings.batch_size, &mut batch_rng)?;
        let decomp = compressor::decompose(&run.agg_update);
        let sampling = match plan.budget {
            Budget::Lossless => SamplingPlan::lossless(decomp.len()),
            Budget::Atoms(eps) => compressor::optimal_probabilities(&decomp, eps)?,
        };
        let mut comp_rng = rng::stream(settings.seed, round, client, Purpose::Compression);
        let compressed = compressor::sample_estimator(&decomp, &sampling, &mut comp_rng)?;
        Ok(ClientResult { start_loss: run.start_loss, final_loss: run.final_loss, update: run.agg_update, compressed })
    })?;

    let uploads: Vec<CompressedUpdate> = results.iter().map(|r| r.compressed.clone()).collect();
    let aggregated = compressor::aggregate_compressed(&uploads, num_clients)?;
    let params = model::apply_global_step(w_t, &aggregated, settings.lr)?;
    if !params.is_finite() {
        return Err(Error::domain(format!("global model became non-finite in round {round}")));
    }

    let (mut start_loss, mut final_loss) = (0.0, 0.0);
    for (r, shard) in results.iter().zip(&env.shards) {
        start_loss += shard.weight_p * r.start_loss;
        final_loss += shard.weight_p * r.final_loss;
    }
    let updates: Vec<&ParamVector> = results.iter().map(|r| &r.update).collect();
    let feedback = RoundFeedback { start_loss, final_loss, delta: delta_estimate(&updates) };

    let atoms: Vec<usize> = uploads.iter().map(CompressedUpdate::kept_atoms).collect();
    let timing = simulate_round_time(plan.local_steps, &atoms, dim, &settings.time_model);
    let critical = timing.critical();
    let tm = &settings.time_model;
    let atoms_up: u64 = atoms.iter().map(|&a| a as u64).sum();
    let bits_down = num_clients as u64 * dim as u64 * tm.bits_per_param as u64;
    let (eval_loss, eval_accuracy) = evaluate(&env.spec, &params, &env.eval, settings.execution)?;

    let metrics = RoundMetrics {
        round,
        global_loss: final_loss,
        eval_loss,
        eval_accuracy,
        i_t: plan.local_steps,
        eps_t: match plan.budget {
            Budget::Lossless => dim as f64,
            Budget::Atoms(e) => e,
        },
        t_download_s: critical.download_s,
        t_compute_s: critical.compute_s,
        t_upload_s: critical.upload_s,
        t_round_s: timing.round_s,
        cumulative_time_s: cumulative_before + timing.round_s,
        atoms_up,
        bytes_up: (atoms_up * tm.bits_per_atom as u64).div_ceil(8),
        bytes_down: bits_down.div_ceil(8),
    };
    strategy.observe(&feedback)?;
    Ok(RoundOutput { params, metrics, feedback })
}
