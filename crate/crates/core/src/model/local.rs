use rand::Rng;

use super::{ClientShard, Dataset, ModelSpec, ParamVector};
use crate::{Error, Result};

/// Outcome of one client's local training in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    /// Sum of the `I_t` mini-batch gradients taken along the local path.
    pub agg_update: ParamVector,
    /// Loss of the last mini-batch, evaluated before its step.
    pub final_loss: f64,
    /// Loss of the first mini-batch, i.e. at `w_start`.
    pub start_loss: f64,
}

/// Run `steps` SGD iterations from `w_start` on mini-batches drawn with
/// replacement from `shard`.
#[allow(clippy::too_many_arguments)]
pub fn local_update_run(
    spec: &ModelSpec,
    w_start: &ParamVector,
    dataset: &Dataset,
    shard: &ClientShard,
    steps: u32,
    eta: f64,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<LocalRun> {
    if shard.indices.is_empty() {
        return Err(Error::config(format!("client {} has an empty shard", shard.client_id)));
    }
    if steps == 0 {
        return Err(Error::config("local step count must be at least 1"));
    }
    if !(eta >= 0.0 && eta.is_finite()) || batch_size == 0 {
        return Err(Error::config("learning rate must be finite and non-negative, batch size positive"));
    }
    w_start.check_dim(spec.dim())?;

    let mut w = w_start.clone();
    let mut agg = ParamVector::zeros(spec.dim());
    let mut batch_idx = vec![0usize; batch_size];
    let (mut start_loss, mut final_loss) = (0.0, 0.0);
    for step in 0..steps {
        for slot in batch_idx.iter_mut() {
            *slot = shard.indices[rng.random_range(0..shard.indices.len())];
        }
        let batch = dataset.gather(&batch_idx);
        let (loss, grad) = spec.loss_and_gradient(&w, &batch)?;
        if step == 0 {
            start_loss = loss;
        }
        final_loss = loss;
        agg.axpy(1.0, &grad)?;
        w.axpy(-eta, &grad)?;
    }
    if !agg.is_finite() || !w.is_finite() {
        return Err(Error::domain(format!("client {} diverged to non-finite parameters", shard.client_id)));
    }
    Ok(LocalRun { agg_update: agg, final_loss, start_loss })
}
