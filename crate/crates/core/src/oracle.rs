//! Brute-force reference computations.
//!
//! Nothing here calls into [`crate::compressor`], [`crate::bound`] or the
//! simulator round driver; each routine recomputes its quantity from first
//! principles so it can be used to check those modules. Used by unit tests,
//! the acceptance suite and the `selftest` command.

use rand::Rng;

use crate::model::{ClientShard, Dataset, ModelSpec, ParamVector};
use crate::rng::{self, Purpose};

/// Exact moments of the Bernoulli estimator over all `2^K` keep/drop masks.
#[derive(Debug, Clone)]
pub struct Enumeration {
    /// `E[estimate]` in atom space (signed).
    pub mean: Vec<f64>,
    /// `E‖estimate − original‖²`.
    pub variance: f64,
}

/// Enumerate every keep/drop outcome for atoms with weights `d`, signs `s`
/// and keep probabilities `p`. `K` is limited to 20.
pub fn enumerate_estimator(d: &[f64], s: &[f64], p: &[f64]) -> Enumeration {
    let k = d.len();
    assert!(k <= 20, "enumeration over 2^{k} outcomes is too large");
    assert!(s.len() == k && p.len() == k);
    let mut mean = vec![0.0; k];
    let mut variance = 0.0;
    for mask in 0u32..(1u32 << k) {
        let mut prob = 1.0;
        for (j, &pj) in p.iter().enumerate() {
            prob *= if mask >> j & 1 == 1 { pj } else { 1.0 - pj };
        }
        if prob == 0.0 {
            continue;
        }
        let mut sq = 0.0;
        for j in 0..k {
            let original = s[j] * d[j];
            let est = if mask >> j & 1 == 1 { original / p[j] } else { 0.0 };
            mean[j] += prob * est;
            sq += (est - original) * (est - original);
        }
        variance += prob * sq;
    }
    Enumeration { mean, variance }
}

/// Minimum of `Σ d_k² (1/p_k − 1)` over every plan on the grid
/// `p_k ∈ {step, 2·step, …, 1}` with `Σ p_k = eps`.
///
/// The objective is separable, so the exhaustive minimum is computed with a
/// min-plus dynamic program over partial sums instead of listing the grid
/// points one by one. `eps` must be a multiple of `step`. Returns `+inf`
/// when no grid plan is feasible.
pub fn grid_min_variance(d: &[f64], eps: f64, step: f64) -> f64 {
    let levels = (1.0 / step).round() as usize;
    let target = (eps / step).round() as usize;
    assert!(((target as f64) * step - eps).abs() < 1e-9, "eps {eps} is not on the {step} grid");
    let mut best = vec![f64::INFINITY; target + 1];
    best[0] = 0.0;
    for &w in d {
        let mut next = vec![f64::INFINITY; target + 1];
        for (used, &cost) in best.iter().enumerate() {
            if cost.is_infinite() {
                continue;
            }
            for units in 1..=levels.min(target - used) {
                let p = units as f64 / levels as f64;
                let c = cost + w * w * (1.0 / p - 1.0);
                if c < next[used + units] {
                    next[used + units] = c;
                }
            }
        }
        best = next;
    }
    best[target]
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference_gradient(f: impl Fn(&ParamVector) -> f64, x: &ParamVector, h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.dim())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Numeric Hessian of a function of two variables, with relative steps.
pub fn numeric_hessian_2d(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, rel: f64) -> [[f64; 2]; 2] {
    let hx = rel * x.abs().max(1.0);
    let hy = rel * y.abs().max(1.0);
    let fxx = (f(x + hx, y) - 2.0 * f(x, y) + f(x - hx, y)) / (hx * hx);
    let fyy = (f(x, y + hy) - 2.0 * f(x, y) + f(x, y - hy)) / (hy * hy);
    let fxy = (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy)) / (4.0 * hx * hy);
    [[fxx, fxy], [fxy, fyy]]
}

/// One round of plain FedAvg written out in straight-line form: every
/// client runs `local_steps` SGD steps from `w` on the same mini-batch
/// stream the simulator uses, and the server takes the mean of the local
/// models.
#[allow(clippy::too_many_arguments)]
pub fn dense_fedavg_round(
    spec: &ModelSpec,
    w: &ParamVector,
    dataset: &Dataset,
    shards: &[ClientShard],
    local_steps: u32,
    eta: f64,
    batch_size: usize,
    seed: u64,
    round: u64,
) -> ParamVector {
    let dim = w.dim();
    let mut sum = vec![0.0; dim];
    for shard in shards {
        let mut r = rng::stream(seed, round, shard.client_id as u64, Purpose::MiniBatch);
        let mut local = w.as_slice().to_vec();
        for _ in 0..local_steps {
            let idx: Vec<usize> = (0..batch_size).map(|_| shard.indices[r.random_range(0..shard.indices.len())]).collect();
            let (_, g) = spec.loss_and_gradient(&ParamVector::new(local.clone()), &dataset.gather(&idx)).expect("valid batch");
            for (wi, gi) in local.iter_mut().zip(g.as_slice()) {
                *wi -= eta * gi;
            }
        }
        for (s, l) in sum.iter_mut().zip(&local) {
            *s += l;
        }
    }
    ParamVector::new(sum.into_iter().map(|s| s / shards.len() as f64).collect())
}
