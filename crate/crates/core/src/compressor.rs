//! Unbiased sparsification of client updates.
//!
//! An update `v` is written as `Σ_k d_k · s_k e_{i_k}` over its nonzero
//! coordinates, with weights `d_k = |v_{i_k}| ≥ 0` and signed unit atoms.
//! Atom `k` is kept independently with probability `p_k` and rescaled by
//! `1/p_k`, which makes the estimate unbiased with variance
//! `Σ_k d_k² (1/p_k − 1)`. Under the budget `Σ_k p_k = ε` that variance is
//! minimised by `p_k = d_k ε / ‖d‖₁` when no atom is too heavy
//! (ε-balanced); heavier atoms are pinned to 1 and the rest of the budget is
//! redistributed (water-filling). In the balanced case the variance
//! collapses to `δ₁/ε + δ₂` with `δ₁ = Σ_k d_k ‖d‖₁ = ‖d‖₁²` and
//! `δ₂ = −Σ_k d_k²`.

use rand::Rng;

use crate::model::ParamVector;
use crate::{Error, Result};

/// Entrywise atomic decomposition of a vector. Zero coordinates carry no
/// atom, so `len() ≤ dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDecomposition {
    pub weights: Vec<f64>,
    pub signs: Vec<f64>,
    pub indices: Vec<usize>,
    pub dim: usize,
}

impl AtomicDecomposition {
    /// Number of atoms `K`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn l1(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ_k d_k · s_k e_{i_k}`.
    pub fn reconstruct(&self) -> ParamVector {
        let mut v = ParamVector::zeros(self.dim);
        for ((&d, &s), &i) in self.weights.iter().zip(&self.signs).zip(&self.indices) {
            v[i] = s * d;
        }
        v
    }

    /// True when no atom satisfies `d_k · ε > ‖d‖₁`.
    pub fn is_balanced(&self, eps: f64) -> bool {
        let l1 = self.l1();
        self.weights.iter().all(|&d| d * eps <= l1)
    }
}

/// Keep probabilities for every atom plus the budget they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub probs: Vec<f64>,
    pub budget_eps: f64,
}

impl SamplingPlan {
    /// Keep everything.
    pub fn lossless(k: usize) -> Self {
        Self { probs: vec![1.0; k], budget_eps: k as f64 }
    }

    pub fn expected_atoms(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Sparse, rescaled estimate of an update.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    pub kept_indices: Vec<usize>,
    pub kept_values: Vec<f64>,
    pub dim: usize,
    pub budget_eps: f64,
}

impl CompressedUpdate {
    pub fn kept_atoms(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn reconstruct(&self) -> ParamVector {
        let mut v = ParamVector::zeros(self.dim);
        self.add_into(&mut v);
        v
    }

    fn add_into(&self, acc: &mut ParamVector) {
        for (&i, &x) in self.kept_indices.iter().zip(&self.kept_values) {
            acc[i] += x;
        }
    }
}

/// The two constants of the balanced-case variance `δ₁/ε + δ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaTerms {
    pub delta1: f64,
    pub delta2: f64,
}

impl DeltaTerms {
    pub fn variance_at(&self, eps: f64) -> f64 {
        self.delta1 / eps + self.delta2
    }
}

pub fn decompose(update: &ParamVector) -> AtomicDecomposition {
    let mut out = AtomicDecomposition { weights: Vec::new(), signs: Vec::new(), indices: Vec::new(), dim: update.dim() };
    for (i, &v) in update.as_slice().iter().enumerate() {
        if v != 0.0 {
            out.weights.push(v.abs());
            out.signs.push(v.signum());
            out.indices.push(i);
        }
    }
    out
}

/// Variance-minimising keep probabilities with `Σ p_k = min(ε, K)`.
pub fn optimal_probabilities(decomp: &AtomicDecomposition, eps: f64) -> Result<SamplingPlan> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("compression budget must be positive, got {eps}")));
    }
    let k = decomp.len();
    if eps >= k as f64 {
        return Ok(SamplingPlan { probs: vec![1.0; k], budget_eps: eps });
    }

    let mut probs = vec![0.0; k];
    let mut pinned = vec![false; k];
    let mut budget = eps;
    let mut free_mass: f64 = decomp.l1();
    loop {
        // Pin every atom the proportional rule would push past 1.
        let mut changed = false;
        for j in 0..k {
            if !pinned[j] && decomp.weights[j] * budget >= free_mass {
                pinned[j] = true;
                probs[j] = 1.0;
                budget -= 1.0;
                free_mass -= decomp.weights[j];
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if budget <= 0.0 || free_mass <= 0.0 {
            break;
        }
    }
    if free_mass > 0.0 && budget > 0.0 {
        for j in 0..k {
            if !pinned[j] {
                probs[j] = decomp.weights[j] * budget / free_mass;
            }
        }
    }
    Ok(SamplingPlan { probs, budget_eps: eps })
}

/// Draw the Bernoulli keep mask and build the rescaled estimate.
pub fn sample_estimator(decomp: &AtomicDecomposition, plan: &SamplingPlan, rng: &mut impl Rng) -> Result<CompressedUpdate> {
    if plan.probs.len() != decomp.len() {
        return Err(Error::Dimension { expected: decomp.len(), actual: plan.probs.len() });
    }
    let mut out = CompressedUpdate { kept_indices: Vec::new(), kept_values: Vec::new(), dim: decomp.dim, budget_eps: plan.budget_eps };
    for k in 0..decomp.len() {
        let p = plan.probs[k];
        // One uniform draw per atom, so the stream advances identically
        // whatever the probabilities are.
        let u: f64 = rng.random();
        if u < p {
            out.kept_indices.push(decomp.indices[k]);
            out.kept_values.push(decomp.signs[k] * decomp.weights[k] / p);
        }
    }
    Ok(out)
}

/// `Σ_k d_k² (1/p_k − 1)`.
pub fn variance_closed_form(decomp: &AtomicDecomposition, plan: &SamplingPlan) -> Result<f64> {
    if plan.probs.len() != decomp.len() {
        return Err(Error::Dimension { expected: decomp.len(), actual: plan.probs.len() });
    }
    decomp.weights.iter().zip(&plan.probs).try_fold(0.0, |acc, (&d, &p)| {
        if !(p > 0.0 && p <= 1.0) {
            Err(Error::domain(format!("keep probability {p} outside (0, 1]")))
        } else {
            Ok(acc + d * d * (1.0 / p - 1.0))
        }
    })
}

pub fn delta_terms(decomp: &AtomicDecomposition) -> DeltaTerms {
    let l1 = decomp.l1();
    DeltaTerms { delta1: l1 * l1, delta2: -decomp.weights.iter().map(|d| d * d).sum::<f64>() }
}

/// `(1/N) Σ_n reconstruct(update_n)`, accumulated in list order.
pub fn aggregate_compressed(updates: &[CompressedUpdate], num_clients: usize) -> Result<ParamVector> {
    let first = updates.first().ok_or_else(|| Error::config("no updates to aggregate"))?;
    if num_clients == 0 {
        return Err(Error::config("num_clients must be positive"));
    }
    let mut acc = ParamVector::zeros(first.dim);
    for u in updates {
        if u.dim != first.dim {
            return Err(Error::Dimension { expected: first.dim, actual: u.dim });
        }
        u.add_into(&mut acc);
    }
    acc.scale(1.0 / num_clients as f64);
    Ok(acc)
}
