//! Gaussian class clusters as a desk-scale stand-in for image datasets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::Dataset;
use crate::rng::{self, Purpose, StreamRng};
use crate::{Error, Result};

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Training examples.
    pub num_examples: usize,
    /// Held-out evaluation examples.
    pub num_eval: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Standard deviation of points around their class centroid.
    pub cluster_spread: f64,
    /// Standard deviation of the centroid coordinates.
    #[serde(default = "default_scale")]
    pub centroid_scale: f64,
    /// Constant added to every coordinate. Non-zero values mimic
    /// uncentred inputs such as raw pixel intensities.
    #[serde(default)]
    pub feature_offset: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.num_examples == 0 || self.num_eval == 0 || self.feature_dim == 0 {
            return Err(Error::config("synthetic sizes must be positive"));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::config(format!("cluster_spread must be finite and >= 0, got {}", self.cluster_spread)));
        }
        if !(self.centroid_scale > 0.0 && self.centroid_scale.is_finite()) {
            return Err(Error::config(format!("centroid_scale must be positive, got {}", self.centroid_scale)));
        }
        if !self.feature_offset.is_finite() {
            return Err(Error::config("feature_offset must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplit {
    pub train: Dataset,
    pub eval: Dataset,
    /// Row-major `num_classes × feature_dim`.
    pub centroids: Vec<f64>,
}

fn sample(spec: &SyntheticSpec, centroids: &[f64], n: usize, rng: &mut StreamRng) -> Result<Dataset> {
    let d = spec.feature_dim;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.num_classes;
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features.push(spec.feature_offset + centroids[c * d + j] + spec.cluster_spread * z);
        }
        labels.push(c);
    }
    Dataset::new(features, labels, d, spec.num_classes)
}

/// Balanced labels (`i mod C`), centroids and both splits drawn from
/// separate streams of `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSplit> {
    spec.validate()?;
    let mut crng = rng::stream(seed, 0, 0, Purpose::SyntheticCentroids);
    let centroids: Vec<f64> =
        (0..spec.num_classes * spec.feature_dim).map(|_| spec.centroid_scale * crng.sample::<f64, _>(StandardNormal)).collect();
    let train = sample(spec, &centroids, spec.num_examples, &mut rng::stream(seed, 0, 0, Purpose::SyntheticTrain))?;
    let eval = sample(spec, &centroids, spec.num_eval, &mut rng::stream(seed, 0, 0, Purpose::SyntheticEval))?;
    Ok(SyntheticSplit { train, eval, centroids })
}
