use crate::{Error, Result};

/// Borrowed view of one labelled example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// Labelled examples stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::config("feature_dim and num_classes must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::config(format!(
                "{} feature values do not form {} rows of width {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite feature value"));
        }
        Ok(Self { features, labels, feature_dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let d = self.feature_dim;
        Example { features: &self.features[i * d..(i + 1) * d], label: self.labels[i] }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<Example<'_>> {
        indices.iter().map(|&i| self.example(i)).collect()
    }
}
