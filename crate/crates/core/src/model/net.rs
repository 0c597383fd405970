use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, ParamVector};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Model family. Hidden layers use `tanh`; the output is a softmax over
/// classes trained with mean cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    LogisticRegression,
    Mlp { hidden: Vec<usize> },
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::LogisticRegression => f.write_str("logistic"),
            Architecture::Mlp { hidden } => {
                let widths: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                write!(f, "mlp:{}", widths.join(","))
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "logistic" {
            return Ok(Architecture::LogisticRegression);
        }
        let widths = s
            .strip_prefix("mlp:")
            .ok_or_else(|| Error::config(format!("unknown model `{s}` (expected `logistic` or `mlp:<w>[,<w>...]`)")))?;
        let hidden = widths
            .split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::config(format!("bad hidden width `{w}` in `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture::Mlp { hidden })
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

/// Architecture bound to concrete input and output sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub feature_dim: usize,
    pub num_classes: usize,
    widths: Vec<usize>,
}

impl ModelSpec {
    pub fn new(arch: Architecture, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(Error::config("model needs feature_dim >= 1 and at least 2 classes"));
        }
        let mut widths = vec![feature_dim];
        if let Architecture::Mlp { hidden } = &arch {
            if hidden.is_empty() {
                return Err(Error::config("mlp needs at least one hidden layer"));
            }
            widths.extend(hidden);
        }
        widths.push(num_classes);
        Ok(Self { arch, feature_dim, num_classes, widths })
    }

    /// Number of trainable parameters.
    pub fn dim(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Deterministic initial parameters. Logistic regression starts at zero;
    /// MLP weights are Glorot-uniform with zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut params = Vec::with_capacity(self.dim());
        let mut rng = rng::stream(seed, 0, 0, Purpose::Init);
        let zero = matches!(self.arch, Architecture::LogisticRegression);
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if zero { 0.0 } else { rng.random_range(-limit..limit) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::new(params)
    }

    fn check(&self, params: &ParamVector, batch: &[Example<'_>]) -> Result<()> {
        params.check_dim(self.dim())?;
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        for ex in batch {
            if ex.features.len() != self.feature_dim {
                return Err(Error::Dimension { expected: self.feature_dim, actual: ex.features.len() });
            }
            if ex.label >= self.num_classes {
                return Err(Error::config(format!("label {} outside model's {} classes", ex.label, self.num_classes)));
            }
        }
        Ok(())
    }

    /// Forward pass storing every layer's activation; the last entry holds
    /// the logits.
    fn forward(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(x.to_vec());
        let mut offset = 0;
        let layers = self.widths.len() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &acts[l];
            let mut out: Vec<f64> = (0..n_out).map(|o| bias[o] + dot(&weights[o * n_in..(o + 1) * n_in], input)).collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
    }

    /// Logits for a single input.
    pub fn logits(&self, params: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward(params.as_slice(), x, &mut acts);
        acts.pop().unwrap_or_default()
    }

    /// Mean cross-entropy over `batch` and its exact gradient.
    pub fn loss_and_gradient(&self, params: &ParamVector, batch: &[Example<'_>]) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let p = params.as_slice();
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        let mut acts = Vec::with_capacity(self.widths.len());
        let layers = self.widths.len() - 1;

        // Layer offsets, so backprop can walk from the top.
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        for ex in batch {
            self.forward(p, ex.features, &mut acts);
            let logits = &acts[layers];
            let (lse, probs) = log_softmax_parts(logits);
            loss += lse - logits[ex.label];

            // dL/dz for the output layer.
            let mut delta = probs;
            delta[ex.label] -= 1.0;

            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
                let base = offsets[l];
                let input = &acts[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    grad[base + n_in * n_out + o] += d;
                }
                if l > 0 {
                    let weights = &p[base..base + n_in * n_out];
                    let mut back = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = delta[o];
                        for (b, w) in back.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                            *b += d * w;
                        }
                    }
                    // tanh' = 1 - a^2
                    for (b, a) in back.iter_mut().zip(input) {
                        *b *= 1.0 - a * a;
                    }
                    delta = back;
                }
            }
        }

        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, ParamVector::new(grad)))
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, params: &ParamVector, batch: &[Example<'_>]) -> Result<f64> {
        self.check(params, batch)?;
        let mut acts = Vec::new();
        let total: f64 = batch
            .iter()
            .map(|ex| {
                self.forward(params.as_slice(), ex.features, &mut acts);
                let logits = &acts[acts.len() - 1];
                let (lse, _) = log_softmax_parts(logits);
                lse - logits[ex.label]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }
}

/// A model specification together with its current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let params = spec.init_params(seed);
        Self { spec, params }
    }

    pub fn loss_and_gradient(&self, batch: &[Example<'_>]) -> Result<(f64, ParamVector)> {
        self.spec.loss_and_gradient(&self.params, batch)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.spec.logits(&self.params, x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(logsumexp(z), softmax(z))`.
fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}
