use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

/// How training examples are spread over clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartitionScheme {
    /// Uniform random disjoint split.
    Iid,
    /// Label-sorted shards, `shards_per_client` of them per client.
    NonIid { shards_per_client: usize },
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionScheme::Iid => f.write_str("iid"),
            PartitionScheme::NonIid { shards_per_client } => write!(f, "noniid:{shards_per_client}"),
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iid" => Ok(PartitionScheme::Iid),
            "noniid" => Ok(PartitionScheme::NonIid { shards_per_client: 2 }),
            other => other
                .strip_prefix("noniid:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(|shards_per_client| PartitionScheme::NonIid { shards_per_client })
                .ok_or_else(|| Error::config(format!("unknown partition `{other}` (expected `iid` or `noniid:<shards>`)"))),
        }
    }
}

impl TryFrom<String> for PartitionScheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PartitionScheme> for String {
    fn from(p: PartitionScheme) -> String {
        p.to_string()
    }
}

/// One client's slice of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    /// Share `p^n` of the global objective, proportional to shard size.
    pub weight_p: f64,
}

/// Split `dataset` across `num_clients` disjoint, exhaustive shards.
///
/// Non-IID shards are label-pure whenever there are at least as many shards
/// as labels present: each label's examples are cut into a number of shards
/// proportional to its frequency, so a client holding `s` shards sees at most
/// `s` labels. With fewer shards than labels the label-sorted order is cut
/// into contiguous equal pieces instead.
pub fn partition(dataset: &Dataset, num_clients: usize, scheme: PartitionScheme, rng: &mut impl Rng) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::config("num_clients must be at least 1"));
    }
    let n = dataset.len();
    let groups: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Iid => {
            if n < num_clients {
                return Err(Error::config(format!("{n} examples cannot cover {num_clients} clients")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            split_even(&order, num_clients)
        }
        PartitionScheme::NonIid { shards_per_client } => {
            let total_shards = num_clients * shards_per_client;
            if shards_per_client == 0 || n < total_shards {
                return Err(Error::config(format!(
                    "{n} examples cannot form {total_shards} non-empty shards ({num_clients} clients x {shards_per_client})"
                )));
            }
            let mut shards = label_shards(dataset, total_shards);
            shards.shuffle(rng);
            shards.chunks(shards_per_client).map(|chunk| chunk.iter().flatten().copied().collect()).collect()
        }
    };

    let mut out: Vec<ClientShard> = groups
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            let weight_p = indices.len() as f64 / n as f64;
            ClientShard { client_id, indices, weight_p }
        })
        .collect();
    // Absorb rounding so the weights sum to one.
    let sum: f64 = out.iter().map(|s| s.weight_p).sum();
    if let Some(last) = out.last_mut() {
        last.weight_p += 1.0 - sum;
    }
    Ok(out)
}

fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let chunk = items[start..start + len].to_vec();
            start += len;
            chunk
        })
        .collect()
}

fn label_shards(dataset: &Dataset, total_shards: usize) -> Vec<Vec<usize>> {
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_label[label].push(i);
    }
    by_label.retain(|g| !g.is_empty());

    if total_shards < by_label.len() {
        let sorted: Vec<usize> = by_label.concat();
        return split_even(&sorted, total_shards);
    }

    // Largest-remainder allocation of shards to labels, at least one each and
    // never more than a label has examples.
    let n = dataset.len() as f64;
    let mut counts: Vec<usize> = vec![1; by_label.len()];
    let mut remaining = total_shards - by_label.len();
    let ideal: Vec<f64> = by_label.iter().map(|g| g.len() as f64 / n * total_shards as f64).collect();
    while remaining > 0 {
        let pick = (0..by_label.len()).filter(|&l| counts[l] < by_label[l].len()).max_by(|&a, &b| {
            let ka = ideal[a] - counts[a] as f64;
            let kb = ideal[b] - counts[b] as f64;
            ka.total_cmp(&kb).then(b.cmp(&a))
        });
        match pick {
            Some(l) => {
                counts[l] += 1;
                remaining -= 1;
            }
            None => break,
        }
    }
    if remaining > 0 {
        let sorted: Vec<usize> = by_label.concat();
        return split_even(&sorted, total_shards);
    }
    by_label.iter().zip(&counts).flat_map(|(group, &k)| split_even(group, k)).collect()
}
