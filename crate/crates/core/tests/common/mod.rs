//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use itertools::Itertools;
use rand::Rng;

use crowdfer::LabelDistribution;

/// Most frequent tag, ties to the lowest category index.
pub fn plain_majority(tags: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &t in tags {
        counts[t] += 1;
    }
    let top = *counts.iter().max().unwrap();
    counts.iter().position(|&c| c == top).unwrap()
}

/// Exact agreement between `m`-subset majorities and the full majority,
/// averaged over every one of the C(T, m) subsets.
pub fn exhaustive_agreement(tags: &[usize], classes: usize, m: usize) -> f64 {
    let truth = plain_majority(tags, classes);
    let (mut hits, mut total) = (0u64, 0u64);
    for subset in (0..tags.len()).combinations(m) {
        let panel: Vec<usize> = subset.iter().map(|&i| tags[i]).collect();
        total += 1;
        if plain_majority(&panel, classes) == truth {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Random distribution with a few zero entries, built from integer votes so
/// it looks like aggregated tagger output.
pub fn random_vote_distribution<R: Rng>(rng: &mut R, classes: usize) -> LabelDistribution {
    loop {
        let votes: Vec<u32> = (0..classes)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0..8)
                } else {
                    0
                }
            })
            .collect();
        let total: u32 = votes.iter().sum();
        if total > 0 {
            return LabelDistribution::new(
                votes
                    .iter()
                    .map(|&v| f64::from(v) / f64::from(total))
                    .collect(),
            )
            .unwrap();
        }
    }
}

pub fn random_logits<R: Rng>(rng: &mut R, classes: usize, scale: f64) -> Vec<f64> {
    (0..classes)
        .map(|_| rng.random_range(-scale..scale))
        .collect()
}

/// Cross-entropy against a distribution, written out directly.
pub fn reference_cross_entropy(p: &[f64], logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    p.iter()
        .zip(logits)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, z)| -pk * (z - log_z))
        .sum()
}

/// Mean and standard error of `-log q_k` under `k ~ p`, for `draws` draws.
pub fn pld_mean_and_standard_error(p: &[f64], q: &[f64], draws: usize) -> (f64, f64) {
    let mean: f64 = p
        .iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| -pk * qk.ln())
        .sum();
    let second: f64 = p
        .iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * qk.ln().powi(2))
        .sum();
    let var = (second - mean * mean).max(0.0);
    (mean, (var / draws as f64).sqrt())
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum()
}
