//! Tagger count versus label quality.
//!
//! The "ground truth" of an item is the majority of all its tags. For a
//! smaller panel of `m` taggers we draw `m` tags without replacement, take
//! their majority and record whether it matches. Averaging over items and
//! resamples gives one point of the quality curve.
//!
//! [`TaggerNoiseModel`] and [`synth_votes`] generate per-tagger tags for
//! synthetic experiments.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::VoteCounts;

pub const DEFAULT_RESAMPLES: usize = 100;

/// Row-stochastic matrix: `confusion[t][r]` is the probability that a tagger
/// reports `r` for an item whose true category is `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerNoiseModel {
    confusion: Vec<Vec<f64>>,
}

impl TaggerNoiseModel {
    pub fn new(confusion: Vec<Vec<f64>>) -> Result<Self> {
        let k = confusion.len();
        if k < 2 {
            return Err(Error::NoiseModel("need at least two categories".into()));
        }
        for (i, row) in confusion.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NoiseModel(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::NoiseModel(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NoiseModel(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { confusion })
    }

    pub fn identity(classes: usize) -> Self {
        Self::symmetric(classes, 0.0).expect("zero noise is valid")
    }

    /// Correct with probability `1 - noise`, otherwise uniform over the other
    /// categories.
    pub fn symmetric(classes: usize, noise: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) || classes < 2 {
            return Err(Error::NoiseModel(format!(
                "symmetric noise {noise} over {classes} classes is invalid"
            )));
        }
        let off = noise / (classes - 1) as f64;
        Self::new(
            (0..classes)
                .map(|t| {
                    (0..classes)
                        .map(|r| if r == t { 1.0 - noise } else { off })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / classes as f64; classes]; classes])
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn row(&self, truth: usize) -> &[f64] {
        &self.confusion[truth]
    }

    pub fn draw<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.confusion[truth];
        let mut cdf = 0.0;
        let mut last = truth;
        for (r, &p) in row.iter().enumerate() {
            if p > 0.0 {
                cdf += p;
                last = r;
                if u < cdf {
                    return r;
                }
            }
        }
        last
    }
}

/// `taggers` independent tags per item from the confusion row of its true label.
pub fn synth_votes<R: Rng + ?Sized>(
    true_labels: &[usize],
    noise: &TaggerNoiseModel,
    taggers: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if let Some(&bad) = true_labels.iter().find(|&&t| t >= noise.classes()) {
        return Err(Error::MalformedAnnotation {
            index: bad,
            classes: noise.classes(),
        });
    }
    Ok(true_labels
        .iter()
        .map(|&t| (0..taggers).map(|_| noise.draw(t, rng)).collect())
        .collect())
}

/// Expands a tally into one tag per vote, in category order.
pub fn expand_counts(counts: &VoteCounts) -> Vec<usize> {
    counts
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c as usize))
        .collect()
}

/// Majority of a tag list over `classes` categories, lowest index on ties.
pub fn tag_majority(tags: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &t in tags {
        counts[t] += 1;
    }
    let mut best = 0;
    for k in 1..classes {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best
}

fn item_stream(base: u64, item: usize, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((item as u64) << 16) ^ m as u64);
    rng
}

fn validate_tags(items: &[Vec<usize>], classes: usize) -> Result<()> {
    for tags in items {
        if tags.is_empty() {
            return Err(Error::EmptyAnnotations);
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= classes) {
            return Err(Error::MalformedAnnotation {
                index: bad,
                classes,
            });
        }
    }
    Ok(())
}

/// Sum of matches and number of trials for panel size `m` over items with at
/// least `m` tags.
fn agreement_counts(
    items: &[Vec<usize>],
    classes: usize,
    m: usize,
    resamples: usize,
    base: u64,
) -> (u64, u64) {
    items
        .par_iter()
        .enumerate()
        .filter(|(_, tags)| tags.len() >= m)
        .map(|(i, tags)| {
            let truth = tag_majority(tags, classes);
            let mut rng = item_stream(base, i, m);
            let mut panel = Vec::with_capacity(m);
            let mut hits = 0u64;
            for _ in 0..resamples {
                panel.clear();
                panel.extend(sample(&mut rng, tags.len(), m).iter().map(|j| tags[j]));
                if tag_majority(&panel, classes) == truth {
                    hits += 1;
                }
            }
            (hits, resamples as u64)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0, 0), |(h, n), (a, b)| (h + a, n + b))
}

/// Monte-Carlo agreement between `m`-tagger majorities and the full-panel
/// majority. Every item must carry at least `m` tags.
pub fn subsample_agreement<R: Rng + ?Sized>(
    items: &[Vec<usize>],
    classes: usize,
    m: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    validate_tags(items, classes)?;
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if m == 0 {
        return Err(Error::Config("panel size must be at least 1".into()));
    }
    if let Some(short) = items.iter().find(|t| t.len() < m) {
        return Err(Error::SubsampleTooLarge {
            m,
            tags: short.len(),
        });
    }
    if resamples == 0 {
        return Err(Error::Config("need at least one resample".into()));
    }
    let (hits, trials) = agreement_counts(items, classes, m, resamples, rng.random());
    Ok(hits as f64 / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub taggers: usize,
    pub agreement: f64,
    pub items: usize,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityCurve {
    pub points: Vec<QualityPoint>,
}

impl QualityCurve {
    /// Tab-separated `m, agreement, n_items, n_resamples` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("m\tagreement\tn_items\tn_resamples\n");
        for p in &self.points {
            s.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\n",
                p.taggers, p.agreement, p.items, p.resamples
            ));
        }
        s
    }

    pub fn agreement_at(&self, m: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.taggers == m)
            .map(|p| p.agreement)
    }
}

/// One point per panel size `m = 1..=T`, where `T` is the largest tag count.
/// Items with fewer than `m` tags are left out of that point.
pub fn quality_curve<R: Rng + ?Sized>(
    items: &[Vec<usize>],
    classes: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<QualityCurve> {
    validate_tags(items, classes)?;
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if resamples == 0 {
        return Err(Error::Config("need at least one resample".into()));
    }
    let base: u64 = rng.random();
    let max_tags = items.iter().map(Vec::len).max().unwrap_or(0);
    let points = (1..=max_tags)
        .map(|m| {
            let (hits, trials) = agreement_counts(items, classes, m, resamples, base);
            QualityPoint {
                taggers: m,
                agreement: hits as f64 / trials as f64,
                items: items.iter().filter(|t| t.len() >= m).count(),
                resamples,
            }
        })
        .collect();
    Ok(QualityCurve { points })
}
