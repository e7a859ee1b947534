//! Seeded synthetic image datasets with crowd-style votes.
//!
//! Each class has a fixed geometric pattern (bars, diagonals, ring, blob,
//! checkerboard, frame). Images jitter position, contrast and background and
//! add Gaussian pixel noise; votes come from simulated taggers with a
//! symmetric confusion model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{distribution_for, Dataset, DatasetItem, Split};
use crate::error::{Error, Result};
use crate::labels::{EmotionSet, VoteCounts};
use crate::net::Tensor;
use crate::quality::{synth_votes, TaggerNoiseModel};

pub const PATTERN_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub items: usize,
    pub image_size: usize,
    pub classes: usize,
    pub taggers: usize,
    /// Probability a tagger reports a wrong category (uniform over the others).
    pub tagger_noise: f64,
    pub pixel_noise: f64,
    /// Maximum pattern displacement in pixels along each axis.
    pub max_shift: i32,
    pub outlier_threshold: u32,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            items: 2000,
            image_size: 16,
            classes: 8,
            taggers: 10,
            tagger_noise: 0.2,
            pixel_noise: 0.15,
            max_shift: 1,
            outlier_threshold: crate::labels::DEFAULT_OUTLIER_THRESHOLD,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Generating class of every kept item.
    pub true_labels: Vec<usize>,
    /// Individual tags of every kept item.
    pub tags: Vec<Vec<usize>>,
}

/// Emotion names for `classes` categories: the FER+ names when they suffice.
pub fn emotion_set_for(classes: usize) -> Result<EmotionSet> {
    let fer = EmotionSet::ferplus();
    if classes <= fer.len() {
        EmotionSet::new(fer.names()[..classes].iter().cloned())
    } else {
        EmotionSet::new((0..classes).map(|i| format!("class{i}")))
    }
}

/// Pattern intensity in `[0, 1]` at normalized coordinates `(u, v)`.
fn pattern(class: usize, u: f64, v: f64) -> f64 {
    let (du, dv) = (u - 0.5, v - 0.5);
    let r = (du * du + dv * dv).sqrt();
    let on = match class % PATTERN_COUNT {
        0 => dv.abs() < 0.12,
        1 => du.abs() < 0.12,
        2 => (u - v).abs() < 0.12,
        3 => (u + v - 1.0).abs() < 0.12,
        4 => (r - 0.3).abs() < 0.08,
        5 => r < 0.2,
        6 => ((4.0 * u).floor() as i64 + (4.0 * v).floor() as i64) % 2 == 0,
        _ => u.min(v).min(1.0 - u).min(1.0 - v) < 0.12,
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// Renders one noisy image of `class`.
pub fn render<R: Rng + ?Sized>(
    class: usize,
    size: usize,
    config: &SyntheticConfig,
    rng: &mut R,
) -> Vec<f64> {
    let shift = |rng: &mut R| {
        if config.max_shift == 0 {
            0
        } else {
            rng.random_range(-config.max_shift..=config.max_shift)
        }
    };
    let (sx, sy) = (shift(rng), shift(rng));
    let contrast = rng.random_range(0.6..=1.0);
    let background = rng.random_range(0.0..=0.2);
    let noise = Normal::new(0.0, config.pixel_noise.max(0.0)).expect("finite deviation");
    let n = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 - f64::from(sx) + 0.5) / n;
            let v = (y as f64 - f64::from(sy) + 0.5) / n;
            let value = background + contrast * pattern(class, u, v) + noise.sample(rng);
            out.push(value.clamp(0.0, 1.0));
        }
    }
    out
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.classes < 2 || config.items == 0 || config.image_size < 2 || config.taggers == 0 {
        return Err(Error::Config(format!(
            "invalid synthetic dataset config {config:?}"
        )));
    }
    let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
    if !frac_ok(config.train_fraction)
        || !frac_ok(config.validation_fraction)
        || config.train_fraction + config.validation_fraction > 1.0
    {
        return Err(Error::Config(
            "split fractions must lie in [0, 1] and sum to at most 1".into(),
        ));
    }
    let emotions = emotion_set_for(config.classes)?;
    let noise = TaggerNoiseModel::symmetric(config.classes, config.tagger_noise)?;

    let mut image_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tag_rng = ChaCha8Rng::seed_from_u64(config.seed);
    tag_rng.set_stream(1);

    let labels: Vec<usize> = (0..config.items).map(|i| i % config.classes).collect();
    let tags = synth_votes(&labels, &noise, config.taggers, &mut tag_rng)?;
    let n_train = (config.items as f64 * config.train_fraction).round() as usize;
    let n_val = (config.items as f64 * config.validation_fraction).round() as usize;

    let mut items = Vec::with_capacity(config.items);
    let mut kept_labels = Vec::with_capacity(config.items);
    let mut kept_tags = Vec::with_capacity(config.items);
    let mut dropped = 0;
    for (i, (&label, item_tags)) in labels.iter().zip(tags).enumerate() {
        let image = render(label, config.image_size, config, &mut image_rng);
        let votes = VoteCounts::tally(&item_tags, &emotions)?;
        let Some(dist) = distribution_for(&votes, config.outlier_threshold, false)? else {
            dropped += 1;
            continue;
        };
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        items.push(DatasetItem {
            image: Tensor::image(config.image_size, config.image_size, image)?,
            votes,
            dist,
            split,
        });
        kept_labels.push(label);
        kept_tags.push(item_tags);
    }
    Ok(SyntheticData {
        dataset: Dataset {
            emotions,
            items,
            dropped_unusable: dropped,
        },
        true_labels: kept_labels,
        tags: kept_tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_requested_layout() {
        let cfg = SyntheticConfig {
            items: 100,
            ..Default::default()
        };
        let data = generate(&cfg).unwrap();
        let ds = &data.dataset;
        assert_eq!(ds.items.len() + ds.dropped_unusable, 100);
        assert_eq!(ds.split(Split::Train).len(), 70);
        assert!(ds.items.iter().all(|i| i.image.shape() == [1, 16, 16]));
        assert!(ds.items.iter().all(|i| i.votes.total() == 10));
        assert_eq!(ds.emotions.len(), 8);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig {
            items: 40,
            ..Default::default()
        };
        assert_eq!(
            generate(&cfg).unwrap().dataset,
            generate(&cfg).unwrap().dataset
        );
        let other = SyntheticConfig { seed: 1, ..cfg };
        assert_ne!(
            generate(&cfg).unwrap().dataset,
            generate(&other).unwrap().dataset
        );
    }

    #[test]
    fn patterns_are_distinct() {
        let n = 16;
        let grids: Vec<Vec<f64>> = (0..PATTERN_COUNT)
            .map(|c| {
                (0..n * n)
                    .map(|i| {
                        pattern(
                            c,
                            ((i % n) as f64 + 0.5) / n as f64,
                            ((i / n) as f64 + 0.5) / n as f64,
                        )
                    })
                    .collect()
            })
            .collect();
        for a in 0..PATTERN_COUNT {
            assert!(grids[a].iter().sum::<f64>() > 0.0);
            for b in a + 1..PATTERN_COUNT {
                assert_ne!(grids[a], grids[b], "patterns {a} and {b}");
            }
        }
    }
}
