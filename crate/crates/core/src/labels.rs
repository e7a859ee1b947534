//! Vote tallies, outlier rejection and label distributions.
//!
//! Raw crowd annotations arrive as one category index per tagger. They are
//! tallied into [`VoteCounts`], cleaned with [`VoteCounts::reject_outliers`]
//! and turned into a [`LabelDistribution`] by [`VoteCounts::normalize`].
//! Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` for distributions.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default outlier threshold: counts at or below this value are zeroed.
pub const DEFAULT_OUTLIER_THRESHOLD: u32 = 1;

/// Ordered list of category names. Indices are stable for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionSet {
    names: Vec<String>,
}

impl EmotionSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidEmotionSet(format!(
                "need at least 2 categories, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidEmotionSet(format!(
                    "category {i} has an empty name"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidEmotionSet(format!(
                    "duplicate category `{name}`"
                )));
            }
        }
        Ok(Self { names })
    }

    /// The eight FER+ emotions in their canonical order.
    pub fn ferplus() -> Self {
        Self {
            names: [
                "neutral",
                "happiness",
                "surprise",
                "sadness",
                "anger",
                "disgust",
                "fear",
                "contempt",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    /// Case-insensitive lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }
}

impl Default for EmotionSet {
    fn default() -> Self {
        Self::ferplus()
    }
}

/// Per-item vote tally over K categories.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteCounts {
    counts: Vec<u32>,
}

impl VoteCounts {
    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    /// Tallies one category index per tagger.
    pub fn tally(annotations: &[usize], emotions: &EmotionSet) -> Result<Self> {
        if annotations.is_empty() {
            return Err(Error::EmptyAnnotations);
        }
        let classes = emotions.len();
        let mut counts = vec![0u32; classes];
        for &index in annotations {
            if index >= classes {
                return Err(Error::MalformedAnnotation { index, classes });
            }
            counts[index] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Resets every count `<= threshold` to zero.
    ///
    /// Returns [`Error::UnusableItem`] when nothing survives. Use
    /// [`VoteCounts::reject_outliers_raw`] to get the zeroed tally regardless.
    pub fn reject_outliers(&self, threshold: u32) -> Result<Self> {
        let cleaned = self.reject_outliers_raw(threshold);
        if cleaned.total() == 0 {
            Err(Error::UnusableItem)
        } else {
            Ok(cleaned)
        }
    }

    pub fn reject_outliers_raw(&self, threshold: u32) -> Self {
        Self {
            counts: self
                .counts
                .iter()
                .map(|&c| if c <= threshold { 0 } else { c })
                .collect(),
        }
    }

    pub fn normalize(&self) -> Result<LabelDistribution> {
        let total = self.total();
        if total == 0 {
            return Err(Error::ZeroTotal);
        }
        let total = f64::from(total);
        Ok(LabelDistribution {
            p: self.counts.iter().map(|&c| f64::from(c) / total).collect(),
        })
    }

    /// Index of the largest count, lowest index on ties.
    pub fn majority(&self) -> usize {
        argmax(self.counts.iter().copied())
    }
}

/// Normalized probability vector over K categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    p: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 categories, got {}",
                p.len()
            )));
        }
        if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn one_hot(classes: usize, index: usize) -> Self {
        assert!(
            index < classes,
            "one-hot index {index} out of range for {classes}"
        );
        let mut p = vec![0.0; classes];
        p[index] = 1.0;
        Self { p }
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            p: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn classes(&self) -> usize {
        self.p.len()
    }

    /// Argmax with lowest-index tie-breaking.
    pub fn majority_class(&self) -> usize {
        argmax_f64(&self.p)
    }

    pub fn is_one_hot(&self) -> bool {
        self.p.iter().filter(|&&v| v == 1.0).count() == 1
            && self.p.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn argmax<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if v <= *b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Argmax over reals with lowest-index tie-breaking. NaN never wins.
pub fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k8(counts: &[u32]) -> VoteCounts {
        let mut c = counts.to_vec();
        c.resize(8, 0);
        VoteCounts::from_counts(c)
    }

    #[test]
    fn tally_counts_occurrences() {
        let e = EmotionSet::ferplus();
        let v = VoteCounts::tally(&[0, 0, 1], &e).unwrap();
        assert_eq!(v.counts(), &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(v.total(), 3);

        let v = VoteCounts::tally(&[3; 10], &e).unwrap();
        assert_eq!(v.counts()[3], 10);
        assert_eq!(v.total(), 10);
    }

    #[test]
    fn tally_rejects_bad_input() {
        let e = EmotionSet::ferplus();
        assert!(matches!(
            VoteCounts::tally(&[], &e),
            Err(Error::EmptyAnnotations)
        ));
        assert!(matches!(
            VoteCounts::tally(&[0, 8], &e),
            Err(Error::MalformedAnnotation {
                index: 8,
                classes: 8
            })
        ));
    }

    #[test]
    fn emotion_set_validation() {
        assert!(EmotionSet::new(["a"]).is_err());
        assert!(EmotionSet::new(["a", "a"]).is_err());
        let e = EmotionSet::new(["calm", "angry"]).unwrap();
        assert_eq!(e.index_of("ANGRY"), Some(1));
        assert_eq!(EmotionSet::default().len(), 8);
    }

    #[test]
    fn outlier_rejection_examples() {
        let v = k8(&[7, 1, 2]).reject_outliers(1).unwrap();
        assert_eq!(v.counts(), k8(&[7, 0, 2]).counts());
        assert_eq!(v.total(), 9);

        let v = k8(&[10]).reject_outliers(1).unwrap();
        assert_eq!(v, k8(&[10]));

        let spread = VoteCounts::from_counts(vec![1, 1, 1, 1, 1, 1, 1, 1]);
        assert!(matches!(
            spread.reject_outliers(1),
            Err(Error::UnusableItem)
        ));
        assert_eq!(spread.reject_outliers_raw(1).total(), 0);
    }

    #[test]
    fn normalize_examples() {
        let p = k8(&[7, 0, 2]).normalize().unwrap();
        assert_eq!(p.probs()[0], 7.0 / 9.0);
        assert_eq!(p.probs()[2], 2.0 / 9.0);
        assert!((p.probs()[0] - 0.7778).abs() < 1e-4);

        assert_eq!(
            k8(&[10]).normalize().unwrap(),
            LabelDistribution::one_hot(8, 0)
        );
        let half = k8(&[5, 5]).normalize().unwrap();
        assert_eq!(&half.probs()[..2], &[0.5, 0.5]);

        assert!(matches!(k8(&[]).normalize(), Err(Error::ZeroTotal)));
    }

    #[test]
    fn majority_examples() {
        let mut p = vec![0.5, 0.3, 0.2];
        p.resize(8, 0.0);
        assert_eq!(LabelDistribution::new(p).unwrap().majority_class(), 0);
        let mut p = vec![0.5, 0.5];
        p.resize(8, 0.0);
        assert_eq!(LabelDistribution::new(p).unwrap().majority_class(), 0);
        assert_eq!(LabelDistribution::one_hot(8, 7).majority_class(), 7);
    }

    #[test]
    fn distribution_validation() {
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(LabelDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(LabelDistribution::new(vec![1.0]).is_err());
        assert!(LabelDistribution::one_hot(3, 1).is_one_hot());
        assert!(!LabelDistribution::uniform(3).is_one_hot());
    }

    fn counts_strategy() -> impl Strategy<Value = VoteCounts> {
        prop::collection::vec(0u32..12, 2..10).prop_map(VoteCounts::from_counts)
    }

    proptest! {
        #[test]
        fn normalized_distribution_sums_to_one(c in counts_strategy(), t in 0u32..4) {
            let cleaned = c.reject_outliers_raw(t);
            prop_assume!(cleaned.total() > 0);
            let p = cleaned.normalize().unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
            prop_assert!(LabelDistribution::new(p.probs().to_vec()).is_ok());
        }

        #[test]
        fn rejection_is_idempotent_and_monotone(c in counts_strategy(), t in 0u32..4) {
            let once = c.reject_outliers_raw(t);
            prop_assert_eq!(once.reject_outliers_raw(t), once.clone());
            for (before, after) in c.counts().iter().zip(once.counts()) {
                prop_assert!(after <= before);
                if *before == 0 {
                    prop_assert_eq!(*after, 0);
                }
            }
        }

        #[test]
        fn zero_threshold_is_identity(c in counts_strategy()) {
            prop_assert_eq!(c.reject_outliers_raw(0), c);
        }

        #[test]
        fn normalization_preserves_argmax(c in counts_strategy()) {
            prop_assume!(c.total() > 0);
            prop_assert_eq!(c.normalize().unwrap().majority_class(), c.majority());
        }
    }
}
