//! Training targets, losses and logit gradients for the four label schemes.
//!
//! * `mv`  majority vote: one-hot target at the most voted category.
//! * `ml`  multi-label: every category with vote share above a threshold is
//!   admissible; the loss uses the admitted category the network currently
//!   prefers.
//! * `pld` probabilistic label drawing: a one-hot target sampled from the
//!   label distribution, redrawn every epoch.
//! * `cel` cross-entropy against the full label distribution.
//!
//! Per-example losses are returned here; batch reduction (mean) happens in the
//! trainer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{argmax_f64, LabelDistribution};

/// Default multi-label admission threshold.
pub const DEFAULT_ML_THRESHOLD: f64 = 0.30;

/// Probabilities are clamped to this value before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum SchemeKind {
    #[serde(rename = "mv")]
    MajorityVote,
    #[serde(rename = "ml")]
    MultiLabel { threshold: f64 },
    #[serde(rename = "pld")]
    ProbabilisticDraw,
    #[serde(rename = "cel")]
    CrossEntropy,
}

impl SchemeKind {
    pub fn multi_label(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        Ok(Self::MultiLabel { threshold })
    }

    /// Parses `mv | ml | pld | cel`, using `threshold` for `ml`.
    pub fn parse_with_threshold(s: &str, threshold: f64) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mv" => Ok(Self::MajorityVote),
            "ml" => Self::multi_label(threshold),
            "pld" => Ok(Self::ProbabilisticDraw),
            "cel" => Ok(Self::CrossEntropy),
            _ => Err(Error::UnknownScheme(s.to_string())),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::MajorityVote => "mv",
            Self::MultiLabel { .. } => "ml",
            Self::ProbabilisticDraw => "pld",
            Self::CrossEntropy => "cel",
        }
    }

    pub fn all(threshold: f64) -> [SchemeKind; 4] {
        [
            Self::MajorityVote,
            Self::MultiLabel { threshold },
            Self::ProbabilisticDraw,
            Self::CrossEntropy,
        ]
    }

    pub fn needs_draw(&self) -> bool {
        matches!(self, Self::ProbabilisticDraw)
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_threshold(s, DEFAULT_ML_THRESHOLD)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MultiLabel { threshold } => write!(f, "ml(θ={threshold})"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainingTarget {
    OneHot(usize),
    Admitted(Vec<bool>),
    Distribution(LabelDistribution),
}

/// Softmax output together with the logits it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedDistribution {
    q: Vec<f64>,
    logits: Vec<f64>,
}

impl PredictedDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let q = softmax(&logits);
        Self { q, logits }
    }

    pub fn probs(&self) -> &[f64] {
        &self.q
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn classes(&self) -> usize {
        self.q.len()
    }

    pub fn predicted_class(&self) -> usize {
        argmax_f64(&self.q)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn neg_log(q: f64) -> f64 {
    -q.max(LOG_CLAMP).ln()
}

/// One-hot target at the majority class.
pub fn target_mv(dist: &LabelDistribution) -> TrainingTarget {
    TrainingTarget::OneHot(dist.majority_class())
}

/// Categories whose share strictly exceeds `threshold`; falls back to the
/// majority class when none does.
pub fn admitted_set(dist: &LabelDistribution, threshold: f64) -> TrainingTarget {
    let mut admitted: Vec<bool> = dist.probs().iter().map(|&p| p > threshold).collect();
    if !admitted.iter().any(|&a| a) {
        admitted[dist.majority_class()] = true;
    }
    TrainingTarget::Admitted(admitted)
}

/// Cross-entropy for one-hot or distribution targets.
pub fn loss_ce(target: &TrainingTarget, pred: &PredictedDistribution) -> Result<f64> {
    let q = pred.probs();
    match target {
        TrainingTarget::OneHot(j) => {
            let qj = *q.get(*j).ok_or(Error::ClassMismatch {
                expected: q.len(),
                actual: j + 1,
            })?;
            Ok(neg_log(qj))
        }
        TrainingTarget::Distribution(dist) => {
            check_classes(dist.classes(), q.len())?;
            // Zero-mass terms are skipped so one-hot distributions reproduce the
            // one-hot loss bit for bit.
            let mut acc = 0.0;
            for (&p, &qk) in dist.probs().iter().zip(q) {
                if p != 0.0 {
                    acc += p * qk.max(LOG_CLAMP).ln();
                }
            }
            Ok(-acc)
        }
        TrainingTarget::Admitted(_) => Err(Error::TargetKind(
            "admitted sets are scored with loss_ml, not loss_ce",
        )),
    }
}

/// Multi-label loss: picks the admitted category with the highest predicted
/// probability (lowest index on ties) and scores it with `-log q`.
pub fn loss_ml(
    dist: &LabelDistribution,
    pred: &PredictedDistribution,
    threshold: f64,
) -> Result<(f64, usize)> {
    check_classes(dist.classes(), pred.classes())?;
    let TrainingTarget::Admitted(admitted) = admitted_set(dist, threshold) else {
        unreachable!("admitted_set always returns an admitted target");
    };
    let chosen = ml_choice(&admitted, pred.probs());
    Ok((neg_log(pred.probs()[chosen]), chosen))
}

fn ml_choice(admitted: &[bool], q: &[f64]) -> usize {
    let mut chosen: Option<usize> = None;
    for (k, (&ok, &qk)) in admitted.iter().zip(q).enumerate() {
        if ok && chosen.is_none_or(|c| qk > q[c]) {
            chosen = Some(k);
        }
    }
    chosen.expect("admitted set is never empty")
}

/// Draws a one-hot target from the label distribution by inverse CDF.
pub fn draw_pld<R: Rng + ?Sized>(dist: &LabelDistribution, rng: &mut R) -> TrainingTarget {
    let u: f64 = rng.random();
    let p = dist.probs();
    let mut cdf = 0.0;
    let mut last_positive = 0;
    for (k, &pk) in p.iter().enumerate() {
        if pk > 0.0 {
            cdf += pk;
            last_positive = k;
            if u < cdf {
                return TrainingTarget::OneHot(k);
            }
        }
    }
    // Rounding can leave the cumulative sum a hair below one.
    TrainingTarget::OneHot(last_positive)
}

/// Per-example loss under `scheme`. `drawn` is required for PLD.
pub fn scheme_loss(
    scheme: SchemeKind,
    dist: &LabelDistribution,
    pred: &PredictedDistribution,
    drawn: Option<&TrainingTarget>,
) -> Result<f64> {
    match scheme {
        SchemeKind::MajorityVote => loss_ce(&target_mv(dist), pred),
        SchemeKind::MultiLabel { threshold } => loss_ml(dist, pred, threshold).map(|(l, _)| l),
        SchemeKind::ProbabilisticDraw => loss_ce(drawn.ok_or(Error::MissingDraw)?, pred),
        SchemeKind::CrossEntropy => loss_ce(&TrainingTarget::Distribution(dist.clone()), pred),
    }
}

/// Gradient of the per-example loss with respect to the logits: `q - t`.
pub fn grad_logits(
    scheme: SchemeKind,
    dist: &LabelDistribution,
    pred: &PredictedDistribution,
    drawn: Option<&TrainingTarget>,
) -> Result<Vec<f64>> {
    check_classes(dist.classes(), pred.classes())?;
    let mut grad = pred.probs().to_vec();
    match scheme {
        SchemeKind::MajorityVote => grad[dist.majority_class()] -= 1.0,
        SchemeKind::MultiLabel { threshold } => {
            let (_, chosen) = loss_ml(dist, pred, threshold)?;
            grad[chosen] -= 1.0;
        }
        SchemeKind::ProbabilisticDraw => match drawn.ok_or(Error::MissingDraw)? {
            TrainingTarget::OneHot(k) if *k < grad.len() => grad[*k] -= 1.0,
            TrainingTarget::OneHot(_) => {
                return Err(Error::TargetKind("drawn index out of range"));
            }
            _ => return Err(Error::TargetKind("drawn target must be one-hot")),
        },
        SchemeKind::CrossEntropy => {
            for (g, &p) in grad.iter_mut().zip(dist.probs()) {
                *g -= p;
            }
        }
    }
    Ok(grad)
}

fn check_classes(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ClassMismatch { expected, actual });
    }
    Ok(())
}
