//! Metrics JSON and confusion-matrix CSV.
//!
//! Keys follow struct declaration order, so the output is stable and
//! diffable. Nothing time-dependent is written.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::Result;
use crate::labels::EmotionSet;
use crate::trainer::{Architecture, EpochLog, EvalReport, TrainConfig, TrialsOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

impl From<&EpochLog> for EpochRecord {
    fn from(l: &EpochLog) -> Self {
        Self {
            epoch: l.train.epoch,
            learning_rate: l.train.learning_rate,
            train_loss: l.train.mean_loss,
            train_accuracy: l.train.train_accuracy,
            validation_loss: l.validation_loss,
            validation_accuracy: l.validation_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config: Option<TrainConfig>,
    pub architecture: Option<Architecture>,
    pub emotions: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub best_trial: Option<usize>,
    /// `mean ± std %` over trials.
    pub summary: String,
    pub report: EvalReport,
}

impl RunMetrics {
    pub fn from_trials(
        config: &TrainConfig,
        arch: &Architecture,
        emotions: &EmotionSet,
        outcome: &TrialsOutcome,
    ) -> Self {
        Self {
            config: Some(*config),
            architecture: Some(*arch),
            emotions: emotions.names().to_vec(),
            trials: outcome
                .trials
                .iter()
                .map(|t| TrialRecord {
                    trial: t.trial,
                    seed: t.seed,
                    test_accuracy: t.test.accuracy,
                    epochs: t.history.iter().map(EpochRecord::from).collect(),
                })
                .collect(),
            best_trial: Some(outcome.best_trial),
            summary: outcome.report.summary(),
            report: outcome.report.clone(),
        }
    }

    /// Metrics for a standalone evaluation.
    pub fn from_eval(emotions: &EmotionSet, report: &EvalReport) -> Self {
        Self {
            config: None,
            architecture: None,
            emotions: emotions.names().to_vec(),
            trials: Vec::new(),
            best_trial: None,
            summary: report.summary(),
            report: report.clone(),
        }
    }
}

pub fn metrics_json(metrics: &RunMetrics) -> Result<String> {
    let mut s = serde_json::to_string_pretty(metrics)?;
    s.push('\n');
    Ok(s)
}

/// Header row and first column carry category names; rows are the true
/// majority label, columns the prediction.
pub fn confusion_csv(report: &EvalReport, emotions: &EmotionSet) -> String {
    let mut s = String::from("true\\predicted");
    for name in emotions.names() {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (name, row) in emotions.names().iter().zip(&report.confusion.counts) {
        s.push_str(name);
        for c in row {
            s.push(',');
            s.push_str(&c.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics(
    metrics: &RunMetrics,
    emotions: &EmotionSet,
    json_path: impl AsRef<Path>,
    csv_path: impl AsRef<Path>,
) -> Result<()> {
    atomic_write(json_path.as_ref(), metrics_json(metrics)?.as_bytes())?;
    atomic_write(
        csv_path.as_ref(),
        confusion_csv(&metrics.report, emotions).as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ConfusionMatrix;

    fn report() -> EvalReport {
        let mut confusion = ConfusionMatrix::new(2);
        for _ in 0..17 {
            confusion.record(0, 0);
        }
        confusion.record(0, 1);
        confusion.record(1, 1);
        confusion.record(1, 0);
        EvalReport {
            accuracy: 0.85,
            any_admitted_accuracy: 0.9,
            examples: 20,
            class_counts: confusion.row_sums(),
            confusion,
            per_trial: vec![0.85],
            mean: 0.85,
            stddev: 0.0,
            sample_stddev: 0.0,
            single_trial: true,
        }
    }

    #[test]
    fn json_carries_accuracy_and_csv_rows_match_counts() {
        let emotions = EmotionSet::new(["calm", "upset"]).unwrap();
        let m = RunMetrics::from_eval(&emotions, &report());
        let json: serde_json::Value = serde_json::from_str(&metrics_json(&m).unwrap()).unwrap();
        assert_eq!(json["report"]["accuracy"], 0.85);

        let csv = confusion_csv(&m.report, &emotions);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\predicted,calm,upset");
        let counts = json["report"]["class_counts"].as_array().unwrap();
        for (line, expected) in lines[1..].iter().zip(counts) {
            let sum: u64 = line
                .split(',')
                .skip(1)
                .map(|v| v.parse::<u64>().unwrap())
                .sum();
            assert_eq!(sum, expected.as_u64().unwrap());
        }
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let emotions = EmotionSet::new(["calm", "upset"]).unwrap();
        let m = RunMetrics::from_eval(&emotions, &report());
        let (j, c) = (dir.path().join("m.json"), dir.path().join("c.csv"));
        write_metrics(&m, &emotions, &j, &c).unwrap();
        let first = (std::fs::read(&j).unwrap(), std::fs::read(&c).unwrap());
        write_metrics(&m, &emotions, &j, &c).unwrap();
        assert_eq!(
            first,
            (std::fs::read(&j).unwrap(), std::fs::read(&c).unwrap())
        );
    }
}
