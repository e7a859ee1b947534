//! Training loop, evaluation and multi-trial statistics.
//!
//! Minibatch gradients are computed per example and summed in fixed-size
//! chunks, then the chunk sums are added in order. The partition does not
//! depend on the number of worker threads, so results are bit-reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{random_affine, AffineParams};
use crate::dataio::DatasetItem;
use crate::error::{Error, Result};
use crate::labels::argmax_f64;
use crate::net::{build_vgg13, Gradients, Mode, Model, Sgd, ToyArch};
use crate::schemes::{
    admitted_set, draw_pld, grad_logits, loss_ce, scheme_loss, SchemeKind, TrainingTarget,
    DEFAULT_ML_THRESHOLD,
};

/// Examples per gradient-accumulation chunk.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PldRedraw {
    /// One draw per example at the start of each epoch.
    Epoch,
    /// Draw when the example is assembled into a minibatch.
    Visit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Architecture {
    Vgg13,
    Toy {
        blocks: usize,
        base_filters: usize,
        hidden: usize,
    },
}

impl Architecture {
    pub fn toy(arch: ToyArch) -> Self {
        Self::Toy {
            blocks: arch.blocks,
            base_filters: arch.base_filters,
            hidden: arch.hidden,
        }
    }

    pub fn build<R: Rng + ?Sized>(
        &self,
        input_size: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Model> {
        match *self {
            Self::Vgg13 => build_vgg13(input_size, classes, rng),
            Self::Toy {
                blocks,
                base_filters,
                hidden,
            } => ToyArch {
                blocks,
                base_filters,
                hidden,
            }
            .build(input_size, classes, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: SchemeKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `lr_decay_factor` from this fraction of
    /// the epochs on.
    pub lr_decay_at: f64,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub trials: usize,
    /// Trial `i` is seeded with `seed + i * trial_seed_stride`.
    pub trial_seed_stride: u64,
    pub outlier_threshold: u32,
    pub augment: Option<AffineParams>,
    pub pld_redraw: PldRedraw,
    /// Threshold for the any-admitted diagnostic accuracy.
    pub diagnostic_ml_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::MajorityVote,
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay_at: 2.0 / 3.0,
            lr_decay_factor: 0.1,
            seed: 0,
            trials: 5,
            trial_seed_stride: 1,
            outlier_threshold: crate::labels::DEFAULT_OUTLIER_THRESHOLD,
            augment: None,
            pld_redraw: PldRedraw::Epoch,
            diagnostic_ml_threshold: DEFAULT_ML_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.trials == 0 {
            return Err(Error::Config(
                "epochs, batch size and trials must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decay_epoch = (self.epochs as f64 * self.lr_decay_at).round() as usize;
        if epoch >= decay_epoch && decay_epoch > 0 {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed
            .wrapping_add(self.trial_seed_stride.wrapping_mul(trial as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-example training loss under the scheme.
    pub mean_loss: f64,
    /// Fraction of training examples whose train-mode prediction matched the
    /// majority label.
    pub train_accuracy: f64,
}

/// A model with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    sgd: Sgd,
    config: TrainConfig,
    epoch: usize,
}

struct ChunkResult {
    grads: Gradients,
    loss: f64,
    correct: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sgd = Sgd::new(&model, config.momentum);
        Ok(Self {
            model,
            sgd,
            config,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over `data` in a seeded random order.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        data: &[&DatasetItem],
        rng: &mut R,
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let epoch_seed: u64 = rng.random();
        let mut order_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        // Separate stream so PLD draws never shift shuffling or dropout.
        let mut draw_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        draw_rng.set_stream(1);

        let scheme = self.config.scheme;
        let epoch_draws: Option<Vec<TrainingTarget>> =
            (scheme.needs_draw() && self.config.pld_redraw == PldRedraw::Epoch).then(|| {
                data.iter()
                    .map(|item| draw_pld(&item.dist, &mut draw_rng))
                    .collect()
            });

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut order_rng);
        let lr = self.config.learning_rate_at(self.epoch);

        let mut total_loss = 0.0;
        let mut total_correct = 0;
        for batch in order.chunks(self.config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| order_rng.random()).collect();
            let model = &self.model;
            let config = &self.config;
            let draws = epoch_draws.as_deref();
            let chunks: Vec<ChunkResult> = batch
                .par_chunks(CHUNK)
                .zip(seeds.par_chunks(CHUNK))
                .map(|(idx, seeds)| -> Result<ChunkResult> {
                    let mut acc = ChunkResult {
                        grads: Gradients::zeros_like(model),
                        loss: 0.0,
                        correct: 0,
                    };
                    for (&i, &seed) in idx.iter().zip(seeds) {
                        let item = data[i];
                        let mut ex_rng = ChaCha8Rng::seed_from_u64(seed);
                        let image = match &config.augment {
                            Some(params) => random_affine(&item.image, params, &mut ex_rng)?,
                            None => item.image.clone(),
                        };
                        let visit_draw;
                        let drawn = match (scheme.needs_draw(), draws) {
                            (false, _) => None,
                            (true, Some(d)) => Some(&d[i]),
                            (true, None) => {
                                let mut r = ChaCha8Rng::seed_from_u64(seed);
                                r.set_stream(1);
                                visit_draw = draw_pld(&item.dist, &mut r);
                                Some(&visit_draw)
                            }
                        };
                        let (pred, cache) = model.forward(&image, Mode::Train, &mut ex_rng)?;
                        acc.loss += scheme_loss(scheme, &item.dist, &pred, drawn)?;
                        if pred.predicted_class() == item.majority() {
                            acc.correct += 1;
                        }
                        let g = grad_logits(scheme, &item.dist, &pred, drawn)?;
                        model.backward_into(&cache, &g, &mut acc.grads)?;
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;

            let mut chunks = chunks.into_iter();
            let first = chunks.next().expect("batch is non-empty");
            let mut grads = first.grads;
            let mut batch_loss = first.loss;
            let mut batch_correct = first.correct;
            for c in chunks {
                grads.add_assign(&c.grads);
                batch_loss += c.loss;
                batch_correct += c.correct;
            }
            grads.scale(1.0 / batch.len() as f64);
            self.sgd.step(&mut self.model, &grads, lr);
            total_loss += batch_loss;
            total_correct += batch_correct;
        }
        let stats = EpochStats {
            epoch: self.epoch,
            learning_rate: lr,
            mean_loss: total_loss / data.len() as f64,
            train_accuracy: total_correct as f64 / data.len() as f64,
        };
        self.epoch += 1;
        Ok(stats)
    }
}

/// K×K counts; rows are the true majority label, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy against the majority label.
    pub accuracy: f64,
    /// Diagnostic: prediction counts as correct when it is any admitted
    /// category at the diagnostic threshold.
    pub any_admitted_accuracy: f64,
    pub examples: usize,
    /// Test examples per true majority class (confusion row sums).
    pub class_counts: Vec<u64>,
    pub confusion: ConfusionMatrix,
    pub per_trial: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over trials (divisor n).
    pub stddev: f64,
    /// Sample standard deviation over trials (divisor n - 1).
    pub sample_stddev: f64,
    pub single_trial: bool,
}

impl EvalReport {
    /// `mean ± std %` with three decimals, as percentages.
    pub fn summary(&self) -> String {
        format!("{:.3} ± {:.3} %", 100.0 * self.mean, 100.0 * self.stddev)
    }
}

/// Mean, population and sample standard deviation (two-pass).
pub fn trial_statistics(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / n as f64).sqrt(), (ss / (n - 1) as f64).sqrt())
}

/// Argmax prediction versus majority label on every item; never augments.
pub fn evaluate(
    model: &Model,
    data: &[&DatasetItem],
    diagnostic_threshold: f64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds: Vec<usize> = data
        .par_iter()
        .map(|item| model.predict(&item.image).map(|q| argmax_f64(q.probs())))
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new(model.classes());
    let mut admitted_hits = 0;
    for (item, &p) in data.iter().zip(&preds) {
        confusion.record(item.majority(), p);
        if let TrainingTarget::Admitted(a) = admitted_set(&item.dist, diagnostic_threshold) {
            if a[p] {
                admitted_hits += 1;
            }
        }
    }
    let accuracy = confusion.accuracy();
    Ok(EvalReport {
        accuracy,
        any_admitted_accuracy: admitted_hits as f64 / data.len() as f64,
        examples: data.len(),
        class_counts: confusion.row_sums(),
        confusion,
        per_trial: vec![accuracy],
        mean: accuracy,
        stddev: 0.0,
        sample_stddev: 0.0,
        single_trial: true,
    })
}

/// Mean cross-entropy against the full label distribution, in inference mode.
pub fn distribution_loss(model: &Model, data: &[&DatasetItem]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|item| {
            let q = model.predict(&item.image)?;
            loss_ce(&TrainingTarget::Distribution(item.dist.clone()), &q)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub train: EpochStats,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub history: Vec<EpochLog>,
    pub test: EvalReport,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct TrialsOutcome {
    /// Per-trial accuracies with mean and standard deviations. Accuracy and
    /// confusion are those of the best trial (earliest on ties).
    pub report: EvalReport,
    pub best_trial: usize,
    pub trials: Vec<TrialOutcome>,
}

pub struct Splits<'a> {
    pub train: Vec<&'a DatasetItem>,
    pub validation: Vec<&'a DatasetItem>,
    pub test: Vec<&'a DatasetItem>,
}

impl<'a> Splits<'a> {
    pub fn from_dataset(ds: &'a crate::dataio::Dataset) -> Self {
        use crate::dataio::Split;
        Self {
            train: ds.split(Split::Train),
            validation: ds.split(Split::Validation),
            test: ds.split(Split::Test),
        }
    }
}

/// Trains one model from scratch and evaluates it on the test split.
pub fn run_trial(
    splits: &Splits<'_>,
    config: &TrainConfig,
    arch: &Architecture,
    trial: usize,
) -> Result<TrialOutcome> {
    let first = splits.train.first().ok_or(Error::EmptyDataset)?;
    let [_, size, _] = first.image.chw();
    let classes = first.dist.classes();
    let seed = config.trial_seed(trial);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed);
    train_rng.set_stream(1);

    let model = arch.build(size, classes, &mut init_rng)?;
    let mut trainer = Trainer::new(model, *config)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let train = trainer.train_epoch(&splits.train, &mut train_rng)?;
        let (validation_loss, validation_accuracy) = if splits.validation.is_empty() {
            (None, None)
        } else {
            let acc = evaluate(
                trainer.model(),
                &splits.validation,
                config.diagnostic_ml_threshold,
            )?
            .accuracy;
            (
                Some(distribution_loss(trainer.model(), &splits.validation)?),
                Some(acc),
            )
        };
        log::info!(
            "trial {trial} epoch {} lr {:.4} loss {:.4} train acc {:.4} val acc {}",
            train.epoch,
            train.learning_rate,
            train.mean_loss,
            train.train_accuracy,
            validation_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        history.push(EpochLog {
            train,
            validation_loss,
            validation_accuracy,
        });
    }
    let model = trainer.into_model();
    let test = evaluate(&model, &splits.test, config.diagnostic_ml_threshold)?;
    Ok(TrialOutcome {
        trial,
        seed,
        history,
        test,
        model,
    })
}

/// `config.trials` independent trainings with derived seeds.
pub fn run_trials(
    splits: &Splits<'_>,
    config: &TrainConfig,
    arch: &Architecture,
) -> Result<TrialsOutcome> {
    config.validate()?;
    if splits.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let trials = (0..config.trials)
        .map(|t| run_trial(splits, config, arch, t))
        .collect::<Result<Vec<_>>>()?;
    let per_trial: Vec<f64> = trials.iter().map(|t| t.test.accuracy).collect();
    let mut best = 0;
    for (i, a) in per_trial.iter().enumerate() {
        if *a > per_trial[best] {
            best = i;
        }
    }
    let (mean, stddev, sample_stddev) = trial_statistics(&per_trial);
    let report = EvalReport {
        per_trial,
        mean,
        stddev,
        sample_stddev,
        single_trial: trials.len() == 1,
        ..trials[best].test.clone()
    };
    Ok(TrialsOutcome {
        report,
        best_trial: best,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Split;
    use crate::labels::LabelDistribution;
    use crate::net::{LayerSpec, Tensor};

    fn item(image: Vec<f64>, dist: LabelDistribution) -> DatasetItem {
        let n = (image.len() as f64).sqrt() as usize;
        let votes = crate::labels::VoteCounts::from_counts(
            dist.probs()
                .iter()
                .map(|p| (p * 10.0).round() as u32)
                .collect(),
        );
        DatasetItem {
            image: Tensor::image(n, n, image).unwrap(),
            votes,
            dist,
            split: Split::Train,
        }
    }

    #[test]
    fn five_trial_statistics_match_published_rows() {
        let pld = [85.43, 84.65, 85.34, 85.01, 84.50];
        let (mean, std, _) = trial_statistics(&pld);
        assert!((mean - 84.986).abs() < 5e-4);
        assert!((std - 0.366).abs() < 1e-3);
        let mv = [83.60, 84.89, 83.15, 83.39, 84.23];
        let (mean, std, sample) = trial_statistics(&mv);
        assert!((mean - 83.852).abs() < 5e-4);
        assert!((std - 0.631).abs() < 1e-3);
        assert!(sample > std);
    }

    #[test]
    fn single_trial_statistics() {
        assert_eq!(trial_statistics(&[0.7]), (0.7, 0.0, 0.0));
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig {
            epochs: 9,
            ..Default::default()
        };
        assert_eq!(c.learning_rate_at(5), 0.01);
        assert!((c.learning_rate_at(6) - 0.001).abs() < 1e-15);
        let one = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert_eq!(one.learning_rate_at(0), 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            momentum: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_dataset_errors() {
        let m = Model::zeroed(
            [1, 2, 2],
            &[LayerSpec::Dense { units: 2 }, LayerSpec::Softmax],
        )
        .unwrap();
        let mut t = Trainer::new(m.clone(), TrainConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            t.train_epoch(&[], &mut rng),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(evaluate(&m, &[], 0.3), Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ToyArch::with_blocks(1).build(4, 2, &mut rng).unwrap();
        let items: Vec<DatasetItem> = (0..6)
            .map(|i| {
                item(
                    vec![i as f64 / 6.0; 16],
                    LabelDistribution::one_hot(2, i % 2),
                )
            })
            .collect();
        let refs: Vec<&DatasetItem> = items.iter().collect();
        let mut t = Trainer::new(
            m.clone(),
            TrainConfig {
                learning_rate: 0.0,
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        t.train_epoch(&refs, &mut rng).unwrap();
        assert_eq!(t.model().layers(), m.layers());
    }

    #[test]
    fn perfect_and_uniform_classifiers() {
        // Dense weights read the single pixel that encodes the class.
        let specs = [LayerSpec::Dense { units: 2 }, LayerSpec::Softmax];
        let mut m = Model::zeroed([1, 1, 2], &specs).unwrap();
        if let Some((w, _)) = m.params_mut().next() {
            w.copy_from_slice(&[10.0, 0.0, 0.0, 10.0]);
        }
        let items = [
            item_flat(vec![1.0, 0.0], 0),
            item_flat(vec![0.0, 1.0], 1),
            item_flat(vec![0.0, 1.0], 1),
        ];
        let refs: Vec<&DatasetItem> = items.iter().collect();
        let r = evaluate(&m, &refs, 0.3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion.counts, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(r.class_counts, vec![1, 2]);

        let uniform = Model::zeroed([1, 1, 2], &specs).unwrap();
        let r = evaluate(&uniform, &refs, 0.3).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion.counts, vec![vec![1, 0], vec![2, 0]]);
    }

    fn item_flat(image: Vec<f64>, class: usize) -> DatasetItem {
        DatasetItem {
            image: Tensor::new(vec![1, 1, image.len()], image).unwrap(),
            votes: crate::labels::VoteCounts::from_counts(vec![0; 2]),
            dist: LabelDistribution::one_hot(2, class),
            split: Split::Test,
        }
    }
}
