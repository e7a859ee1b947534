//! Learning image classifiers from crowd-sourced label distributions.
//!
//! Each image carries votes from several taggers. The crate turns those votes
//! into label distributions ([`labels`]), derives training targets and losses
//! under four schemes ([`schemes`]: majority vote, multi-label, probabilistic
//! label drawing and full-distribution cross-entropy), and trains a small
//! from-scratch convolutional network ([`net`]) with on-the-fly affine
//! augmentation ([`augment`]). [`trainer`] runs multi-trial experiments and
//! reports accuracy against the majority label with a confusion matrix.
//! [`quality`] reproduces the tagger-count versus agreement analysis and
//! synthesizes noisy taggers; [`synthetic`] builds pattern datasets for
//! desk-scale experiments. [`dataio`] covers the CSV, checkpoint and metrics
//! formats and [`cli`] wires everything into the `crowdfer` binary.
//!
//! See the `examples/` directory of the crate for one runnable program per
//! capability.

pub mod augment;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod labels;
pub mod net;
pub mod quality;
pub mod schemes;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::{EmotionSet, LabelDistribution, VoteCounts};
pub use schemes::{PredictedDistribution, SchemeKind, TrainingTarget};
