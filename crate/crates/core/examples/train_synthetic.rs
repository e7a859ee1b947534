//! Trains the toy network on a seeded synthetic dataset under one scheme.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [mv|ml|pld|cel] [tagger-noise] [epochs]
//! ```

use crowdfer::net::ToyArch;
use crowdfer::synthetic::{generate, SyntheticConfig};
use crowdfer::trainer::{run_trial, Architecture, Splits, TrainConfig};
use crowdfer::SchemeKind;

fn main() -> crowdfer::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let scheme: SchemeKind = args.next().as_deref().unwrap_or("cel").parse()?;
    let noise: f64 = args
        .next()
        .map_or(0.2, |s| s.parse().expect("noise must be a number"));
    let epochs: usize = args
        .next()
        .map_or(10, |s| s.parse().expect("epochs must be an integer"));

    let data = generate(&SyntheticConfig {
        tagger_noise: noise,
        ..Default::default()
    })?;
    let splits = Splits::from_dataset(&data.dataset);
    println!(
        "{} train / {} validation / {} test items, {} dropped as unusable",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        data.dataset.dropped_unusable
    );

    let config = TrainConfig {
        scheme,
        epochs,
        batch_size: 32,
        learning_rate: 0.02,
        trials: 1,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let outcome = run_trial(&splits, &config, &Architecture::toy(ToyArch::default()), 0)?;
    println!(
        "{scheme}: test accuracy {:.2}% after {epochs} epochs in {:.1?}",
        100.0 * outcome.test.accuracy,
        started.elapsed()
    );
    Ok(())
}
