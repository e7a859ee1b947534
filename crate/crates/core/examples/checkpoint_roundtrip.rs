//! Saves a model, reloads it, and confirms the predictions are unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::dataio::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crowdfer::net::{Tensor, ToyArch};

fn main() -> crowdfer::Result<()> {
    let model = ToyArch::default().build(16, 8, &mut ChaCha8Rng::seed_from_u64(9))?;
    let path = std::env::temp_dir().join("crowdfer-example.ckpt");
    let meta = CheckpointMeta {
        seed: 9,
        scheme: "cel".into(),
        emotions: crowdfer::EmotionSet::ferplus().names().to_vec(),
        ..Default::default()
    };
    save_checkpoint(&model, &meta, &path)?;
    let (loaded, loaded_meta) = load_checkpoint(&path)?;
    let x = Tensor::image(16, 16, (0..256).map(|i| (i % 17) as f64 / 16.0).collect())?;
    let same = model.predict(&x)? == loaded.predict(&x)?;
    println!(
        "{} bytes, {} parameters, seed {}, identical predictions: {same}",
        std::fs::metadata(&path)?.len(),
        loaded.param_count(),
        loaded_meta.seed
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
