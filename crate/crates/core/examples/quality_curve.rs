//! Agreement between small tagger panels and the full panel, on simulated
//! taggers at several noise levels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::quality::{quality_curve, synth_votes, TaggerNoiseModel};

fn main() -> crowdfer::Result<()> {
    let labels: Vec<usize> = (0..2000).map(|i| i % 8).collect();
    for noise in [0.3, 0.5, 0.7] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let items = synth_votes(
            &labels,
            &TaggerNoiseModel::symmetric(8, noise)?,
            10,
            &mut rng,
        )?;
        let curve = quality_curve(&items, 8, 100, &mut rng)?;
        let cells: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2}", p.agreement))
            .collect();
        println!("noise {noise}: {}", cells.join(" "));
    }
    Ok(())
}
