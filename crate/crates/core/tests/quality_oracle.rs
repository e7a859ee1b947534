mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::quality::{quality_curve, subsample_agreement, synth_votes, TaggerNoiseModel};

use common::*;

#[test]
fn monte_carlo_tracks_enumeration() {
    let items = vec![
        vec![0, 0, 0, 0, 1, 1, 2, 3, 0, 4],
        vec![5, 5, 2, 2, 2, 5, 7, 1, 5, 2],
        vec![3, 3, 3, 3, 3, 3, 3, 3, 3, 6],
    ];
    let resamples = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for m in [2, 3, 5] {
        let exact: f64 = items
            .iter()
            .map(|t| exhaustive_agreement(t, 8, m))
            .sum::<f64>()
            / items.len() as f64;
        let mc = subsample_agreement(&items, 8, m, resamples, &mut rng).unwrap();
        let sigma = (items
            .iter()
            .map(|t| {
                let a = exhaustive_agreement(t, 8, m);
                a * (1.0 - a)
            })
            .sum::<f64>()
            / resamples as f64)
            .sqrt()
            / items.len() as f64;
        assert!(
            (mc - exact).abs() <= 3.0 * sigma.max(1e-12),
            "m={m}: {mc} vs {exact} (σ={sigma})"
        );
    }
}

#[test]
fn full_panel_always_agrees() {
    let noise = TaggerNoiseModel::symmetric(8, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels: Vec<usize> = (0..300).map(|i| i % 8).collect();
    let items = synth_votes(&labels, &noise, 10, &mut rng).unwrap();
    assert_eq!(
        subsample_agreement(&items, 8, 10, 5, &mut rng).unwrap(),
        1.0
    );
}

#[test]
fn curve_is_seed_stable() {
    let noise = TaggerNoiseModel::symmetric(4, 0.4).unwrap();
    let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
    let items = synth_votes(&labels, &noise, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let a = quality_curve(&items, 4, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = quality_curve(&items, 4, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.points.len(), 6);
    assert_eq!(a.agreement_at(6), Some(1.0));
}
