//! Finite-difference check of backpropagation through a small network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdfer::net::{gradient_check, GradCheckOptions, Tensor, ToyArch};
use crowdfer::schemes::draw_pld;
use crowdfer::{LabelDistribution, SchemeKind};

fn main() -> crowdfer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = ToyArch {
        blocks: 1,
        base_filters: 4,
        hidden: 16,
    }
    .build(8, 4, &mut rng)?;
    let input = Tensor::image(8, 8, (0..64).map(|_| rng.random()).collect())?;
    let dist = LabelDistribution::new(vec![0.45, 0.35, 0.2, 0.0])?;
    let drawn = draw_pld(&dist, &mut rng);
    for scheme in SchemeKind::all(0.3) {
        let report = gradient_check(
            &model,
            &input,
            &dist,
            scheme,
            scheme.needs_draw().then_some(&drawn),
            &GradCheckOptions::default(),
        )?;
        println!(
            "{scheme}: {} parameters, max relative error {:.2e} (logits {:.2e}), worst at {:?}",
            report.params_checked, report.max_rel_error, report.logit_max_rel_error, report.worst
        );
    }
    Ok(())
}
