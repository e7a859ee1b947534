//! Loss and logit gradient of each training scheme for one prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::schemes::{draw_pld, grad_logits, scheme_loss};
use crowdfer::{LabelDistribution, PredictedDistribution, SchemeKind};

fn main() -> crowdfer::Result<()> {
    let dist = LabelDistribution::new(vec![0.5, 0.4, 0.1, 0.0])?;
    let pred = PredictedDistribution::from_logits(vec![0.2, 1.1, -0.3, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let drawn = draw_pld(&dist, &mut rng);
    println!("target p = {:?}", dist.probs());
    println!("model  q = {:.3?}", pred.probs());
    for scheme in SchemeKind::all(0.3) {
        let target = scheme.needs_draw().then_some(&drawn);
        let loss = scheme_loss(scheme, &dist, &pred, target)?;
        let grad = grad_logits(scheme, &dist, &pred, target)?;
        println!(
            "{:<10} loss {loss:.4}  dL/dz {grad:+.3?}",
            scheme.to_string()
        );
    }
    Ok(())
}
