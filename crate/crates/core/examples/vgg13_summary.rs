//! Layer-by-layer shapes and parameter counts of the reference network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::net::build_vgg13;

fn main() -> crowdfer::Result<()> {
    let model = build_vgg13(64, 8, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{:<28} {:>16} {:>10}", "layer", "output", "params");
    for layer in model.layers() {
        let [c, h, w] = layer.output_shape();
        println!(
            "{:<28} {:>16} {:>10}",
            format!("{:?}", layer.spec()),
            format!("{c}×{h}×{w}"),
            layer.weights().len() + layer.bias().len()
        );
    }
    println!("total parameters: {}", model.param_count());
    Ok(())
}
