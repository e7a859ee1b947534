//! Prints a small glyph before and after random affine augmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdfer::augment::{apply_affine, AffineParams};
use crowdfer::net::Tensor;

fn show(t: &Tensor) {
    let [_, h, w] = t.chw();
    for row in t.data().chunks(w).take(h) {
        let line: String = row
            .iter()
            .map(|v| match v {
                v if *v > 0.66 => '#',
                v if *v > 0.33 => '+',
                v if *v > 0.05 => '.',
                _ => ' ',
            })
            .collect();
        println!("|{line}|");
    }
}

fn main() -> crowdfer::Result<()> {
    let n = 16;
    let mut pixels = vec![0.0; n * n];
    for i in 3..13 {
        pixels[3 * n + i] = 1.0;
        pixels[i * n + 4] = 1.0;
    }
    let image = Tensor::image(n, n, pixels)?;
    println!("original");
    show(&image);
    let params = AffineParams::standard(n);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..2 {
        let t = params.sample(&mut rng);
        let out = apply_affine(&image, &t)?;
        println!(
            "sample {i}: rotate {:.1}°, scale {:.3}, shift ({:.1}, {:.1}), flip {}",
            t.rotation_deg, t.scale, t.translate_x, t.translate_y, t.flip
        );
        show(&out);
    }
    Ok(())
}
