//! On-the-fly affine augmentation for single-channel images.
//!
//! A transform rotates and scales about the image center, optionally mirrors
//! horizontally, then translates. Output pixels are pulled back through the
//! inverse map and sampled bilinearly; samples falling outside the source read
//! as zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Tensor;

/// Bounds for random transforms. Each magnitude is sampled uniformly in
/// `[-bound, bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub max_rotation_deg: f64,
    pub max_scale_delta: f64,
    /// In pixels.
    pub max_translate: f64,
    /// Mirror with probability 0.5 when set.
    pub flip_horizontal: bool,
}

impl AffineParams {
    pub const IDENTITY: Self = Self {
        max_rotation_deg: 0.0,
        max_scale_delta: 0.0,
        max_translate: 0.0,
        flip_horizontal: false,
    };

    /// Rotation ±15°, scale ±10 %, translation ±10 % of the width, random flip.
    pub fn standard(width: usize) -> Self {
        Self {
            max_rotation_deg: 15.0,
            max_scale_delta: 0.10,
            max_translate: 0.10 * width as f64,
            flip_horizontal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            self.max_rotation_deg,
            self.max_scale_delta,
            self.max_translate,
        ];
        if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config(format!(
                "augmentation bounds must be finite and ≥ 0: {self:?}"
            )));
        }
        if self.max_scale_delta >= 1.0 {
            return Err(Error::Config("scale delta must be below 1".into()));
        }
        Ok(())
    }

    /// Draws a concrete transform. Always consumes exactly five uniforms.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineTransform {
        let mut sym = |bound: f64| bound * (2.0 * rng.random::<f64>() - 1.0);
        let rotation_deg = sym(self.max_rotation_deg);
        let scale = 1.0 + sym(self.max_scale_delta);
        let translate_x = sym(self.max_translate);
        let translate_y = sym(self.max_translate);
        let flip = rng.random::<f64>() < 0.5 && self.flip_horizontal;
        AffineTransform {
            rotation_deg,
            scale,
            translate_x,
            translate_y,
            flip,
        }
    }
}

/// A concrete transform; positive `translate_x` moves content right and
/// positive `translate_y` moves it down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub flip: bool,
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        rotation_deg: 0.0,
        scale: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
        flip: false,
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            translate_x: dx,
            translate_y: dy,
            ..Self::IDENTITY
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    image.image_dims().ok_or_else(|| Error::Shape {
        layer: 0,
        detail: format!(
            "augmentation needs a single-channel image, got {:?}",
            image.shape()
        ),
    })
}

/// Applies `t` with bilinear sampling and zero fill.
pub fn apply_affine(image: &Tensor, t: &AffineTransform) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    if t.is_identity() {
        return Ok(image.clone());
    }
    let src = image.data();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = t.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // Undo translation and scale, then rotate by -θ, then undo the flip.
            let u = (x as f64 - cx - t.translate_x) / t.scale;
            let v = (y as f64 - cy - t.translate_y) / t.scale;
            let mut sx = cos * u + sin * v;
            let sy = -sin * u + cos * v;
            if t.flip {
                sx = -sx;
            }
            out[y * w + x] = bilinear(src, h, w, sx + cx, sy + cy);
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

fn bilinear(src: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Samples a transform from `params` and applies it.
pub fn random_affine<R: Rng + ?Sized>(
    image: &Tensor,
    params: &AffineParams,
    rng: &mut R,
) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    if h != w {
        return Err(Error::Shape {
            layer: 0,
            detail: format!("augmentation expects a square image, got {h}×{w}"),
        });
    }
    apply_affine(image, &params.sample(rng))
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    if src_h == dst_h && src_w == dst_w {
        return src.to_vec();
    }
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for y in 0..dst_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f64;
        for x in 0..dst_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
            let bottom = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delta(n: usize, row: usize, col: usize) -> Tensor {
        let mut d = vec![0.0; n * n];
        d[row * n + col] = 1.0;
        Tensor::image(n, n, d).unwrap()
    }

    fn ramp(n: usize) -> Tensor {
        Tensor::image(n, n, (0..n * n).map(|i| (i % 7) as f64 / 6.0).collect()).unwrap()
    }

    #[test]
    fn zero_bounds_are_identity() {
        let img = ramp(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(
                random_affine(&img, &AffineParams::IDENTITY, &mut rng).unwrap(),
                img
            );
        }
    }

    #[test]
    fn identity_without_fast_path_is_exact() {
        // Zero rotation, unit scale and zero translation, but with a flip
        // undone by a second flip, exercises the full sampling path.
        let img = ramp(8);
        let once = apply_affine(
            &img,
            &AffineTransform {
                flip: true,
                ..AffineTransform::IDENTITY
            },
        )
        .unwrap();
        let twice = apply_affine(
            &once,
            &AffineTransform {
                flip: true,
                ..AffineTransform::IDENTITY
            },
        )
        .unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn two_pixel_right_shift_moves_delta() {
        let out = apply_affine(&delta(5, 2, 1), &AffineTransform::translation(2.0, 0.0)).unwrap();
        assert_eq!(out, delta(5, 2, 3));
    }

    #[test]
    fn shift_out_of_frame_fills_zero() {
        let out = apply_affine(&delta(5, 2, 4), &AffineTransform::translation(1.0, 0.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_mirrors_columns() {
        let out = apply_affine(
            &delta(5, 0, 1),
            &AffineTransform {
                flip: true,
                ..AffineTransform::IDENTITY
            },
        )
        .unwrap();
        assert_eq!(out, delta(5, 0, 3));
    }

    #[test]
    fn quarter_turn_rotates_about_center() {
        // 90° about the center of a 5×5 grid maps (row 2, col 4) to (row 4, col 2)
        // in image coordinates (y down).
        let out = apply_affine(
            &delta(5, 2, 4),
            &AffineTransform {
                rotation_deg: 90.0,
                ..AffineTransform::IDENTITY
            },
        )
        .unwrap();
        let expected = delta(5, 4, 2);
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_augmentation_is_deterministic() {
        let img = ramp(12);
        let params = AffineParams::standard(12);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..4)
                .map(|_| random_affine(&img, &params, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_bounds_make_small_changes() {
        let img = ramp(16);
        let mad = |bound: f64| {
            let params = AffineParams {
                max_rotation_deg: bound,
                max_scale_delta: bound / 100.0,
                max_translate: bound,
                flip_horizontal: false,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let out = random_affine(&img, &params, &mut rng).unwrap();
            out.data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / img.len() as f64
        };
        assert_eq!(mad(0.0), 0.0);
        assert!(mad(0.01) < 0.01, "{}", mad(0.01));
        assert!(mad(0.01) < mad(3.0));
    }

    #[test]
    fn rejects_non_square_and_bad_bounds() {
        let img = Tensor::image(3, 4, vec![0.0; 12]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_affine(&img, &AffineParams::IDENTITY, &mut rng).is_err());
        let bad = AffineParams {
            max_rotation_deg: -1.0,
            ..AffineParams::IDENTITY
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn resize_preserves_constant_images() {
        let out = resize_bilinear(&[0.25; 48 * 48], 48, 48, 64, 64);
        assert_eq!(out.len(), 64 * 64);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn output_stays_within_input_range(
            pixels in prop::collection::vec(0.0f64..1.0, 64),
            seed in any::<u64>(),
        ) {
            let img = Tensor::image(8, 8, pixels).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = random_affine(&img, &AffineParams::standard(8), &mut rng).unwrap();
            let max = img.data().iter().copied().fold(0.0, f64::max);
            for &v in out.data() {
                prop_assert!(v >= -1e-12 && v <= max + 1e-12);
            }
        }
    }
}
