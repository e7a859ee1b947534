//! Builders for the reference VGG13-style network and its desk-scale surrogate.

use rand::Rng;

use super::layer::LayerSpec;
use super::model::Model;
use crate::error::{Error, Result};

/// Dropout after each convolution block.
pub const CONV_DROPOUT: f64 = 0.25;
/// Dropout after each hidden dense layer.
pub const DENSE_DROPOUT: f64 = 0.5;

/// Convolution widths per block of the reference network: ten convolutions in
/// four pooled blocks.
pub const VGG13_BLOCKS: [&[usize]; 4] =
    [&[64, 64], &[128, 128], &[256, 256, 256], &[256, 256, 256]];
pub const VGG13_DENSE: [usize; 2] = [1024, 1024];
pub const VGG13_INPUT: usize = 64;

fn conv_block(widths: &[usize], specs: &mut Vec<LayerSpec>) {
    for &filters in widths {
        specs.push(LayerSpec::Conv { filters });
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::MaxPool);
    specs.push(LayerSpec::Dropout { rate: CONV_DROPOUT });
}

fn dense_head(hidden: &[usize], classes: usize, specs: &mut Vec<LayerSpec>) {
    for &units in hidden {
        specs.push(LayerSpec::Dense { units });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Dropout {
            rate: DENSE_DROPOUT,
        });
    }
    specs.push(LayerSpec::Dense { units: classes });
    specs.push(LayerSpec::Softmax);
}

pub fn vgg13_specs(classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for widths in VGG13_BLOCKS {
        conv_block(widths, &mut specs);
    }
    dense_head(&VGG13_DENSE, classes, &mut specs);
    specs
}

/// The reference network for square grayscale input.
pub fn build_vgg13<R: Rng + ?Sized>(
    input_size: usize,
    classes: usize,
    rng: &mut R,
) -> Result<Model> {
    if input_size < 16 {
        return Err(Error::LayerSpec(format!(
            "vgg13 needs at least 16×16 input for its four pooling stages, got {input_size}"
        )));
    }
    Model::new([1, input_size, input_size], &vgg13_specs(classes), rng)
}

/// Reduced network with the same layer grammar: `blocks` blocks of one
/// convolution each (widths doubling from `base_filters`), then one hidden
/// dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyArch {
    pub blocks: usize,
    pub base_filters: usize,
    pub hidden: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        Self {
            blocks: 2,
            base_filters: 8,
            hidden: 32,
        }
    }
}

impl ToyArch {
    pub fn with_blocks(blocks: usize) -> Self {
        Self {
            blocks,
            ..Self::default()
        }
    }

    pub fn specs(&self, classes: usize) -> Result<Vec<LayerSpec>> {
        if self.blocks == 0 {
            return Err(Error::LayerSpec(
                "toy model needs at least one block".into(),
            ));
        }
        let mut specs = Vec::new();
        for b in 0..self.blocks {
            conv_block(&[self.base_filters << b], &mut specs);
        }
        dense_head(&[self.hidden], classes, &mut specs);
        Ok(specs)
    }

    pub fn build<R: Rng + ?Sized>(
        &self,
        input_size: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Model> {
        Model::new([1, input_size, input_size], &self.specs(classes)?, rng)
    }
}

pub fn build_toy<R: Rng + ?Sized>(
    input_size: usize,
    classes: usize,
    blocks: usize,
    rng: &mut R,
) -> Result<Model> {
    ToyArch::with_blocks(blocks).build(input_size, classes, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vgg13_structure() {
        let specs = vgg13_specs(8);
        assert_eq!(specs.iter().filter(|s| s.is_conv()).count(), 10);
        assert_eq!(
            specs.iter().filter(|s| **s == LayerSpec::MaxPool).count(),
            4
        );
        assert_eq!(specs.first(), Some(&LayerSpec::Conv { filters: 64 }));
        assert_eq!(specs.last(), Some(&LayerSpec::Softmax));
    }

    #[test]
    fn toy_models_build_and_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for blocks in [1, 2] {
            let m = build_toy(16, 8, blocks, &mut rng).unwrap();
            assert_eq!(m.specs().iter().filter(|s| s.is_conv()).count(), blocks);
            assert_eq!(m.classes(), 8);
            let x = Tensor::image(16, 16, (0..256).map(|v| f64::from(v % 17) / 17.0).collect())
                .unwrap();
            let q = m.predict(&x).unwrap();
            assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(build_toy(16, 8, 0, &mut rng).is_err());
        assert!(build_toy(2, 8, 2, &mut rng).is_err());
    }
}
