use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with a `(channels, height, width)` or
/// `(length)` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape {
                layer: 0,
                detail: format!("tensor rank must be 1..=3, got {}", shape.len()),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                layer: 0,
                detail: format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Single-channel image of `height × width`.
    pub fn image(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![1, height, width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape padded to `(c, h, w)`; a vector of length n becomes `(n, 1, 1)`.
    pub fn chw(&self) -> [usize; 3] {
        match self.shape.as_slice() {
            [n] => [*n, 1, 1],
            [h, w] => [1, *h, *w],
            [c, h, w] => [*c, *h, *w],
            _ => unreachable!("rank checked on construction"),
        }
    }

    /// Height and width of a single-channel image.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        match self.chw() {
            [1, h, w] if self.shape.len() >= 2 => Some((h, w)),
            _ => None,
        }
    }
}
