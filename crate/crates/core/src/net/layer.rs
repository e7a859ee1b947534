use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of the fixed layer grammar.
///
/// Convolutions are 3×3 with padding 1 and stride 1; pooling is 2×2 max with
/// stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize },
    MaxPool,
    Dropout { rate: f64 },
    Dense { units: usize },
    Relu,
    Softmax,
}

pub const KERNEL: usize = 3;

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Conv { filters: 0 } => {
                Err(Error::LayerSpec("conv needs at least one filter".into()))
            }
            Self::Dense { units: 0 } => {
                Err(Error::LayerSpec("dense needs at least one unit".into()))
            }
            Self::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(Error::LayerSpec(
                format!("dropout rate {rate} outside [0, 1)"),
            )),
            _ => Ok(()),
        }
    }

    /// Output shape for a given `(c, h, w)` input.
    pub fn output_shape(&self, index: usize, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        match *self {
            Self::Conv { filters } => Ok([filters, h, w]),
            Self::MaxPool => {
                if h < 2 || w < 2 {
                    return Err(Error::Shape {
                        layer: index,
                        detail: format!("max pooling needs at least 2×2 input, got {h}×{w}"),
                    });
                }
                Ok([c, h / 2, w / 2])
            }
            Self::Dense { units } => Ok([units, 1, 1]),
            Self::Dropout { .. } | Self::Relu | Self::Softmax => Ok([c, h, w]),
        }
    }

    /// `(weight count, bias count)` for a given input shape.
    pub fn param_counts(&self, [c, h, w]: [usize; 3]) -> (usize, usize) {
        match *self {
            Self::Conv { filters } => (filters * c * KERNEL * KERNEL, filters),
            Self::Dense { units } => (units * c * h * w, units),
            _ => (0, 0),
        }
    }

    pub fn fan_in(&self, [c, h, w]: [usize; 3]) -> usize {
        match self {
            Self::Conv { .. } => c * KERNEL * KERNEL,
            Self::Dense { .. } => c * h * w,
            _ => 0,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Self::Conv { .. })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Self::Dense { .. })
    }
}

// Kernels. All buffers are row-major `(c, h, w)`.

pub(crate) fn conv_forward(
    input: &[f64],
    [c, h, w]: [usize; 3],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let filters = bias.len();
    let plane = h * w;
    for f in 0..filters {
        let out_plane = &mut out[f * plane..(f + 1) * plane];
        out_plane.fill(bias[f]);
        for ch in 0..c {
            let in_plane = &input[ch * plane..(ch + 1) * plane];
            let kernel = &weights[(f * c + ch) * 9..(f * c + ch + 1) * 9];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = kernel[ky * KERNEL + kx];
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `grad_in` is given, the input
/// gradient.
pub(crate) fn conv_backward(
    input: &[f64],
    [c, h, w]: [usize; 3],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let filters = grad_b.len();
    let plane = h * w;
    for f in 0..filters {
        let g_plane = &grad_out[f * plane..(f + 1) * plane];
        grad_b[f] += g_plane.iter().sum::<f64>();
        for ch in 0..c {
            let in_plane = &input[ch * plane..(ch + 1) * plane];
            let base = (f * c + ch) * 9;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    let wv = weights[base + ky * KERNEL + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (gv, sv) in g.iter().zip(s) {
                            acc += gv * sv;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let dst = &mut gi[ch * plane + sy * w + x0 + kx - 1
                                ..ch * plane + sy * w + x1 + kx - 1];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[base + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
}

/// Output rows/cols `[lo, hi)` whose tap at kernel offset `k` lands inside the
/// input for padding 1.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Returns, for each output cell, the flat input index of the selected maximum.
/// Ties go to the first element in row-major window order.
pub(crate) fn maxpool_forward(
    input: &[f64],
    [c, h, w]: [usize; 3],
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = ch * h * w + (2 * oy) * w + 2 * ox;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

pub(crate) fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (u, o) in out.iter_mut().enumerate() {
        let row = &weights[u * n..(u + 1) * n];
        *o = bias[u] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = input.len();
    for (u, &g) in grad_out.iter().enumerate() {
        grad_b[u] += g;
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad_w[u * n..(u + 1) * n];
        for (d, x) in gw.iter_mut().zip(input) {
            *d += g * x;
        }
        if let Some(gi) = grad_in.as_deref_mut() {
            let row = &weights[u * n..(u + 1) * n];
            for (d, wv) in gi.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct padded convolution, written independently of the strided kernel.
    fn naive_conv(input: &[f64], [c, h, w]: [usize; 3], weights: &[f64], bias: &[f64]) -> Vec<f64> {
        let f_count = bias.len();
        let mut out = vec![0.0; f_count * h * w];
        for f in 0..f_count {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[f];
                    for ch in 0..c {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weights[((f * c + ch) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[ch * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[f * h * w + y as usize * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_reference() {
        let shape = [2, 4, 5];
        let input: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let weights: Vec<f64> = (0..3 * 2 * 9)
            .map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3)
            .collect();
        let bias = vec![0.1, -0.2, 0.3];
        let mut out = vec![0.0; 3 * 20];
        conv_forward(&input, shape, &weights, &bias, &mut out);
        let expected = naive_conv(&input, shape, &weights, &bias);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        // 2×2 input, max at bottom-left.
        let input = [0.1, 0.4, 0.9, -0.3];
        let mut out = [0.0];
        let mut arg = [0usize];
        maxpool_forward(&input, [1, 2, 2], &mut out, &mut arg);
        assert_eq!(out, [0.9]);
        assert_eq!(arg, [2]);
    }

    #[test]
    fn maxpool_tie_picks_first() {
        let input = [1.0, 1.0, 1.0, 1.0];
        let mut out = [0.0];
        let mut arg = [9usize];
        maxpool_forward(&input, [1, 2, 2], &mut out, &mut arg);
        assert_eq!(arg, [0]);
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::Conv { filters: 0 }.validate().is_err());
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { rate: 0.0 }.validate().is_ok());
        assert!(LayerSpec::MaxPool.output_shape(3, [4, 1, 8]).is_err());
        assert_eq!(
            LayerSpec::MaxPool.output_shape(0, [4, 7, 9]).unwrap(),
            [4, 3, 4]
        );
    }
}
