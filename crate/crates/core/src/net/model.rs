use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::{self, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::schemes::PredictedDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// A layer with its resolved shapes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    input_shape: [usize; 3],
    output_shape: [usize; 3],
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Which parameter a [`ParamRef`] points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Coordinates of a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamRef {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

/// Feed-forward network over the layer grammar, ending in a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    version: u64,
}

/// Activations and stochastic choices recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    DropoutMask(Vec<f64>),
    PoolArgmax(Vec<usize>),
}

impl ForwardCache {
    /// True when both passes took the same branch at every ReLU and max-pool,
    /// so the loss is smooth along the segment joining them.
    pub fn same_branches(&self, other: &ForwardCache, model: &Model) -> bool {
        model
            .layers
            .iter()
            .enumerate()
            .all(|(i, layer)| match layer.spec {
                LayerSpec::Relu => self.inputs[i]
                    .iter()
                    .zip(&other.inputs[i])
                    .all(|(a, b)| (*a > 0.0) == (*b > 0.0)),
                LayerSpec::MaxPool => match (&self.aux[i], &other.aux[i]) {
                    (Aux::PoolArgmax(a), Aux::PoolArgmax(b)) => a == b,
                    _ => true,
                },
                _ => true,
            })
    }
}

/// Parameter gradients laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let (w, b) = &self.layers[index];
        (w, b)
    }

    pub fn get(&self, r: ParamRef) -> f64 {
        let (w, b) = &self.layers[r.layer];
        match r.kind {
            ParamKind::Weight => w[r.index],
            ParamKind::Bias => b[r.index],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

impl Model {
    /// Builds a model for the given `(channels, height, width)` input with
    /// He-initialized weights and zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_shape: [usize; 3],
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeroed(input_shape, specs)?;
        for layer in &mut model.layers {
            let fan_in = layer.spec.fan_in(layer.input_shape);
            if fan_in == 0 {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("standard deviation is finite and positive");
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = normal.sample(rng));
        }
        Ok(model)
    }

    /// Builds a model with all parameters zero.
    pub fn zeroed(input_shape: [usize; 3], specs: &[LayerSpec]) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::LayerSpec(format!(
                "input shape {input_shape:?} has a zero dimension"
            )));
        }
        match specs.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return Err(Error::LayerSpec("the last layer must be softmax".into())),
        }
        if specs
            .iter()
            .filter(|s| matches!(s, LayerSpec::Softmax))
            .count()
            != 1
        {
            return Err(Error::LayerSpec(
                "exactly one softmax layer is allowed".into(),
            ));
        }
        match specs.iter().rev().nth(1) {
            Some(LayerSpec::Dense { .. }) => {}
            _ => return Err(Error::LayerSpec("softmax must follow a dense layer".into())),
        }
        let mut shape = input_shape;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let output_shape = spec.output_shape(i, shape)?;
            let (nw, nb) = spec.param_counts(shape);
            layers.push(Layer {
                spec: *spec,
                input_shape: shape,
                output_shape,
                weights: vec![0.0; nw],
                bias: vec![0.0; nb],
            });
            shape = output_shape;
        }
        Ok(Self {
            input_shape,
            layers,
            version: 0,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.output_shape[0]).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn has_active_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.spec, LayerSpec::Dropout { rate } if rate > 0.0))
    }

    pub fn param(&self, r: ParamRef) -> f64 {
        let l = &self.layers[r.layer];
        match r.kind {
            ParamKind::Weight => l.weights[r.index],
            ParamKind::Bias => l.bias[r.index],
        }
    }

    pub fn set_param(&mut self, r: ParamRef, value: f64) {
        let l = &mut self.layers[r.layer];
        match r.kind {
            ParamKind::Weight => l.weights[r.index] = value,
            ParamKind::Bias => l.bias[r.index] = value,
        }
        self.version += 1;
    }

    /// Every scalar parameter, in layer order, weights before biases.
    pub fn param_refs(&self) -> impl Iterator<Item = ParamRef> + '_ {
        self.layers.iter().enumerate().flat_map(|(layer, l)| {
            (0..l.weights.len())
                .map(move |index| ParamRef {
                    layer,
                    kind: ParamKind::Weight,
                    index,
                })
                .chain((0..l.bias.len()).map(move |index| ParamRef {
                    layer,
                    kind: ParamKind::Bias,
                    index,
                }))
        })
    }

    /// Mutable access to `(weights, bias)` of each layer. Bumps the version so
    /// outstanding forward caches become stale.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.version += 1;
        self.layers
            .iter_mut()
            .map(|l| (&mut l.weights, &mut l.bias))
    }

    /// Replaces all parameters; used by checkpoint loading.
    pub(crate) fn load_params(&mut self, params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<()> {
        if params.len() != self.layers.len() {
            return Err(Error::CheckpointShape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, (w, b))) in self.layers.iter_mut().zip(params).enumerate() {
            if w.len() != layer.weights.len() || b.len() != layer.bias.len() {
                return Err(Error::CheckpointShape(format!(
                    "layer {i} parameter count differs"
                )));
            }
            layer.weights = w;
            layer.bias = b;
        }
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.chw() != self.input_shape {
            return Err(Error::Shape {
                layer: 0,
                detail: format!(
                    "input shape {:?} does not match model input {:?}",
                    input.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass without recording activations.
    pub fn predict(&self, input: &Tensor) -> Result<PredictedDistribution> {
        self.check_input(input)?;
        let mut current = input.data().to_vec();
        for layer in &self.layers[..self.layers.len() - 1] {
            current = match layer.spec {
                LayerSpec::MaxPool => {
                    let n = shape_len(layer.output_shape);
                    let mut out = vec![0.0; n];
                    let mut arg = vec![0; n];
                    layer::maxpool_forward(&current, layer.input_shape, &mut out, &mut arg);
                    out
                }
                LayerSpec::Dropout { .. } => current,
                _ => apply_deterministic(layer, &current),
            };
        }
        Ok(PredictedDistribution::from_logits(current))
    }

    /// Forward pass that records what [`Model::backward`] needs. In
    /// [`Mode::Train`] dropout masks are drawn from `rng` with inverted scaling;
    /// in [`Mode::Infer`] dropout is the identity and `rng` is untouched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(PredictedDistribution, ForwardCache)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last);
        let mut aux = Vec::with_capacity(last);
        let mut current = input.data().to_vec();
        for layer in &self.layers[..last] {
            let (next, a) = match layer.spec {
                LayerSpec::MaxPool => {
                    let n = shape_len(layer.output_shape);
                    let mut out = vec![0.0; n];
                    let mut arg = vec![0; n];
                    layer::maxpool_forward(&current, layer.input_shape, &mut out, &mut arg);
                    (out, Aux::PoolArgmax(arg))
                }
                LayerSpec::Dropout { rate } if mode == Mode::Train && rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..current.len())
                        .map(|_| {
                            if rng.random::<f64>() < rate {
                                0.0
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let out = current.iter().zip(&mask).map(|(x, m)| x * m).collect();
                    (out, Aux::DropoutMask(mask))
                }
                LayerSpec::Dropout { .. } => (current.clone(), Aux::None),
                _ => (apply_deterministic(layer, &current), Aux::None),
            };
            inputs.push(current);
            aux.push(a);
            current = next;
        }
        Ok((
            PredictedDistribution::from_logits(current),
            ForwardCache {
                version: self.version,
                inputs,
                aux,
            },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, grad_logits, &mut grads)?;
        Ok(grads)
    }

    /// Adds this example's parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let last = self.layers.len() - 1;
        if cache.version != self.version || cache.inputs.len() != last {
            return Err(Error::StaleCache);
        }
        if grad_logits.len() != self.classes() {
            return Err(Error::Shape {
                layer: last,
                detail: format!(
                    "logit gradient has {} entries, model has {} classes",
                    grad_logits.len(),
                    self.classes()
                ),
            });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                layer: 0,
                detail: "gradient buffer does not match model".into(),
            });
        }
        // Layers before the first parameterized one never need input gradients.
        let first_param = self
            .layers
            .iter()
            .position(|l| !l.weights.is_empty())
            .unwrap_or(last);
        let mut grad = grad_logits.to_vec();
        for i in (0..last).rev() {
            if i < first_param {
                break;
            }
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            if input.len() != shape_len(layer.input_shape) {
                return Err(Error::StaleCache);
            }
            let need_input_grad = i > first_param;
            let (gw, gb) = &mut grads.layers[i];
            grad = match (&layer.spec, &cache.aux[i]) {
                (LayerSpec::Conv { .. }, _) => {
                    let mut gi = need_input_grad.then(|| vec![0.0; input.len()]);
                    layer::conv_backward(
                        input,
                        layer.input_shape,
                        &layer.weights,
                        &grad,
                        gw,
                        gb,
                        gi.as_deref_mut(),
                    );
                    gi.unwrap_or_default()
                }
                (LayerSpec::Dense { .. }, _) => {
                    let mut gi = need_input_grad.then(|| vec![0.0; input.len()]);
                    layer::dense_backward(input, &layer.weights, &grad, gw, gb, gi.as_deref_mut());
                    gi.unwrap_or_default()
                }
                (LayerSpec::Relu, _) => grad
                    .iter()
                    .zip(input)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                (LayerSpec::MaxPool, Aux::PoolArgmax(arg)) => {
                    let mut gi = vec![0.0; input.len()];
                    for (g, &src) in grad.iter().zip(arg) {
                        gi[src] += g;
                    }
                    gi
                }
                (LayerSpec::Dropout { .. }, Aux::DropoutMask(mask)) => {
                    grad.iter().zip(mask).map(|(g, m)| g * m).collect()
                }
                (LayerSpec::Dropout { .. }, Aux::None) => grad,
                _ => return Err(Error::StaleCache),
            };
        }
        Ok(())
    }
}

fn shape_len(s: [usize; 3]) -> usize {
    s[0] * s[1] * s[2]
}

fn apply_deterministic(layer: &Layer, input: &[f64]) -> Vec<f64> {
    match layer.spec {
        LayerSpec::Conv { .. } => {
            let mut out = vec![0.0; shape_len(layer.output_shape)];
            layer::conv_forward(
                input,
                layer.input_shape,
                &layer.weights,
                &layer.bias,
                &mut out,
            );
            out
        }
        LayerSpec::Dense { .. } => {
            let mut out = vec![0.0; shape_len(layer.output_shape)];
            layer::dense_forward(input, &layer.weights, &layer.bias, &mut out);
            out
        }
        LayerSpec::Relu => input.iter().map(|&x| x.max(0.0)).collect(),
        LayerSpec::Dropout { .. } | LayerSpec::Softmax => input.to_vec(),
        LayerSpec::MaxPool => unreachable!("pooling handled by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv { filters: 2 },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ]
    }

    #[test]
    fn rejects_bad_grammar() {
        assert!(Model::zeroed([1, 4, 4], &[LayerSpec::Dense { units: 3 }]).is_err());
        assert!(Model::zeroed([1, 4, 4], &[LayerSpec::Relu, LayerSpec::Softmax]).is_err());
        assert!(Model::zeroed([0, 4, 4], &tiny_specs()).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let m = Model::zeroed([1, 4, 4], &tiny_specs()).unwrap();
        let x = Tensor::image(4, 4, (0..16).map(f64::from).collect()).unwrap();
        let q = m.predict(&x).unwrap();
        for &v in q.probs() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = Model::zeroed([1, 4, 4], &tiny_specs()).unwrap();
        let x = Tensor::image(5, 5, vec![0.0; 25]).unwrap();
        assert!(matches!(m.predict(&x), Err(Error::Shape { layer: 0, .. })));
    }

    #[test]
    fn infer_matches_predict_and_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::new([1, 4, 4], &tiny_specs(), &mut rng).unwrap();
        let x = Tensor::image(4, 4, (0..16).map(|v| f64::from(v) / 16.0).collect()).unwrap();
        let (a, _) = m.forward(&x, Mode::Infer, &mut rng).unwrap();
        let (b, _) = m.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.predict(&x).unwrap());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Model::new([1, 4, 4], &tiny_specs(), &mut rng).unwrap();
        let x = Tensor::image(4, 4, vec![0.5; 16]).unwrap();
        let (_, cache) = m.forward(&x, Mode::Train, &mut rng).unwrap();
        m.set_param(
            ParamRef {
                layer: 0,
                kind: ParamKind::Bias,
                index: 0,
            },
            1.0,
        );
        assert!(matches!(
            m.backward(&cache, &[0.0; 3]),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::new([1, 4, 4], &tiny_specs(), &mut rng).unwrap();
        let x = Tensor::image(4, 4, (0..16).map(f64::from).collect()).unwrap();
        let (_, cache) = m.forward(&x, Mode::Train, &mut rng).unwrap();
        let g = m.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn maxpool_backward_routes_to_winner() {
        // conv (identity-ish) is skipped: pool directly on the input, then dense.
        let specs = [
            LayerSpec::MaxPool,
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ];
        let mut m = Model::zeroed([1, 2, 2], &specs).unwrap();
        for (w, _) in m.params_mut() {
            if !w.is_empty() {
                w.copy_from_slice(&[1.0, -1.0]);
            }
        }
        // Max at index 1 (0.8). Dense weight gradient = g * pooled value.
        let x = Tensor::image(2, 2, vec![0.2, 0.8, -0.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = m.forward(&x, Mode::Train, &mut rng).unwrap();
        let g = m.backward(&cache, &[1.0, 0.0]).unwrap();
        assert_eq!(g.layer(1).0, &[0.8, 0.0]);
        assert_eq!(g.layer(1).1, &[1.0, 0.0]);
    }

    #[test]
    fn dropout_is_identity_in_inference() {
        let specs = [
            LayerSpec::Dropout { rate: 0.9 },
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Model::new([1, 3, 3], &specs, &mut rng).unwrap();
        let x = Tensor::image(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let (_, cache) = m.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert!(matches!(cache.aux[0], Aux::None));
        let (_, cache) = m.forward(&x, Mode::Train, &mut rng).unwrap();
        let Aux::DropoutMask(mask) = &cache.aux[0] else {
            panic!("expected a mask")
        };
        assert!(mask.iter().all(|&v| v == 0.0 || (v - 10.0).abs() < 1e-9));
    }

    #[test]
    fn seeded_training_pass_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let m = Model::new([1, 4, 4], &tiny_specs(), &mut rng).unwrap();
            let x = Tensor::image(4, 4, (0..16).map(|v| f64::from(v).sin()).collect()).unwrap();
            let (q, cache) = m.forward(&x, Mode::Train, &mut rng).unwrap();
            let g = m.backward(&cache, &[0.3, -0.1, -0.2]).unwrap();
            (q, g)
        };
        assert_eq!(build(), build());
    }
}
