use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};

/// Stochastic gradient descent with classical momentum:
/// `v ← μ v − η g`, `θ ← θ + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: model
                .layers()
                .iter()
                .map(|l| (vec![0.0; l.weights().len()], vec![0.0; l.bias().len()]))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients, learning_rate: f64) {
        let mu = self.momentum;
        for (((w, b), (vw, vb)), (gw, gb)) in model
            .params_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads.layers.iter())
        {
            for ((p, v), g) in w.iter_mut().zip(vw.iter_mut()).zip(gw) {
                *v = mu * *v - learning_rate * g;
                *p += *v;
            }
            for ((p, v), g) in b.iter_mut().zip(vb.iter_mut()).zip(gb) {
                *v = mu * *v - learning_rate * g;
                *p += *v;
            }
        }
    }
}
