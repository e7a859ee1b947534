//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ForwardCache, Mode, Model, ParamRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::labels::LabelDistribution;
use crate::schemes::{grad_logits, scheme_loss, PredictedDistribution, SchemeKind, TrainingTarget};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Below this magnitude the
/// comparison is effectively absolute. With `h = 1e-5`, central differences
/// on the toy networks carry up to about 1.2e-10 of rounding noise, so a
/// floor of 1e-4 keeps that noise under a relative 1e-5 while still
/// catching any gradient off by more than 1e-9.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per parameter
    /// tensor; `None` checks every parameter.
    pub max_coords_per_tensor: Option<usize>,
    /// Mode the caller intends to check in. [`Mode::Train`] with active
    /// dropout is refused.
    pub mode: Mode,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            max_coords_per_tensor: None,
            mode: Mode::Infer,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub scheme: String,
    /// Worst relative error over checked parameters.
    pub max_rel_error: f64,
    pub worst: Option<ParamRef>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Worst relative error of the logit gradient.
    pub logit_max_rel_error: f64,
    pub params_checked: usize,
    /// Coordinates skipped because a probe crossed a ReLU or max-pool kink.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn overall_max(&self) -> f64 {
        self.max_rel_error.max(self.logit_max_rel_error)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.overall_max() < tolerance
    }
}

/// Compares `q - t` against central differences of the scheme loss taken
/// directly in logit space. Returns the worst relative error.
pub fn check_logit_gradient(
    scheme: SchemeKind,
    dist: &LabelDistribution,
    logits: &[f64],
    drawn: Option<&TrainingTarget>,
    step: f64,
) -> Result<f64> {
    let pred = PredictedDistribution::from_logits(logits.to_vec());
    let analytic = grad_logits(scheme, dist, &pred, drawn)?;
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = logits.to_vec();
        let mut minus = logits.to_vec();
        plus[k] += step;
        minus[k] -= step;
        let lp = scheme_loss(
            scheme,
            dist,
            &PredictedDistribution::from_logits(plus),
            drawn,
        )?;
        let lm = scheme_loss(
            scheme,
            dist,
            &PredictedDistribution::from_logits(minus),
            drawn,
        )?;
        worst = worst.max(relative_error(a, (lp - lm) / (2.0 * step)));
    }
    Ok(worst)
}

/// End-to-end check: analytic parameter gradients from backpropagation versus
/// central differences of the scheme loss through the whole network.
pub fn gradient_check(
    model: &Model,
    input: &Tensor,
    dist: &LabelDistribution,
    scheme: SchemeKind,
    drawn: Option<&TrainingTarget>,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if options.mode == Mode::Train && model.has_active_dropout() {
        return Err(Error::GradCheckRefused(
            "dropout is active, so the loss is stochastic",
        ));
    }
    if scheme.needs_draw() && drawn.is_none() {
        return Err(Error::MissingDraw);
    }
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (pred, cache) = model.forward(input, Mode::Infer, &mut unused)?;
    let upstream = grad_logits(scheme, dist, &pred, drawn)?;
    let grads = model.backward(&cache, &upstream)?;
    let logit_max_rel_error =
        check_logit_gradient(scheme, dist, pred.logits(), drawn, options.step)?;

    let coords = select_coords(model, options);
    let mut probe = model.clone();
    let probe_at = |m: &Model| -> Result<(f64, ForwardCache)> {
        let (p, c) = m.forward(input, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok((scheme_loss(scheme, dist, &p, drawn)?, c))
    };

    let mut report = GradCheckReport {
        scheme: scheme.code().to_string(),
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        logit_max_rel_error,
        params_checked: 0,
        kinks_skipped: 0,
    };
    for r in coords {
        let original = probe.param(r);
        probe.set_param(r, original + options.step);
        let (lp, cp) = probe_at(&probe)?;
        probe.set_param(r, original - options.step);
        let (lm, cm) = probe_at(&probe)?;
        probe.set_param(r, original);
        if !(cache.same_branches(&cp, model) && cache.same_branches(&cm, model)) {
            report.kinks_skipped += 1;
            continue;
        }
        report.params_checked += 1;
        let numeric = (lp - lm) / (2.0 * options.step);
        let analytic = grads.get(r);
        let err = relative_error(analytic, numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(r);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn select_coords(model: &Model, options: &GradCheckOptions) -> Vec<ParamRef> {
    let Some(limit) = options.max_coords_per_tensor else {
        return model.param_refs().collect();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut out = Vec::new();
    for (layer, l) in model.layers().iter().enumerate() {
        for (kind, len) in [
            (super::ParamKind::Weight, l.weights().len()),
            (super::ParamKind::Bias, l.bias().len()),
        ] {
            if len == 0 {
                continue;
            }
            let mut picked: Vec<usize> = if len <= limit {
                (0..len).collect()
            } else {
                sample(&mut rng, len, limit).into_vec()
            };
            picked.sort_unstable();
            out.extend(
                picked
                    .into_iter()
                    .map(|index| ParamRef { layer, kind, index }),
            );
        }
    }
    out
}
