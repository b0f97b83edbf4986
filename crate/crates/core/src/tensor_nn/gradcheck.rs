//! Central finite-difference check of backprop gradients.
//!
//! For every scalar parameter `theta` the checker evaluates the summed loss
//! at `theta +- step` and compares `(L+ - L-) / (2 step)` with the analytic
//! gradient. The relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
//! Coordinates whose perturbation flips the sign of any ReLU input straddle
//! a kink; they are excluded from the maximum and listed separately.
//!
//! [`Stencil::FivePoint`] swaps in the fourth-order central formula
//! `(-L(+2h) + 8 L(+h) - 8 L(-h) + L(-2h)) / (12 h)`. Softmax cross-entropy
//! is not quadratic even when the layers are linear, so the two-point
//! estimate bottoms out near `1e-7` relative error from truncation and
//! rounding; the wider stencil gets well below that at a larger step.

use std::collections::BTreeMap;

use rand::Rng;

use super::layers::LayerSpec;
use super::network::{Mode, ModelSpec, Network, ParamIndex};
use super::tensor::Tensor;
use crate::rng::stream;
use crate::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamIndex>,
    pub checked: usize,
    pub kinks: Vec<ParamIndex>,
    /// Largest relative error per parameterized layer kind.
    pub per_kind: BTreeMap<&'static str, f64>,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(+h) - L(-h)) / 2h`.
    #[default]
    ThreePoint,
    /// Fourth-order central difference over `+-h` and `+-2h`.
    FivePoint,
}

impl Stencil {
    fn offsets(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::ThreePoint => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }
}

/// Compares backprop against central differences for every parameter.
pub fn grad_check(
    net: &Network<f64>,
    inputs: &[f64],
    onehots: &[f64],
    batch: usize,
    mode: Mode,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_with(net, inputs, onehots, batch, mode, step, tolerance, Stencil::ThreePoint)
}

#[allow(clippy::too_many_arguments)]
pub fn grad_check_with(
    net: &Network<f64>,
    inputs: &[f64],
    onehots: &[f64],
    batch: usize,
    mode: Mode,
    step: f64,
    tolerance: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let (_, grads) = net.loss_and_grad(inputs, onehots, batch, mode, 0)?;
    let mut probe = Network::new(net.spec().clone(), net.params().clone())?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks: Vec::new(),
        per_kind: BTreeMap::new(),
        tolerance,
        passed: true,
    };
    for at in net.params().indices() {
        let theta = net.params().get(at);
        let mut numeric = 0.0;
        let mut patterns = Vec::new();
        for &(k, w) in stencil.offsets() {
            probe.params_mut().set(at, theta + k * step);
            numeric += w * probe.loss(inputs, onehots, batch, mode)?;
            patterns.push(probe.relu_pattern(inputs, batch, mode));
        }
        probe.params_mut().set(at, theta);
        if patterns.windows(2).any(|p| p[0] != p[1]) {
            report.kinks.push(at);
            continue;
        }
        let numeric = numeric / step;
        let err = relative_error(grads.get(at), numeric);
        report.checked += 1;
        let kind = net.spec().layers[at.layer].kind_name();
        let slot = report.per_kind.entry(kind).or_insert(0.0);
        *slot = slot.max(err);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(at);
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

/// A randomized conv + dense stack with matching input and target.
pub struct MicroNet {
    pub net: Network<f64>,
    pub inputs: Vec<f64>,
    pub onehots: Vec<f64>,
    pub batch: usize,
    pub mode: Mode,
}

impl MicroNet {
    pub fn check(&self, step: f64, tolerance: f64) -> Result<GradCheckReport> {
        self.check_with(step, tolerance, Stencil::ThreePoint)
    }

    pub fn check_with(&self, step: f64, tolerance: f64, stencil: Stencil) -> Result<GradCheckReport> {
        grad_check_with(&self.net, &self.inputs, &self.onehots, self.batch, self.mode, step, tolerance, stencil)
    }
}

/// Builds a random two-conv, two-dense micro network on `1 x 2 x 8` inputs
/// (well under 5000 parameters). With `linear` set there are no ReLU or
/// dropout layers.
pub fn micro_network(seed: u64, linear: bool) -> Result<MicroNet> {
    let mut rng = stream(seed);
    let f1 = rng.random_range(2..=5);
    let k1 = rng.random_range(1..=3);
    let f2 = rng.random_range(2..=5);
    let k2 = rng.random_range(1..=3);
    let units = rng.random_range(3..=8);
    let with_dropout = !linear && rng.random_bool(0.5);

    let mut layers = vec![
        LayerSpec::ZeroPad { cols: 1 },
        LayerSpec::Conv2D { filters: f1, kh: 1, kw: k1 },
    ];
    if !linear {
        layers.push(LayerSpec::Relu);
    }
    if with_dropout {
        layers.push(LayerSpec::Dropout { rate: 0.5 });
    }
    layers.push(LayerSpec::ZeroPad { cols: 1 });
    layers.push(LayerSpec::Conv2D { filters: f2, kh: 2, kw: k2 });
    if !linear {
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { units });
    if !linear {
        layers.push(LayerSpec::Relu);
    }
    if with_dropout {
        layers.push(LayerSpec::Dropout { rate: 0.5 });
    }
    layers.push(LayerSpec::Dense { units: 2 });
    layers.push(LayerSpec::Softmax);

    let spec = ModelSpec { input_shape: vec![1, 2, 8], layers };
    let mut net = Network::<f64>::init(spec, rng.random())?;
    // Nonzero biases so ReLU inputs are not symmetric around zero.
    for (_, which, t) in net.params_mut().tensors_mut() {
        if which == super::network::ParamTensor::Bias {
            for b in t.data_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
    }
    let batch = 2;
    let inputs: Vec<f64> = (0..batch * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let onehots: Vec<f64> =
        (0..batch).flat_map(|_| if rng.random_bool(0.5) { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
    let mode = if with_dropout { Mode::Train { seed: rng.random() } } else { Mode::Eval };
    Ok(MicroNet { net, inputs, onehots, batch, mode })
}

/// Single-sample convenience wrapper over [`grad_check`].
pub fn grad_check_sample(
    net: &Network<f64>,
    input: &Tensor<f64>,
    onehot: &Tensor<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check(net, input.data(), onehot.data(), 1, Mode::Eval, step, tolerance)
}
