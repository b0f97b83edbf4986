use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use super::layers::{
    clamped_nll, conv_backward_sample, conv_forward_sample, crop_cols, dense_backward_batch, dense_forward_batch,
    dropout_mask, onehot_index, pad_cols, softmax_in_place, ConvGeom, LayerSpec,
};
use super::tensor::{Scalar, Tensor};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Ordered layer stack plus the per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// `trace[0]` is the input shape, `trace[i + 1]` the output of layer `i`.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Parameter count of every layer, zero for parameter-free ones.
    pub fn param_counts(&self) -> Result<Vec<usize>> {
        let shapes = self.shape_trace()?;
        Ok(self.layers.iter().zip(&shapes).map(|(l, s)| l.param_count(s)).collect())
    }

    pub fn total_params(&self) -> Result<usize> {
        Ok(self.param_counts()?.iter().sum())
    }

    pub fn output_classes(&self) -> Result<usize> {
        Ok(self.shape_trace()?.last().unwrap().iter().product())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameters of every layer (`None` for parameter-free layers). Gradients
/// use the same type so their shapes always mirror the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

pub type Gradients<T> = ParamSet<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamTensor {
    Weight,
    Bias,
}

/// Address of one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIndex {
    pub layer: usize,
    pub tensor: ParamTensor,
    pub index: usize,
}

impl fmt::Display for ParamIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.tensor {
            ParamTensor::Weight => "weight",
            ParamTensor::Bias => "bias",
        };
        write!(f, "layers[{}].{t}[{}]", self.layer, self.index)
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    pub fn same_shapes(&self, other: &ParamSet<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape(),
                _ => false,
            })
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|(_, _, t)| t.len()).sum()
    }

    /// `(layer, which, tensor)` in layer order, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = (usize, ParamTensor, &Tensor<T>)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| {
            l.iter().flat_map(move |p| [(i, ParamTensor::Weight, &p.weight), (i, ParamTensor::Bias, &p.bias)])
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (usize, ParamTensor, &mut Tensor<T>)> {
        self.layers.iter_mut().enumerate().flat_map(|(i, l)| {
            l.iter_mut()
                .flat_map(move |p| [(i, ParamTensor::Weight, &mut p.weight), (i, ParamTensor::Bias, &mut p.bias)])
        })
    }

    pub fn indices(&self) -> Vec<ParamIndex> {
        self.tensors()
            .flat_map(|(layer, tensor, t)| (0..t.len()).map(move |index| ParamIndex { layer, tensor, index }))
            .collect()
    }

    fn slot(&self, at: ParamIndex) -> &Tensor<T> {
        let p = self.layers[at.layer].as_ref().expect("parameterized layer");
        match at.tensor {
            ParamTensor::Weight => &p.weight,
            ParamTensor::Bias => &p.bias,
        }
    }

    pub fn get(&self, at: ParamIndex) -> T {
        self.slot(at).data()[at.index]
    }

    pub fn set(&mut self, at: ParamIndex, value: T) {
        let p = self.layers[at.layer].as_mut().expect("parameterized layer");
        let t = match at.tensor {
            ParamTensor::Weight => &mut p.weight,
            ParamTensor::Bias => &mut p.bias,
        };
        t.data_mut()[at.index] = value;
    }

    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, _, t) in self.tensors_mut() {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|p| {
                        let conv = |t: &Tensor<T>| {
                            Tensor::new(t.shape(), t.data().iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect())
                                .unwrap()
                        };
                        LayerParams { weight: conv(&p.weight), bias: conv(&p.bias) }
                    })
                })
                .collect(),
        }
    }
}

/// Forward-pass mode. In training mode dropout masks are drawn from a
/// stream derived from `seed`, the layer index and the sample's position
/// `first_index + b`, so masks do not depend on how a batch is chunked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

pub struct Network<T> {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    params: ParamSet<T>,
}

struct Trace<T> {
    /// `acts[i]` is the batched input of layer `i`; the last entry is the output.
    acts: Vec<Vec<T>>,
    masks: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: ModelSpec, params: ParamSet<T>) -> Result<Self> {
        let shapes = spec.shape_trace()?;
        if params.layers.len() != spec.layers.len() {
            return Err(Error::shape("parameter list does not match the layer count"));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
            match (layer.param_shapes(&shapes[i]), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weight.shape() == ws.as_slice() && p.bias.shape() == bs.as_slice() => {}
                _ => return Err(Error::shape(format!("parameters of layer {i} ({}) have the wrong shape", layer.kind_name()))),
            }
        }
        Ok(Network { spec, shapes, params })
    }

    /// Seeded initialization: He-uniform for layers feeding a ReLU,
    /// Glorot-uniform otherwise; zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shape_trace()?;
        let n = spec.layers.len();
        let mut layers = Vec::with_capacity(n);
        for (i, layer) in spec.layers.iter().enumerate() {
            let Some((ws, bs)) = layer.param_shapes(&shapes[i]) else {
                layers.push(None);
                continue;
            };
            let (fan_in, fan_out) = match *layer {
                LayerSpec::Conv2D { filters, kh, kw } => (ws[1] * kh * kw, filters * kh * kw),
                LayerSpec::Dense { units } => (ws[1], units),
                _ => unreachable!(),
            };
            let feeds_relu = spec.layers[i + 1..]
                .iter()
                .find(|l| !matches!(l, LayerSpec::Dropout { .. }))
                .is_some_and(|l| *l == LayerSpec::Relu);
            let limit = if feeds_relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let mut rng = stream(derive_seed(seed, &[i as u64]));
            let count: usize = ws.iter().product();
            let w = (0..count).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
            layers.push(Some(LayerParams { weight: Tensor::new(&ws, w)?, bias: Tensor::zeros(&bs) }));
        }
        Network::new(spec, ParamSet { layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet<T>) -> Result<()> {
        if !params.same_shapes(&self.params) {
            return Err(Error::shape("replacement parameters have different shapes"));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    fn check_batch(&self, inputs: &[T], batch: usize) -> Result<()> {
        if inputs.len() != batch * self.input_len() {
            return Err(Error::shape(format!(
                "expected {batch} inputs of {} values, got {} values",
                self.input_len(),
                inputs.len()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; returns `batch x outputs` values.
    pub fn forward(&self, inputs: &[T], batch: usize, mode: Mode, first_index: usize) -> Result<Vec<T>> {
        self.check_batch(inputs, batch)?;
        let mut trace = self.forward_trace(inputs.to_vec(), batch, mode, first_index, false);
        Ok(trace.acts.pop().unwrap())
    }

    /// Eval-mode forward pass of a single sample.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward(input, 1, Mode::Eval, 0)
    }

    fn forward_trace(&self, input: Vec<T>, batch: usize, mode: Mode, first_index: usize, keep: bool) -> Trace<T> {
        let n = self.spec.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut masks = Vec::with_capacity(n);
        let mut x = input;
        let mut cols = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (ins, outs) = (&self.shapes[i], &self.shapes[i + 1]);
            let in_len: usize = ins.iter().product();
            let out_len: usize = outs.iter().product();
            let mut mask = None;
            let y = match layer {
                LayerSpec::Reshape { .. } | LayerSpec::Flatten => x.clone(),
                LayerSpec::ZeroPad { cols: p } => {
                    let mut y = vec![T::zero(); batch * out_len];
                    for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                        pad_cols(ins[0], ins[1], ins[2], *p, xs, ys);
                    }
                    y
                }
                LayerSpec::Conv2D { filters, kh, kw } => {
                    let g = ConvGeom { c: ins[0], h: ins[1], w: ins[2], f: *filters, kh: *kh, kw: *kw };
                    let p = self.params.layers[i].as_ref().unwrap();
                    let mut y = vec![T::zero(); batch * out_len];
                    for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                        conv_forward_sample(&g, xs, p.weight.data(), p.bias.data(), ys, &mut cols);
                    }
                    y
                }
                LayerSpec::Dense { units } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let mut y = vec![T::zero(); batch * out_len];
                    dense_forward_batch(batch, in_len, *units, &x, p.weight.data(), p.bias.data(), &mut y);
                    y
                }
                LayerSpec::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
                LayerSpec::Softmax => {
                    let mut y = x.clone();
                    y.chunks_exact_mut(out_len).for_each(softmax_in_place);
                    y
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { seed } if *rate > 0.0 => {
                        let mut m = Vec::with_capacity(batch * in_len);
                        for b in 0..batch {
                            let mut rng = stream(derive_seed(seed, &[i as u64, (first_index + b) as u64]));
                            m.extend(dropout_mask::<T, _>(in_len, *rate, &mut rng));
                        }
                        let y = x.iter().zip(&m).map(|(&v, &k)| v * k).collect();
                        mask = Some(m);
                        y
                    }
                    _ => x.clone(),
                },
            };
            if keep {
                acts.push(x);
            }
            masks.push(mask);
            x = y;
        }
        acts.push(x);
        Trace { acts, masks }
    }

    /// Summed loss and summed parameter gradients over a batch.
    ///
    /// The final layer must be a softmax; its gradient is fused with the
    /// cross-entropy as `p - y`.
    pub fn loss_and_grad(
        &self,
        inputs: &[T],
        onehots: &[T],
        batch: usize,
        mode: Mode,
        first_index: usize,
    ) -> Result<(T, Gradients<T>)> {
        self.check_batch(inputs, batch)?;
        let k = self.output_len();
        if onehots.len() != batch * k {
            return Err(Error::shape(format!("expected {batch} one-hot rows of {k}, got {} values", onehots.len())));
        }
        if self.spec.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::shape("loss_and_grad needs a network ending in Softmax"));
        }
        let hot = onehots.chunks_exact(k).map(onehot_index).collect::<Result<Vec<_>>>()?;

        let trace = self.forward_trace(inputs.to_vec(), batch, mode, first_index, true);
        let probs = trace.acts.last().unwrap();
        let mut loss = T::zero();
        for (row, &h) in probs.chunks_exact(k).zip(&hot) {
            loss = loss + clamped_nll(row[h]);
        }

        let mut grads = self.params.zeros_like();
        let first_param = self.spec.layers.iter().position(LayerSpec::has_params).unwrap_or(usize::MAX);
        // Gradient w.r.t. the softmax input.
        let mut d: Vec<T> = probs.iter().zip(onehots).map(|(&p, &y)| p - y).collect();
        let mut cols = Vec::new();
        let last = self.spec.layers.len() - 1;
        for i in (0..last).rev() {
            if i < first_param {
                break;
            }
            let layer = &self.spec.layers[i];
            let (ins, outs) = (&self.shapes[i], &self.shapes[i + 1]);
            let in_len: usize = ins.iter().product();
            let out_len: usize = outs.iter().product();
            let x = &trace.acts[i];
            let need_input_grad = i > first_param;
            d = match layer {
                LayerSpec::Reshape { .. } | LayerSpec::Flatten => d,
                LayerSpec::ZeroPad { cols: p } => {
                    let mut din = vec![T::zero(); batch * in_len];
                    for (ds, di) in d.chunks_exact(out_len).zip(din.chunks_exact_mut(in_len)) {
                        crop_cols(ins[0], ins[1], ins[2], *p, ds, di);
                    }
                    din
                }
                LayerSpec::Conv2D { filters, kh, kw } => {
                    let g = ConvGeom { c: ins[0], h: ins[1], w: ins[2], f: *filters, kh: *kh, kw: *kw };
                    let p = self.params.layers[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let mut din = if need_input_grad { vec![T::zero(); batch * in_len] } else { Vec::new() };
                    for b in 0..batch {
                        let xs = &x[b * in_len..(b + 1) * in_len];
                        let ds = &d[b * out_len..(b + 1) * out_len];
                        let di = need_input_grad.then(|| &mut din[b * in_len..(b + 1) * in_len]);
                        conv_backward_sample(
                            &g,
                            xs,
                            p.weight.data(),
                            ds,
                            gp.weight.data_mut(),
                            gp.bias.data_mut(),
                            di,
                            &mut cols,
                        );
                    }
                    din
                }
                LayerSpec::Dense { units } => {
                    let p = self.params.layers[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let mut din = if need_input_grad { vec![T::zero(); batch * in_len] } else { Vec::new() };
                    dense_backward_batch(
                        batch,
                        in_len,
                        *units,
                        x,
                        p.weight.data(),
                        &d,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        need_input_grad.then_some(din.as_mut_slice()),
                    );
                    din
                }
                LayerSpec::Relu => {
                    // relu'(0) is taken as 0.
                    d.iter().zip(x).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect()
                }
                LayerSpec::Softmax => {
                    let y = &trace.acts[i + 1];
                    let mut din = d.clone();
                    for (ds, ys) in din.chunks_exact_mut(out_len).zip(y.chunks_exact(out_len)) {
                        let dot: T = ds.iter().zip(ys).map(|(&a, &b)| a * b).sum();
                        for (g, &p) in ds.iter_mut().zip(ys) {
                            *g = p * (*g - dot);
                        }
                    }
                    din
                }
                LayerSpec::Dropout { .. } => match &trace.masks[i] {
                    Some(m) => d.iter().zip(m).map(|(&g, &k)| g * k).collect(),
                    None => d,
                },
            };
        }
        Ok((loss, grads))
    }

    /// Like [`loss_and_grad`](Self::loss_and_grad), split into `chunks`
    /// contiguous pieces evaluated on the current rayon pool and reduced in
    /// chunk order. The result is deterministic for a fixed chunk count.
    pub fn loss_and_grad_chunked(
        &self,
        inputs: &[T],
        onehots: &[T],
        batch: usize,
        mode: Mode,
        first_index: usize,
        chunks: usize,
    ) -> Result<(T, Gradients<T>)> {
        if chunks <= 1 || batch < 2 {
            return self.loss_and_grad(inputs, onehots, batch, mode, first_index);
        }
        self.check_batch(inputs, batch)?;
        let (n_in, k) = (self.input_len(), self.output_len());
        let per = batch.div_ceil(chunks);
        let ranges: Vec<(usize, usize)> =
            (0..batch).step_by(per).map(|s| (s, (s + per).min(batch))).collect();
        let parts = ranges
            .par_iter()
            .map(|&(s, e)| {
                self.loss_and_grad(&inputs[s * n_in..e * n_in], &onehots[s * k..e * k], e - s, mode, first_index + s)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut it = parts.into_iter();
        let (mut loss, mut grads) = it.next().unwrap();
        for (l, g) in it {
            loss = loss + l;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    /// Single-sample reverse pass: loss and gradients for one input tensor
    /// and its one-hot target.
    pub fn backprop(&self, input: &Tensor<T>, onehot: &Tensor<T>, mode: Mode) -> Result<(T, Gradients<T>)> {
        if input.shape() != self.shapes[0].as_slice() {
            return Err(Error::shape(format!("input shape {:?} != {:?}", input.shape(), self.shapes[0])));
        }
        self.loss_and_grad(input.data(), onehot.data(), 1, mode, 0)
    }

    /// Summed loss only (used by the finite-difference checker).
    pub fn loss(&self, inputs: &[T], onehots: &[T], batch: usize, mode: Mode) -> Result<T> {
        let k = self.output_len();
        let out = self.forward(inputs, batch, mode, 0)?;
        let mut total = T::zero();
        for (row, y) in out.chunks_exact(k).zip(onehots.chunks_exact(k)) {
            total = total + clamped_nll(row[onehot_index(y)?]);
        }
        Ok(total)
    }

    /// Signs of every ReLU input, used to detect finite-difference steps
    /// that cross a kink.
    pub(crate) fn relu_pattern(&self, inputs: &[T], batch: usize, mode: Mode) -> Vec<bool> {
        let trace = self.forward_trace(inputs.to_vec(), batch, mode, 0, true);
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == LayerSpec::Relu)
            .flat_map(|(i, _)| trace.acts[i].iter().map(|&v| v > T::zero()).collect::<Vec<_>>())
            .collect()
    }

    /// Whether any ReLU input is exactly zero.
    #[cfg(test)]
    pub(crate) fn relu_at_kink(&self, inputs: &[T], batch: usize, mode: Mode) -> bool {
        let trace = self.forward_trace(inputs.to_vec(), batch, mode, 0, true);
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == LayerSpec::Relu)
            .any(|(i, _)| trace.acts[i].iter().any(|&v| v == T::zero()))
    }
}
