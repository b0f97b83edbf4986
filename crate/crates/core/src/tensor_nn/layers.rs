//! Layer descriptors and the per-layer numeric kernels.
//!
//! Convolutions are valid (unpadded) stride-1 cross-correlations computed
//! through im2col and a GEMM; padding comes from explicit [`LayerSpec::ZeroPad`]
//! layers. Layout is channel-first: `[C, H, W]` per sample.

use rand::Rng;

use super::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};
use crate::{Error, Result};

/// Probability floor inside the log of the cross-entropy.
pub const LOSS_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Reshape { shape: Vec<usize> },
    /// Zero columns added on both the left and the right of every row.
    ZeroPad { cols: usize },
    Conv2D { filters: usize, kh: usize, kw: usize },
    Dense { units: usize },
    Relu,
    Softmax,
    Dropout { rate: f64 },
    Flatten,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Reshape { .. } => "Reshape",
            LayerSpec::ZeroPad { .. } => "ZeroPad",
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Softmax => "Softmax",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Flatten => "Flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2D { filters, kh, kw } if filters == 0 || kh == 0 || kw == 0 => {
                Err(Error::param("convolution filters and kernel dims must be >= 1"))
            }
            LayerSpec::Dense { units: 0 } => Err(Error::param("dense layer needs at least one unit")),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::param(format!("dropout rate must be in [0, 1), got {rate}")))
            }
            LayerSpec::Reshape { ref shape } if shape.is_empty() || shape.contains(&0) => {
                Err(Error::param(format!("bad reshape target {shape:?}")))
            }
            _ => Ok(()),
        }
    }

    /// Output shape for one sample, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let numel: usize = input.iter().product();
        let chw = || -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::shape(format!("{} expects a [C, H, W] input, got {input:?}", self.kind_name()))),
            }
        };
        match self {
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != numel {
                    return Err(Error::shape(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
            LayerSpec::ZeroPad { cols } => {
                let (c, h, w) = chw()?;
                Ok(vec![c, h, w + 2 * cols])
            }
            LayerSpec::Conv2D { filters, kh, kw } => {
                let (_, h, w) = chw()?;
                if *kh > h || *kw > w {
                    return Err(Error::shape(format!("{kh}x{kw} kernel does not fit a {h}x{w} input")));
                }
                Ok(vec![*filters, h - kh + 1, w - kw + 1])
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::shape(format!("Dense expects a flat input, got {input:?}")));
                }
                Ok(vec![*units])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::shape(format!("Softmax expects a flat input, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![numel]),
        }
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2D { filters, kh, kw } => Some((vec![filters, input[0], kh, kw], vec![filters])),
            LayerSpec::Dense { units } => Some((vec![units, input[0]], vec![units])),
            _ => None,
        }
    }

    pub fn param_count(&self, input: &[usize]) -> usize {
        self.param_shapes(input)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Geometry of one convolution, shared by the forward and backward kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn wo(&self) -> usize {
        self.w - self.kw + 1
    }
    /// Rows of the im2col matrix.
    pub fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    /// Columns of the im2col matrix.
    pub fn n(&self) -> usize {
        self.ho() * self.wo()
    }
}

/// `cols[(c, i, j)][(y, x)] = input[c][y + i][x + j]`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (ho, wo, n) = (g.ho(), g.wo(), g.n());
    let mut row = 0;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                for y in 0..ho {
                    let src = &input[(c * g.h + y + i) * g.w + j..][..wo];
                    dst[y * wo..(y + 1) * wo].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `dcols` back into `din`.
pub(crate) fn col2im_add<T: Scalar>(g: &ConvGeom, dcols: &[T], din: &mut [T]) {
    let (ho, wo, n) = (g.ho(), g.wo(), g.n());
    let mut row = 0;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &dcols[row * n..(row + 1) * n];
                for y in 0..ho {
                    let dst = &mut din[(c * g.h + y + i) * g.w + j..][..wo];
                    for (d, &s) in dst.iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv_forward_sample<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    cols: &mut Vec<T>,
) {
    let (k, n) = (g.k(), g.n());
    cols.resize(k * n, T::zero());
    im2col(g, input, cols);
    for (f, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[f]);
    }
    gemm(g.f, k, n, T::one(), MatRef::rows(weight, k), MatRef::rows(cols, n), T::one(), MatMut::rows(out, n));
}

/// Accumulates weight/bias gradients; writes the input gradient when `din`
/// is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_sample<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    din: Option<&mut [T]>,
    cols: &mut Vec<T>,
) {
    let (k, n) = (g.k(), g.n());
    cols.resize(k * n, T::zero());
    im2col(g, input, cols);
    gemm(g.f, n, k, T::one(), MatRef::rows(dout, n), MatRef::rows_t(cols, n), T::one(), MatMut::rows(dweight, k));
    for (db, row) in dbias.iter_mut().zip(dout.chunks_exact(n)) {
        *db = *db + row.iter().copied().sum::<T>();
    }
    if let Some(din) = din {
        // Reuse the im2col buffer for dcols = W^T dout.
        gemm(k, g.f, n, T::one(), MatRef::rows_t(weight, k), MatRef::rows(dout, n), T::zero(), MatMut::rows(cols, n));
        din.fill(T::zero());
        col2im_add(g, cols, din);
    }
}

/// `Y[B, U] = X[B, n] W^T + b`.
pub(crate) fn dense_forward_batch<T: Scalar>(batch: usize, n: usize, units: usize, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    for row in y.chunks_exact_mut(units) {
        row.copy_from_slice(b);
    }
    gemm(batch, n, units, T::one(), MatRef::rows(x, n), MatRef::rows_t(w, n), T::one(), MatMut::rows(y, units));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_batch<T: Scalar>(
    batch: usize,
    n: usize,
    units: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(units, batch, n, T::one(), MatRef::rows_t(dy, units), MatRef::rows(x, n), T::one(), MatMut::rows(dw, n));
    for row in dy.chunks_exact(units) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    if let Some(dx) = dx {
        gemm(batch, units, n, T::one(), MatRef::rows(dy, units), MatRef::rows(w, n), T::zero(), MatMut::rows(dx, n));
    }
}

pub(crate) fn pad_cols<T: Scalar>(c: usize, h: usize, w: usize, p: usize, input: &[T], out: &mut [T]) {
    let wp = w + 2 * p;
    out.fill(T::zero());
    for r in 0..c * h {
        out[r * wp + p..r * wp + p + w].copy_from_slice(&input[r * w..(r + 1) * w]);
    }
}

pub(crate) fn crop_cols<T: Scalar>(c: usize, h: usize, w: usize, p: usize, dout: &[T], din: &mut [T]) {
    let wp = w + 2 * p;
    for r in 0..c * h {
        din[r * w..(r + 1) * w].copy_from_slice(&dout[r * wp + p..r * wp + p + w]);
    }
}

/// Max-shifted softmax in place.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

pub(crate) fn clamped_nll<T: Scalar>(p: T) -> T {
    -p.max(T::lit(LOSS_CLAMP)).ln()
}

/// Index of the single 1 in a one-hot vector.
pub(crate) fn onehot_index<T: Scalar>(onehot: &[T]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in onehot.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::shape("one-hot target has more than one 1"));
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::shape(format!("one-hot target has non-binary entry {v}")));
        }
    }
    hot.ok_or_else(|| Error::shape("one-hot target has no 1"))
}

/// Keep-mask for inverted dropout: entries are `0` or `1 / (1 - rate)`.
pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let scale = T::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale })
        .collect()
}

/// Valid cross-correlation of a `[C, H, W]` input with `[F, C, kh, kw]`
/// filters, plus a per-filter bias.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[c, h, w], &[f, wc, kh, kw]) = (input.shape(), weights.shape()) else {
        return Err(Error::shape(format!(
            "conv2d expects [C,H,W] input and [F,C,kh,kw] weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    };
    if wc != c || bias.shape() != [f] || kh > h || kw > w {
        return Err(Error::shape(format!(
            "conv2d shapes disagree: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let g = ConvGeom { c, h, w, f, kh, kw };
    let mut out = vec![T::zero(); f * g.n()];
    conv_forward_sample(&g, input.data(), weights.data(), bias.data(), &mut out, &mut Vec::new());
    Tensor::new(&[f, g.ho(), g.wo()], out)
}

/// `y = W x + b`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[n], &[u, wn]) = (input.shape(), weights.shape()) else {
        return Err(Error::shape(format!(
            "dense expects [n] input and [u,n] weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    };
    if wn != n || bias.shape() != [u] {
        return Err(Error::shape(format!(
            "dense shapes disagree: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![T::zero(); u];
    dense_forward_batch(1, n, u, input.data(), weights.data(), bias.data(), &mut out);
    Tensor::new(&[u], out)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.max(T::zero()))
}

pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    softmax_in_place(out.data_mut());
    out
}

/// `-sum(y_i * ln(max(p_i, 1e-12)))` for a one-hot `y`.
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<T> {
    if probs.shape() != onehot.shape() || probs.shape().len() != 1 {
        return Err(Error::shape(format!(
            "cross-entropy needs matching flat shapes, got {:?} and {:?}",
            probs.shape(),
            onehot.shape()
        )));
    }
    let hot = onehot_index(onehot.data())?;
    Ok(clamped_nll(probs.data()[hot]))
}

/// Inverted dropout. Identity in eval mode.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(input: &Tensor<T>, rate: f64, mode: DropoutMode, rng: &mut R) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask: Vec<T> = dropout_mask(input.len(), rate, rng);
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Tensor::new(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let x = Tensor::<f64>::zeros(&[2, 3, 5]);
        let w = t(&[3, 2, 2, 2], &(0..24).map(|i| i as f64 * 0.1).collect::<Vec<_>>());
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[3, 2, 4]);
        for (f, chunk) in y.data().chunks(8).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[f]));
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_hand_example() {
        let y = conv2d_forward(&t(&[1, 1, 3], &[1.0, 2.0, 3.0]), &t(&[1, 1, 1, 2], &[1.0, 1.0]), &t(&[1], &[0.0]))
            .unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 1, 1]), &b).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 3, 1]), &b).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 1, 1]), &Tensor::zeros(&[2])).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[6]), &Tensor::zeros(&[1, 1, 1, 1]), &b).is_err());
    }

    #[test]
    fn dense_examples() {
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[0.0, 0.0]);
        assert_eq!(dense_forward(&t(&[2], &[1.0, 1.0]), &w, &b).unwrap().data(), &[3.0, 7.0]);
        let b2 = t(&[2], &[0.25, -2.0]);
        assert_eq!(dense_forward(&t(&[2], &[0.0, 0.0]), &w, &b2).unwrap(), b2);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let x = t(&[2], &[-3.5, 9.0]);
        assert_eq!(dense_forward(&x, &eye, &b).unwrap(), x);
        assert!(dense_forward(&t(&[3], &[0.0; 3]), &w, &b).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let pos = t(&[3], &[0.0, 1.0, 7.0]);
        assert_eq!(relu(&pos), pos);
        assert!(relu(&t(&[2], &[-1.0, -5.0])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&t(&[2], &[0.0, 0.0]));
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&t(&[2], &[0.0, 3f64.ln()]));
        assert!((p.data()[0] - 0.25).abs() < 1e-15 && (p.data()[1] - 0.75).abs() < 1e-15);
        let big = softmax(&t(&[3], &[1000.0, 1001.0, 999.0]));
        assert!(big.is_finite());
    }

    #[test]
    fn cross_entropy_examples() {
        let l = cross_entropy_loss(&t(&[2], &[0.5, 0.5]), &t(&[2], &[1.0, 0.0])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = cross_entropy_loss(&t(&[2], &[1.0, 0.0]), &t(&[2], &[1.0, 0.0])).unwrap();
        assert!(l.abs() <= 1e-12);
        let l = cross_entropy_loss(&t(&[2], &[0.25, 0.75]), &t(&[2], &[0.0, 1.0])).unwrap();
        assert!((l + 0.75f64.ln()).abs() < 1e-15);
        let l = cross_entropy_loss(&t(&[2], &[0.0, 1.0]), &t(&[2], &[1.0, 0.0])).unwrap();
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
        for bad in [[1.0, 1.0], [0.0, 0.0], [0.5, 0.5]] {
            assert!(cross_entropy_loss(&t(&[2], &[0.5, 0.5]), &t(&[2], &bad)).is_err());
        }
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[4], &[1.0, -2.0, 3.0, 4.0]);
        let mut rng = stream(1);
        assert_eq!(dropout(&x, 0.5, DropoutMode::Eval, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, DropoutMode::Train, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, DropoutMode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, DropoutMode::Eval, &mut rng).is_err());
    }

    /// Monte-Carlo expectation oracle for inverted dropout at rate 0.5.
    #[test]
    fn dropout_preserves_expectation() {
        let x = t(&[8], &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
        let input_mean = x.data().iter().sum::<f64>() / 8.0;
        let mut rng = stream(77);
        let trials = 100_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let y = dropout(&x, 0.5, DropoutMode::Train, &mut rng).unwrap();
            for (&yi, &xi) in y.data().iter().zip(x.data()) {
                assert!(yi == 0.0 || yi == 2.0 * xi);
            }
            total += y.data().iter().sum::<f64>() / 8.0;
        }
        let mean = total / trials as f64;
        assert!((mean / input_mean - 1.0).abs() < 0.02, "{mean} vs {input_mean}");
    }

    #[test]
    fn shape_inference() {
        let conv = LayerSpec::Conv2D { filters: 256, kh: 1, kw: 4 };
        assert_eq!(conv.output_shape(&[1, 2, 132]).unwrap(), vec![256, 2, 129]);
        assert_eq!(conv.param_count(&[1, 2, 132]), 1280);
        assert!(conv.output_shape(&[1, 2, 3]).is_err());
        assert!(LayerSpec::Dense { units: 2 }.output_shape(&[2, 3]).is_err());
        assert_eq!(LayerSpec::ZeroPad { cols: 2 }.output_shape(&[1, 2, 128]).unwrap(), vec![1, 2, 132]);
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Conv2D { filters: 1, kh: 0, kw: 1 }.validate().is_err());
    }

    #[test]
    fn pad_and_crop_are_adjoint() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut padded = vec![0.0; 2 * 2 * 7];
        pad_cols(2, 2, 3, 2, &x, &mut padded);
        assert_eq!(&padded[..7], &[0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
        let mut back = vec![0.0; 12];
        crop_cols(2, 2, 3, 2, &padded, &mut back);
        assert_eq!(back, x);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-10.0f64..10.0, 1..10), c in -100.0f64..100.0) {
            let x = Tensor::new(&[v.len()], v.clone()).unwrap();
            let p = softmax(&x);
            let s: f64 = p.data().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&q| q > 0.0 && q < 1.0 || v.len() == 1));
            let shifted = softmax(&x.map(|a| a + c));
            for (a, b) in p.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn relu_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let x = Tensor::new(&[v.len()], v).unwrap();
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }

        #[test]
        fn bias_free_conv_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 6),
            y in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 6),
            w in prop::collection::vec(-1.0f64..1.0, 3 * 2 * 2 * 3),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let xs = Tensor::new(&[2, 3, 6], x).unwrap();
            let ys = Tensor::new(&[2, 3, 6], y).unwrap();
            let wt = Tensor::new(&[3, 2, 2, 3], w).unwrap();
            let zero = Tensor::zeros(&[3]);
            let mix = Tensor::new(&[2, 3, 6], xs.data().iter().zip(ys.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let fx = conv2d_forward(&xs, &wt, &zero).unwrap();
            let fy = conv2d_forward(&ys, &wt, &zero).unwrap();
            let fm = conv2d_forward(&mix, &wt, &zero).unwrap();
            for i in 0..fm.len() {
                prop_assert!((fm.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn conv_matches_direct_loops(
            x in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 5),
            w in prop::collection::vec(-1.0f64..1.0, 2 * 2 * 2 * 2),
            bias in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let y = conv2d_forward(
                &Tensor::new(&[2, 3, 5], x.clone()).unwrap(),
                &Tensor::new(&[2, 2, 2, 2], w.clone()).unwrap(),
                &Tensor::new(&[2], bias.clone()).unwrap(),
            ).unwrap();
            for f in 0..2 {
                for oy in 0..2 {
                    for ox in 0..4 {
                        let mut s = bias[f];
                        for c in 0..2 {
                            for i in 0..2 {
                                for j in 0..2 {
                                    s += w[((f * 2 + c) * 2 + i) * 2 + j] * x[(c * 3 + oy + i) * 5 + ox + j];
                                }
                            }
                        }
                        prop_assert!((y.data()[(f * 2 + oy) * 4 + ox] - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
