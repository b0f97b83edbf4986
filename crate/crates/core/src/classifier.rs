//! The CNN2 frame classifier: architecture, training loop, inference and
//! checkpoints.
//!
//! # Architecture
//!
//! Input frames are `2 x 128` (I row, Q row), reshaped to `1 x 2 x 128`.
//!
//! | layer                      | output shape   | parameters |
//! |----------------------------|----------------|-----------:|
//! | ZeroPad(2) + Conv 1x4, 256 | (256, 2, 129)  |      1 280 |
//! | ZeroPad(2) + Conv 2x3, 80  | (80, 1, 131)   |    122 960 |
//! | Dense 256                  | (256)          |  2 683 136 |
//! | Dense 2 + softmax          | (2)            |        514 |
//!
//! The kernel sizes follow from the parameter counts alone:
//! `1280 = 256 * (1*1*4 + 1)` leaves a `1 x 4` kernel on one input channel,
//! and `122960 = 80 * (256*2*3 + 1)` leaves `2 x 3` over 256 channels. The
//! widths then pin the padding: a valid `1 x 4` convolution turns 132 columns
//! into 129, and `2 x 3` turns 133 into 131, so each convolution sees its
//! input with two zero columns added on both sides. Dense1 sees
//! `80 * 131 = 10480` features: `10480 * 256 + 256 = 2683136`.
//!
//! ReLU follows both convolutions and the first dense layer, each followed
//! by dropout. Class 0 is SM, class 1 is AL.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{FrameSet, IqFrame, LabeledFrame, FRAME_LEN, IQ_VALUES};
use crate::rng::{derive_seed, stream};
use crate::tensor_nn::{AdamConfig, LayerSpec, Mode, ModelSpec, Network, OptimizerState, ParamSet};
use crate::{CodingScheme, Error, Result};

pub const NUM_CLASSES: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.5;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"STBCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Frames per forward chunk during batched inference.
const INFER_CHUNK: usize = 64;

pub fn build_cnn2() -> ModelSpec {
    build_cnn2_with_dropout(DEFAULT_DROPOUT)
}

pub fn build_cnn2_with_dropout(rate: f64) -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        input_shape: vec![NUM_CLASSES, FRAME_LEN],
        layers: vec![
            Reshape { shape: vec![1, 2, FRAME_LEN] },
            ZeroPad { cols: 2 },
            Conv2D { filters: 256, kh: 1, kw: 4 },
            Relu,
            Dropout { rate },
            ZeroPad { cols: 2 },
            Conv2D { filters: 80, kh: 2, kw: 3 },
            Relu,
            Dropout { rate },
            Flatten,
            Dense { units: 256 },
            Relu,
            Dropout { rate },
            Dense { units: NUM_CLASSES },
            Softmax,
        ],
    }
}

/// Structural equality that ignores dropout rates, which only matter while
/// training.
pub fn same_architecture(a: &ModelSpec, b: &ModelSpec) -> bool {
    a.input_shape == b.input_shape
        && a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(x, y)| match (x, y) {
            (LayerSpec::Dropout { .. }, LayerSpec::Dropout { .. }) => true,
            _ => x == y,
        })
}

/// A two-class softmax network over IQ frames.
pub struct Model {
    net: Network<f32>,
}

impl Model {
    /// Seeded CNN2 with the default dropout rate.
    pub fn cnn2(seed: u64) -> Result<Self> {
        Self::init(build_cnn2(), seed)
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::from_network(Network::init(spec, seed)?)
    }

    pub fn from_network(net: Network<f32>) -> Result<Self> {
        if net.input_len() != IQ_VALUES || net.output_len() != NUM_CLASSES {
            return Err(Error::shape(format!(
                "classifier needs {IQ_VALUES} inputs and {NUM_CLASSES} outputs, got {} and {}",
                net.input_len(),
                net.output_len()
            )));
        }
        if net.spec().layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::shape("classifier must end in Softmax"));
        }
        Ok(Model { net })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn spec(&self) -> &ModelSpec {
        self.net.spec()
    }

    pub fn params(&self) -> &ParamSet<f32> {
        self.net.params()
    }

    /// `(P_SM, P_AL)` for one frame, dropout disabled.
    pub fn predict(&self, frame: &IqFrame) -> Result<[f64; 2]> {
        let p = self.net.predict(frame.values())?;
        Ok([p[0] as f64, p[1] as f64])
    }

    pub fn classify(&self, frame: &IqFrame) -> Result<CodingScheme> {
        Ok(decide(self.predict(frame)?))
    }

    /// Eval-mode probabilities for many frames, in input order.
    pub fn predict_many(&self, frames: &[&IqFrame], threads: usize) -> Result<Vec<[f64; 2]>> {
        let run = || {
            frames
                .par_chunks(INFER_CHUNK)
                .map(|chunk| {
                    let inputs: Vec<f32> = chunk.iter().flat_map(|f| f.values().iter().copied()).collect();
                    let out = self.net.forward(&inputs, chunk.len(), Mode::Eval, 0)?;
                    Ok(out.chunks_exact(NUM_CLASSES).map(|p| [p[0] as f64, p[1] as f64]).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(crate::pool::with_threads(threads, run)??.into_iter().flatten().collect())
    }

    /// Fraction of frames whose argmax matches the label.
    pub fn accuracy(&self, frames: &FrameSet, threads: usize) -> Result<f64> {
        Ok(self.evaluate(&frames.frames, threads)?.1)
    }

    /// Mean cross-entropy and accuracy in eval mode.
    pub fn evaluate(&self, frames: &[LabeledFrame], threads: usize) -> Result<(f64, f64)> {
        if frames.is_empty() {
            return Err(Error::EmptyDataset("nothing to evaluate".into()));
        }
        let refs: Vec<&IqFrame> = frames.iter().map(|f| &f.frame).collect();
        let probs = self.predict_many(&refs, threads)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (p, f) in probs.iter().zip(frames) {
            let t = f.scheme.label() as usize;
            loss -= p[t].max(crate::tensor_nn::LOSS_CLAMP).ln();
            correct += usize::from(decide(*p) == f.scheme);
        }
        let n = frames.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Argmax over `(P_SM, P_AL)`; an exact tie goes to SM.
pub fn decide(p: [f64; 2]) -> CodingScheme {
    if p[1] > p[0] {
        CodingScheme::Al
    } else {
        CodingScheme::Sm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Rate applied to every dropout layer while training.
    pub dropout: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            lr: 1e-3,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            patience: Some(5),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.patience == Some(0) {
            return Err(Error::param("patience must be >= 1"));
        }
        if self.threads == 0 {
            return Err(Error::param("threads must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss with dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Epoch-at-a-time training state: model, Adam moments and best snapshot.
pub struct Trainer {
    net: Network<f32>,
    opt: OptimizerState<f32>,
    cfg: TrainConfig,
    history: TrainHistory,
    best: Option<(f64, ParamSet<f32>)>,
    since_best: usize,
}

fn with_dropout(spec: &ModelSpec, rate: f64) -> ModelSpec {
    let mut spec = spec.clone();
    for l in &mut spec.layers {
        if let LayerSpec::Dropout { rate: r } = l {
            *r = rate;
        }
    }
    spec
}

fn check_frames(set: &FrameSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} set is empty")));
    }
    if let Some((i, _)) = set.frames.iter().enumerate().find(|(_, f)| f.frame.values().len() != IQ_VALUES) {
        return Err(Error::shape(format!("{what} frame {i} is not 2x{FRAME_LEN}")));
    }
    Ok(())
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = with_dropout(model.spec(), cfg.dropout);
        let net = Network::new(spec, model.net.params().clone())?;
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let opt = OptimizerState::new(net.params(), adam);
        Ok(Trainer { net, opt, cfg, history: TrainHistory::default(), best: None, since_best: 0 })
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// True once early stopping has fired or the epoch budget is spent.
    pub fn finished(&self) -> bool {
        self.history.stopped_early || self.history.len() >= self.cfg.epochs
    }

    /// The current (last-epoch) parameters as a model.
    pub fn current(&self) -> Result<Model> {
        Model::from_network(Network::new(self.net.spec().clone(), self.net.params().clone())?)
    }

    /// One pass over `train` followed by validation on `val`.
    pub fn run_epoch(&mut self, train: &FrameSet, val: &FrameSet) -> Result<EpochRecord> {
        check_frames(train, "training")?;
        check_frames(val, "validation")?;
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(derive_seed(self.cfg.seed, &[0, epoch as u64])));

        let threads = self.cfg.threads;
        let mut loss_sum = 0.0f64;
        let mut inputs = Vec::with_capacity(self.cfg.batch_size * IQ_VALUES);
        let mut onehots = Vec::with_capacity(self.cfg.batch_size * NUM_CLASSES);
        for (bi, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            inputs.clear();
            onehots.clear();
            for &i in batch {
                let f = &train.frames[i];
                inputs.extend_from_slice(f.frame.values());
                onehots.extend(match f.scheme {
                    CodingScheme::Sm => [1.0f32, 0.0],
                    CodingScheme::Al => [0.0, 1.0],
                });
            }
            let mode = Mode::Train { seed: derive_seed(self.cfg.seed, &[1, epoch as u64, bi as u64]) };
            let net = &self.net;
            let (loss, mut grads) = crate::pool::with_threads(threads, || {
                net.loss_and_grad_chunked(&inputs, &onehots, batch.len(), mode, 0, threads)
            })??;
            grads.scale(1.0 / batch.len() as f32);
            self.opt.step(self.net.params_mut(), &grads)?;
            loss_sum += loss as f64;
        }

        let current = self.current()?;
        let (val_loss, val_accuracy) = current.evaluate(&val.frames, threads)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_accuracy };
        self.history.epochs.push(record);

        let improved = self.best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            self.best = Some((val_loss, self.net.params().clone()));
            self.history.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.cfg.patience.is_some_and(|p| self.since_best >= p) {
                self.history.stopped_early = true;
            }
        }
        Ok(record)
    }

    /// Best-validation model and the history so far.
    pub fn finish(self) -> Result<(Model, TrainHistory)> {
        let params = match self.best {
            Some((_, p)) => p,
            None => self.net.params().clone(),
        };
        let model = Model::from_network(Network::new(self.net.spec().clone(), params)?)?;
        Ok((model, self.history))
    }
}

/// Minibatch Adam on softmax cross-entropy with seeded per-epoch shuffling.
/// Returns the parameters of the epoch with the lowest validation loss.
pub fn train(model: Model, train_set: &FrameSet, val_set: &FrameSet, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: Model,
    train_set: &FrameSet,
    val_set: &FrameSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    while !trainer.finished() {
        let rec = trainer.run_epoch(train_set, val_set)?;
        on_epoch(&rec);
    }
    trainer.finish()
}

// Checkpoint layer kinds.
const K_RESHAPE: u8 = 0;
const K_ZEROPAD: u8 = 1;
const K_CONV: u8 = 2;
const K_DENSE: u8 = 3;
const K_RELU: u8 = 4;
const K_SOFTMAX: u8 = 5;
const K_DROPOUT: u8 = 6;
const K_FLATTEN: u8 = 7;

fn layer_descriptor(l: &LayerSpec) -> (u8, Vec<u32>) {
    match l {
        LayerSpec::Reshape { shape } => (K_RESHAPE, shape.iter().map(|&d| d as u32).collect()),
        LayerSpec::ZeroPad { cols } => (K_ZEROPAD, vec![*cols as u32]),
        LayerSpec::Conv2D { filters, kh, kw } => (K_CONV, vec![*filters as u32, *kh as u32, *kw as u32]),
        LayerSpec::Dense { units } => (K_DENSE, vec![*units as u32]),
        LayerSpec::Relu => (K_RELU, vec![]),
        LayerSpec::Softmax => (K_SOFTMAX, vec![]),
        // Parts per million.
        LayerSpec::Dropout { rate } => (K_DROPOUT, vec![(rate * 1e6).round() as u32]),
        LayerSpec::Flatten => (K_FLATTEN, vec![]),
    }
}

fn layer_from_descriptor(kind: u8, ints: &[u32]) -> Result<LayerSpec> {
    let u = |i: usize| ints[i] as usize;
    let want = |n: usize| {
        if ints.len() == n {
            Ok(())
        } else {
            Err(Error::CorruptCheckpoint(format!("layer kind {kind} needs {n} ints, got {}", ints.len())))
        }
    };
    Ok(match kind {
        K_RESHAPE => LayerSpec::Reshape { shape: ints.iter().map(|&d| d as usize).collect() },
        K_ZEROPAD => {
            want(1)?;
            LayerSpec::ZeroPad { cols: u(0) }
        }
        K_CONV => {
            want(3)?;
            LayerSpec::Conv2D { filters: u(0), kh: u(1), kw: u(2) }
        }
        K_DENSE => {
            want(1)?;
            LayerSpec::Dense { units: u(0) }
        }
        K_RELU => LayerSpec::Relu,
        K_SOFTMAX => LayerSpec::Softmax,
        K_DROPOUT => {
            want(1)?;
            LayerSpec::Dropout { rate: ints[0] as f64 / 1e6 }
        }
        K_FLATTEN => LayerSpec::Flatten,
        other => return Err(Error::CorruptCheckpoint(format!("unknown layer kind {other}"))),
    })
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(64 + 4 * model.params().num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.input_shape.len() as u32).to_le_bytes());
    for &d in &spec.input_shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for l in &spec.layers {
        let (kind, ints) = layer_descriptor(l);
        out.push(kind);
        out.extend_from_slice(&(ints.len() as u32).to_le_bytes());
        for v in ints {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (_, _, t) in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes any well-formed checkpoint, whatever its architecture.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: CHECKPOINT_MAGIC.to_vec(),
        found: bytes.to_vec(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC.to_vec(), found: magic.to_vec() });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let rank = r.u32()? as usize;
    if rank > 8 {
        return Err(Error::CorruptCheckpoint(format!("implausible input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32()? as usize;
    if n_layers > 1024 {
        return Err(Error::CorruptCheckpoint(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = r.take(1)?[0];
        let n = r.u32()? as usize;
        if n > 8 {
            return Err(Error::CorruptCheckpoint(format!("implausible descriptor length {n}")));
        }
        let ints = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        layers.push(layer_from_descriptor(kind, &ints)?);
    }
    let spec = ModelSpec { input_shape, layers };
    let shapes = spec.shape_trace().map_err(|e| Error::CorruptCheckpoint(format!("bad descriptor: {e}")))?;

    let mut params = ParamSet::<f32> { layers: Vec::with_capacity(n_layers) };
    for (i, layer) in spec.layers.iter().enumerate() {
        let Some((ws, bs)) = layer.param_shapes(&shapes[i]) else {
            params.layers.push(None);
            continue;
        };
        let mut read = |shape: &[usize]| -> Result<crate::tensor_nn::Tensor<f32>> {
            let n: usize = shape.iter().product();
            let raw = r.take(4 * n)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            crate::tensor_nn::Tensor::new(shape, data)
        };
        let weight = read(&ws)?;
        let bias = read(&bs)?;
        params.layers.push(Some(crate::tensor_nn::LayerParams { weight, bias }));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_network(Network::new(spec, params)?)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

/// Loads a CNN2 checkpoint; other architectures are rejected.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let model = decode_checkpoint(&fs::read(path)?)?;
    if !same_architecture(model.spec(), &build_cnn2()) {
        return Err(Error::DescriptorMismatch(format!(
            "checkpoint holds {} layers [{}], expected the CNN2 stack",
            model.spec().layers.len(),
            model.spec().layers.iter().map(LayerSpec::kind_name).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig, SnrLabel};
    use crate::rng::stream;
    use rand::Rng;

    /// Oracle: parameter count of a valid conv / dense layer from first
    /// principles, independent of the layer code.
    fn conv_params(filters: usize, in_ch: usize, kh: usize, kw: usize) -> usize {
        filters * (in_ch * kh * kw + 1)
    }

    #[test]
    fn cnn2_matches_reference_counts() {
        let spec = build_cnn2();
        let counts: Vec<usize> = spec.param_counts().unwrap().into_iter().filter(|&c| c > 0).collect();
        assert_eq!(counts, vec![1280, 122960, 2683136, 514]);
        assert_eq!(counts[0], conv_params(256, 1, 1, 4));
        assert_eq!(counts[1], conv_params(80, 256, 2, 3));
        assert_eq!(counts[2], (80 * 131) * 256 + 256);
        assert_eq!(spec.total_params().unwrap(), 2_807_890);
    }

    #[test]
    fn cnn2_shape_trace() {
        let spec = build_cnn2();
        let shapes = spec.shape_trace().unwrap();
        let after = |i: usize| shapes[i + 1].clone();
        assert_eq!(after(0), vec![1, 2, 128]);
        assert_eq!(after(2), vec![256, 2, 129]);
        assert_eq!(after(6), vec![80, 1, 131]);
        assert_eq!(after(9), vec![10480]);
        assert_eq!(after(10), vec![256]);
        assert_eq!(after(13), vec![2]);
        assert_eq!(spec.output_classes().unwrap(), 2);
    }

    fn random_frame(seed: u64) -> IqFrame {
        let mut rng = stream(seed);
        IqFrame::from_values((0..IQ_VALUES).map(|_| rng.random_range(-1.5f32..1.5)).collect()).unwrap()
    }

    #[test]
    fn predictions_are_distributions_and_deterministic() {
        let model = Model::cnn2(3).unwrap();
        for s in 0..5 {
            let f = random_frame(s);
            let p = model.predict(&f).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
            assert_eq!(p, model.predict(&f).unwrap());
        }
        let frames: Vec<IqFrame> = (0..70).map(random_frame).collect();
        let refs: Vec<&IqFrame> = frames.iter().collect();
        let many = model.predict_many(&refs, 2).unwrap();
        for (f, p) in frames.iter().zip(&many) {
            let single = model.predict(f).unwrap();
            assert!((single[0] - p[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn ties_go_to_sm() {
        assert_eq!(decide([0.5, 0.5]), CodingScheme::Sm);
        assert_eq!(decide([0.4, 0.6]), CodingScheme::Al);
        assert_eq!(decide([0.6, 0.4]), CodingScheme::Sm);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { patience: Some(0), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Param(_))), "{bad:?}");
        }
    }

    fn small_sets() -> (FrameSet, FrameSet) {
        let cfg = DatasetConfig { snr_grid: vec![10.0], bursts_per_cell: 2, seed: 5, ..Default::default() };
        let all = generate_dataset(&cfg, 1).unwrap();
        let (a, b) = crate::dataset::split_train_val(&all, cfg.frames_per_burst(), 0.5, 1).unwrap();
        (FrameSet::new(a.frames[..16].to_vec()), FrameSet::new(b.frames[..8].to_vec()))
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (train_set, val) = small_sets();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let empty = FrameSet::new(vec![]);
        assert!(matches!(train(Model::cnn2(0).unwrap(), &empty, &val, &cfg), Err(Error::EmptyDataset(_))));
        assert!(matches!(train(Model::cnn2(0).unwrap(), &train_set, &empty, &cfg), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn training_is_reproducible() {
        let (train_set, val) = small_sets();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 11, ..Default::default() };
        let (m1, h1) = train(Model::cnn2(1).unwrap(), &train_set, &val, &cfg).unwrap();
        let (m2, h2) = train(Model::cnn2(1).unwrap(), &train_set, &val, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 2);
        assert_eq!(m1.params(), m2.params());
        // Chunked gradients with a different worker count change only the
        // summation order, never the masks.
        let cfg4 = TrainConfig { threads: 2, ..cfg };
        let (_, h4) = train(Model::cnn2(1).unwrap(), &train_set, &val, &cfg4).unwrap();
        for (a, b) in h1.epochs.iter().zip(&h4.epochs) {
            assert!((a.train_loss - b.train_loss).abs() < 1e-4 * a.train_loss.max(1.0));
        }
    }

    /// AL frames carry a random-phase tone at a quarter of the sample rate,
    /// SM frames are noise only. Anything that trains at all separates
    /// these on frames it has never seen.
    fn tone_set(n: usize, seed: u64) -> FrameSet {
        let mut rng = stream(seed);
        let frames = (0..n)
            .map(|i| {
                let scheme = if i % 2 == 0 { CodingScheme::Sm } else { CodingScheme::Al };
                let phase = rng.random_range(0.0..std::f32::consts::TAU);
                let tone = if scheme == CodingScheme::Al { 0.8 } else { 0.0 };
                let mut v = vec![0.0f32; IQ_VALUES];
                for t in 0..FRAME_LEN {
                    let w = std::f32::consts::FRAC_PI_2 * t as f32 + phase;
                    v[t] = tone * w.cos() + rng.random_range(-0.6f32..0.6);
                    v[FRAME_LEN + t] = tone * w.sin() + rng.random_range(-0.6f32..0.6);
                }
                LabeledFrame { frame: IqFrame::from_values(v).unwrap(), scheme, snr: SnrLabel::from_centi_db(0) }
            })
            .collect();
        FrameSet::new(frames)
    }

    #[test]
    fn generalizes_on_a_learnable_task() {
        let (train_set, val) = (tone_set(96, 1), tone_set(64, 2));
        let cfg = TrainConfig { epochs: 4, batch_size: 16, seed: 3, patience: None, ..Default::default() };
        let (model, hist) = train(Model::cnn2(3).unwrap(), &train_set, &val, &cfg).unwrap();
        let acc = model.accuracy(&tone_set(64, 3), 1).unwrap();
        assert!(acc >= 0.9, "held-out accuracy {acc}, history {hist:?}");
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let (train_set, val) = small_sets();
        // A huge learning rate makes validation loss wander.
        let cfg = TrainConfig { epochs: 12, batch_size: 16, lr: 0.05, patience: Some(2), seed: 2, ..Default::default() };
        let (model, hist) = train(Model::cnn2(4).unwrap(), &train_set, &val, &cfg).unwrap();
        let best = hist.epochs.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)).unwrap();
        assert_eq!(best.epoch, hist.best_epoch);
        let (vl, _) = model.evaluate(&val.frames, 1).unwrap();
        assert!((vl - best.val_loss).abs() < 1e-9);
        if hist.stopped_early {
            assert_eq!(hist.len(), hist.best_epoch + 2);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = Model::cnn2(9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.spec(), model.spec());
        let f = random_frame(1);
        assert_eq!(back.predict(&f).unwrap(), model.predict(&f).unwrap());
        assert_eq!(encode_checkpoint(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn checkpoint_errors() {
        let small = ModelSpec {
            input_shape: vec![2, 128],
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }, LayerSpec::Softmax],
        };
        let model = Model::init(small, 0).unwrap();
        let bytes = encode_checkpoint(&model);
        assert!(decode_checkpoint(&bytes).is_ok());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::DescriptorMismatch(_))));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let e = decode_checkpoint(&bytes[..cut]).err().unwrap();
            assert!(matches!(e, Error::CorruptCheckpoint(_) | Error::BadMagic { .. }), "{cut}: {e:?}");
        }
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::CorruptCheckpoint(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Version { expected: 1, found: 9 })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn dropout_rate_survives_checkpoint() {
        let model = Model::init(build_cnn2_with_dropout(0.3), 0).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
        assert_eq!(back.spec(), model.spec());
        assert!(same_architecture(back.spec(), &build_cnn2()));
    }

    #[test]
    fn snr_label_is_unused_by_the_model() {
        let f = random_frame(0);
        let a = LabeledFrame { frame: f.clone(), scheme: CodingScheme::Sm, snr: SnrLabel::from_centi_db(0) };
        let b = LabeledFrame { snr: SnrLabel::from_centi_db(1000), ..a.clone() };
        let m = Model::cnn2(0).unwrap();
        assert_eq!(m.evaluate(&[a], 1).unwrap(), m.evaluate(&[b], 1).unwrap());
    }
}
