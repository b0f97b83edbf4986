//! Labeled IQ frame datasets.
//!
//! A dataset is built cell by cell over `(SNR, scheme)`: each cell gets a
//! number of independent bursts, each burst sees one channel draw and one
//! block offset, and every burst is cut into overlapping 128-sample windows.
//! Frames keep the generation order (SNR, then scheme, then burst, then
//! window), which is what lets [`split_train_val`] recover burst boundaries
//! from `frames_per_burst` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::rng::{derive_seed, stream};
use crate::signal_model::{
    draw_channel, encode_with, modulate_qpsk, noise_variance_for_snr, receive, AlamoutiVariant,
    ChannelRealization, CodingScheme, ComplexSample, ReceiveConfig, DEFAULT_NAKAGAMI_M,
};
use crate::{Error, Result};

pub const FRAME_LEN: usize = 128;
pub const IQ_VALUES: usize = 2 * FRAME_LEN;

pub const DATASET_MAGIC: &[u8; 4] = b"STBC";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;
const RECORD_LEN: usize = 1 + 2 + 4 * IQ_VALUES;

/// SNR label stored in hundredths of a dB, as in the binary format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnrLabel(i16);

impl SnrLabel {
    pub fn from_db(db: f64) -> Result<Self> {
        let centi = (db * 100.0).round();
        if !centi.is_finite() || centi < i16::MIN as f64 || centi > i16::MAX as f64 {
            return Err(Error::param(format!("SNR {db} dB does not fit the label range")));
        }
        Ok(SnrLabel(centi as i16))
    }

    pub fn from_centi_db(centi: i16) -> Self {
        SnrLabel(centi)
    }

    pub fn centi_db(self) -> i16 {
        self.0
    }

    pub fn db(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::fmt::Display for SnrLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.db())
    }
}

/// 2 x 128 real frame: in-phase row followed by quadrature row.
#[derive(Clone, Debug, PartialEq)]
pub struct IqFrame {
    values: Vec<f32>,
}

impl IqFrame {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != IQ_VALUES {
            return Err(Error::shape(format!("IQ frame needs {IQ_VALUES} values, got {}", values.len())));
        }
        Ok(IqFrame { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn in_phase(&self) -> &[f32] {
        &self.values[..FRAME_LEN]
    }

    pub fn quadrature(&self) -> &[f32] {
        &self.values[FRAME_LEN..]
    }

    /// `(1/128) * sum(I^2 + Q^2)`.
    pub fn mean_power(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / FRAME_LEN as f64
    }

    pub fn to_complex(&self) -> Vec<ComplexSample> {
        self.in_phase()
            .iter()
            .zip(self.quadrature())
            .map(|(&i, &q)| ComplexSample::new(i as f64, q as f64))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub frame: IqFrame,
    pub scheme: CodingScheme,
    pub snr: SnrLabel,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FrameSet {
    pub window: u32,
    pub frames: Vec<LabeledFrame>,
}

impl FrameSet {
    pub fn new(frames: Vec<LabeledFrame>) -> Self {
        FrameSet { window: FRAME_LEN as u32, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame counts per `(scheme, snr)` cell.
    pub fn cell_counts(&self) -> BTreeMap<(CodingScheme, SnrLabel), usize> {
        let mut counts = BTreeMap::new();
        for f in &self.frames {
            *counts.entry((f.scheme, f.snr)).or_insert(0) += 1;
        }
        counts
    }

    pub fn snr_labels(&self) -> Vec<SnrLabel> {
        let mut snrs: Vec<_> = self.frames.iter().map(|f| f.snr).collect();
        snrs.sort();
        snrs.dedup();
        snrs
    }

    pub fn filter(&self, mut keep: impl FnMut(&LabeledFrame) -> bool) -> FrameSet {
        FrameSet { window: self.window, frames: self.frames.iter().filter(|f| keep(f)).cloned().collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Burst {
    pub samples: Vec<ComplexSample>,
    pub scheme: CodingScheme,
    pub snr_db: f64,
    pub channel: ChannelRealization,
    pub k1: usize,
    /// Per-burst seed when generated by [`generate_dataset`], otherwise 0.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub snr_grid: Vec<f64>,
    pub bursts_per_cell: usize,
    pub burst_len: usize,
    pub window: usize,
    pub shift: usize,
    pub seed: u64,
    pub normalize: bool,
    pub nakagami_m: f64,
    pub al_variant: AlamoutiVariant,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            snr_grid: snr_range(-20.0, 20.0, 2.0).expect("static grid"),
            bursts_per_cell: 10,
            burst_len: 1024,
            window: FRAME_LEN,
            shift: 64,
            seed: 0,
            normalize: true,
            nakagami_m: DEFAULT_NAKAGAMI_M,
            al_variant: AlamoutiVariant::Matrix,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window != FRAME_LEN {
            return Err(Error::param(format!("frames are {FRAME_LEN} samples wide, window {} given", self.window)));
        }
        if self.shift == 0 || self.shift > self.window {
            return Err(Error::param(format!("shift must be in 1..={}, got {}", self.window, self.shift)));
        }
        if self.burst_len < self.window {
            return Err(Error::param(format!(
                "burst length {} is shorter than the window {}",
                self.burst_len, self.window
            )));
        }
        if self.bursts_per_cell == 0 {
            return Err(Error::param("bursts_per_cell must be positive"));
        }
        if self.snr_grid.is_empty() {
            return Err(Error::param("SNR grid is empty"));
        }
        let mut labels = self.snr_grid.iter().map(|&s| SnrLabel::from_db(s)).collect::<Result<Vec<_>>>()?;
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("SNR grid has duplicate points"));
        }
        Ok(())
    }

    pub fn frames_per_burst(&self) -> usize {
        window_count(self.burst_len, self.window, self.shift)
    }

    pub fn expected_frames(&self) -> usize {
        self.snr_grid.len() * CodingScheme::ALL.len() * self.bursts_per_cell * self.frames_per_burst()
    }
}

/// Inclusive SNR grid `min, min + step, ..., max`.
pub fn snr_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) {
        return Err(Error::param(format!("bad SNR range {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

fn window_count(len: usize, window: usize, shift: usize) -> usize {
    (len - window) / shift + 1
}

/// One channel draw, one block offset, fresh random bits, `burst_len`
/// received samples.
pub fn synthesize_burst<R: Rng + ?Sized>(
    scheme: CodingScheme,
    snr_db: f64,
    burst_len: usize,
    rng: &mut R,
) -> Result<Burst> {
    synthesize_burst_with(scheme, AlamoutiVariant::Matrix, DEFAULT_NAKAGAMI_M, snr_db, burst_len, rng)
}

pub fn synthesize_burst_with<R: Rng + ?Sized>(
    scheme: CodingScheme,
    variant: AlamoutiVariant,
    nakagami_m: f64,
    snr_db: f64,
    burst_len: usize,
    rng: &mut R,
) -> Result<Burst> {
    if burst_len < FRAME_LEN {
        return Err(Error::param(format!("burst length {burst_len} is shorter than a {FRAME_LEN}-sample frame")));
    }
    draw_burst(scheme, variant, nakagami_m, snr_db, burst_len, rng)
}

/// [`synthesize_burst_with`] without the frame-length floor.
pub(crate) fn draw_burst<R: Rng + ?Sized>(
    scheme: CodingScheme,
    variant: AlamoutiVariant,
    nakagami_m: f64,
    snr_db: f64,
    burst_len: usize,
    rng: &mut R,
) -> Result<Burst> {
    let channel = draw_channel(rng, nakagami_m, 1.0)?;
    let k1 = rng.random_range(0..scheme.slots());
    let columns = burst_len + k1;
    let n_symbols = match scheme {
        CodingScheme::Sm => 2 * columns,
        CodingScheme::Al => columns.div_ceil(2) * 2,
    };
    let bits: Vec<u8> = (0..2 * n_symbols).map(|_| rng.random_range(0..2u8)).collect();
    let tx = encode_with(scheme, variant, &modulate_qpsk(&bits)?)?;
    let cfg = ReceiveConfig { k1, length: burst_len, snr_db };
    let samples = receive(&tx, &channel, noise_variance_for_snr(snr_db), &cfg, rng)?;
    Ok(Burst { samples, scheme, snr_db, channel, k1, seed: 0 })
}

/// Overlapping windows `[i*shift, i*shift + window)`; a short tail is dropped.
pub fn window_frames<T>(samples: &[T], window: usize, shift: usize) -> Result<Vec<&[T]>> {
    if window == 0 || shift == 0 {
        return Err(Error::param("window and shift must be positive"));
    }
    if samples.len() < window {
        return Err(Error::shape(format!("{} samples cannot fill a {window}-sample window", samples.len())));
    }
    let count = window_count(samples.len(), window, shift);
    Ok((0..count).map(|i| &samples[i * shift..i * shift + window]).collect())
}

/// Splits a complex window into I and Q rows, optionally scaling it to unit
/// mean power first. Normalization is done in f64 before rounding to f32.
pub fn to_iq(window: &[ComplexSample], normalize: bool) -> Result<IqFrame> {
    if window.len() != FRAME_LEN {
        return Err(Error::shape(format!("IQ frames are {FRAME_LEN} samples, got {}", window.len())));
    }
    let scale = if normalize {
        let power = window.iter().map(|x| x.norm_sqr()).sum::<f64>() / FRAME_LEN as f64;
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::ZeroPower);
        }
        power.sqrt().recip()
    } else {
        1.0
    };
    let mut values = Vec::with_capacity(IQ_VALUES);
    values.extend(window.iter().map(|x| (x.re * scale) as f32));
    values.extend(window.iter().map(|x| (x.im * scale) as f32));
    Ok(IqFrame { values })
}

fn burst_seed(cfg: &DatasetConfig, scheme: CodingScheme, snr: SnrLabel, index: usize) -> u64 {
    derive_seed(cfg.seed, &[scheme.label() as u64, snr.centi_db() as i64 as u64, index as u64])
}

fn burst_frames(cfg: &DatasetConfig, scheme: CodingScheme, snr_db: f64, index: usize) -> Result<Vec<LabeledFrame>> {
    let snr = SnrLabel::from_db(snr_db)?;
    let seed = burst_seed(cfg, scheme, snr, index);
    let mut rng = stream(seed);
    let mut burst = synthesize_burst_with(scheme, cfg.al_variant, cfg.nakagami_m, snr_db, cfg.burst_len, &mut rng)?;
    burst.seed = seed;
    window_frames(&burst.samples, cfg.window, cfg.shift)?
        .into_iter()
        .map(|w| Ok(LabeledFrame { frame: to_iq(w, cfg.normalize)?, scheme, snr }))
        .collect()
}

/// Generates the full dataset. Each burst has its own derived seed, so the
/// result does not depend on `threads`.
pub fn generate_dataset(cfg: &DatasetConfig, threads: usize) -> Result<FrameSet> {
    cfg.validate()?;
    let jobs: Vec<(CodingScheme, f64, usize)> = cfg
        .snr_grid
        .iter()
        .flat_map(|&snr| {
            CodingScheme::ALL
                .into_iter()
                .flat_map(move |scheme| (0..cfg.bursts_per_cell).map(move |b| (scheme, snr, b)))
        })
        .collect();
    let run = |&(scheme, snr, b): &(CodingScheme, f64, usize)| burst_frames(cfg, scheme, snr, b);
    let per_burst: Vec<Vec<LabeledFrame>> =
        crate::pool::with_threads(threads, || jobs.par_iter().map(run).collect::<Result<_>>())??;
    Ok(FrameSet::new(per_burst.into_iter().flatten().collect()))
}

/// Burst-granular split: all windows of one burst land on the same side.
///
/// `frames_per_burst` consecutive frames form one burst, as produced by
/// [`generate_dataset`]. Within each `(scheme, snr)` cell the bursts are
/// shuffled with a seed-derived stream and `round(fraction * n)` of them go
/// to the training side (at least one on each side).
pub fn split_train_val(
    frames: &FrameSet,
    frames_per_burst: usize,
    fraction: f64,
    seed: u64,
) -> Result<(FrameSet, FrameSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    if frames_per_burst == 0 || !frames.len().is_multiple_of(frames_per_burst) {
        return Err(Error::param(format!(
            "{} frames do not divide into bursts of {frames_per_burst}",
            frames.len()
        )));
    }
    let mut cells: BTreeMap<(CodingScheme, SnrLabel), Vec<usize>> = BTreeMap::new();
    for (b, chunk) in frames.frames.chunks(frames_per_burst).enumerate() {
        let key = (chunk[0].scheme, chunk[0].snr);
        if chunk.iter().any(|f| (f.scheme, f.snr) != key) {
            return Err(Error::param(format!("burst {b} mixes labels; frames are not in burst order")));
        }
        cells.entry(key).or_default().push(b);
    }
    let mut to_train = vec![false; frames.len() / frames_per_burst];
    for ((scheme, snr), mut bursts) in cells {
        if bursts.len() < 2 {
            return Err(Error::param(format!("cell ({scheme}, {snr} dB) has fewer than 2 bursts")));
        }
        let mut rng = stream(derive_seed(seed, &[scheme.label() as u64, snr.centi_db() as i64 as u64]));
        bursts.shuffle(&mut rng);
        let n_train = ((fraction * bursts.len() as f64).round() as usize).clamp(1, bursts.len() - 1);
        for &b in &bursts[..n_train] {
            to_train[b] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (b, chunk) in frames.frames.chunks(frames_per_burst).enumerate() {
        if to_train[b] { &mut train } else { &mut val }.extend_from_slice(chunk);
    }
    Ok((
        FrameSet { window: frames.window, frames: train },
        FrameSet { window: frames.window, frames: val },
    ))
}

pub fn encode_frames(frames: &FrameSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * frames.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&frames.window.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    for f in &frames.frames {
        out.push(f.scheme.label());
        out.extend_from_slice(&f.snr.centi_db().to_le_bytes());
        for v in f.frame.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_frames(bytes: &[u8]) -> Result<FrameSet> {
    if bytes.len() < DATASET_MAGIC.len() {
        return Err(Error::Truncated(format!("{} bytes is shorter than the magic", bytes.len())));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: DATASET_MAGIC.to_vec(), found: bytes[..4].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated("header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(Error::Version { expected: DATASET_VERSION, found: version });
    }
    let window = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if window as usize != FRAME_LEN {
        return Err(Error::shape(format!("dataset window {window} is not {FRAME_LEN}")));
    }
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let available = body.len() / RECORD_LEN;
    if (available as u64) < count {
        return Err(Error::Truncated(format!("record {available} of {count} is incomplete")));
    }
    if body.len() as u64 != count * RECORD_LEN as u64 {
        return Err(Error::shape(format!("{} trailing bytes after {count} records", body.len() - count as usize * RECORD_LEN)));
    }
    let frames = body
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let scheme = CodingScheme::from_label(rec[0])
                .ok_or_else(|| Error::shape(format!("record {i}: unknown scheme code {}", rec[0])))?;
            let snr = SnrLabel(i16::from_le_bytes([rec[1], rec[2]]));
            let values = rec[3..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Ok(LabeledFrame { frame: IqFrame { values }, scheme, snr })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSet { window, frames })
}

pub fn serialize_frames(frames: &FrameSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_frames(frames))?;
    w.flush()?;
    Ok(())
}

pub fn deserialize_frames(path: impl AsRef<Path>) -> Result<FrameSet> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_frames(&bytes)
}

pub fn csv_header() -> String {
    let mut h = String::from("scheme,snr_db");
    for i in 0..FRAME_LEN {
        write!(h, ",i{i}").unwrap();
    }
    for i in 0..FRAME_LEN {
        write!(h, ",q{i}").unwrap();
    }
    h
}

/// CSV export: labels in the first two columns, then the 256 IQ values.
pub fn write_csv(frames: &FrameSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", csv_header())?;
    let mut line = String::new();
    for f in &frames.frames {
        line.clear();
        write!(line, "{},{}", f.scheme.label(), f.snr.db()).unwrap();
        for v in f.frame.values() {
            write!(line, ",{v}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses frame rows written by [`write_csv`]. A header line is optional;
/// errors name the 1-based line number.
pub fn read_csv(reader: impl BufRead) -> Result<FrameSet> {
    let mut frames = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("scheme")) {
            continue;
        }
        let bad = |what: &str| Error::shape(format!("line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + IQ_VALUES {
            return Err(bad(&format!("expected {} columns, found {}", 2 + IQ_VALUES, fields.len())));
        }
        let scheme = u8::from_str(fields[0].trim())
            .ok()
            .and_then(CodingScheme::from_label)
            .ok_or_else(|| bad("scheme must be 0 or 1"))?;
        let snr = f64::from_str(fields[1].trim())
            .map_err(|_| bad("unparsable snr_db"))
            .and_then(|db| SnrLabel::from_db(db).map_err(|_| bad("snr_db out of range")))?;
        let values = fields[2..]
            .iter()
            .map(|s| f32::from_str(s.trim()).map_err(|_| bad(&format!("unparsable value {s:?}"))))
            .collect::<Result<Vec<f32>>>()?;
        frames.push(LabeledFrame { frame: IqFrame { values }, scheme, snr });
    }
    Ok(FrameSet::new(frames))
}

/// Frames for inference: rows of either 256 bare IQ values or the labeled
/// [`write_csv`] layout (labels are ignored). Header lines are skipped.
pub fn read_frame_rows(reader: impl BufRead) -> Result<Vec<IqFrame>> {
    let mut frames = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let values = match fields.len() {
            IQ_VALUES => &fields[..],
            l if l == IQ_VALUES + 2 => &fields[2..],
            l => {
                return Err(Error::shape(format!(
                    "line {}: expected {IQ_VALUES} or {} columns, found {l}",
                    n + 1,
                    IQ_VALUES + 2
                )))
            }
        };
        let values = values
            .iter()
            .map(|s| f32::from_str(s.trim()).map_err(|_| Error::shape(format!("line {}: unparsable value {s:?}", n + 1))))
            .collect::<Result<Vec<f32>>>()?;
        frames.push(IqFrame { values });
    }
    Ok(frames)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<FrameSet> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Text sidecar describing how a dataset file was produced; parsing it back
/// gives a config that regenerates the file bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub count: usize,
}

impl Manifest {
    pub fn new(config: DatasetConfig, count: usize) -> Self {
        Manifest { config, count }
    }

    pub fn frames_per_burst(&self) -> usize {
        self.config.frames_per_burst()
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let grid: Vec<String> = c.snr_grid.iter().map(|s| s.to_string()).collect();
        let variant = match c.al_variant {
            AlamoutiVariant::Matrix => "matrix",
            AlamoutiVariant::Swapped => "swapped",
        };
        format!(
            "format_version={DATASET_VERSION}\nseed={}\nsnr_grid={}\nbursts_per_cell={}\nburst_len={}\n\
             window={}\nshift={}\nnormalize={}\nnakagami_m={}\nal_variant={variant}\n\
             frames_per_burst={}\ncount={}\n",
            c.seed,
            grid.join(","),
            c.bursts_per_cell,
            c.burst_len,
            c.window,
            c.shift,
            c.normalize,
            c.nakagami_m,
            c.frames_per_burst(),
            self.count,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("manifest line {}: expected key=value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::param(format!("manifest is missing `{k}`")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::param(format!("manifest `{k}` has bad value {v:?}")))
        }
        let version: u16 = num("format_version", get("format_version")?)?;
        if version != DATASET_VERSION {
            return Err(Error::Version { expected: DATASET_VERSION, found: version });
        }
        let snr_grid = get("snr_grid")?
            .split(',')
            .map(|s| num::<f64>("snr_grid", s.trim()))
            .collect::<Result<Vec<_>>>()?;
        let al_variant = match get("al_variant")?.as_str() {
            "matrix" => AlamoutiVariant::Matrix,
            "swapped" => AlamoutiVariant::Swapped,
            other => return Err(Error::param(format!("manifest has unknown al_variant {other:?}"))),
        };
        let config = DatasetConfig {
            snr_grid,
            bursts_per_cell: num("bursts_per_cell", get("bursts_per_cell")?)?,
            burst_len: num("burst_len", get("burst_len")?)?,
            window: num("window", get("window")?)?,
            shift: num("shift", get("shift")?)?,
            seed: num("seed", get("seed")?)?,
            normalize: num("normalize", get("normalize")?)?,
            nakagami_m: num("nakagami_m", get("nakagami_m")?)?,
            al_variant,
        };
        config.validate()?;
        let count = num("count", get("count")?)?;
        Ok(Manifest { config, count })
    }

    /// Conventional sidecar location: `<dataset>.manifest`.
    pub fn path_for(dataset: &Path) -> std::path::PathBuf {
        let mut name = dataset.as_os_str().to_owned();
        name.push(".manifest");
        name.into()
    }
}
