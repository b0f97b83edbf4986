//! Accuracy per SNR, confusion matrices and loss curves, with CSV and SVG
//! export.
//!
//! CSV schemas:
//!
//! ```text
//! snr_db,accuracy,n
//! snr_db,true,pred,count
//! epoch,train_loss,val_loss
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so parsing a
//! file back gives the exact values that were written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::TrainHistory;
use crate::dataset::{FrameSet, IqFrame, LabeledFrame, SnrLabel};
use crate::{CodingScheme, Error, Result};

/// Rows are the true class, columns the prediction, both in label order
/// (SM, AL).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: CodingScheme, pred: CodingScheme) {
        self.counts[truth.label() as usize][pred.label() as usize] += 1;
    }

    pub fn get(&self, truth: CodingScheme, pred: CodingScheme) -> u64 {
        self.counts[truth.label() as usize][pred.label() as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn row_total(&self, truth: CodingScheme) -> u64 {
        self.counts[truth.label() as usize].iter().sum()
    }

    /// Trace over total; `NaN` when empty.
    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    pub fn off_diagonal_fraction(&self) -> f64 {
        1.0 - self.accuracy()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..2 {
            for j in 0..2 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion_matrix(preds: &[CodingScheme], truths: &[CodingScheme]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), truths.len())));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset("confusion matrix of nothing".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        m.record(t, p);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyPoint {
    pub snr_db: f64,
    pub accuracy: f64,
    pub n: u64,
}

/// Accuracy per SNR point, sorted by SNR.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyCurve {
    pub points: Vec<AccuracyPoint>,
}

impl AccuracyCurve {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[0].snr_db < w[1].snr_db) {
                return Err(Error::param(format!("SNR points not strictly increasing at {} dB", w[1].snr_db)));
            }
        }
        if let Some(p) = self.points.iter().find(|p| !(0.0..=1.0).contains(&p.accuracy)) {
            return Err(Error::param(format!("accuracy {} at {} dB is outside [0, 1]", p.accuracy, p.snr_db)));
        }
        Ok(())
    }

    pub fn at(&self, snr_db: f64) -> Option<&AccuracyPoint> {
        self.points.iter().find(|p| p.snr_db == snr_db)
    }
}

/// Accuracy curve together with the confusion matrix of every SNR bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrEvaluation {
    pub curve: AccuracyCurve,
    pub confusion: BTreeMap<SnrLabel, ConfusionMatrix>,
}

impl SnrEvaluation {
    pub fn overall(&self) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::default();
        self.confusion.values().for_each(|c| m.merge(c));
        m
    }
}

/// Buckets precomputed predictions by the exact SNR label of each frame.
pub fn evaluate_predictions(frames: &[LabeledFrame], preds: &[CodingScheme]) -> Result<SnrEvaluation> {
    if frames.len() != preds.len() {
        return Err(Error::shape(format!("{} predictions for {} frames", preds.len(), frames.len())));
    }
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no frames to evaluate".into()));
    }
    let mut confusion: BTreeMap<SnrLabel, ConfusionMatrix> = BTreeMap::new();
    for (f, &p) in frames.iter().zip(preds) {
        confusion.entry(f.snr).or_default().record(f.scheme, p);
    }
    let points = confusion
        .iter()
        .map(|(snr, m)| AccuracyPoint { snr_db: snr.db(), accuracy: m.accuracy(), n: m.total() })
        .collect();
    Ok(SnrEvaluation { curve: AccuracyCurve { points }, confusion })
}

/// Runs `classify` on every frame (in parallel when `threads > 1`) and
/// buckets the results by SNR. Aggregation follows frame order, so the
/// result does not depend on `threads`.
pub fn accuracy_vs_snr<F>(classify: F, frames: &FrameSet, threads: usize) -> Result<SnrEvaluation>
where
    F: Fn(&IqFrame) -> Result<CodingScheme> + Sync,
{
    let preds = crate::pool::with_threads(threads, || {
        frames.frames.par_iter().map(|f| classify(&f.frame)).collect::<Result<Vec<_>>>()
    })??;
    evaluate_predictions(&frames.frames, &preds)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses, epochs numbered consecutively from 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn from_history(h: &TrainHistory) -> Self {
        LossCurve {
            points: h
                .epochs
                .iter()
                .map(|r| LossPoint { epoch: r.epoch, train_loss: r.train_loss, val_loss: r.val_loss })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.epoch != i + 1 {
                return Err(Error::param(format!("loss row {} has epoch {}, expected {}", i + 1, p.epoch, i + 1)));
            }
        }
        Ok(())
    }
}

pub const ACCURACY_HEADER: &str = "snr_db,accuracy,n";
pub const CONFUSION_HEADER: &str = "snr_db,true,pred,count";
pub const LOSS_HEADER: &str = "epoch,train_loss,val_loss";

pub fn accuracy_csv(curve: &AccuracyCurve) -> String {
    let mut s = format!("{ACCURACY_HEADER}\n");
    for p in &curve.points {
        writeln!(s, "{},{},{}", p.snr_db, p.accuracy, p.n).unwrap();
    }
    s
}

/// One row per `(true, pred)` cell per SNR, cells in label order.
pub fn confusion_csv<'a>(entries: impl IntoIterator<Item = (f64, &'a ConfusionMatrix)>) -> String {
    let mut s = format!("{CONFUSION_HEADER}\n");
    for (snr, m) in entries {
        for t in CodingScheme::ALL {
            for p in CodingScheme::ALL {
                writeln!(s, "{snr},{t},{p},{}", m.get(t, p)).unwrap();
            }
        }
    }
    s
}

pub fn loss_csv(curve: &LossCurve) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for p in &curve.points {
        writeln!(s, "{},{},{}", p.epoch, p.train_loss, p.val_loss).unwrap();
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Data rows of a CSV with a required header, split into fields.
fn csv_rows(reader: impl BufRead, header: &str, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = reader.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).transpose()?;
    if first.as_deref().map(str::trim) != Some(header) {
        return Err(Error::param(format!("missing CSV header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(Error::param(format!("line {}: expected {width} fields, got {}", i + 1, fields.len())));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::param(format!("line {line}: bad {what} `{s}`")))
}

pub fn read_accuracy_csv(reader: impl BufRead) -> Result<AccuracyCurve> {
    let points = csv_rows(reader, ACCURACY_HEADER, 3)?
        .into_iter()
        .map(|(l, f)| {
            Ok(AccuracyPoint {
                snr_db: field(l, "snr_db", &f[0])?,
                accuracy: field(l, "accuracy", &f[1])?,
                n: field(l, "n", &f[2])?,
            })
        })
        .collect::<Result<_>>()?;
    let curve = AccuracyCurve { points };
    curve.validate()?;
    Ok(curve)
}

/// Confusion matrices keyed by SNR, in order of first appearance.
pub fn read_confusion_csv(reader: impl BufRead) -> Result<Vec<(f64, ConfusionMatrix)>> {
    let mut out: Vec<(f64, ConfusionMatrix)> = Vec::new();
    for (l, f) in csv_rows(reader, CONFUSION_HEADER, 4)? {
        let snr: f64 = field(l, "snr_db", &f[0])?;
        let scheme = |s: &str| {
            CodingScheme::ALL
                .into_iter()
                .find(|c| c.to_string() == s)
                .ok_or_else(|| Error::param(format!("line {l}: unknown class `{s}`")))
        };
        let (t, p) = (scheme(&f[1])?, scheme(&f[2])?);
        let count: u64 = field(l, "count", &f[3])?;
        let idx = match out.iter().position(|(s, _)| *s == snr) {
            Some(i) => i,
            None => {
                out.push((snr, ConfusionMatrix::default()));
                out.len() - 1
            }
        };
        out[idx].1.counts[t.label() as usize][p.label() as usize] = count;
    }
    Ok(out)
}

pub fn read_loss_csv(reader: impl BufRead) -> Result<LossCurve> {
    let points = csv_rows(reader, LOSS_HEADER, 3)?
        .into_iter()
        .map(|(l, f)| {
            Ok(LossPoint {
                epoch: field(l, "epoch", &f[0])?,
                train_loss: field(l, "train_loss", &f[1])?,
                val_loss: field(l, "val_loss", &f[2])?,
            })
        })
        .collect::<Result<_>>()?;
    let curve = LossCurve { points };
    curve.validate()?;
    Ok(curve)
}

// SVG rendering.

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Series<'a> {
    name: &'a str,
    xy: Vec<(f64, f64)>,
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x.1 - self.x.0).max(f64::MIN_POSITIVE);
        LEFT + (x - self.x.0) / span * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        let span = (self.y.1 - self.y.0).max(f64::MIN_POSITIVE);
        H - BOTTOM - (y - self.y.0) / span * (H - TOP - BOTTOM)
    }
}

/// Line chart with one polyline per series. Every value in `x_ticks` gets a
/// tick mark; every `label_every`-th one also gets a label.
#[allow(clippy::too_many_arguments)]
fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    axes: Axes,
    x_ticks: &[f64],
    label_every: usize,
    y_ticks: &[f64],
) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    writeln!(s, r#"<rect class="frame" x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0).unwrap();
    for (i, &t) in x_ticks.iter().enumerate() {
        let x = axes.px(t);
        writeln!(s, r#"<line class="xtick" data-value="{}" x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, fmt_num(t), y1 + 5.0).unwrap();
        if i % label_every.max(1) == 0 || i + 1 == x_ticks.len() {
            writeln!(s, r#"<text class="xlabel" x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, fmt_num(t)).unwrap();
        }
    }
    for &t in y_ticks {
        let y = axes.py(t);
        writeln!(s, r##"<line class="ytick" data-value="{}" x1="{}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##, fmt_num(t), x0 - 5.0).unwrap();
        writeln!(s, r#"<text class="ylabel" x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, fmt_num(t)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 18.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0, escape(y_label)).unwrap();
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser.xy.iter().map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y))).collect();
        writeln!(s, r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, escape(ser.name), pts.join(" ")).unwrap();
        for &(x, y) in &ser.xy {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, axes.px(x), axes.py(y)).unwrap();
        }
        let ly = y0 + 16.0 + 16.0 * k as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, x1 - 110.0, x1 - 90.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x1 - 85.0, ly + 4.0, escape(ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn accuracy_svg(curve: &AccuracyCurve, title: &str) -> Result<String> {
    if curve.points.is_empty() {
        return Err(Error::EmptyDataset("accuracy curve has no points".into()));
    }
    curve.validate()?;
    let xs: Vec<f64> = curve.points.iter().map(|p| p.snr_db).collect();
    let (lo, hi) = (xs[0], *xs.last().unwrap());
    let pad = if hi > lo { 0.0 } else { 1.0 };
    let axes = Axes { x: (lo - pad, hi + pad), y: (0.0, 1.0) };
    let series = [Series { name: "accuracy", xy: curve.points.iter().map(|p| (p.snr_db, p.accuracy)).collect() }];
    let y_ticks: Vec<f64> = (0..=5).map(|i| i as f64 * 0.2).collect();
    let every = xs.len().div_ceil(11);
    Ok(line_plot(title, "SNR (dB)", "P(correct)", &series, axes, &xs, every, &y_ticks))
}

pub fn loss_svg(curve: &LossCurve, title: &str) -> Result<String> {
    if curve.points.is_empty() {
        return Err(Error::EmptyDataset("loss curve has no epochs".into()));
    }
    curve.validate()?;
    let n = curve.points.len();
    let max = curve.points.iter().flat_map(|p| [p.train_loss, p.val_loss]).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let top = if max > 0.0 { max * 1.1 } else { 1.0 };
    let axes = Axes { x: (if n == 1 { 0.0 } else { 1.0 }, n as f64), y: (0.0, top) };
    let series = [
        Series { name: "train", xy: curve.points.iter().map(|p| (p.epoch as f64, p.train_loss)).collect() },
        Series { name: "validation", xy: curve.points.iter().map(|p| (p.epoch as f64, p.val_loss)).collect() },
    ];
    let xs: Vec<f64> = (1..=n).map(|e| e as f64).collect();
    let y_ticks: Vec<f64> = (0..=4).map(|i| top * i as f64 / 4.0).collect();
    Ok(line_plot(title, "epoch", "cross-entropy", &series, axes, &xs, n.div_ceil(15), &y_ticks))
}

/// 2x2 grid, shaded by the row-normalized rate and labeled with the count.
pub fn confusion_svg(m: &ConfusionMatrix, title: &str) -> String {
    let cell = 120.0;
    let (ox, oy) = (110.0, 70.0);
    let (w, h) = (ox + 2.0 * cell + 30.0, oy + 2.0 * cell + 50.0);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="13">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#, ox + cell, oy - 28.0).unwrap();
    writeln!(s, r#"<text x="22" y="{}" text-anchor="middle" transform="rotate(-90 22 {})">true</text>"#, oy + cell, oy + cell).unwrap();
    for t in CodingScheme::ALL {
        let i = t.label() as f64;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, ox + (i + 0.5) * cell, oy - 8.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, ox - 10.0, oy + (i + 0.5) * cell + 5.0).unwrap();
    }
    for t in CodingScheme::ALL {
        let row = m.row_total(t);
        for p in CodingScheme::ALL {
            let count = m.get(t, p);
            let rate = if row == 0 { 0.0 } else { count as f64 / row as f64 };
            let (x, y) = (ox + p.label() as f64 * cell, oy + t.label() as f64 * cell);
            // White to dark blue.
            let shade = |full: f64| (255.0 - rate * (255.0 - full)).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(8.0), shade(48.0), shade(107.0));
            let ink = if rate > 0.5 { "white" } else { "black" };
            writeln!(s, r#"<rect class="cell" data-true="{t}" data-pred="{p}" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="black"/>"#).unwrap();
            writeln!(s, r#"<text class="count" data-true="{t}" data-pred="{p}" x="{}" y="{}" text-anchor="middle" font-size="20" fill="{ink}">{count}</text>"#, x + cell / 2.0, y + cell / 2.0).unwrap();
            writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{:.1}%</text>"#, x + cell / 2.0, y + cell / 2.0 + 22.0, 100.0 * rate).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
