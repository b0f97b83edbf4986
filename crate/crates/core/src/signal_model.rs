//! Transmit-side signal model: QPSK symbols, SM / Alamouti coding matrices,
//! and a flat Nakagami-m fading channel seen by a single receive antenna.
//!
//! The received sample at time `k` is
//!
//! ```text
//! r(k) = h0 * tx[0][k + k1] + h1 * tx[1][k + k1] + w(k)
//! ```
//!
//! where `tx` is the 2 x L coded matrix, `k1` the unknown offset of the
//! first intercepted sample within a coding block, and `w(k)` circular
//! complex white Gaussian noise.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::{Error, Result};

pub type ComplexSample = Complex64;

/// Number of transmit antennas.
pub const TX_ANTENNAS: usize = 2;

/// Nakagami shape used throughout the simulations.
pub const DEFAULT_NAKAGAMI_M: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodingScheme {
    /// Spatial multiplexing, label 0.
    Sm,
    /// Alamouti, label 1.
    Al,
}

impl CodingScheme {
    pub const ALL: [CodingScheme; 2] = [CodingScheme::Sm, CodingScheme::Al];

    pub fn label(self) -> u8 {
        match self {
            CodingScheme::Sm => 0,
            CodingScheme::Al => 1,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(CodingScheme::Sm),
            1 => Some(CodingScheme::Al),
            _ => None,
        }
    }

    /// Time slots per coding block (`L`).
    pub fn slots(self) -> usize {
        match self {
            CodingScheme::Sm => 1,
            CodingScheme::Al => 2,
        }
    }
}

impl fmt::Display for CodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodingScheme::Sm => "SM",
            CodingScheme::Al => "AL",
        })
    }
}

/// Which second-slot layout is used for Alamouti blocks.
///
/// `Matrix` is the orthogonal Alamouti code `[x0 -x1*; x1 x0*]`. `Swapped`
/// transmits `[-x0*; x1*]` in the second slot instead, so that the lag-one
/// product `r(0) r(1)` has mean `h1^2 - h0^2`. It exists only so the
/// correlation baseline can be checked against that model; it is not an
/// orthogonal code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AlamoutiVariant {
    #[default]
    Matrix,
    Swapped,
}

/// One coding block of `N_s = 2` symbols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymbolBlock(pub [ComplexSample; 2]);

/// Coded transmit matrix, one row per antenna, one column per time slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitMatrix {
    rows: [Vec<ComplexSample>; TX_ANTENNAS],
}

impl TransmitMatrix {
    pub fn from_rows(row0: Vec<ComplexSample>, row1: Vec<ComplexSample>) -> Result<Self> {
        if row0.len() != row1.len() {
            return Err(Error::shape(format!(
                "antenna rows differ in length ({} vs {})",
                row0.len(),
                row1.len()
            )));
        }
        Ok(TransmitMatrix { rows: [row0, row1] })
    }

    pub fn columns(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, antenna: usize) -> &[ComplexSample] {
        &self.rows[antenna]
    }

    pub fn column(&self, t: usize) -> [ComplexSample; TX_ANTENNAS] {
        [self.rows[0][t], self.rows[1][t]]
    }

    /// Entrywise `a * self + b * other`.
    pub fn combine(&self, a: ComplexSample, other: &TransmitMatrix, b: ComplexSample) -> Result<Self> {
        if self.columns() != other.columns() {
            return Err(Error::shape("transmit matrices differ in width"));
        }
        let mix = |x: &[ComplexSample], y: &[ComplexSample]| -> Vec<ComplexSample> {
            x.iter().zip(y).map(|(&x, &y)| a * x + b * y).collect()
        };
        Ok(TransmitMatrix {
            rows: [mix(&self.rows[0], &other.rows[0]), mix(&self.rows[1], &other.rows[1])],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h0: ComplexSample,
    pub h1: ComplexSample,
    pub m: f64,
    pub omega: f64,
}

impl ChannelRealization {
    /// A fixed channel, outside of any fading draw.
    pub fn fixed(h0: ComplexSample, h1: ComplexSample) -> Self {
        ChannelRealization { h0, h1, m: f64::INFINITY, omega: 1.0 }
    }
}

/// Total complex noise variance `sigma_w^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiveConfig {
    pub k1: usize,
    pub length: usize,
    pub snr_db: f64,
}

/// Gray-mapped unit-energy QPSK: `00 -> (+1+j)`, `01 -> (-1+j)`,
/// `11 -> (-1-j)`, `10 -> (+1-j)`, all scaled by `1/sqrt(2)`.
pub fn modulate_qpsk(bits: &[u8]) -> Result<Vec<ComplexSample>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::shape(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    bits.chunks_exact(2)
        .map(|pair| {
            let sign = |b: u8| match b {
                0 => Ok(FRAC_1_SQRT_2),
                1 => Ok(-FRAC_1_SQRT_2),
                other => Err(Error::shape(format!("bit value {other} is not 0 or 1"))),
            };
            // Second bit sets the in-phase sign, first bit the quadrature sign.
            let re = sign(pair[1])?;
            let im = sign(pair[0])?;
            Ok(ComplexSample::new(re, im))
        })
        .collect()
}

/// Encodes a symbol stream with the orthogonal Alamouti matrix or SM layout.
pub fn encode(scheme: CodingScheme, symbols: &[ComplexSample]) -> Result<TransmitMatrix> {
    encode_with(scheme, AlamoutiVariant::Matrix, symbols)
}

pub fn encode_with(
    scheme: CodingScheme,
    variant: AlamoutiVariant,
    symbols: &[ComplexSample],
) -> Result<TransmitMatrix> {
    if !symbols.len().is_multiple_of(2) {
        return Err(Error::shape(format!(
            "{scheme} encoding needs an even symbol count, got {}",
            symbols.len()
        )));
    }
    let n = symbols.len();
    let (mut row0, mut row1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    match scheme {
        CodingScheme::Sm => {
            for pair in symbols.chunks_exact(2) {
                row0.push(pair[0]);
                row1.push(pair[1]);
            }
        }
        CodingScheme::Al => {
            for pair in symbols.chunks_exact(2) {
                let (x0, x1) = (pair[0], pair[1]);
                row0.push(x0);
                row1.push(x1);
                match variant {
                    AlamoutiVariant::Matrix => {
                        row0.push(-x1.conj());
                        row1.push(x0.conj());
                    }
                    AlamoutiVariant::Swapped => {
                        row0.push(-x0.conj());
                        row1.push(x1.conj());
                    }
                }
            }
        }
    }
    TransmitMatrix::from_rows(row0, row1)
}

/// Draws `(h0, h1)` independently with `|h|^2 ~ Gamma(m, omega / m)` and a
/// uniform phase.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, m: f64, omega: f64) -> Result<ChannelRealization> {
    if !(m >= 0.5) || !m.is_finite() {
        return Err(Error::param(format!("Nakagami m must be >= 0.5, got {m}")));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::param(format!("Nakagami omega must be > 0, got {omega}")));
    }
    let power = Gamma::new(m, omega / m).map_err(|e| Error::param(e.to_string()))?;
    let mut tap = || {
        let mag = power.sample(rng).sqrt();
        let phase = rng.random::<f64>() * 2.0 * PI;
        ComplexSample::from_polar(mag, phase)
    };
    let h0 = tap();
    let h1 = tap();
    Ok(ChannelRealization { h0, h1, m, omega })
}

/// Noise variance for a given SNR, with received signal power fixed at 2
/// (two unit-power taps carrying unit-energy symbols).
pub fn noise_variance_for_snr(snr_db: f64) -> NoiseSpec {
    NoiseSpec { variance: 2.0 * 10f64.powf(-snr_db / 10.0) }
}

/// Passes a coded matrix through the channel starting at column `cfg.k1`.
pub fn receive<R: Rng + ?Sized>(
    tx: &TransmitMatrix,
    ch: &ChannelRealization,
    noise: NoiseSpec,
    cfg: &ReceiveConfig,
    rng: &mut R,
) -> Result<Vec<ComplexSample>> {
    if cfg.length == 0 {
        return Err(Error::shape("receive length must be positive"));
    }
    if !(noise.variance >= 0.0) {
        return Err(Error::param(format!("noise variance must be >= 0, got {}", noise.variance)));
    }
    let end = cfg.k1.saturating_add(cfg.length);
    if end > tx.columns() {
        return Err(Error::shape(format!(
            "cannot receive {} samples from offset {} of a {}-column transmit matrix",
            cfg.length,
            cfg.k1,
            tx.columns()
        )));
    }
    let sigma = (noise.variance / 2.0).sqrt();
    let (row0, row1) = (&tx.row(0)[cfg.k1..end], &tx.row(1)[cfg.k1..end]);
    Ok(row0
        .iter()
        .zip(row1)
        .map(|(&s0, &s1)| {
            let clean = ch.h0 * s0 + ch.h1 * s1;
            if sigma == 0.0 {
                clean
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                clean + ComplexSample::new(sigma * re, sigma * im)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    const S: f64 = FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> ComplexSample {
        ComplexSample::new(re, im)
    }

    fn close(a: ComplexSample, b: ComplexSample) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn gray_map_matches_table() {
        let cases: [([u8; 2], ComplexSample); 4] =
            [([0, 0], c(S, S)), ([0, 1], c(-S, S)), ([1, 1], c(-S, -S)), ([1, 0], c(S, -S))];
        for (bits, want) in cases {
            let got = modulate_qpsk(&bits).unwrap();
            assert_eq!(got.len(), 1);
            assert!(close(got[0], want), "{bits:?} -> {:?}", got[0]);
        }
        let two = modulate_qpsk(&[0, 0, 1, 0]).unwrap();
        assert!(close(two[0], c(S, S)) && close(two[1], c(S, -S)));
    }

    #[test]
    fn odd_bit_count_is_shape_error() {
        assert!(matches!(modulate_qpsk(&[0, 1, 1]), Err(Error::Shape(_))));
        assert!(matches!(modulate_qpsk(&[0, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn sm_layout() {
        let s: Vec<_> = (0..4).map(|i| c(i as f64, 0.0)).collect();
        let tx = encode(CodingScheme::Sm, &s).unwrap();
        assert_eq!(tx.row(0), &[s[0], s[2]]);
        assert_eq!(tx.row(1), &[s[1], s[3]]);
    }

    #[test]
    fn alamouti_layout() {
        let tx = encode(CodingScheme::Al, &[c(1.0, 1.0), c(1.0, -1.0)]).unwrap();
        assert_eq!(tx.row(0), &[c(1.0, 1.0), c(-1.0, -1.0)]);
        assert_eq!(tx.row(1), &[c(1.0, -1.0), c(1.0, -1.0)]);

        let tx = encode(CodingScheme::Al, &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_eq!(tx.row(0), &[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(tx.row(1), &[c(0.0, 1.0), c(1.0, 0.0)]);
    }

    #[test]
    fn odd_symbol_count_is_shape_error() {
        for scheme in CodingScheme::ALL {
            assert!(matches!(encode(scheme, &[c(1.0, 0.0)]), Err(Error::Shape(_))));
        }
    }

    #[test]
    fn swapped_variant_layout() {
        let (x0, x1) = (c(1.0, 2.0), c(3.0, -1.0));
        let tx = encode_with(CodingScheme::Al, AlamoutiVariant::Swapped, &[x0, x1]).unwrap();
        assert_eq!(tx.column(0), [x0, x1]);
        assert_eq!(tx.column(1), [-x0.conj(), x1.conj()]);
    }

    #[test]
    fn snr_normalization() {
        assert!((noise_variance_for_snr(0.0).variance - 2.0).abs() < 1e-15);
        assert!((noise_variance_for_snr(10.0).variance - 0.2).abs() < 1e-15);
        assert!((noise_variance_for_snr(20.0).variance - 0.02).abs() < 1e-15);
    }

    #[test]
    fn channel_parameter_errors() {
        let mut rng = stream(0);
        assert!(matches!(draw_channel(&mut rng, 0.4, 1.0), Err(Error::Param(_))));
        assert!(matches!(draw_channel(&mut rng, 3.0, 0.0), Err(Error::Param(_))));
        assert!(matches!(draw_channel(&mut rng, f64::NAN, 1.0), Err(Error::Param(_))));
    }

    #[test]
    fn channel_is_seed_deterministic() {
        let a = draw_channel(&mut stream(9), 3.0, 1.0).unwrap();
        let b = draw_channel(&mut stream(9), 3.0, 1.0).unwrap();
        assert_eq!(a.h0.re.to_bits(), b.h0.re.to_bits());
        assert_eq!(a.h1.im.to_bits(), b.h1.im.to_bits());
        assert_eq!(a, b);
    }

    /// Monte-Carlo moment oracle: with |h|^2 ~ Gamma(m, omega/m),
    /// E|h|^2 = omega, Var|h|^2 = omega^2 / m and E|h|^4 / (E|h|^2)^2 = 1 + 1/m.
    #[test]
    fn nakagami_moments() {
        let mut rng = stream(2024);
        let n = 100_000;
        let mut p = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let ch = draw_channel(&mut rng, 3.0, 1.0).unwrap();
            p.push(ch.h0.norm_sqr());
            p.push(ch.h1.norm_sqr());
        }
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (p.len() - 1) as f64;
        let m4 = p.iter().map(|x| x * x).sum::<f64>() / p.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0, "var {var}");
        assert!((m4 / (mean * mean) - 4.0 / 3.0).abs() < 0.02, "kurtosis ratio {}", m4 / mean / mean);
    }

    #[test]
    fn nakagami_phase_is_uniform() {
        let mut rng = stream(5);
        let n = 50_000;
        let mean_phasor: ComplexSample = (0..n)
            .map(|_| {
                let h = draw_channel(&mut rng, 3.0, 1.0).unwrap().h0;
                h / h.norm()
            })
            .sum::<ComplexSample>()
            / n as f64;
        assert!(mean_phasor.norm() < 0.02);
    }

    #[test]
    fn degenerate_channels_select_antenna_rows() {
        let mut rng = stream(1);
        let bits: Vec<u8> = (0..32).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let tx = encode(CodingScheme::Al, &modulate_qpsk(&bits).unwrap()).unwrap();
        let cfg = ReceiveConfig { k1: 0, length: tx.columns(), snr_db: f64::INFINITY };
        let silent = NoiseSpec { variance: 0.0 };
        let one = ComplexSample::new(1.0, 0.0);
        let zero = ComplexSample::new(0.0, 0.0);
        let r0 = receive(&tx, &ChannelRealization::fixed(one, zero), silent, &cfg, &mut rng).unwrap();
        assert_eq!(r0, tx.row(0));
        let r1 = receive(&tx, &ChannelRealization::fixed(zero, one), silent, &cfg, &mut rng).unwrap();
        assert_eq!(r1, tx.row(1));
    }

    #[test]
    fn receive_offset_and_overrun() {
        let mut rng = stream(1);
        let s: Vec<_> = (0..8).map(|i| c(i as f64, 0.0)).collect();
        let tx = encode(CodingScheme::Al, &s).unwrap();
        let ch = ChannelRealization::fixed(c(1.0, 0.0), c(0.0, 0.0));
        let silent = NoiseSpec { variance: 0.0 };
        let cfg = ReceiveConfig { k1: 1, length: 7, snr_db: 0.0 };
        let r = receive(&tx, &ch, silent, &cfg, &mut rng).unwrap();
        assert_eq!(r, &tx.row(0)[1..]);
        let cfg = ReceiveConfig { k1: 1, length: 8, snr_db: 0.0 };
        assert!(matches!(receive(&tx, &ch, silent, &cfg, &mut rng), Err(Error::Shape(_))));
    }

    /// Monte-Carlo noise oracle on an all-zero transmission.
    #[test]
    fn noise_power_matches_variance() {
        let n = 100_000;
        let zeros = vec![ComplexSample::new(0.0, 0.0); n];
        let tx = TransmitMatrix::from_rows(zeros.clone(), zeros).unwrap();
        let ch = draw_channel(&mut stream(3), 3.0, 1.0).unwrap();
        for snr in [0.0, 10.0] {
            let noise = noise_variance_for_snr(snr);
            let cfg = ReceiveConfig { k1: 0, length: n, snr_db: snr };
            let r = receive(&tx, &ch, noise, &cfg, &mut stream(11)).unwrap();
            let p = r.iter().map(|x| x.norm_sqr()).sum::<f64>() / n as f64;
            assert!((p / noise.variance - 1.0).abs() < 0.02, "snr {snr}: {p}");
            let re = r.iter().map(|x| x.re * x.re).sum::<f64>() / n as f64;
            assert!((re / (noise.variance / 2.0) - 1.0).abs() < 0.03);
        }
    }

    fn qpsk_symbols(n: usize) -> impl Strategy<Value = Vec<ComplexSample>> {
        prop::collection::vec(prop::collection::vec(0u8..2, 2), n)
            .prop_map(|bits| modulate_qpsk(&bits.concat()).unwrap())
    }

    fn any_symbols(n: usize) -> impl Strategy<Value = Vec<ComplexSample>> {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| c(a, b)), n)
    }

    proptest! {
        #[test]
        fn qpsk_has_constant_modulus(bits in prop::collection::vec(0u8..2, 0..64).prop_filter("even", |b| b.len() % 2 == 0)) {
            for x in modulate_qpsk(&bits).unwrap() {
                prop_assert!((x.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn alamouti_blocks_are_orthogonal(sym in any_symbols(12)) {
            let tx = encode(CodingScheme::Al, &sym).unwrap();
            for b in 0..tx.columns() / 2 {
                let (a, c1) = (tx.column(2 * b), tx.column(2 * b + 1));
                let energy = sym[2 * b].norm_sqr() + sym[2 * b + 1].norm_sqr();
                // C C^H entries: rows i, j -> sum over the two slots.
                for i in 0..2 {
                    for j in 0..2 {
                        let g = a[i] * a[j].conj() + c1[i] * c1[j].conj();
                        let want = if i == j { energy } else { 0.0 };
                        prop_assert!((g - ComplexSample::new(want, 0.0)).norm() < 1e-12 * (1.0 + energy));
                    }
                }
            }
        }

        #[test]
        fn noiseless_receive_is_linear(
            x in qpsk_symbols(16),
            y in any_symbols(16),
            a in (-2.0f64..2.0, -2.0f64..2.0),
            b in (-2.0f64..2.0, -2.0f64..2.0),
            seed in any::<u64>(),
        ) {
            let (a, b) = (c(a.0, a.1), c(b.0, b.1));
            let tx = encode(CodingScheme::Al, &x).unwrap();
            let ty = encode(CodingScheme::Al, &y).unwrap();
            let mixed = tx.combine(a, &ty, b).unwrap();
            let ch = draw_channel(&mut stream(seed), 3.0, 1.0).unwrap();
            let cfg = ReceiveConfig { k1: 1, length: 15, snr_db: f64::INFINITY };
            let silent = NoiseSpec { variance: 0.0 };
            let mut rng = stream(seed);
            let rx = receive(&tx, &ch, silent, &cfg, &mut rng).unwrap();
            let ry = receive(&ty, &ch, silent, &cfg, &mut rng).unwrap();
            let rm = receive(&mixed, &ch, silent, &cfg, &mut rng).unwrap();
            for k in 0..rm.len() {
                prop_assert!((rm[k] - (a * rx[k] + b * ry[k])).norm() < 1e-10);
            }
        }

        #[test]
        fn receive_is_seed_reproducible(seed in any::<u64>(), snr in -20.0f64..20.0) {
            let sym = modulate_qpsk(&[0, 1, 1, 0, 1, 1, 0, 0]).unwrap();
            let tx = encode(CodingScheme::Sm, &sym).unwrap();
            let ch = draw_channel(&mut stream(seed), 3.0, 1.0).unwrap();
            let cfg = ReceiveConfig { k1: 0, length: 2, snr_db: snr };
            let a = receive(&tx, &ch, noise_variance_for_snr(snr), &cfg, &mut stream(seed)).unwrap();
            let b = receive(&tx, &ch, noise_variance_for_snr(snr), &cfg, &mut stream(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
