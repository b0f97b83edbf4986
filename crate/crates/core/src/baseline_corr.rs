//! Second-order correlation detector.
//!
//! For a received sequence `r` the lag-one pair product `r(2t) r(2t+1)` is
//! averaged over all complete pairs, once for each of the two possible block
//! alignments. In a model where the second Alamouti slot is
//! `[-x0*, x1*]`, that mean converges to `h1^2 - h0^2` for unit-modulus
//! symbols while it converges to zero for spatial multiplexing. A threshold
//! on the larger of the two magnitudes then separates the schemes.
//!
//! Under the orthogonal Alamouti matrix the pair product also has zero mean,
//! so this detector is only a weak baseline there.

use rand::Rng;

use crate::dataset::draw_burst;
use crate::signal_model::{AlamoutiVariant, ComplexSample, DEFAULT_NAKAGAMI_M};
use crate::{CodingScheme, Error, Result};

pub const MIN_SEQUENCE_LEN: usize = 4;
pub const MIN_CALIBRATION_TRIALS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationFeature {
    /// Mean of `r(2t) r(2t+1)`.
    pub c_delta0: ComplexSample,
    /// Mean of `r(2t+1) r(2t+2)`.
    pub c_delta1: ComplexSample,
    /// `max(|c_delta0|, |c_delta1|)`.
    pub feature: f64,
    /// Pair count behind `c_delta0`.
    pub n_pairs: usize,
}

fn pair_mean(r: &[ComplexSample]) -> (ComplexSample, usize) {
    let pairs = r.chunks_exact(2);
    let n = pairs.len();
    let sum: ComplexSample = pairs.map(|p| p[0] * p[1]).sum();
    (sum / n as f64, n)
}

pub fn correlation_feature(samples: &[ComplexSample]) -> Result<CorrelationFeature> {
    if samples.len() < MIN_SEQUENCE_LEN {
        return Err(Error::shape(format!(
            "correlation feature needs at least {MIN_SEQUENCE_LEN} samples, got {}",
            samples.len()
        )));
    }
    let (c_delta0, n_pairs) = pair_mean(samples);
    let (c_delta1, _) = pair_mean(&samples[1..]);
    Ok(CorrelationFeature { c_delta0, c_delta1, feature: c_delta0.norm().max(c_delta1.norm()), n_pairs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRule {
    pub threshold: f64,
    pub snr_db: f64,
    pub seq_len: usize,
    pub trials: usize,
    /// Fraction of calibration sequences the rule gets wrong.
    pub empirical_error: f64,
    /// No threshold does better than always answering one class.
    pub degenerate: bool,
}

impl ThresholdRule {
    /// A fixed rule with no calibration metadata.
    pub fn fixed(threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) || !threshold.is_finite() {
            return Err(Error::param(format!("threshold must be finite and >= 0, got {threshold}")));
        }
        Ok(ThresholdRule { threshold, snr_db: f64::NAN, seq_len: 0, trials: 0, empirical_error: f64::NAN, degenerate: false })
    }
}

/// Result of [`best_split`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub threshold: f64,
    pub errors: usize,
    pub degenerate: bool,
}

/// Threshold minimizing misclassifications of the rule `feature > t -> AL`
/// over two labeled samples. The threshold is the midpoint between the two
/// neighbouring feature values of the best cut; ties keep the lowest cut.
pub fn best_split(al: &[f64], sm: &[f64]) -> Result<Split> {
    if al.is_empty() || sm.is_empty() {
        return Err(Error::param("calibration needs features from both classes"));
    }
    if al.iter().chain(sm).any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::param("features must be finite and non-negative"));
    }
    let mut all: Vec<(f64, bool)> = al.iter().map(|&f| (f, true)).chain(sm.iter().map(|&f| (f, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Cut below everything: every sequence is called AL. Only reachable
    // with a non-negative threshold when no feature is exactly zero.
    let mut errors = sm.len();
    let mut best = Split { threshold: 0.5 * all[0].0, errors, degenerate: false };
    if all[0].0 == 0.0 {
        best.errors = usize::MAX;
    }
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            errors = if all[i].1 { errors + 1 } else { errors - 1 };
            i += 1;
        }
        let threshold = if i < all.len() { 0.5 * (v + all[i].0) } else { v };
        if errors < best.errors {
            best = Split { threshold, errors, degenerate: false };
        }
    }
    best.degenerate = best.errors >= al.len().min(sm.len());
    Ok(best)
}

/// Monte-Carlo calibration on the orthogonal Alamouti generator.
pub fn calibrate_threshold<R: Rng + ?Sized>(snr_db: f64, seq_len: usize, trials: usize, rng: &mut R) -> Result<ThresholdRule> {
    calibrate_threshold_with(AlamoutiVariant::Matrix, DEFAULT_NAKAGAMI_M, snr_db, seq_len, trials, rng)
}

/// Draws `trials` AL and `trials` SM sequences of `seq_len` samples, each
/// through its own fading channel and scaled to unit mean power like the
/// dataset frames, and fits the best threshold to their features.
pub fn calibrate_threshold_with<R: Rng + ?Sized>(
    variant: AlamoutiVariant,
    nakagami_m: f64,
    snr_db: f64,
    seq_len: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ThresholdRule> {
    if trials < MIN_CALIBRATION_TRIALS {
        return Err(Error::param(format!("calibration needs at least {MIN_CALIBRATION_TRIALS} trials, got {trials}")));
    }
    if seq_len < MIN_SEQUENCE_LEN {
        return Err(Error::param(format!("sequence length must be >= {MIN_SEQUENCE_LEN}, got {seq_len}")));
    }
    let mut features = |scheme| -> Result<Vec<f64>> {
        (0..trials)
            .map(|_| {
                let mut r = draw_burst(scheme, variant, nakagami_m, snr_db, seq_len, rng)?.samples;
                normalize_power(&mut r)?;
                Ok(correlation_feature(&r)?.feature)
            })
            .collect()
    };
    let al = features(CodingScheme::Al)?;
    let sm = features(CodingScheme::Sm)?;
    let split = best_split(&al, &sm)?;
    Ok(ThresholdRule {
        threshold: split.threshold,
        snr_db,
        seq_len,
        trials,
        empirical_error: split.errors as f64 / (2 * trials) as f64,
        degenerate: split.degenerate,
    })
}

fn normalize_power(r: &mut [ComplexSample]) -> Result<()> {
    let p = r.iter().map(|x| x.norm_sqr()).sum::<f64>() / r.len() as f64;
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    let s = p.sqrt().recip();
    r.iter_mut().for_each(|x| *x *= s);
    Ok(())
}

/// `feature > threshold` is AL; anything else, ties included, is SM.
pub fn classify_corr(feature: &CorrelationFeature, rule: &ThresholdRule) -> CodingScheme {
    if feature.feature > rule.threshold {
        CodingScheme::Al
    } else {
        CodingScheme::Sm
    }
}

/// Feature extraction and thresholding in one step.
pub fn classify_samples(samples: &[ComplexSample], rule: &ThresholdRule) -> Result<CodingScheme> {
    Ok(classify_corr(&correlation_feature(samples)?, rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::signal_model::{encode_with, modulate_qpsk, receive, ChannelRealization, NoiseSpec, ReceiveConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> ComplexSample {
        ComplexSample::new(re, im)
    }

    #[test]
    fn hand_examples() {
        let f = correlation_feature(&[c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)]).unwrap();
        assert_eq!(f.c_delta0, c(0., 1.));
        assert_eq!(f.c_delta1, c(0., -1.));
        assert_eq!(f.feature, 1.0);
        assert_eq!(f.n_pairs, 2);

        let f = correlation_feature(&[c(1., 0.); 4]).unwrap();
        assert_eq!((f.c_delta0, f.c_delta1, f.feature), (c(1., 0.), c(1., 0.), 1.0));

        assert!(matches!(correlation_feature(&[c(1., 0.); 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn odd_lengths_use_complete_pairs() {
        // [a, b, c, d, e]: delta 0 pairs (a,b),(c,d); delta 1 pairs (b,c),(d,e).
        let r = [c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.), c(5., 0.)];
        let f = correlation_feature(&r).unwrap();
        assert_eq!(f.c_delta0, c((2. + 12.) / 2., 0.));
        assert_eq!(f.c_delta1, c((6. + 20.) / 2., 0.));
    }

    #[test]
    fn rule_and_ties() {
        let rule = ThresholdRule::fixed(0.5).unwrap();
        let feat = |v| CorrelationFeature { c_delta0: c(v, 0.), c_delta1: c(0., 0.), feature: v, n_pairs: 1 };
        assert_eq!(classify_corr(&feat(0.9), &rule), CodingScheme::Al);
        assert_eq!(classify_corr(&feat(0.1), &rule), CodingScheme::Sm);
        assert_eq!(classify_corr(&feat(0.5), &rule), CodingScheme::Sm);
        assert!(ThresholdRule::fixed(-1.0).is_err());
    }

    #[test]
    fn split_on_separable_and_identical_samples() {
        let mut rng = stream(1);
        let al: Vec<f64> = (0..200).map(|_| 0.9 + rng.random_range(-0.05..0.05)).collect();
        let sm: Vec<f64> = (0..200).map(|_| 0.1 + rng.random_range(-0.05..0.05)).collect();
        let s = best_split(&al, &sm).unwrap();
        assert!(s.threshold > 0.2 && s.threshold < 0.8, "{s:?}");
        assert_eq!(s.errors, 0);
        assert!(!s.degenerate);

        let same: Vec<f64> = (0..150).map(|i| i as f64 / 150.0).collect();
        assert!(best_split(&same, &same).unwrap().degenerate);

        // Reversed classes: calling everything AL is as good as it gets.
        let s = best_split(&sm, &al).unwrap();
        assert!(s.degenerate);
        assert!(best_split(&[], &sm).is_err());
    }

    /// Brute-force oracle for the sweep in `best_split`.
    #[test]
    fn split_matches_exhaustive_search() {
        let mut rng = stream(8);
        for _ in 0..50 {
            let al: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
            let sm: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
            let s = best_split(&al, &sm).unwrap();
            let count = |t: f64| al.iter().filter(|&&f| f <= t).count() + sm.iter().filter(|&&f| f > t).count();
            // Non-negative thresholds only.
            let min = (1..=24).map(|k| count(k as f64 / 16.0 - 0.01)).min().unwrap();
            assert_eq!(s.errors, min);
            assert_eq!(count(s.threshold), s.errors);
        }
    }

    #[test]
    fn calibration_rejects_few_trials() {
        let mut rng = stream(0);
        assert!(matches!(calibrate_threshold(10.0, 128, 99, &mut rng), Err(Error::Param(_))));
    }

    fn fixed_channel() -> ChannelRealization {
        ChannelRealization::fixed(ComplexSample::from_polar(0.8, 0.3), ComplexSample::from_polar(1.1, 1.2))
    }

    fn noiseless(scheme: CodingScheme, variant: AlamoutiVariant, pairs: usize, seed: u64) -> Vec<ComplexSample> {
        let mut rng = stream(seed);
        let n = 2 * pairs;
        let symbols = match scheme {
            CodingScheme::Sm => 2 * n,
            CodingScheme::Al => n,
        };
        let bits: Vec<u8> = (0..2 * symbols).map(|_| rng.random_range(0..2u8)).collect();
        let tx = encode_with(scheme, variant, &modulate_qpsk(&bits).unwrap()).unwrap();
        let cfg = ReceiveConfig { k1: 0, length: n, snr_db: f64::INFINITY };
        receive(&tx, &fixed_channel(), NoiseSpec { variance: 0.0 }, &cfg, &mut rng).unwrap()
    }

    /// Population values at 10^6 pairs: `h1^2 - h0^2` for the literal slot-two
    /// model and zero for SM.
    #[test]
    fn population_means() {
        let ch = fixed_channel();
        let expected = ch.h1 * ch.h1 - ch.h0 * ch.h0;
        let al = correlation_feature(&noiseless(CodingScheme::Al, AlamoutiVariant::Swapped, 1_000_000, 3)).unwrap();
        assert_eq!(al.n_pairs, 1_000_000);
        let rel = (al.c_delta0 - expected).norm() / expected.norm();
        assert!(rel < 0.05, "relative error {rel}");

        let sm = correlation_feature(&noiseless(CodingScheme::Sm, AlamoutiVariant::Swapped, 1_000_000, 4)).unwrap();
        assert!(sm.c_delta0.norm() < 0.01, "{}", sm.c_delta0);

        // The orthogonal matrix cancels the constant term.
        let al = correlation_feature(&noiseless(CodingScheme::Al, AlamoutiVariant::Matrix, 1_000_000, 5)).unwrap();
        assert!(al.c_delta0.norm() < 0.01, "{}", al.c_delta0);
    }

    /// SM at 10 dB over 1024 samples: the mean of K = 512 independent
    /// zero-mean products has standard deviation about `E|r|^2 / sqrt(K)`.
    #[test]
    fn sm_feature_shrinks_like_inverse_root_k() {
        let mut rng = stream(6);
        let trials = 2000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let b = draw_burst(CodingScheme::Sm, AlamoutiVariant::Matrix, 3.0, 10.0, 1024, &mut rng).unwrap();
            let power = b.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / 1024.0;
            sum += correlation_feature(&b.samples).unwrap().feature / power;
        }
        let mean = sum / trials as f64;
        let bound = 3.0 / (512f64).sqrt();
        assert!(mean < bound, "mean normalized feature {mean} vs {bound}");
        assert!(mean > 0.1 / (512f64).sqrt());
    }

    #[test]
    fn calibration_on_literal_model_separates() {
        let mut rng = stream(7);
        let rule = calibrate_threshold_with(AlamoutiVariant::Swapped, 3.0, 10.0, 1024, 200, &mut rng).unwrap();
        assert!(rule.empirical_error < 0.25, "{rule:?}");
        assert!(!rule.degenerate);
        let rule = calibrate_threshold(10.0, 1024, 200, &mut rng).unwrap();
        assert!((0.0..=0.5).contains(&rule.empirical_error), "{rule:?}");
        assert!(rule.threshold >= 0.0);
    }

    proptest! {
        #[test]
        fn phase_rotation_keeps_magnitudes(
            v in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4..40),
            phi in 0.0f64..6.3,
        ) {
            let r: Vec<ComplexSample> = v.iter().map(|&(a, b)| c(a, b)).collect();
            let rot = ComplexSample::from_polar(1.0, phi);
            let rr: Vec<ComplexSample> = r.iter().map(|&x| x * rot).collect();
            let (f, g) = (correlation_feature(&r).unwrap(), correlation_feature(&rr).unwrap());
            prop_assert!((f.c_delta0.norm() - g.c_delta0.norm()).abs() < 1e-9);
            prop_assert!((f.c_delta1.norm() - g.c_delta1.norm()).abs() < 1e-9);
            prop_assert!((f.feature - g.feature).abs() < 1e-9);
        }

        #[test]
        fn scaling_is_quadratic(
            v in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4..40),
            a in 0.01f64..10.0,
        ) {
            let r: Vec<ComplexSample> = v.iter().map(|&(x, y)| c(x, y)).collect();
            let s: Vec<ComplexSample> = r.iter().map(|&x| x * a).collect();
            let (f, g) = (correlation_feature(&r).unwrap(), correlation_feature(&s).unwrap());
            prop_assert!((g.feature - a * a * f.feature).abs() <= 1e-9 * (1.0 + g.feature));
            prop_assert!(f.feature >= 0.0);
        }
    }
}
