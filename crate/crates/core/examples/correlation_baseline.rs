//! Threshold detector on the lag-one pair correlation, calibrated by
//! simulation, under both Alamouti slot-two conventions.

use stbc::baseline_corr::{calibrate_threshold_with, classify_samples};
use stbc::dataset::{self, DatasetConfig};
use stbc::rng::stream;
use stbc::signal_model::{AlamoutiVariant, DEFAULT_NAKAGAMI_M};

fn main() -> stbc::Result<()> {
    for variant in [AlamoutiVariant::Matrix, AlamoutiVariant::Swapped] {
        let mut rng = stream(3);
        for len in [128, 1024] {
            let rule = calibrate_threshold_with(variant, DEFAULT_NAKAGAMI_M, 10.0, len, 500, &mut rng)?;
            println!(
                "{variant:?}, {len:>4} samples: threshold {:.4}, calibration error {:.3}{}",
                rule.threshold,
                rule.empirical_error,
                if rule.degenerate { " (degenerate)" } else { "" }
            );
            if len == 128 {
                let cfg = DatasetConfig { snr_grid: vec![10.0], bursts_per_cell: 10, al_variant: variant, seed: 4, ..DatasetConfig::default() };
                let frames = dataset::generate_dataset(&cfg, 1)?;
                let mut right = 0;
                for f in &frames.frames {
                    right += (classify_samples(&f.frame.to_complex(), &rule)? == f.scheme) as usize;
                }
                println!("    on {} dataset frames at 10 dB: accuracy {:.3}", frames.len(), right as f64 / frames.len() as f64);
            }
        }
    }
    Ok(())
}
