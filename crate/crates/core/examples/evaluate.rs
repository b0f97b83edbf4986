//! Accuracy per SNR, confusion matrices and their CSV/SVG renderings.
//! Uses an untrained model so it runs in seconds; swap in a loaded
//! checkpoint for real numbers.

use std::path::PathBuf;

use stbc::classifier::Model;
use stbc::dataset::{self, DatasetConfig};
use stbc::evaluation::{self, accuracy_csv, accuracy_svg, confusion_csv, confusion_svg};

fn main() -> stbc::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stbc-eval"));
    std::fs::create_dir_all(&dir)?;
    let cfg = DatasetConfig { snr_grid: vec![-5.0, 5.0], bursts_per_cell: 2, seed: 9, ..DatasetConfig::default() };
    let frames = dataset::generate_dataset(&cfg, 1)?;
    let model = Model::cnn2(9)?;

    let report = evaluation::accuracy_vs_snr(|f| model.classify(f), &frames, 1)?;
    for p in &report.curve.points {
        println!("{:>5} dB  accuracy {:.3}  ({} frames)", p.snr_db, p.accuracy, p.n);
    }
    let overall = report.overall();
    println!("overall {:.3}, counts [true][pred] {:?}", overall.accuracy(), overall.counts);

    evaluation::write_text(dir.join("accuracy.csv"), &accuracy_csv(&report.curve))?;
    evaluation::write_text(dir.join("accuracy.svg"), &accuracy_svg(&report.curve, "accuracy vs SNR")?)?;
    evaluation::write_text(dir.join("confusion.csv"), &confusion_csv(report.confusion.iter().map(|(s, m)| (s.db(), m))))?;
    evaluation::write_text(dir.join("confusion.svg"), &confusion_svg(&overall, "all SNRs"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
