//! Builds a small labeled dataset, splits it by burst and writes it in both
//! the binary and CSV formats.
//!
//! ```text
//! cargo run --release --example generate_dataset [out-dir]
//! ```

use std::path::PathBuf;

use stbc::dataset::{self, snr_range, DatasetConfig, Manifest};

fn main() -> stbc::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stbc-example"));
    std::fs::create_dir_all(&dir)?;

    let cfg = DatasetConfig { snr_grid: snr_range(-10.0, 10.0, 5.0)?, bursts_per_cell: 4, seed: 42, ..DatasetConfig::default() };
    let frames = dataset::generate_dataset(&cfg, 1)?;
    println!("{} frames ({} per burst)", frames.len(), cfg.frames_per_burst());
    for ((scheme, snr), n) in frames.cell_counts() {
        println!("  {scheme} at {snr:>5} dB: {n}");
    }
    let f = &frames.frames[0].frame;
    println!("first frame mean power {:.6}, I[0..4] {:?}", f.mean_power(), &f.in_phase()[..4]);

    let (train, val) = dataset::split_train_val(&frames, cfg.frames_per_burst(), 0.5, 1)?;
    println!("split: {} train, {} val", train.len(), val.len());

    let bin = dir.join("frames.stbc");
    dataset::serialize_frames(&frames, &bin)?;
    std::fs::write(Manifest::path_for(&bin), Manifest::new(cfg, frames.len()).render())?;
    dataset::write_csv(&frames, dir.join("frames.csv"))?;
    assert_eq!(dataset::deserialize_frames(&bin)?, frames);
    println!("wrote {}", dir.display());
    Ok(())
}
