//! Trains CNN2 for a few epochs on a small dataset and saves a checkpoint.
//!
//! ```text
//! cargo run --release --example train_cnn2 [epochs]
//! ```

use stbc::classifier::{self, Model, TrainConfig};
use stbc::dataset::{self, DatasetConfig};

fn main() -> stbc::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = DatasetConfig { snr_grid: vec![0.0, 10.0, 20.0], bursts_per_cell: 4, seed: 5, ..DatasetConfig::default() };
    let frames = dataset::generate_dataset(&cfg, 1)?;
    let (train, val) = dataset::split_train_val(&frames, cfg.frames_per_burst(), 0.5, 5)?;

    let tc = TrainConfig { epochs, batch_size: 64, seed: 5, patience: Some(3), ..TrainConfig::default() };
    println!("{} train / {} val frames, up to {epochs} epochs", train.len(), val.len());
    let (model, history) = classifier::train_with(Model::cnn2(5)?, &train, &val, &tc, |r| {
        println!("epoch {:>2}  train {:.4}  val {:.4}  acc {:.3}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy);
    })?;
    println!("best epoch {}, stopped early: {}", history.best_epoch, history.stopped_early);

    let path = std::env::temp_dir().join("stbc-example-model.ckpt");
    classifier::save_checkpoint(&model, &path)?;
    let back = classifier::load_checkpoint(&path)?;
    let p = back.predict(&val.frames[0].frame)?;
    println!("checkpoint {}; first val frame P(SM) {:.3}, P(AL) {:.3}", path.display(), p[0], p[1]);
    Ok(())
}
