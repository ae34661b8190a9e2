//! Trains the unpruned three-task model on the unweighted sum of task losses
//! and keeps the epoch with the best validation pixel accuracy.
//!
//! ```text
//! cargo run --release --example train_base -- [epochs] [checkpoint_dir]
//! ```

use std::path::PathBuf;

use cosprune::data::{generate, split, DatasetConfig};
use cosprune::model::{save_checkpoint, ModelSpec, MtlModel};
use cosprune::train::{train, BestModelPolicy, OptimizerConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out: Option<PathBuf> = args.next().map(PathBuf::from);

    let samples = generate(&DatasetConfig {
        n_samples: 240,
        ..DatasetConfig::desk(1)
    })?;
    let (train_idx, val_idx) = split(samples.len(), 0.2, 1)?;
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 1)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(),
        eta0: 3e-3,
        eta_min: 0.0,
        shuffle_seed: 1,
    };
    let out_model = train(model, &samples, &train_idx, &val_idx, &cfg, BestModelPolicy::PixelAccuracy)?;

    println!("epoch  seg_loss depth_loss normal_loss   pix_acc    mIoU  abs_err  angle     lr");
    for r in &out_model.records {
        let l = &r.train_losses;
        let m = &r.metrics;
        println!(
            "{:5} {:9.4} {:10.4} {:11.4} {:9.4} {:7.4} {:8.4} {:6.2} {:.2e}",
            r.epoch, l[0], l[1], l[2], m.pixel_accuracy, m.miou, m.depth_abs_err, m.angle_mean_deg, r.lr
        );
    }
    println!("best epoch {}", out_model.best_epoch);

    if let Some(dir) = out {
        save_checkpoint(&out_model.best_model, &dir, None)?;
        println!("checkpoint written to {}", dir.display());
    }
    Ok(())
}
