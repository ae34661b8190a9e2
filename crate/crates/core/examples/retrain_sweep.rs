//! Retrains a pruned architecture from random initialization once per
//! learning rate and keeps the best run.

use cosprune::data::{generate, split, DatasetConfig};
use cosprune::model::{FilterCoord, ModelSpec, MtlModel};
use cosprune::train::{retrain_from_scratch, BestModelPolicy, OptimizerConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(6);

    // a pruned architecture: only the filter counts matter, weights are re-drawn
    let full = MtlModel::<f32>::build(&ModelSpec::desk(4), 0)?;
    let victims: Vec<FilterCoord> = (0..12).map(|f| FilterCoord::new(5, f)).chain((0..6).map(|f| FilterCoord::new(3, f))).collect();
    let arch = full.apply_prune(&victims)?.current_spec();
    println!("architecture filters {:?}", arch.backbone.layers.iter().map(|l| l.filters).collect::<Vec<_>>());

    let samples = generate(&DatasetConfig {
        n_samples: 200,
        ..DatasetConfig::desk(5)
    })?;
    let (train_idx, val_idx) = split(samples.len(), 0.2, 5)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(),
        eta0: 3e-3,
        eta_min: 0.0,
        shuffle_seed: 5,
    };
    let lrs = [3e-3, 1e-3, 3e-4];
    let out = retrain_from_scratch::<f32>(&arch, &samples, &train_idx, &val_idx, &cfg, &lrs, 5, BestModelPolicy::PixelAccuracy)?;
    for (i, r) in out.runs.iter().enumerate() {
        let mark = if i == out.best { "  <- chosen" } else { "" };
        println!("lr {:.0e}: best epoch {}, pixel accuracy {:.4}{mark}", r.lr, r.best_epoch, r.best_value);
    }
    println!("params {}", out.best_model.count_params().total);
    Ok(())
}
