//! Iterative prune / fine-tune loop: accumulate filter scores while
//! fine-tuning, remove the lowest-scored filters, rewind the learning rate,
//! repeat.
//!
//! ```text
//! cargo run --release --example iterative_prune -- [cosprune|taylor_squared|taylor_raw|random] [events]
//! ```

use cosprune::data::{generate, split, DatasetConfig};
use cosprune::model::{ModelSpec, MtlModel};
use cosprune::pruning::{run_iterative, Criterion, PruneConfig, StopRule};
use cosprune::train::{train, BestModelPolicy, OptimizerConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let criterion = match args.next().as_deref().unwrap_or("cosprune") {
        "cosprune" => Criterion::cosprune(),
        "taylor_squared" => Criterion::TaylorSquared,
        "taylor_raw" => Criterion::TaylorRaw,
        "random" => Criterion::Random { seed: 0 },
        other => anyhow::bail!("unknown criterion {other}"),
    };
    let events: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(6);

    let samples = generate(&DatasetConfig {
        n_samples: 240,
        ..DatasetConfig::desk(4)
    })?;
    let (train_idx, val_idx) = split(samples.len(), 0.2, 4)?;
    let base_cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(),
        eta0: 3e-3,
        eta_min: 0.0,
        shuffle_seed: 4,
    };
    let base = train(
        MtlModel::<f32>::build(&ModelSpec::desk(4), 4)?,
        &samples,
        &train_idx,
        &val_idx,
        &base_cfg,
        BestModelPolicy::PixelAccuracy,
    )?;
    println!("base model trained (best epoch {})", base.best_epoch);

    let mut cfg = PruneConfig::new(criterion, 4, 1, StopRule::BackboneReduction { fraction: 0.6 });
    cfg.max_events = Some(events);
    let outcome = run_iterative(base.best_model, &samples, &train_idx, &val_idx, &cfg, |probe| {
        let v: Vec<String> = probe.event.victims_original.iter().map(|c| format!("{}:{}", c.layer, c.filter)).collect();
        println!(
            "event {:2}: removed [{}], params {}, lr rewound to {:.0e}",
            probe.event.step,
            v.join(" "),
            probe.event.params_after,
            probe.lr
        );
        Ok(())
    })?;

    println!("\n{} curve:", criterion.name());
    println!("  params  backbone   pix_acc  abs_err  angle");
    for l in outcome.levels() {
        println!(
            "{:8} {:9} {:9.4} {:8.4} {:6.2}",
            l.params, l.backbone_params, l.metrics.pixel_accuracy, l.metrics.depth_abs_err, l.metrics.angle_mean_deg
        );
    }
    println!("final alive filters per layer {:?}", outcome.model.alive_counts());
    Ok(())
}
