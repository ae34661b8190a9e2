//! End-to-end experiment: base training, iterative pruning with CosPrune and
//! Taylor from the same base model, and the matched-size comparison report.
//!
//! ```text
//! cargo run --release --example compare_criteria -- [out_dir]
//! ```

use std::path::PathBuf;

use cosprune::experiment::{cmd_prune, cmd_report, cmd_train, Aggregate, CriterionKind, ExperimentConfig, PAIR_TOLERANCE};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cosprune-compare"));
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"seed": 7, "output_dir": {out:?},
            "dataset": {{"n_samples": 200}},
            "train": {{"epochs": 8, "batch_size": 8, "eta0": 3e-3}},
            "prune": {{"max_events": 6, "repetitions": 2}}}}"#
    ))?;

    let base = cmd_train(&cfg)?;
    println!("base: epoch {}, pixel accuracy {:.4}", base.best_epoch, base.best.metrics.pixel_accuracy);

    let mut runs = Vec::new();
    for kind in [CriterionKind::TaylorSquared, CriterionKind::Cosprune] {
        cfg.prune.criterion = kind;
        let s = cmd_prune(&cfg)?;
        for r in &s.repetitions {
            let last = r.levels.last().expect("base level");
            println!(
                "{:>14} rep {}: params {} -> {}, pixel accuracy {:.4}",
                s.criterion.name(),
                r.repetition,
                r.levels[0].params,
                last.params,
                last.metrics.pixel_accuracy
            );
        }
        runs.push(s.dir);
    }

    // victims differ between criteria, so sizes only roughly line up
    let report = cmd_report(&runs, &out.join("report"), Aggregate::Best, 5.0 * PAIR_TOLERANCE)?;
    print!("\n{}", report.text.split("\n\n").take(3).collect::<Vec<_>>().join("\n\n"));
    println!("\nfull report: {}", report.csv_path.display());
    Ok(())
}
