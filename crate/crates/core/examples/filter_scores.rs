//! Scores every backbone filter on one batch with CosPrune (summed pairwise
//! cosine similarity of per-task gradients) and with Taylor importance, and
//! shows where the two rankings agree.

use std::collections::BTreeSet;

use cosprune::data::{generate, Batch, DatasetConfig};
use cosprune::model::{FilterCoord, ModelSpec, MtlModel};
use cosprune::pruning::{batch_scores, Criterion};
use cosprune::train::BatchGrads;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lowest(scores: &std::collections::BTreeMap<FilterCoord, f64>, k: usize) -> Vec<(FilterCoord, f64)> {
    let mut v: Vec<_> = scores.iter().map(|(&c, &s)| (c, s)).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

fn main() -> anyhow::Result<()> {
    let samples = generate(&DatasetConfig {
        n_samples: 16,
        ..DatasetConfig::desk(2)
    })?;
    let batch = Batch::<f32>::from_samples(&samples);
    let model = MtlModel::<f32>::build(&ModelSpec::desk(4), 2)?;

    let (losses, total) = model.total_gradients(&batch)?;
    let grads = BatchGrads {
        losses,
        total,
        per_task: Some(model.task_gradients(&batch)?),
    };
    println!("task losses {:?}", grads.losses);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cos = batch_scores(&Criterion::cosprune(), &model, &grads, &mut rng)?;
    let taylor = batch_scores(&Criterion::TaylorSquared, &model, &grads, &mut rng)?;

    for layer in 0..model.layers().len() {
        let vals: Vec<f64> = cos.iter().filter(|(c, _)| c.layer == layer).map(|(_, &s)| s).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        println!("layer {layer}: {:2} filters, cosprune mean {mean:+.3}, min {min:+.3}", vals.len());
    }

    let k = 8;
    let a = lowest(&cos, k);
    let b = lowest(&taylor, k);
    println!("\nlowest {k} by cosprune (most conflicting):");
    for (c, s) in &a {
        println!("  ({}, {:2}) {s:+.4}", c.layer, c.filter);
    }
    println!("lowest {k} by taylor (least important):");
    for (c, s) in &b {
        println!("  ({}, {:2}) {s:.3e}", c.layer, c.filter);
    }
    let sa: BTreeSet<_> = a.iter().map(|x| x.0).collect();
    let sb: BTreeSet<_> = b.iter().map(|x| x.0).collect();
    println!("overlap: {} of {k}", sa.intersection(&sb).count());
    Ok(())
}
