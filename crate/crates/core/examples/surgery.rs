//! Structured filter removal: parameter and FLOP accounting before and after,
//! and equivalence with zero-masking the same filters.

use cosprune::data::{generate, Batch, DatasetConfig};
use cosprune::model::{removed_params, FilterCoord, ModelSpec, MtlModel};

fn main() -> anyhow::Result<()> {
    let spec = ModelSpec::desk(4);
    let model = MtlModel::<f32>::build(&spec, 3)?;
    let victims = vec![
        FilterCoord::new(0, 2),
        FilterCoord::new(2, 5),
        FilterCoord::new(2, 11),
        FilterCoord::new(5, 0),
        FilterCoord::new(5, 31),
    ];
    let pruned = model.apply_prune(&victims)?;

    let (h, w) = (spec.input_height, spec.input_width);
    let (p0, p1) = (model.count_params(), pruned.count_params());
    let (f0, f1) = (model.count_flops(h, w)?, pruned.count_flops(h, w)?);
    println!("alive filters {:?} -> {:?}", model.alive_counts(), pruned.alive_counts());
    println!("params   {:>8} -> {:>8} (backbone {} -> {})", p0.total, p1.total, p0.backbone, p1.backbone);
    println!("flops    {:>8} -> {:>8}", f0.total, f1.total);
    println!("closed-form removal {} vs recount {}", removed_params(&model, &victims)?, p0.total - p1.total);
    println!("surviving original indices in layer 2: {:?}", pruned.origin()[2]);

    let samples = generate(&DatasetConfig {
        n_samples: 4,
        ..DatasetConfig::desk(3)
    })?;
    let images = Batch::<f32>::from_samples(&samples).images;
    let a = pruned.forward_all(&images)?;
    let b = model.mask_prune(&victims)?.forward_all(&images)?;
    for (task, (x, y)) in ["segmentation", "depth", "normals"].iter().zip(a.iter().zip(&b)) {
        println!("{task:>12}: shape {:?}, max |removed - masked| = {:.2e}", x.shape(), x.max_abs_diff(y));
    }
    Ok(())
}
