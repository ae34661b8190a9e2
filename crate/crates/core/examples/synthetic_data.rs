//! Generates the synthetic segmentation/depth/normals dataset and summarizes it.
//!
//! ```text
//! cargo run --release --example synthetic_data -- [n_samples] [out_dir]
//! ```

use std::path::PathBuf;

use cosprune::data::{generate, save_dataset, split, DatasetConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);
    let out: Option<PathBuf> = args.next().map(PathBuf::from);

    let cfg = DatasetConfig {
        n_samples: n,
        ..DatasetConfig::desk(0)
    };
    let samples = generate(&cfg)?;

    let mut class_pixels = vec![0usize; cfg.classes];
    let (mut dmin, mut dmax) = (f32::MAX, f32::MIN);
    for s in &samples {
        for &c in &s.seg {
            class_pixels[c as usize] += 1;
        }
        for &d in &s.depth {
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    let total: usize = class_pixels.iter().sum();
    println!("{n} samples of {}x{}, {} classes", cfg.height, cfg.width, cfg.classes);
    for (c, px) in class_pixels.iter().enumerate() {
        println!("  class {c}: {:5.1}% of pixels", 100.0 * *px as f64 / total as f64);
    }
    println!("  depth range [{dmin:.3}, {dmax:.3}]");

    if let Some(dir) = out {
        let (train, val) = split(n, 0.2, 0)?;
        let manifest = save_dataset(&dir, &cfg, &samples, 0.2, &train, &val)?;
        println!("saved to {} (checksum {})", dir.display(), manifest.checksum);
    }
    Ok(())
}
