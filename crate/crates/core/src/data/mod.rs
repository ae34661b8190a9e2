//! Synthetic multi-task data: generation, splitting, batching and on-disk storage.

mod store;
mod synth;

pub use store::{dataset_checksum, load_dataset, save_dataset, DatasetManifest, StoredDataset};
pub use synth::{generate, generate_one, render_scene, split, DatasetConfig, Sample, Scene, Solid, SolidKind};

use crate::loss::{TaskKind, TaskTarget};
use crate::tensor::{Scalar, Tensor};

/// Labels for all three tasks over a batch of images.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[N,3,H,W]`
    pub images: Tensor<T>,
    /// `N*H*W` class indices.
    pub seg: Vec<usize>,
    /// `[N,1,H,W]`
    pub depth: Tensor<T>,
    /// `[N,3,H,W]`
    pub normals: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target(&self, kind: TaskKind) -> TaskTarget<T> {
        match kind {
            TaskKind::Segmentation => TaskTarget::Segmentation(self.seg.clone()),
            TaskKind::Depth => TaskTarget::Depth(self.depth.clone()),
            TaskKind::Normals => TaskTarget::Normals(self.normals.clone()),
        }
    }

    /// Stacks the given samples (in order) into one batch.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        assert!(!samples.is_empty(), "batch needs at least one sample");
        let (h, w) = (samples[0].height, samples[0].width);
        let n = samples.len();
        let cast = |v: &[f32]| v.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<T>>();
        let mut images = Vec::with_capacity(n * 3 * h * w);
        let mut seg = Vec::with_capacity(n * h * w);
        let mut depth = Vec::with_capacity(n * h * w);
        let mut normals = Vec::with_capacity(n * 3 * h * w);
        for s in &samples {
            images.extend(cast(&s.image));
            seg.extend(s.seg.iter().map(|&c| c as usize));
            depth.extend(cast(&s.depth));
            normals.extend(cast(&s.normals));
        }
        Batch {
            images: Tensor::new(vec![n, 3, h, w], images).expect("image batch"),
            seg,
            depth: Tensor::new(vec![n, 1, h, w], depth).expect("depth batch"),
            normals: Tensor::new(vec![n, 3, h, w], normals).expect("normals batch"),
        }
    }
}

/// Consecutive batches of `batch_size` over `order` (last batch may be short).
pub fn batches<'a, T: Scalar>(
    samples: &'a [Sample],
    order: &'a [usize],
    batch_size: usize,
) -> impl Iterator<Item = Batch<T>> + 'a {
    order
        .chunks(batch_size.max(1))
        .map(move |idx| Batch::from_samples(idx.iter().map(|&i| &samples[i])))
}
