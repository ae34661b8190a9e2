//! On-disk dataset: `manifest.json` plus one little-endian blob per field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetConfig, Sample};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub val_fraction: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub images: BlobInfo,
    pub seg: BlobInfo,
    pub depth: BlobInfo,
    pub normals: BlobInfo,
    /// Hex SHA-256 over the four blobs in field order.
    pub checksum: String,
}

/// A dataset with its deterministic split.
#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub checksum: String,
}

fn f32_bytes<'a>(vals: impl Iterator<Item = &'a f32>) -> Vec<u8> {
    vals.flat_map(|v| v.to_le_bytes()).collect()
}

fn blobs(samples: &[Sample]) -> [Vec<u8>; 4] {
    [
        f32_bytes(samples.iter().flat_map(|s| s.image.iter())),
        samples.iter().flat_map(|s| s.seg.iter().copied()).collect(),
        f32_bytes(samples.iter().flat_map(|s| s.depth.iter())),
        f32_bytes(samples.iter().flat_map(|s| s.normals.iter())),
    ]
}

/// Hex SHA-256 over all sample fields, independent of storage.
pub fn dataset_checksum(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for b in blobs(samples) {
        h.update(&b);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_dataset(
    dir: &Path,
    cfg: &DatasetConfig,
    samples: &[Sample],
    val_fraction: f64,
    train: &[usize],
    val: &[usize],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let (n, h, w) = (samples.len(), cfg.height, cfg.width);
    let names = ["images.bin", "seg.bin", "depth.bin", "normals.bin"];
    let data = blobs(samples);
    for (name, bytes) in names.iter().zip(&data) {
        fs::write(dir.join(name), bytes)?;
    }
    let blob = |i: usize, dtype: &str, shape: Vec<usize>| BlobInfo {
        file: names[i].to_string(),
        dtype: dtype.to_string(),
        shape,
    };
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config: cfg.clone(),
        val_fraction,
        train: train.to_vec(),
        val: val.to_vec(),
        images: blob(0, "f32le", vec![n, 3, h, w]),
        seg: blob(1, "u8", vec![n, h, w]),
        depth: blob(2, "f32le", vec![n, 1, h, w]),
        normals: blob(3, "f32le", vec![n, 3, h, w]),
        checksum: dataset_checksum(samples),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_blob(dir: &Path, info: &BlobInfo, elem: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(&info.file))?;
    let want = info.shape.iter().product::<usize>() * elem;
    if bytes.len() != want {
        return Err(Error::Checkpoint {
            path: dir.join(&info.file),
            msg: format!("{} bytes, expected {want}", bytes.len()),
        });
    }
    Ok(bytes)
}

fn to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<(StoredDataset, DatasetManifest)> {
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            msg: format!("unsupported dataset format {}", m.format_version),
        });
    }
    let (n, h, w) = (m.images.shape[0], m.images.shape[2], m.images.shape[3]);
    let hw = h * w;
    let images = to_f32(&read_blob(dir, &m.images, 4)?);
    let seg = read_blob(dir, &m.seg, 1)?;
    let depth = to_f32(&read_blob(dir, &m.depth, 4)?);
    let normals = to_f32(&read_blob(dir, &m.normals, 4)?);
    let samples: Vec<Sample> = (0..n)
        .map(|i| Sample {
            height: h,
            width: w,
            image: images[i * 3 * hw..(i + 1) * 3 * hw].to_vec(),
            seg: seg[i * hw..(i + 1) * hw].to_vec(),
            depth: depth[i * hw..(i + 1) * hw].to_vec(),
            normals: normals[i * 3 * hw..(i + 1) * 3 * hw].to_vec(),
        })
        .collect();
    let checksum = dataset_checksum(&samples);
    if checksum != m.checksum {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            msg: "dataset checksum mismatch".into(),
        });
    }
    Ok((
        StoredDataset {
            samples,
            train: m.train.clone(),
            val: m.val.clone(),
            checksum,
        },
        m,
    ))
}
