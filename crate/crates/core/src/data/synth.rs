//! Procedural scenes of spheres, boxes and lying cylinders viewed from above
//! by an orthographic camera at height 1.
//!
//! Each pixel casts a ray straight down; the highest surface hit determines
//! the class label, the depth `1 - z` and the analytic surface normal. The
//! floor sits at `z = 0`, so background pixels have depth 1 and normal `+z`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    /// Number of classes including background.
    pub classes: usize,
    #[serde(default = "default_min_shapes")]
    pub min_shapes: usize,
    #[serde(default = "default_max_shapes")]
    pub max_shapes: usize,
    pub seed: u64,
    #[serde(default = "default_d_min")]
    pub d_min: f64,
}

fn default_min_shapes() -> usize {
    1
}

fn default_max_shapes() -> usize {
    4
}

fn default_d_min() -> f64 {
    0.1
}

impl DatasetConfig {
    /// 640 samples of 32×32 with 4 classes.
    pub fn desk(seed: u64) -> Self {
        DatasetConfig {
            n_samples: 640,
            height: 32,
            width: 32,
            classes: 4,
            min_shapes: 1,
            max_shapes: 4,
            seed,
            d_min: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: &str| Err(Error::config(format!("dataset.{field}"), msg));
        if self.n_samples == 0 {
            return err("n_samples", "must be >= 1");
        }
        if self.height == 0 || self.width == 0 {
            return err("height", "image dimensions must be >= 1");
        }
        if self.classes < 2 || self.classes > 256 {
            return err("classes", "must be in [2, 256]");
        }
        if self.min_shapes > self.max_shapes {
            return err("min_shapes", "must not exceed max_shapes");
        }
        if !(self.d_min > 0.0 && self.d_min < 0.5) {
            return err("d_min", "must be in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolidKind {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Flat-topped box rotated by `yaw` about the vertical axis.
    Box {
        center: [f64; 2],
        half: [f64; 2],
        top: f64,
        yaw: f64,
    },
    /// Cylinder lying on its side, axis horizontal at `angle`.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_len: f64,
        angle: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solid {
    pub kind: SolidKind,
    pub class: u8,
}

impl Solid {
    /// Height and unit normal of the top surface above `(x, y)`, if hit.
    fn hit(&self, x: f64, y: f64) -> Option<(f64, [f64; 3])> {
        match self.kind {
            SolidKind::Sphere { center, radius } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let d2 = dx * dx + dy * dy;
                if d2 >= radius * radius {
                    return None;
                }
                let dz = (radius * radius - d2).sqrt();
                Some((center[2] + dz, [dx / radius, dy / radius, dz / radius]))
            }
            SolidKind::Box { center, half, top, yaw } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let (s, c) = yaw.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u.abs() < half[0] && v.abs() < half[1]).then_some((top, [0.0, 0.0, 1.0]))
            }
            SolidKind::Cylinder {
                center,
                radius,
                half_len,
                angle,
            } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let (s, c) = angle.sin_cos();
                let along = c * dx + s * dy;
                let across = -s * dx + c * dy;
                if along.abs() >= half_len || across.abs() >= radius {
                    return None;
                }
                let dz = (radius * radius - across * across).sqrt();
                Some((center[2] + dz, [-s * across / radius, c * across / radius, dz / radius]))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub solids: Vec<Solid>,
}

/// One rendered sample. Planar arrays are channel-major, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    /// `[3,H,W]` in `[0,1]`.
    pub image: Vec<f32>,
    /// `[H,W]` class indices, 0 is background.
    pub seg: Vec<u8>,
    /// `[H,W]` in `[d_min, 1]`.
    pub depth: Vec<f32>,
    /// `[3,H,W]` unit vectors.
    pub normals: Vec<f32>,
}

const LIGHT: [f64; 3] = [-0.3, -0.4, 0.866_025_403_784_438_6];

fn albedo(class: u8) -> [f64; 3] {
    match class {
        0 => [0.55, 0.5, 0.45],
        1 => [0.9, 0.2, 0.2],
        2 => [0.2, 0.8, 0.3],
        3 => [0.25, 0.35, 0.9],
        c => {
            let t = c as f64 * 0.618_033_988_749_895 % 1.0;
            [t, 1.0 - t, 0.5]
        }
    }
}

/// Renders labels, depth, normals and a noise-free shaded image.
pub fn render_scene(scene: &Scene, height: usize, width: usize) -> Sample {
    let hw = height * width;
    let light_norm = LIGHT.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut s = Sample {
        height,
        width,
        image: vec![0.0; 3 * hw],
        seg: vec![0; hw],
        depth: vec![1.0; hw],
        normals: vec![0.0; 3 * hw],
    };
    for i in 0..height {
        for j in 0..width {
            let (x, y) = ((j as f64 + 0.5) / width as f64, (i as f64 + 0.5) / height as f64);
            let mut best: (f64, [f64; 3], u8) = (0.0, [0.0, 0.0, 1.0], 0);
            for solid in &scene.solids {
                if let Some((z, n)) = solid.hit(x, y) {
                    if z > best.0 {
                        best = (z, n, solid.class);
                    }
                }
            }
            let p = i * width + j;
            let (z, n, class) = best;
            s.seg[p] = class;
            s.depth[p] = (1.0 - z) as f32;
            let lambert = (n.iter().zip(LIGHT).map(|(a, b)| a * b).sum::<f64>() / light_norm).max(0.0);
            let a = albedo(class);
            for c in 0..3 {
                s.normals[c * hw + p] = n[c] as f32;
                s.image[c * hw + p] = (a[c] * (0.25 + 0.75 * lambert)) as f32;
            }
        }
    }
    s
}

fn random_scene(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Scene {
    let top_max = 1.0 - cfg.d_min;
    let n = rng.gen_range(cfg.min_shapes..=cfg.max_shapes);
    let solid_classes = (cfg.classes - 1) as u8;
    let solids = (0..n)
        .map(|_| {
            let which = rng.gen_range(0..3u8);
            let class = 1 + which % solid_classes;
            let cx = rng.gen_range(0.15..0.85);
            let cy = rng.gen_range(0.15..0.85);
            let kind = match which {
                0 => {
                    let radius: f64 = rng.gen_range(0.1..0.25);
                    let cz = rng.gen_range(0.0..(top_max - radius).min(0.5));
                    SolidKind::Sphere {
                        center: [cx, cy, cz],
                        radius,
                    }
                }
                1 => SolidKind::Box {
                    center: [cx, cy],
                    half: [rng.gen_range(0.08..0.2), rng.gen_range(0.08..0.2)],
                    top: rng.gen_range(0.15..0.7f64.min(top_max)),
                    yaw: rng.gen_range(0.0..std::f64::consts::PI),
                },
                _ => {
                    let radius: f64 = rng.gen_range(0.06..0.14);
                    SolidKind::Cylinder {
                        center: [cx, cy, rng.gen_range(0.0..(top_max - radius).min(0.5))],
                        radius,
                        half_len: rng.gen_range(0.15..0.35),
                        angle: rng.gen_range(0.0..std::f64::consts::PI),
                    }
                }
            };
            Solid { kind, class }
        })
        .collect();
    Scene { solids }
}

/// Sample `index` of the dataset; depends only on `(cfg, index)`.
pub fn generate_one(cfg: &DatasetConfig, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let scene = random_scene(cfg, &mut rng);
    let mut s = render_scene(&scene, cfg.height, cfg.width);
    for v in &mut s.image {
        *v = (*v + rng.gen_range(-0.04f32..0.04)).clamp(0.0, 1.0);
    }
    s
}

pub fn generate(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    Ok((0..cfg.n_samples).map(|i| generate_one(cfg, i)).collect())
}

/// Deterministic disjoint `(train, val)` index split covering `0..n`.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("dataset.val_fraction", "must be in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

const SPLIT_SALT: u64 = 0x5eed_5a17;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_background() {
        let s = render_scene(&Scene::default(), 8, 8);
        assert!(s.seg.iter().all(|&c| c == 0));
        assert!(s.depth.iter().all(|&d| d == 1.0));
        assert!(s.normals[..64].iter().all(|&v| v == 0.0));
        assert!(s.normals[64..128].iter().all(|&v| v == 0.0));
        assert!(s.normals[128..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sphere_top_normal_points_up() {
        // 16×16 grid: pixel (8, 8) has center (8.5/16, 8.5/16)
        let c = 8.5 / 16.0;
        let scene = Scene {
            solids: vec![Solid {
                kind: SolidKind::Sphere {
                    center: [c, c, 0.2],
                    radius: 0.3,
                },
                class: 1,
            }],
        };
        let s = render_scene(&scene, 16, 16);
        let p = 8 * 16 + 8;
        let n = [s.normals[p], s.normals[256 + p], s.normals[512 + p]];
        assert!(n[0].abs() < 1e-3 && n[1].abs() < 1e-3 && (n[2] - 1.0).abs() < 1e-3, "{n:?}");
        assert_eq!(s.seg[p], 1);
        assert!((s.depth[p] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn split_partitions() {
        let (train, val) = split(100, 0.2, 3).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split(100, 0.2, 3).unwrap(), (train, val));
        assert!(split(10, 0.0, 1).is_err());
        assert!(split(10, 1.0, 1).is_err());
    }
}
