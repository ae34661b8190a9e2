use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ConvCfg;
use crate::loss::TaskKind;

/// Pooling after a backbone layer is always 2×2 with stride 2.
pub const POOL: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub filters: usize,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub padding: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default)]
    pub pool_after: bool,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

impl LayerSpec {
    pub fn conv3(filters: usize, pool_after: bool) -> Self {
        LayerSpec {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
            dilation: 1,
            pool_after,
        }
    }

    pub fn conv_cfg(&self) -> ConvCfg {
        ConvCfg::new(self.stride, self.padding, self.dilation)
    }
}

/// Plain sequential conv stack shared by all tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl BackboneSpec {
    /// Six 3×3 layers (8, 8, 16, 16, 32, 32 filters) pooling after layers 2 and 4.
    pub fn desk() -> Self {
        BackboneSpec {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv3(8, false),
                LayerSpec::conv3(8, true),
                LayerSpec::conv3(16, false),
                LayerSpec::conv3(16, true),
                LayerSpec::conv3(32, false),
                LayerSpec::conv3(32, false),
            ],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.input_channels, |l| l.filters)
    }
}

/// Miniature dilation-pyramid head: parallel dilated 3×3 branches, channel
/// concatenation, a 1×1 projection and nearest upsampling to input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub task: TaskKind,
    pub dilations: Vec<usize>,
    pub mid_channels: usize,
    pub out_channels: usize,
}

impl HeadSpec {
    pub fn desk(task: TaskKind, classes: usize) -> Self {
        let out_channels = match task {
            TaskKind::Segmentation => classes,
            TaskKind::Depth => 1,
            TaskKind::Normals => 3,
        };
        HeadSpec {
            task,
            dilations: vec![1, 2, 4],
            mid_channels: 8,
            out_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub heads: Vec<HeadSpec>,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default)]
    pub normalization: bool,
    #[serde(default = "one")]
    pub min_filters_per_layer: usize,
}

impl ModelSpec {
    /// Desk backbone with segmentation, depth and normals heads on 32×32 inputs.
    pub fn desk(classes: usize) -> Self {
        ModelSpec {
            backbone: BackboneSpec::desk(),
            heads: vec![
                HeadSpec::desk(TaskKind::Segmentation, classes),
                HeadSpec::desk(TaskKind::Depth, classes),
                HeadSpec::desk(TaskKind::Normals, classes),
            ],
            input_height: 32,
            input_width: 32,
            normalization: false,
            min_filters_per_layer: 1,
        }
    }

    /// Three-layer, three-task miniature on 8×8 inputs, small enough for
    /// exhaustive finite-difference checks.
    pub fn tiny(classes: usize) -> Self {
        let head = |task| HeadSpec {
            dilations: vec![1, 2],
            mid_channels: 2,
            ..HeadSpec::desk(task, classes)
        };
        ModelSpec {
            backbone: BackboneSpec {
                input_channels: 3,
                layers: vec![LayerSpec::conv3(3, false), LayerSpec::conv3(3, true), LayerSpec::conv3(4, false)],
            },
            heads: vec![head(TaskKind::Segmentation), head(TaskKind::Depth), head(TaskKind::Normals)],
            input_height: 8,
            input_width: 8,
            normalization: false,
            min_filters_per_layer: 1,
        }
    }

    /// Spatial size after each backbone layer (after its optional pool).
    pub fn layer_output_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut sizes = Vec::with_capacity(self.backbone.layers.len());
        for (i, l) in self.backbone.layers.iter().enumerate() {
            let cfg = l.conv_cfg();
            let oh = cfg.out_extent(h, l.kernel);
            let ow = cfg.out_extent(w, l.kernel);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::Spec(format!("layer {i}: spatial size collapses below 1")));
            };
            (h, w) = (oh, ow);
            if l.pool_after {
                if h < POOL || w < POOL {
                    return Err(Error::Spec(format!("layer {i}: {h}x{w} too small to pool")));
                }
                (h, w) = ((h - POOL) / POOL + 1, (w - POOL) / POOL + 1);
            }
            sizes.push((h, w));
        }
        Ok(sizes)
    }

    pub fn feature_size(&self) -> Result<(usize, usize)> {
        Ok(self
            .layer_output_sizes()?
            .last()
            .copied()
            .unwrap_or((self.input_height, self.input_width)))
    }

    /// Integer nearest-neighbour factor from backbone features back to input size.
    pub fn upsample_factor(&self) -> Result<usize> {
        let (fh, fw) = self.feature_size()?;
        if self.input_height % fh != 0
            || self.input_width % fw != 0
            || self.input_height / fh != self.input_width / fw
        {
            return Err(Error::Spec(format!(
                "input {}x{} is not an integer multiple of feature map {fh}x{fw}",
                self.input_height, self.input_width
            )));
        }
        Ok(self.input_height / fh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Spec("at least one task head is required".into()));
        }
        if self.backbone.input_channels == 0 {
            return Err(Error::Spec("input_channels must be >= 1".into()));
        }
        if self.backbone.layers.is_empty() {
            return Err(Error::Spec("backbone needs at least one layer".into()));
        }
        if self.min_filters_per_layer == 0 {
            return Err(Error::Spec("min_filters_per_layer must be >= 1".into()));
        }
        for (i, l) in self.backbone.layers.iter().enumerate() {
            if l.filters == 0 || l.kernel == 0 || l.stride == 0 || l.dilation == 0 {
                return Err(Error::Spec(format!("layer {i}: filters, kernel, stride and dilation must be >= 1")));
            }
            if l.filters < self.min_filters_per_layer {
                return Err(Error::Spec(format!("layer {i}: fewer filters than the per-layer floor")));
            }
        }
        self.upsample_factor()?;
        for (i, h) in self.heads.iter().enumerate() {
            if h.dilations.is_empty() || h.dilations.contains(&0) || h.mid_channels == 0 {
                return Err(Error::Spec(format!("head {i}: needs >= 1 branch with dilation >= 1 and mid_channels >= 1")));
            }
            let ok = match h.task {
                TaskKind::Segmentation => h.out_channels >= 2,
                TaskKind::Depth => h.out_channels == 1,
                TaskKind::Normals => h.out_channels == 3,
            };
            if !ok {
                return Err(Error::Spec(format!(
                    "head {i}: {} channels invalid for {} task",
                    h.out_channels,
                    h.task.name()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_spec_is_valid() {
        let s = ModelSpec::desk(4);
        s.validate().unwrap();
        assert_eq!(s.feature_size().unwrap(), (8, 8));
        assert_eq!(s.upsample_factor().unwrap(), 4);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ModelSpec::desk(4);
        s.heads.clear();
        assert!(s.validate().is_err());

        let mut s = ModelSpec::desk(4);
        s.backbone.layers[0].filters = 0;
        assert!(s.validate().is_err());

        let mut s = ModelSpec::desk(4);
        s.input_height = 30;
        assert!(s.validate().is_err());

        let mut s = ModelSpec::desk(4);
        s.heads[1].out_channels = 2;
        assert!(s.validate().is_err());

        let mut s = ModelSpec::desk(4);
        s.input_height = 2;
        s.input_width = 2;
        assert!(s.validate().is_err());
    }
}
