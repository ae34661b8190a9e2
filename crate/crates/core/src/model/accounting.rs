//! Parameter and FLOP accounting.
//!
//! `count_params` sums the stored tensors; [`removed_params`] predicts the
//! effect of a prune purely from filter counts, so the two can check each other.

use serde::{Deserialize, Serialize};

use super::{FilterCoord, ModelSpec, MtlModel};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub heads: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub backbone: u64,
    pub heads: u64,
    pub total: u64,
}

/// Weights plus bias of a `k×k` conv from `cin` to `cout` channels.
pub fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    k * k * cin * cout + cout
}

/// Multiply-add FLOPs `2·k²·c_in·c_out·H_out·W_out` of one conv.
pub fn conv_flops(cin: usize, cout: usize, k: usize, h_out: usize, w_out: usize) -> u64 {
    2 * (k * k * cin * cout * h_out * w_out) as u64
}

/// Closed-form parameter count of `spec` when backbone layer `i` has `counts[i]` filters.
pub fn params_for_counts(spec: &ModelSpec, counts: &[usize]) -> ParamCounts {
    let norm = if spec.normalization { 2 } else { 0 };
    let mut cin = spec.backbone.input_channels;
    let mut backbone = 0;
    for (l, &c) in spec.backbone.layers.iter().zip(counts) {
        backbone += conv_params(cin, c, l.kernel) + norm * c;
        cin = c;
    }
    let heads = spec
        .heads
        .iter()
        .map(|h| h.dilations.len() * conv_params(cin, h.mid_channels, 3) + conv_params(h.mid_channels * h.dilations.len(), h.out_channels, 1))
        .sum();
    ParamCounts {
        backbone,
        heads,
        total: backbone + heads,
    }
}

/// Parameters a prune of `victims` removes, computed from filter counts alone.
pub fn removed_params<T: Scalar>(model: &MtlModel<T>, victims: &[FilterCoord]) -> Result<usize> {
    let before = model.alive_counts();
    let mut after = before.clone();
    let mut seen = std::collections::BTreeSet::new();
    for &v in victims {
        if !model.contains(v) {
            return Err(Error::UnknownFilter {
                layer: v.layer,
                filter: v.filter,
            });
        }
        if seen.insert(v) {
            after[v.layer] -= 1;
        }
    }
    let spec = model.spec();
    Ok(params_for_counts(spec, &before).total - params_for_counts(spec, &after).total)
}

impl<T: Scalar> MtlModel<T> {
    /// Exact count over stored tensors.
    pub fn count_params(&self) -> ParamCounts {
        let params = self.params();
        let split = self.backbone_param_tensors();
        let backbone = params[..split].iter().map(|p| p.numel()).sum();
        let heads = params[split..].iter().map(|p| p.numel()).sum();
        ParamCounts {
            backbone,
            heads,
            total: backbone + heads,
        }
    }

    /// Per-sample conv FLOPs for an `h×w` input.
    pub fn count_flops(&self, h: usize, w: usize) -> Result<FlopCounts> {
        let mut spec = self.current_spec();
        spec.input_height = h;
        spec.input_width = w;
        let sizes = spec.layer_output_sizes()?;
        let mut backbone = 0;
        let (mut ih, mut iw) = (h, w);
        let mut cin = spec.backbone.input_channels;
        for (l, &(ph, pw)) in spec.backbone.layers.iter().zip(&sizes) {
            let cfg = l.conv_cfg();
            let oh = cfg.out_extent(ih, l.kernel).expect("validated sizes");
            let ow = cfg.out_extent(iw, l.kernel).expect("validated sizes");
            backbone += conv_flops(cin, l.filters, l.kernel, oh, ow);
            (ih, iw) = (ph, pw);
            cin = l.filters;
        }
        let heads = self
            .heads()
            .iter()
            .map(|h| {
                let nb = h.branches.len();
                nb as u64 * conv_flops(cin, h.spec.mid_channels, 3, ih, iw)
                    + conv_flops(h.spec.mid_channels * nb, h.spec.out_channels, 1, ih, iw)
            })
            .sum();
        Ok(FlopCounts {
            backbone,
            heads,
            total: backbone + heads,
        })
    }
}
