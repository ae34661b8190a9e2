//! Structural filter removal and its masking counterpart.

use std::collections::BTreeSet;

use super::{FilterCoord, MtlModel};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> MtlModel<T> {
    fn victim_sets(&self, victims: &[FilterCoord]) -> Result<Vec<BTreeSet<usize>>> {
        let mut per_layer = vec![BTreeSet::new(); self.layers().len()];
        for &v in victims {
            if !self.contains(v) {
                return Err(Error::UnknownFilter {
                    layer: v.layer,
                    filter: v.filter,
                });
            }
            per_layer[v.layer].insert(v.filter);
        }
        Ok(per_layer)
    }

    /// Physically removes each victim filter: its output channel, bias and norm
    /// entries, and the matching input-channel slice of every consumer (the next
    /// backbone layer, or every head's branch convs for the last layer).
    /// Surviving weights keep their values.
    pub fn apply_prune(&self, victims: &[FilterCoord]) -> Result<MtlModel<T>> {
        let sets = self.victim_sets(victims)?;
        let floor = self.min_filters_per_layer();
        for (layer, set) in sets.iter().enumerate() {
            let remaining = self.layers()[layer].conv.weight.dim(0) - set.len();
            if !set.is_empty() && remaining < floor {
                return Err(Error::FilterFloor {
                    layer,
                    remaining,
                    floor,
                });
            }
        }
        let mut out = self.clone();
        if victims.is_empty() {
            return Ok(out);
        }
        let n_layers = sets.len();
        let (layers, heads, origin) = out.parts_mut();
        for (li, set) in sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let n = layers[li].conv.weight.dim(0);
            let keep: Vec<usize> = (0..n).filter(|f| !set.contains(f)).collect();
            let l = &mut layers[li];
            l.conv.weight = l.conv.weight.select(0, &keep)?;
            l.conv.bias = l.conv.bias.select(0, &keep)?;
            if let Some((g, b)) = &mut l.norm {
                *g = g.select(0, &keep)?;
                *b = b.select(0, &keep)?;
            }
            l.spec.filters = keep.len();
            origin[li] = keep.iter().map(|&k| origin[li][k]).collect();
            if li + 1 < n_layers {
                let next = &mut layers[li + 1].conv.weight;
                *next = next.select(1, &keep)?;
            } else {
                for h in heads.iter_mut() {
                    for br in &mut h.branches {
                        br.weight = br.weight.select(1, &keep)?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Zeroes the victims' weights, bias and norm parameters without changing shapes.
    pub fn mask_prune(&self, victims: &[FilterCoord]) -> Result<MtlModel<T>> {
        let sets = self.victim_sets(victims)?;
        let mut out = self.clone();
        let (layers, _, _) = out.parts_mut();
        for (li, set) in sets.iter().enumerate() {
            let l = &mut layers[li];
            let per_filter = l.conv.weight.numel() / l.conv.weight.dim(0);
            for &f in set {
                l.conv.weight.data_mut()[f * per_filter..(f + 1) * per_filter]
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
                l.conv.bias.data_mut()[f] = T::zero();
                if let Some((g, b)) = &mut l.norm {
                    zero_at(g, f);
                    zero_at(b, f);
                }
            }
        }
        Ok(out)
    }
}

fn zero_at<T: Scalar>(t: &mut Tensor<T>, i: usize) {
    t.data_mut()[i] = T::zero();
}
