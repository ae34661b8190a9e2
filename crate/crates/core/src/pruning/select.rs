use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{FilterCoord, MtlModel};
use crate::tensor::Scalar;

/// Running sums of per-batch importance scores, keyed by alive filter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportanceAccumulator {
    pub scores: BTreeMap<FilterCoord, f64>,
    pub batches_seen: usize,
}

impl ImportanceAccumulator {
    pub fn new<T: Scalar>(model: &MtlModel<T>) -> Self {
        let mut acc = ImportanceAccumulator::default();
        acc.reset(model);
        acc
    }

    /// Zeroes every score and re-keys to the model's current alive filters.
    pub fn reset<T: Scalar>(&mut self, model: &MtlModel<T>) {
        self.scores = model.filters().into_iter().map(|c| (c, 0.0)).collect();
        self.batches_seen = 0;
    }

    pub fn is_zero(&self) -> bool {
        self.batches_seen == 0 && self.scores.values().all(|&s| s == 0.0)
    }

    /// Adds one batch's signed scores; the key sets must match exactly.
    pub fn accumulate(&mut self, batch: &BTreeMap<FilterCoord, f64>) -> Result<()> {
        if batch.len() != self.scores.len() || !batch.keys().eq(self.scores.keys()) {
            let missing = self.scores.keys().find(|k| !batch.contains_key(k));
            let extra = batch.keys().find(|k| !self.scores.contains_key(k));
            return Err(Error::KeyMismatch(format!(
                "{} accumulated vs {} scored filters (first missing {missing:?}, first unexpected {extra:?})",
                self.scores.len(),
                batch.len()
            )));
        }
        for (s, b) in self.scores.values_mut().zip(batch.values()) {
            *s += b;
        }
        self.batches_seen += 1;
        Ok(())
    }
}

/// The `p` lowest-scored filters, ties by coordinate, skipping any filter whose
/// removal would take its layer below the model's floor.
pub fn select_victims<T: Scalar>(acc: &ImportanceAccumulator, p: usize, model: &MtlModel<T>) -> Result<Vec<FilterCoord>> {
    if p == 0 {
        return Err(Error::invalid("select_victims", "P must be >= 1"));
    }
    let floor = model.min_filters_per_layer();
    let mut alive = model.alive_counts();
    let mut ranked: Vec<(f64, FilterCoord)> = acc.scores.iter().map(|(&c, &s)| (s, c)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut victims = Vec::with_capacity(p);
    for (_, c) in ranked {
        if victims.len() == p {
            break;
        }
        if !model.contains(c) {
            return Err(Error::UnknownFilter {
                layer: c.layer,
                filter: c.filter,
            });
        }
        if alive[c.layer] > floor {
            alive[c.layer] -= 1;
            victims.push(c);
        }
    }
    if victims.len() < p {
        return Err(Error::NotEnoughFilters {
            available: victims.len(),
            requested: p,
        });
    }
    Ok(victims)
}

/// How many filters could be removed in total without breaching the floor.
pub fn removable_filters<T: Scalar>(model: &MtlModel<T>) -> usize {
    let floor = model.min_filters_per_layer();
    model.alive_counts().iter().map(|&n| n.saturating_sub(floor)).sum()
}
