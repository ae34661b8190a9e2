use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::FilterCoord;

/// Size and quality of one model along the pruning trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneLevel {
    pub params: usize,
    pub backbone_params: usize,
    pub flops: u64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    /// 1-based event number.
    pub step: usize,
    /// Victims in current (pre-removal) coordinates, rank order.
    pub victims: Vec<FilterCoord>,
    /// The same victims as indices into the unpruned layer.
    pub victims_original: Vec<FilterCoord>,
    pub params_after: usize,
    pub backbone_params_after: usize,
    pub flops_after: u64,
    /// Validation metrics after the fine-tune window that follows the event.
    pub metrics: Option<MetricsReport>,
}

impl PruneEvent {
    pub fn level(&self) -> Option<PruneLevel> {
        Some(PruneLevel {
            params: self.params_after,
            backbone_params: self.backbone_params_after,
            flops: self.flops_after,
            metrics: self.metrics?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneHistory {
    pub events: Vec<PruneEvent>,
}

impl PruneHistory {
    /// Checks that every event shrinks the model.
    pub fn check(&self) -> Result<()> {
        for w in self.events.windows(2) {
            if w[1].params_after >= w[0].params_after {
                return Err(Error::invalid(
                    "prune_history",
                    format!("params not strictly decreasing at step {}", w[1].step),
                ));
            }
        }
        Ok(())
    }

    pub fn victim_sequence(&self) -> Vec<Vec<FilterCoord>> {
        self.events.iter().map(|e| e.victims_original.clone()).collect()
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path)?;
        let mut events = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                events.push(serde_json::from_str(&line)?);
            }
        }
        let h = PruneHistory { events };
        h.check()?;
        Ok(h)
    }
}
