use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pruning::{Criterion, PairMode, PruneConfig, StopRule};
use crate::train::{BestModelPolicy, OptimizerConfig, TrainConfig};

/// Environment variable that replaces `output_dir` as the output root.
pub const OUT_ENV: &str = "COSPRUNE_OUT";

/// One experiment: dataset, architecture, base training, pruning and the
/// retraining sweep. Every random stream is derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSection,
    /// Defaults to the desk architecture for the dataset's class count.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub retrain: RetrainSection,
    #[serde(default)]
    pub policy: BestModelPolicy,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Existing dataset directory; when absent the dataset lives under `<out>/data`.
    pub dir: Option<PathBuf>,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub d_min: f64,
    pub val_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::desk(0);
        DatasetSection {
            dir: None,
            n_samples: d.n_samples,
            height: d.height,
            width: d.width,
            classes: d.classes,
            min_shapes: d.min_shapes,
            max_shapes: d.max_shapes,
            d_min: d.d_min,
            val_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eta0: f64,
    pub eta_min: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(),
            eta0: 1e-3,
            eta_min: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Cosprune,
    TaylorSquared,
    TaylorRaw,
    Random,
}

impl CriterionKind {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub criterion: CriterionKind,
    pub pairs: PairMode,
    pub filters_per_event: usize,
    pub accumulation_epochs: usize,
    pub stop: StopRule,
    pub max_events: Option<usize>,
    pub min_filters_per_layer: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eta0: f64,
    pub eta_min: f64,
    pub schedule_epochs: Option<usize>,
    /// Independent repetitions of the prune run from the same base model.
    pub repetitions: usize,
    /// Train the base model first when no base checkpoint exists.
    pub from_scratch: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            criterion: CriterionKind::Cosprune,
            pairs: PairMode::Unordered,
            filters_per_event: 4,
            accumulation_epochs: 1,
            stop: StopRule::BackboneReduction { fraction: 0.6 },
            max_events: None,
            min_filters_per_layer: 1,
            batch_size: 16,
            optimizer: OptimizerConfig::adamw(1e-2),
            eta0: 1e-4,
            eta_min: 0.0,
            schedule_epochs: None,
            repetitions: 1,
            from_scratch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainSection {
    pub lr_sweep: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eta_min: f64,
}

impl Default for RetrainSection {
    fn default() -> Self {
        RetrainSection {
            lr_sweep: vec![1e-3, 5e-4, 1e-4],
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(),
            eta_min: 0.0,
        }
    }
}

/// Stable 64-bit seed for one named random stream.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl ExperimentConfig {
    /// Parses and validates a JSON config, reporting field paths on failure.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<(String, String)> = Vec::new();
        let mut push = |r: Result<()>| match r {
            Err(Error::Config { path, msg }) => errs.push((path, msg)),
            Err(e) => errs.push(("?".into(), e.to_string())),
            Ok(()) => {}
        };
        let d = &self.dataset;
        push(self.dataset_config().validate());
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            push(Err(Error::config("dataset.val_fraction", "must lie in (0, 1)")));
        }
        match self.model_spec() {
            Ok(spec) => {
                if spec.input_height != d.height || spec.input_width != d.width {
                    push(Err(Error::config("model.input_height", "must match the dataset image size")));
                }
            }
            Err(e) => push(Err(Error::config("model", e.to_string()))),
        }
        push(self.train_config().validate("train"));
        push(self.prune_config(0).validate("prune"));
        if self.prune.repetitions == 0 {
            push(Err(Error::config("prune.repetitions", "must be >= 1")));
        }
        if self.prune.min_filters_per_layer == 0 {
            push(Err(Error::config("prune.min_filters_per_layer", "must be >= 1")));
        }
        let r = &self.retrain;
        if r.lr_sweep.is_empty() {
            push(Err(Error::config("retrain.lr_sweep", "must contain at least one learning rate")));
        }
        for (i, lr) in r.lr_sweep.iter().enumerate() {
            if !(*lr > 0.0 && lr.is_finite()) {
                push(Err(Error::config(format!("retrain.lr_sweep[{i}]"), "must be a positive number")));
            }
        }
        if r.epochs == 0 {
            push(Err(Error::config("retrain.epochs", "must be >= 1")));
        }
        if r.batch_size == 0 {
            push(Err(Error::config("retrain.batch_size", "must be >= 1")));
        }
        match errs.len() {
            0 => Ok(()),
            1 => {
                let (path, msg) = errs.remove(0);
                Err(Error::Config { path, msg })
            }
            _ => Err(Error::ConfigList(errs)),
        }
    }

    /// Output root: the environment override if set, else `output_dir`.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dataset.dir.clone().unwrap_or_else(|| self.out_dir().join("data"))
    }

    pub fn base_dir(&self) -> PathBuf {
        self.out_dir().join("base")
    }

    pub fn prune_dir(&self) -> PathBuf {
        self.out_dir().join(format!("prune-{}", self.criterion().name()))
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            n_samples: d.n_samples,
            height: d.height,
            width: d.width,
            classes: d.classes,
            min_shapes: d.min_shapes,
            max_shapes: d.max_shapes,
            seed: derive_seed(self.seed, "dataset", 0),
            d_min: d.d_min,
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split", 0)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = match &self.model {
            Some(s) => s.clone(),
            None => {
                let mut s = ModelSpec::desk(self.dataset.classes);
                s.input_height = self.dataset.height;
                s.input_width = self.dataset.width;
                s
            }
        };
        spec.min_filters_per_layer = self.prune.min_filters_per_layer;
        spec.validate()?;
        Ok(spec)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init", 0)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            eta0: t.eta0,
            eta_min: t.eta_min,
            shuffle_seed: derive_seed(self.seed, "train-shuffle", 0),
        }
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion_for(0)
    }

    fn criterion_for(&self, repetition: u64) -> Criterion {
        match self.prune.criterion {
            CriterionKind::Cosprune => Criterion::Cosprune { pairs: self.prune.pairs },
            CriterionKind::TaylorSquared => Criterion::TaylorSquared,
            CriterionKind::TaylorRaw => Criterion::TaylorRaw,
            CriterionKind::Random => Criterion::Random {
                seed: derive_seed(self.seed, "random-criterion", repetition),
            },
        }
    }

    pub fn prune_config(&self, repetition: u64) -> PruneConfig {
        let p = &self.prune;
        PruneConfig {
            criterion: self.criterion_for(repetition),
            filters_per_event: p.filters_per_event,
            accumulation_epochs: p.accumulation_epochs,
            stop: p.stop,
            max_events: p.max_events,
            batch_size: p.batch_size,
            optimizer: p.optimizer,
            eta0: p.eta0,
            eta_min: p.eta_min,
            schedule_epochs: p.schedule_epochs,
            shuffle_seed: derive_seed(self.seed, "prune-shuffle", repetition),
        }
    }

    /// Per-run config for the retraining sweep (`eta0` is replaced per learning rate).
    pub fn retrain_config(&self) -> TrainConfig {
        let r = &self.retrain;
        TrainConfig {
            epochs: r.epochs,
            batch_size: r.batch_size,
            optimizer: r.optimizer,
            eta0: r.lr_sweep.first().copied().unwrap_or(1e-3),
            eta_min: r.eta_min,
            shuffle_seed: derive_seed(self.seed, "retrain-shuffle", 0),
        }
    }

    pub fn retrain_seed(&self) -> u64 {
        derive_seed(self.seed, "retrain-init", 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.dataset.n_samples, 640);
        assert_eq!(c.retrain.lr_sweep, vec![1e-3, 5e-4, 1e-4]);
        assert_eq!(c.prune_config(0).eta0, 1e-4);
        assert_eq!(c.model_spec().unwrap(), ModelSpec::desk(4));
    }

    #[test]
    fn unknown_field_reports_path() {
        let e = ExperimentConfig::from_json(r#"{"seed": 1, "prune": {"filters": 3}}"#).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("prune"), "{e}");
    }

    #[test]
    fn all_violations_listed() {
        let e = ExperimentConfig::from_json(
            r#"{"seed": 1, "train": {"epochs": 0}, "retrain": {"lr_sweep": [0.001, -1.0]}, "dataset": {"val_fraction": 1.5}}"#,
        )
        .unwrap_err();
        let s = e.to_string();
        for p in ["train.epochs", "retrain.lr_sweep[1]", "dataset.val_fraction"] {
            assert!(s.contains(p), "{p} missing from {s}");
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(9, "x", 2), derive_seed(9, "x", 2));
    }
}
