use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_scores, removable_filters, select_victims, Criterion, ImportanceAccumulator};
use super::{PruneEvent, PruneHistory, PruneLevel};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{params_for_counts, FilterCoord, MtlModel};
use crate::tensor::Scalar;
use crate::train::{evaluate, rewind, CosineSchedule, OptimizerConfig, Trainer};

/// When the prune loop ends (checked before every event).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopRule {
    /// Prune while more than `filters` backbone filters are alive.
    MinAliveFilters { filters: usize },
    /// Prune while the total parameter count exceeds `params`.
    TargetParams { params: usize },
    /// Prune until the backbone has lost at least `fraction` of its unpruned parameters.
    BackboneReduction { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub criterion: Criterion,
    /// Filters removed per event.
    pub filters_per_event: usize,
    /// Fine-tune epochs between events (the score accumulation window).
    pub accumulation_epochs: usize,
    pub stop: StopRule,
    #[serde(default)]
    pub max_events: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub eta_min: f64,
    /// Cosine period in epochs; defaults to the accumulation window.
    #[serde(default)]
    pub schedule_epochs: Option<usize>,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_batch() -> usize {
    16
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adamw(1e-2)
}

fn default_eta0() -> f64 {
    1e-4
}

impl PruneConfig {
    pub fn new(criterion: Criterion, filters_per_event: usize, accumulation_epochs: usize, stop: StopRule) -> Self {
        PruneConfig {
            criterion,
            filters_per_event,
            accumulation_epochs,
            stop,
            max_events: None,
            batch_size: default_batch(),
            optimizer: default_optimizer(),
            eta0: default_eta0(),
            eta_min: 0.0,
            schedule_epochs: None,
            shuffle_seed: 0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("{path}.{f}"), m));
        if self.filters_per_event == 0 {
            return bad("filters_per_event", "must be >= 1");
        }
        if self.accumulation_epochs == 0 {
            return bad("accumulation_epochs", "must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("eta0", "must be a positive number");
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.eta0) {
            return bad("eta_min", "must lie in [0, eta0]");
        }
        if self.schedule_epochs == Some(0) {
            return bad("schedule_epochs", "must be >= 1");
        }
        if let StopRule::BackboneReduction { fraction } = self.stop {
            if !(0.0..1.0).contains(&fraction) {
                return bad("stop.fraction", "must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// State visible to observers right after each prune event.
pub struct PruneProbe<'a, T> {
    pub event: &'a PruneEvent,
    pub model: &'a MtlModel<T>,
    pub accumulator: &'a ImportanceAccumulator,
    /// Learning rate the next fine-tune epoch will use.
    pub lr: f64,
    pub optimizer_fresh: bool,
}

pub struct IterativeOutcome<T> {
    pub model: MtlModel<T>,
    pub base: PruneLevel,
    pub history: PruneHistory,
    pub steps: u64,
}

impl<T> IterativeOutcome<T> {
    /// Base level followed by every measured event level.
    pub fn levels(&self) -> Vec<PruneLevel> {
        std::iter::once(self.base.clone())
            .chain(self.history.events.iter().filter_map(PruneEvent::level))
            .collect()
    }
}

fn level<T: Scalar>(model: &MtlModel<T>, metrics: crate::metrics::MetricsReport) -> Result<PruneLevel> {
    let spec = model.spec();
    let counts = model.count_params();
    Ok(PruneLevel {
        params: counts.total,
        backbone_params: counts.backbone,
        flops: model.count_flops(spec.input_height, spec.input_width)?.total,
        metrics,
    })
}

fn should_stop<T: Scalar>(model: &MtlModel<T>, cfg: &PruneConfig, events: usize) -> bool {
    if cfg.max_events.is_some_and(|m| events >= m) || removable_filters(model) < cfg.filters_per_event {
        return true;
    }
    match cfg.stop {
        StopRule::MinAliveFilters { filters } => model.alive_filters() <= filters,
        StopRule::TargetParams { params } => model.count_params().total <= params,
        StopRule::BackboneReduction { fraction } => {
            let spec = model.spec();
            let full: Vec<usize> = spec.backbone.layers.iter().map(|l| l.filters).collect();
            let base = params_for_counts(spec, &full).backbone as f64;
            1.0 - model.count_params().backbone as f64 / base >= fraction
        }
    }
}

/// Iterative prune / fine-tune loop.
///
/// Each round fine-tunes for the accumulation window on the total loss while
/// summing per-batch scores, then (unless the stop rule holds) removes the
/// `filters_per_event` lowest-scored filters, rewinds the schedule and
/// optimizer, and clears the accumulator. An event's metrics are those measured
/// after the window that follows it, so the last event is always followed by
/// one more window.
pub fn run_iterative<T: Scalar>(
    model: MtlModel<T>,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &PruneConfig,
    mut observer: impl FnMut(&PruneProbe<T>) -> Result<()>,
) -> Result<IterativeOutcome<T>> {
    cfg.validate("prune")?;
    let base = level(&model, evaluate(&model, samples, val_idx, cfg.batch_size)?.metrics)?;
    let schedule = CosineSchedule::new(cfg.eta0, cfg.eta_min, cfg.schedule_epochs.unwrap_or(cfg.accumulation_epochs));
    let mut trainer = Trainer::new(model, cfg.optimizer, schedule, cfg.batch_size, cfg.shuffle_seed);
    let mut acc = ImportanceAccumulator::new(&trainer.model);
    let mut rng = ChaCha8Rng::seed_from_u64(match cfg.criterion {
        Criterion::Random { seed } => seed,
        _ => 0,
    });
    let per_task = cfg.criterion.needs_task_gradients();
    let mut history = PruneHistory::default();
    loop {
        for _ in 0..cfg.accumulation_epochs {
            trainer.epoch(samples, train_idx, per_task, |m, _, g| {
                acc.accumulate(&batch_scores(&cfg.criterion, m, g, &mut rng)?)
            })?;
        }
        if let Some(last) = history.events.last_mut() {
            last.metrics = Some(evaluate(&trainer.model, samples, val_idx, cfg.batch_size)?.metrics);
        }
        if should_stop(&trainer.model, cfg, history.events.len()) {
            break;
        }
        let victims = select_victims(&acc, cfg.filters_per_event, &trainer.model)?;
        let origin = trainer.model.origin();
        let victims_original = victims
            .iter()
            .map(|c| FilterCoord::new(c.layer, origin[c.layer][c.filter]))
            .collect();
        trainer.model = trainer.model.apply_prune(&victims)?;
        rewind(&mut trainer.schedule, &mut trainer.optimizer);
        acc.reset(&trainer.model);
        let after = level(&trainer.model, crate::metrics::MetricsReport::nan())?;
        history.events.push(PruneEvent {
            step: history.events.len() + 1,
            victims,
            victims_original,
            params_after: after.params,
            backbone_params_after: after.backbone_params,
            flops_after: after.flops,
            metrics: None,
        });
        observer(&PruneProbe {
            event: history.events.last().expect("just pushed"),
            model: &trainer.model,
            accumulator: &acc,
            lr: trainer.schedule.lr(),
            optimizer_fresh: trainer.optimizer.is_fresh(),
        })?;
    }
    history.check()?;
    Ok(IterativeOutcome {
        model: trainer.model,
        base,
        history,
        steps: trainer.steps,
    })
}
