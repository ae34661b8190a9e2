use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CosineSchedule, OptimizerConfig, OptimizerState};
use crate::data::{batches, Batch, Sample};
use crate::error::{Error, Result};
use crate::loss::TaskKind;
use crate::metrics::{fmt_value, MetricsAccumulator, MetricsReport};
use crate::model::{ModelSpec, MtlModel, TaskGradients};
use crate::tensor::{Scalar, Tensor};

/// Which validation column picks the reported ("best") epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestModelPolicy {
    TotalValLoss,
    #[default]
    PixelAccuracy,
}

impl BestModelPolicy {
    pub fn value(self, r: &EpochRecord) -> f64 {
        match self {
            BestModelPolicy::TotalValLoss => r.total_val_loss,
            BestModelPolicy::PixelAccuracy => r.metrics.pixel_accuracy,
        }
    }

    /// Strictly better; NaN is never better.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            BestModelPolicy::TotalValLoss => a < b || (b.is_nan() && !a.is_nan()),
            BestModelPolicy::PixelAccuracy => a > b || (b.is_nan() && !a.is_nan()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub eta0: f64,
    #[serde(default)]
    pub eta_min: f64,
    /// Seeds the per-epoch shuffle.
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_batch() -> usize {
    16
}

impl TrainConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(format!("{path}.epochs"), "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{path}.batch_size"), "must be >= 1"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config(format!("{path}.eta0"), "must be a positive number"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.eta0) {
            return Err(Error::config(format!("{path}.eta_min"), "must lie in [0, eta0]"));
        }
        Ok(())
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean train loss per task, in head order.
    pub train_losses: Vec<f64>,
    pub metrics: MetricsReport,
    pub total_val_loss: f64,
    pub lr: f64,
}

/// Validation result over a whole sample set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub task_losses: Vec<f64>,
    pub total_loss: f64,
}

/// Gradients produced for one training batch.
pub struct BatchGrads<T> {
    pub losses: Vec<f64>,
    /// Gradient of the total loss, canonical parameter order.
    pub total: Vec<Tensor<T>>,
    /// Present only when per-task gradients were requested.
    pub per_task: Option<TaskGradients<T>>,
}

/// Model, optimizer and schedule advanced one epoch at a time.
pub struct Trainer<T> {
    pub model: MtlModel<T>,
    pub optimizer: OptimizerState<T>,
    pub schedule: CosineSchedule,
    pub batch_size: usize,
    pub steps: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: MtlModel<T>, opt: OptimizerConfig, schedule: CosineSchedule, batch_size: usize, seed: u64) -> Self {
        Trainer {
            model,
            optimizer: OptimizerState::new(opt),
            schedule,
            batch_size: batch_size.max(1),
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One pass over `train` in a freshly shuffled order. `on_batch` sees each
    /// batch's gradients before the parameter update. Returns mean per-task
    /// losses and the learning rate used; advances the schedule afterwards.
    pub fn epoch(
        &mut self,
        samples: &[Sample],
        train: &[usize],
        per_task: bool,
        mut on_batch: impl FnMut(&MtlModel<T>, &Batch<T>, &BatchGrads<T>) -> Result<()>,
    ) -> Result<(Vec<f64>, f64)> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut order = train.to_vec();
        order.shuffle(&mut self.rng);
        let lr = self.schedule.lr();
        let mut sums = vec![0.0; self.model.num_tasks()];
        for batch in batches::<T>(samples, &order, self.batch_size) {
            let grads = if per_task {
                let tg = self.model.task_gradients(&batch)?;
                BatchGrads {
                    losses: tg.losses.clone(),
                    total: tg.total(),
                    per_task: Some(tg),
                }
            } else {
                let (losses, total) = self.model.total_gradients(&batch)?;
                BatchGrads {
                    losses,
                    total,
                    per_task: None,
                }
            };
            on_batch(&self.model, &batch, &grads)?;
            for (s, l) in sums.iter_mut().zip(&grads.losses) {
                *s += l * batch.len() as f64;
            }
            let mut params = self.model.params_mut();
            self.optimizer.step(&mut params, &grads.total, lr)?;
            self.steps += 1;
        }
        self.schedule.advance();
        let n = order.len() as f64;
        Ok((sums.into_iter().map(|s| s / n).collect(), lr))
    }
}

/// Flattens `[N,C,H,W]` into per-pixel channel vectors in `(n, h, w)` order.
fn pixels<T: Scalar>(t: &Tensor<T>) -> impl Iterator<Item = Vec<f64>> + '_ {
    let (n, c, hw) = (t.dim(0), t.dim(1), t.dim(2) * t.dim(3));
    let d = t.data();
    (0..n * hw).map(move |p| {
        let (i, s) = (p / hw, p % hw);
        (0..c).map(|ch| d[(i * c + ch) * hw + s].to_f64v()).collect()
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Evaluates all task metrics and mean losses over `idx`.
pub fn evaluate<T: Scalar>(model: &MtlModel<T>, samples: &[Sample], idx: &[usize], batch_size: usize) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let heads = model.heads();
    let seg_classes = heads.iter().find(|h| h.spec.task == TaskKind::Segmentation).map(|h| h.spec.out_channels);
    let has = |k| heads.iter().any(|h| h.spec.task == k);
    let mut acc = MetricsAccumulator::new(seg_classes, has(TaskKind::Depth), has(TaskKind::Normals));
    let mut sums = vec![0.0; heads.len()];
    for batch in batches::<T>(samples, idx, batch_size) {
        let pass = model.record_losses(&batch)?;
        let tape = &pass.rec.tape;
        for (t, (head, (&out, &l))) in heads.iter().zip(pass.rec.outputs.iter().zip(&pass.losses)).enumerate() {
            sums[t] += tape.value(l).item().to_f64v() * batch.len() as f64;
            let pred = tape.value(out);
            match head.spec.task {
                TaskKind::Segmentation => {
                    let labels: Vec<usize> = pixels(pred).map(|v| argmax(&v)).collect();
                    if let Some(s) = acc.seg.as_mut() {
                        s.add(&labels, &batch.seg)?;
                    }
                }
                TaskKind::Depth => {
                    if let Some(d) = acc.depth.as_mut() {
                        d.add(&pred.to_f64_vec(), &batch.depth.to_f64_vec())?;
                    }
                }
                TaskKind::Normals => {
                    let to3 = |v: Vec<f64>| [v[0], v[1], v[2]];
                    let p: Vec<[f64; 3]> = pixels(pred).map(to3).collect();
                    let g: Vec<[f64; 3]> = pixels(&batch.normals).map(to3).collect();
                    if let Some(n) = acc.normals.as_mut() {
                        n.add(&p, &g)?;
                    }
                }
            }
        }
    }
    let n = idx.len() as f64;
    let task_losses: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    Ok(Evaluation {
        metrics: acc.finish(),
        total_loss: task_losses.iter().sum(),
        task_losses,
    })
}

/// Index of the best record under `policy`; ties go to the earliest epoch.
pub fn select_best_epoch(records: &[EpochRecord], policy: BestModelPolicy) -> Result<usize> {
    let first = records.first().ok_or(Error::Empty("epoch records"))?;
    let mut best = (0, policy.value(first));
    for (i, r) in records.iter().enumerate().skip(1) {
        let v = policy.value(r);
        if policy.better(v, best.1) {
            best = (i, v);
        }
    }
    Ok(best.0)
}

pub struct TrainOutcome<T> {
    pub best_model: MtlModel<T>,
    pub best_epoch: usize,
    pub final_model: MtlModel<T>,
    pub records: Vec<EpochRecord>,
    pub steps: u64,
}

/// Trains on the unweighted sum of task losses, validating after every epoch.
pub fn train<T: Scalar>(
    model: MtlModel<T>,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    policy: BestModelPolicy,
) -> Result<TrainOutcome<T>> {
    cfg.validate("train")?;
    let schedule = CosineSchedule::new(cfg.eta0, cfg.eta_min, cfg.epochs);
    let mut trainer = Trainer::new(model, cfg.optimizer, schedule, cfg.batch_size, cfg.shuffle_seed);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(MtlModel<T>, f64)> = None;
    for epoch in 0..cfg.epochs {
        let (train_losses, lr) = trainer.epoch(samples, train_idx, false, |_, _, _| Ok(()))?;
        let eval = evaluate(&trainer.model, samples, val_idx, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch,
            train_losses,
            metrics: eval.metrics,
            total_val_loss: eval.total_loss,
            lr,
        };
        let v = policy.value(&rec);
        if best.as_ref().is_none_or(|(_, b)| policy.better(v, *b)) {
            best = Some((trainer.model.clone(), v));
        }
        records.push(rec);
    }
    let best_epoch = select_best_epoch(&records, policy)?;
    let (best_model, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        final_model: trainer.model,
        steps: trainer.steps,
        records,
    })
}

/// One learning rate of a retraining sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRun {
    pub lr: f64,
    pub best_epoch: usize,
    pub best_value: f64,
    pub records: Vec<EpochRecord>,
}

pub struct RetrainOutcome<T> {
    pub runs: Vec<RetrainRun>,
    /// Index into `runs` of the winning learning rate.
    pub best: usize,
    pub best_model: MtlModel<T>,
}

impl<T> RetrainOutcome<T> {
    pub fn best_run(&self) -> &RetrainRun {
        &self.runs[self.best]
    }
}

/// Re-initializes `arch` from `seed` and trains it once per learning rate.
/// Every run starts from identical weights; the run with the best
/// policy value at its own best epoch wins (ties: earliest in `lr_set`).
pub fn retrain_from_scratch<T: Scalar>(
    arch: &ModelSpec,
    samples: &[Sample],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    lr_set: &[f64],
    seed: u64,
    policy: BestModelPolicy,
) -> Result<RetrainOutcome<T>> {
    if lr_set.is_empty() {
        return Err(Error::Empty("learning-rate sweep"));
    }
    let init = MtlModel::<T>::build(arch, seed)?;
    let mut runs: Vec<RetrainRun> = Vec::with_capacity(lr_set.len());
    let mut best: Option<(usize, MtlModel<T>)> = None;
    for &lr in lr_set {
        let run_cfg = TrainConfig { eta0: lr, ..cfg.clone() };
        let out = train(init.clone(), samples, train_idx, val_idx, &run_cfg, policy)?;
        let value = policy.value(&out.records[out.best_epoch]);
        let i = runs.len();
        if best.as_ref().is_none_or(|(b, _)| policy.better(value, runs[*b].best_value)) {
            best = Some((i, out.best_model));
        }
        runs.push(RetrainRun {
            lr,
            best_epoch: out.best_epoch,
            best_value: value,
            records: out.records,
        });
    }
    let (best, best_model) = best.expect("non-empty sweep");
    Ok(RetrainOutcome { runs, best, best_model })
}

/// CSV header for [`EpochRecord`] rows given the task order.
pub fn epoch_csv_header(tasks: &[TaskKind]) -> String {
    let mut cols = vec!["epoch".to_string()];
    cols.extend(tasks.iter().map(|t| format!("train_loss_{}", t.name())));
    cols.push(MetricsReport::csv_header());
    cols.push("total_val_loss".into());
    cols.push("lr".into());
    cols.join(",")
}

pub fn epoch_csv_row(r: &EpochRecord) -> String {
    let mut cols = vec![r.epoch.to_string()];
    cols.extend(r.train_losses.iter().map(|&l| fmt_value(l)));
    cols.push(r.metrics.to_csv_row());
    cols.push(fmt_value(r.total_val_loss));
    cols.push(format!("{:e}", r.lr));
    cols.join(",")
}

pub fn write_epoch_csv(mut w: impl Write, tasks: &[TaskKind], records: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{}", epoch_csv_header(tasks))?;
    for r in records {
        writeln!(w, "{}", epoch_csv_row(r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, acc: f64, loss: f64) -> EpochRecord {
        let mut metrics = MetricsReport::nan();
        metrics.pixel_accuracy = acc;
        EpochRecord {
            epoch,
            train_losses: vec![],
            metrics,
            total_val_loss: loss,
            lr: 0.0,
        }
    }

    #[test]
    fn best_epoch_policies() {
        assert!(select_best_epoch(&[], BestModelPolicy::PixelAccuracy).is_err());
        assert_eq!(select_best_epoch(&[rec(0, 0.1, 9.0)], BestModelPolicy::TotalValLoss).unwrap(), 0);
        let rs = [rec(0, 40.0, 3.0), rec(1, 46.0, 2.5), rec(2, 43.0, 2.0)];
        assert_eq!(select_best_epoch(&rs, BestModelPolicy::PixelAccuracy).unwrap(), 1);
        assert_eq!(select_best_epoch(&rs, BestModelPolicy::TotalValLoss).unwrap(), 2);
        let dom = [rec(0, 40.0, 3.0), rec(1, 50.0, 1.0), rec(2, 43.0, 2.0)];
        assert_eq!(select_best_epoch(&dom, BestModelPolicy::PixelAccuracy).unwrap(), 1);
        assert_eq!(select_best_epoch(&dom, BestModelPolicy::TotalValLoss).unwrap(), 1);
        let ties = [rec(0, 0.5, 1.0), rec(1, 0.5, 1.0)];
        assert_eq!(select_best_epoch(&ties, BestModelPolicy::PixelAccuracy).unwrap(), 0);
        assert_eq!(select_best_epoch(&ties, BestModelPolicy::TotalValLoss).unwrap(), 0);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let tasks = [TaskKind::Segmentation, TaskKind::Depth, TaskKind::Normals];
        let mut r = rec(3, 0.5, 1.0);
        r.train_losses = vec![1.0, 2.0, 3.0];
        let header = epoch_csv_header(&tasks);
        assert_eq!(header.split(',').count(), epoch_csv_row(&r).split(',').count());
        assert!(header.starts_with("epoch,train_loss_segmentation,"));
        assert!(header.ends_with(",total_val_loss,lr"));
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = TrainConfig {
            epochs: 0,
            batch_size: 4,
            optimizer: OptimizerConfig::adam(),
            eta0: 1e-3,
            eta_min: 0.0,
            shuffle_seed: 0,
        };
        let e = c.validate("train").unwrap_err();
        assert!(e.to_string().contains("train.epochs"), "{e}");
        c.epochs = 1;
        c.eta0 = 0.0;
        assert!(c.validate("train").unwrap_err().to_string().contains("train.eta0"));
    }
}
