use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::curves::{curve_rows, curves_header, plot_file_name, plot_header, render_curves, render_plots, write_checked, CURVES_FILE};
use super::report::{RunInfo, RUN_FILE};
use crate::data::{generate, load_dataset, save_dataset, split, StoredDataset};
use crate::error::{Error, Result};
use crate::loss::TaskKind;
use crate::model::{load_checkpoint, save_checkpoint, CheckpointManifest, FilterCoord, MtlModel, MANIFEST_FILE};
use crate::pruning::{run_iterative, Criterion, PruneLevel};
use crate::train::{epoch_csv_header, evaluate, retrain_from_scratch, train, write_epoch_csv, EpochRecord, Evaluation};

pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Clone, Debug, Serialize)]
pub struct GenDataSummary {
    pub dir: PathBuf,
    pub checksum: String,
    pub n_train: usize,
    pub n_val: usize,
}

/// Generates and splits the synthetic dataset into the configured data directory.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    let dcfg = cfg.dataset_config();
    let samples = generate(&dcfg)?;
    let (train, val) = split(samples.len(), cfg.dataset.val_fraction, cfg.split_seed())?;
    let dir = cfg.data_dir();
    let manifest = save_dataset(&dir, &dcfg, &samples, cfg.dataset.val_fraction, &train, &val)?;
    Ok(GenDataSummary {
        dir,
        checksum: manifest.checksum,
        n_train: train.len(),
        n_val: val.len(),
    })
}

/// Loads the dataset, generating it first if the directory has none.
pub fn ensure_data(cfg: &ExperimentConfig) -> Result<StoredDataset> {
    let dir = cfg.data_dir();
    if !dir.join(MANIFEST_FILE).exists() {
        if cfg.dataset.dir.is_some() {
            return Err(Error::config("dataset.dir", format!("no dataset manifest in {}", dir.display())));
        }
        cmd_gen_data(cfg)?;
    }
    Ok(load_dataset(&dir)?.0)
}

fn tasks_of(model: &MtlModel<f32>) -> Vec<TaskKind> {
    model.heads().iter().map(|h| h.spec.task).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_train_log(path: &Path, tasks: &[TaskKind], records: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_epoch_csv(&mut buf, tasks, records)?;
    write_checked(path, &epoch_csv_header(tasks), std::str::from_utf8(&buf).expect("utf8 csv"))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub best_epoch: usize,
    pub best: EpochRecord,
    pub checksum: String,
}

/// Trains the unpruned base model and stores its best epoch as a checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let data = ensure_data(cfg)?;
    let model = MtlModel::<f32>::build(&cfg.model_spec()?, cfg.init_seed())?;
    let tasks = tasks_of(&model);
    let out = train(model, &data.samples, &data.train, &data.val, &cfg.train_config(), cfg.policy)?;
    let dir = cfg.base_dir();
    save_checkpoint(&out.best_model, &dir, None)?;
    write_train_log(&dir.join("train_log.csv"), &tasks, &out.records)?;
    let summary = TrainSummary {
        dir: dir.clone(),
        best_epoch: out.best_epoch,
        best: out.records[out.best_epoch].clone(),
        checksum: out.best_model.checksum(),
    };
    write_json(&dir.join("train.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneRepetition {
    pub repetition: usize,
    pub levels: Vec<PruneLevel>,
    pub victims: Vec<Vec<FilterCoord>>,
    pub final_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneSummary {
    pub dir: PathBuf,
    pub criterion: Criterion,
    pub curves: PathBuf,
    pub repetitions: Vec<PruneRepetition>,
}

fn load_base(cfg: &ExperimentConfig) -> Result<MtlModel<f32>> {
    let base = cfg.base_dir();
    if !base.join(MANIFEST_FILE).exists() {
        if !cfg.prune.from_scratch {
            return Err(Error::Checkpoint {
                path: base,
                msg: "no base checkpoint; run `train` first or set prune.from_scratch".into(),
            });
        }
        cmd_train(cfg)?;
    }
    Ok(load_checkpoint::<f32>(&base)?.0)
}

/// Runs the iterative prune loop once per repetition from the base checkpoint,
/// writing per-event checkpoints, the prune history and plot-ready curves.
pub fn cmd_prune(cfg: &ExperimentConfig) -> Result<PruneSummary> {
    let data = ensure_data(cfg)?;
    let base = load_base(cfg)?;
    let dir = cfg.prune_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    let mut reps = Vec::new();
    for r in 0..cfg.prune.repetitions {
        let rep_dir = dir.join(format!("rep-{r}"));
        fs::create_dir_all(&rep_dir)?;
        let pcfg = cfg.prune_config(r as u64);
        let mut last_ckpt = None;
        let outcome = run_iterative(base.clone(), &data.samples, &data.train, &data.val, &pcfg, |probe| {
            let ckpt = rep_dir.join(format!("event-{:03}", probe.event.step));
            save_checkpoint(probe.model, &ckpt, Some(&format!("../{HISTORY_FILE}")))?;
            last_ckpt = Some(ckpt);
            Ok(())
        })?;
        outcome.history.save(&rep_dir.join(HISTORY_FILE))?;
        let levels = outcome.levels();
        rows.extend(curve_rows(r, &levels));
        reps.push(PruneRepetition {
            repetition: r,
            levels,
            victims: outcome.history.victim_sequence(),
            final_checkpoint: last_ckpt,
        });
    }
    let curves = dir.join(CURVES_FILE);
    write_checked(&curves, &curves_header(), &render_curves(&rows))?;
    for (m, body) in render_plots(&rows, cfg.prune.repetitions) {
        write_checked(&dir.join(plot_file_name(m)), &plot_header(cfg.prune.repetitions), &body)?;
    }
    let criterion = cfg.criterion();
    write_json(
        &dir.join(RUN_FILE),
        &RunInfo {
            criterion,
            kind: "prune".into(),
            repetitions: cfg.prune.repetitions,
            notes: serde_json::json!({ "prune": cfg.prune, "seed": cfg.seed }),
        },
    )?;
    Ok(PruneSummary {
        dir,
        criterion,
        curves,
        repetitions: reps,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrainRunSummary {
    pub lr: f64,
    pub best_epoch: usize,
    pub best_value: f64,
    pub best: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrainSummary {
    pub dir: PathBuf,
    pub chosen_lr: f64,
    pub runs: Vec<RetrainRunSummary>,
    pub level: PruneLevel,
}

/// Criterion of the prune run a checkpoint came from, found in an ancestor's `run.json`.
fn source_criterion(ckpt: &Path) -> Option<Criterion> {
    ckpt.ancestors().skip(1).take(3).find_map(|d| RunInfo::read(d).ok()).map(|i| i.criterion)
}

/// Re-initializes the architecture of `checkpoint` and trains it once per
/// learning rate of the sweep. Results go to `out` (default
/// `<out>/retrain-<criterion>`).
pub fn cmd_retrain(cfg: &ExperimentConfig, checkpoint: &Path, out: Option<&Path>) -> Result<RetrainSummary> {
    let manifest = CheckpointManifest::read(checkpoint)?;
    let data = ensure_data(cfg)?;
    let criterion = source_criterion(checkpoint);
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => cfg
            .out_dir()
            .join(format!("retrain-{}", criterion.map_or("unknown", |c| c.name()))),
    };
    fs::create_dir_all(&dir)?;
    let arch = manifest.pruned_spec();
    let outcome = retrain_from_scratch::<f32>(
        &arch,
        &data.samples,
        &data.train,
        &data.val,
        &cfg.retrain_config(),
        &cfg.retrain.lr_sweep,
        cfg.retrain_seed(),
        cfg.policy,
    )?;
    let tasks = tasks_of(&outcome.best_model);
    let mut runs = Vec::new();
    for (i, r) in outcome.runs.iter().enumerate() {
        write_train_log(&dir.join(format!("lr-{i}.csv")), &tasks, &r.records)?;
        runs.push(RetrainRunSummary {
            lr: r.lr,
            best_epoch: r.best_epoch,
            best_value: r.best_value,
            best: i == outcome.best,
        });
    }
    let runs_csv: String = std::iter::once("lr,best_epoch,best_value,best\n".to_string())
        .chain(runs.iter().map(|r| format!("{:e},{},{:.6},{}\n", r.lr, r.best_epoch, r.best_value, u8::from(r.best))))
        .collect();
    write_checked(&dir.join("runs.csv"), "lr,best_epoch,best_value,best", &runs_csv)?;
    save_checkpoint(&outcome.best_model, &dir.join("best"), None)?;
    let best = outcome.best_run();
    let counts = outcome.best_model.count_params();
    let level = PruneLevel {
        params: counts.total,
        backbone_params: counts.backbone,
        flops: outcome.best_model.count_flops(arch.input_height, arch.input_width)?.total,
        metrics: best.records[best.best_epoch].metrics,
    };
    write_checked(&dir.join(CURVES_FILE), &curves_header(), &render_curves(&curve_rows(0, std::slice::from_ref(&level))))?;
    if let Some(criterion) = criterion {
        write_json(
            &dir.join(RUN_FILE),
            &RunInfo {
                criterion,
                kind: "retrain".into(),
                repetitions: 1,
                notes: serde_json::json!({ "source": checkpoint, "lr_sweep": cfg.retrain.lr_sweep }),
            },
        )?;
    }
    let summary = RetrainSummary {
        dir: dir.clone(),
        chosen_lr: best.lr,
        runs,
        level,
    };
    write_json(&dir.join("retrain.json"), &summary)?;
    Ok(summary)
}

/// Validation metrics of a stored checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Evaluation> {
    let data = ensure_data(cfg)?;
    let (model, _) = load_checkpoint::<f32>(checkpoint)?;
    evaluate(&model, &data.samples, &data.val, cfg.train.batch_size)
}
