//! Experiment orchestration behind the command-line tool: JSON configs,
//! dataset generation, base training, iterative pruning, retraining sweeps,
//! evaluation, comparison reports and the built-in self-test.
//!
//! Output layout under the output root:
//!
//! ```text
//! data/                     dataset manifest + blobs
//! base/                     base checkpoint, train_log.csv, train.json
//! prune-<criterion>/        curves.csv, plot_<metric>.csv, run.json
//!   rep-<r>/history.jsonl   one prune event per line
//!   rep-<r>/event-<k>/      checkpoint after event k
//! retrain-<criterion>/      runs.csv, lr-<i>.csv, curves.csv, best/
//! ```

mod commands;
mod config;
mod curves;
mod report;
mod selftest;

pub use commands::{
    cmd_eval, cmd_gen_data, cmd_prune, cmd_retrain, cmd_train, ensure_data, GenDataSummary, PruneRepetition,
    PruneSummary, RetrainRunSummary, RetrainSummary, TrainSummary, HISTORY_FILE,
};
pub use config::{
    derive_seed, CriterionKind, DatasetSection, ExperimentConfig, PruneSection, RetrainSection, TrainSection, OUT_ENV,
};
pub use curves::{
    aggregate, check_csv, curves_header, plot_file_name, plot_header, read_curves, Aggregate, AggregatedLevel,
    CurveRow, CURVES_FILE,
};
pub use report::{cmd_report, compare, percent_delta, report_header, ComparisonRow, Report, RunInfo, PAIR_TOLERANCE, RUN_FILE};
pub use selftest::{op_grad_errors, run_selftest, task_sum_identity_error, tiny_model_grad_error, SelfCheck};

/// Process exit code for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(err: &crate::Error) -> i32 {
    if err.is_config() {
        2
    } else {
        3
    }
}
