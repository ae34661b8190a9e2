//! Filter-importance criteria, score accumulation, victim selection and the
//! iterative prune / fine-tune driver.

mod history;
mod iterative;
mod score;
mod select;

pub use history::{PruneEvent, PruneHistory, PruneLevel};
pub use iterative::{run_iterative, IterativeOutcome, PruneConfig, PruneProbe, StopRule};
pub use score::{batch_scores, score_cosprune, score_taylor, Criterion, PairMode, TaylorVariant};
pub use select::{removable_filters, select_victims, ImportanceAccumulator};
