//! Class-incremental task streams, training runs and their metrics.

mod data;
mod metrics;
mod preset;
mod report;
mod tasks;
mod trainer;

pub use data::{split_tasks, Dataset, InputKind, Sample, SampleData, TaskSplit};
pub use metrics::AccuracyMatrix;
pub use preset::Preset;
pub use report::{read_budget_log, run_stem, write_budget_log, write_run, RunFiles};
pub use tasks::TaskSchedule;
pub use trainer::{
    accuracy, evaluate, run_config, ConfigId, Flags, InsertTiming, Memory, RunConfig, RunResult, Trainer,
};
