//! Configuration, training and evaluation loops, checkpoints, logs and reports.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod plot;
mod runlog;
mod train;

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Ablation, RunConfig};
pub use eval::{
    combination_label, combinations, evaluate, evaluate_uni, score, CombinationRow, MetricsReport,
    SampleMetrics,
};
pub use optim::{AdamW, AdamWConfig};
pub use plot::{plot_report, plot_runlog};
pub use runlog::{columns, ModalityRecord, RunLog, StepRecord, Table};
pub use train::{check_corpus, compute_losses, split_indices, train_corpus, Losses, Trainer};
