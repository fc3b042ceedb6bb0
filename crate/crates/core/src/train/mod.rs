//! Training orchestration: mini-batching, epochs, the grow/settle/tune/anneal schedule with
//! rewinds, metrics and checkpoints.

pub mod batch;
mod checkpoint;
mod config;
mod epoch;
mod metrics;
mod trainer;

pub use batch::{minibatches, Batch};
pub use checkpoint::{SavedModel, CHECKPOINT_MAGIC, MODEL_MAGIC};
pub use config::{NormKind, OptimizerKind, ResolvedConfig, TrainConfig};
pub use epoch::{evaluate, run_epoch, EpochReport, EpochState, Evaluation, StepRule, EVAL_CHUNK};
pub use metrics::{EpochRow, MetricsLog, NormRow, Phase, RewindRow, UnitEventRow};
pub use trainer::{config_hash, train, Schedule, Snapshot, TrainOutcome, Trainer};
