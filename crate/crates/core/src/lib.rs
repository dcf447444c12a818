//! Logarithmic generative-rehearsal scheduling.
//!
//! Samples are spread over local-model buckets of capacity `2^k` following
//! the binary notation of the running sample count. A new task retrains only
//! the buckets at and below the most significant flipped bit, so any sample is
//! replayed into a new bucket at most `⌈log₂ n⌉` times.
//!
//! - [`scheduler`]: layouts, pivot bits and repack plans (pure functions).
//! - [`ledger`]: per-sample records, replay histories and metric rows.
//! - [`backend`]: local-model backends and the memory-footprint model.
//! - [`baselines`]: single generative replay and a raw replay buffer.
//! - [`rehearsal`]: uniform rehearsal stream with white-noise augmentation.
//! - [`large_volume`]: buckets of `L * 2^k` samples with a raw side buffer.
//! - [`system`]: one driver trait over all of the above.

pub mod backend;
pub mod baselines;
pub mod large_volume;
pub mod ledger;
pub mod rehearsal;
pub mod scheduler;
pub mod system;

pub use backend::{
    AnalyticErrorModel, BackendError, Label, LocalModel, LocalModelBackend, MemoryModel,
    NoisyLossyStore, Reconstruction, TrainContext, TrainingItem,
};
pub use baselines::{BufferSystem, SingleReplaySystem};
pub use large_volume::{Ingest, ScaledCounter};
pub use ledger::{
    error_histogram, ErrorHistogram, ErrorTally, Ledger, LedgerError, MetricsRow, NewSample,
    SampleBook, SampleRecord,
};
pub use rehearsal::{
    locate_bucket, sample_rehearsal_stream, RehearsalError, RehearsalItem, RehearsalParams,
};
pub use scheduler::{
    layout_of, max_models_bound, pivot_bit, plan_repack, validate_layout, BucketIndex,
    BucketLayout, BucketTraining, IdRange, LayoutViolation, RepackPlan, SampleId, ScheduleError,
};
pub use system::{ContinualSystem, LogClSystem};
