//! Per-sample bookkeeping across repacks.
//!
//! The [`Ledger`] owns the trained local models, one record per sample, and
//! the pristine originals used to measure reconstruction error. Applying a
//! [`RepackPlan`] retrains the planned buckets, bumps the replay count of
//! every sample that moved into a new bucket, and emits a [`MetricsRow`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::backend::{
    BackendError, Label, LocalModel, LocalModelBackend, MemoryModel, TrainContext, TrainingItem,
};
use crate::scheduler::{layout_of, BucketIndex, BucketLayout, IdRange, RepackPlan, SampleId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("plan starts from total {plan} but the ledger holds {ledger}")]
    TotalMismatch { ledger: u64, plan: u64 },
    #[error("plan needs {expected} fresh samples, got {got}")]
    FreshCount { expected: u64, got: u64 },
    #[error("fresh sample out of order: expected id {expected}, got {got}")]
    FreshId { expected: SampleId, got: SampleId },
    #[error("a task must contain at least one sample")]
    EmptyTask,
    #[error("unknown sample {0}")]
    UnknownSample(SampleId),
    #[error("no trained model for occupied bucket {0}")]
    MissingModel(BucketIndex),
    #[error("ledger inconsistency: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A sample as supplied by the caller when it first arrives.
#[derive(Clone, Debug, PartialEq)]
pub struct NewSample {
    pub id: SampleId,
    pub label: Label,
    pub birth_task: u32,
    pub payload: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: SampleId,
    pub label: Label,
    pub birth_task: u32,
    /// `None` while the sample is stored raw rather than in a local model.
    pub bucket: Option<BucketIndex>,
    pub replay_count: u32,
    /// Tasks at which the sample was replayed into a new bucket.
    pub retrain_tasks: SmallVec<[u32; 8]>,
    pub error: f64,
}

impl SampleRecord {
    /// Task-ordinal distances between arrival and each successive replay.
    pub fn retrain_gaps(&self) -> Vec<u32> {
        let mut prev = self.birth_task;
        self.retrain_tasks
            .iter()
            .map(|&t| {
                let gap = t - prev;
                prev = t;
                gap
            })
            .collect()
    }
}

/// One line of per-task accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: u32,
    pub total_samples: u64,
    pub model_count: u64,
    pub memory_units: f64,
    pub retrained_buckets: u64,
    pub replayed_samples: u64,
    pub fresh_samples: u64,
    pub max_replay_count: u32,
    pub mean_error: f64,
    pub p95_error: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "task,total_samples,model_count,memory_units,retrained_buckets,replayed_samples,fresh_samples,max_replay_count,mean_error,p95_error";

    pub fn to_csv_line(&self) -> String {
        let mut line = String::new();
        write!(
            line,
            "{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.total_samples,
            self.model_count,
            self.memory_units,
            self.retrained_buckets,
            self.replayed_samples,
            self.fresh_samples,
            self.max_replay_count,
            self.mean_error,
            self.p95_error
        )
        .expect("writing to a String");
        line
    }
}

/// Multiset of per-sample errors. Statistics walk it in ascending order, so
/// they depend only on the current errors, never on update history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorTally {
    counts: BTreeMap<OrderedFloat<f64>, u64>,
    len: u64,
}

impl ErrorTally {
    pub fn insert(&mut self, error: f64) {
        *self.counts.entry(OrderedFloat(error)).or_default() += 1;
        self.len += 1;
    }

    pub fn remove(&mut self, error: f64) {
        let key = OrderedFloat(error);
        let count = self
            .counts
            .get_mut(&key)
            .expect("removing an error that was never tallied");
        *count -= 1;
        if *count == 0 {
            self.counts.remove(&key);
        }
        self.len -= 1;
    }

    /// Inserts every value of `errors`, grouping runs of equal values.
    pub fn insert_all(&mut self, errors: &[f64]) {
        for run in errors.chunk_by(|a, b| a.to_bits() == b.to_bits()) {
            *self.counts.entry(OrderedFloat(run[0])).or_default() += run.len() as u64;
            self.len += run.len() as u64;
        }
    }

    pub fn remove_all(&mut self, errors: &[f64]) {
        for run in errors.chunk_by(|a, b| a.to_bits() == b.to_bits()) {
            let key = OrderedFloat(run[0]);
            let count = self
                .counts
                .get_mut(&key)
                .expect("removing an error that was never tallied");
            *count -= run.len() as u64;
            if *count == 0 {
                self.counts.remove(&key);
            }
            self.len -= run.len() as u64;
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Mean and nearest-rank 95th percentile, counting `extra_zeros`
    /// additional samples with error 0.
    pub fn stats(&self, extra_zeros: u64) -> (f64, f64) {
        let n = self.len + extra_zeros;
        if n == 0 {
            return (0.0, 0.0);
        }
        let sum: f64 = self.counts.iter().map(|(v, &c)| v.0 * c as f64).sum();
        let rank = (95 * n).div_ceil(100);
        let mut seen = extra_zeros;
        let mut p95 = 0.0;
        if seen < rank {
            for (v, &c) in &self.counts {
                seen += c;
                if seen >= rank {
                    p95 = v.0;
                    break;
                }
            }
        }
        (sum / n as f64, p95)
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts.iter().map(|(v, &c)| (v.0, c))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("need at least two bin edges, got {0}")]
    TooFewEdges(usize),
    #[error("bin edges must be finite and strictly increasing (edge {index})")]
    BadEdges { index: usize },
}

/// Normalized histogram of per-sample errors.
///
/// Errors exactly 0 land in `zero`. Positive errors fall into
/// `[edges[i], edges[i+1])`, the last bin also taking its right edge; errors
/// outside the edges go to `underflow` / `overflow`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub samples: u64,
    pub empty: bool,
    pub zero: f64,
    pub underflow: f64,
    pub bins: Vec<f64>,
    pub overflow: f64,
}

impl ErrorHistogram {
    pub fn total_mass(&self) -> f64 {
        self.zero + self.underflow + self.overflow + self.bins.iter().sum::<f64>()
    }
}

pub fn error_histogram(
    tally: &ErrorTally,
    extra_zeros: u64,
    edges: &[f64],
) -> Result<ErrorHistogram, HistogramError> {
    if edges.len() < 2 {
        return Err(HistogramError::TooFewEdges(edges.len()));
    }
    for (i, w) in edges.windows(2).enumerate() {
        if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
            return Err(HistogramError::BadEdges { index: i + 1 });
        }
    }
    let nbins = edges.len() - 1;
    let mut zero = extra_zeros;
    let mut underflow = 0u64;
    let mut overflow = 0u64;
    let mut bins = vec![0u64; nbins];
    for (e, c) in tally.iter() {
        if e == 0.0 {
            zero += c;
        } else if e < edges[0] {
            underflow += c;
        } else if e > edges[nbins] {
            overflow += c;
        } else {
            let i = edges.partition_point(|&edge| edge <= e);
            bins[(i - 1).min(nbins - 1)] += c;
        }
    }
    let samples = tally.len() + extra_zeros;
    let norm = |c: u64| {
        if samples == 0 {
            0.0
        } else {
            c as f64 / samples as f64
        }
    };
    Ok(ErrorHistogram {
        edges: edges.to_vec(),
        samples,
        empty: samples == 0,
        zero: norm(zero),
        underflow: norm(underflow),
        bins: bins.into_iter().map(norm).collect(),
        overflow: norm(overflow),
    })
}

/// Records, originals and error tally for samples `1..=len`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBook {
    records: Vec<SampleRecord>,
    originals: Vec<Vec<f64>>,
    tally: ErrorTally,
    max_replay: u32,
}

impl SampleBook {
    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_id(&self) -> SampleId {
        SampleId(self.len() + 1)
    }

    pub fn get(&self, id: SampleId) -> Result<&SampleRecord, LedgerError> {
        usize::try_from(id.0)
            .ok()
            .and_then(|i| i.checked_sub(1))
            .and_then(|i| self.records.get(i))
            .ok_or(LedgerError::UnknownSample(id))
    }

    fn get_mut(&mut self, id: SampleId) -> &mut SampleRecord {
        &mut self.records[(id.0 - 1) as usize]
    }

    pub fn original(&self, id: SampleId) -> Result<&[f64], LedgerError> {
        self.get(id)?;
        Ok(&self.originals[(id.0 - 1) as usize])
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn tally(&self) -> &ErrorTally {
        &self.tally
    }

    pub fn max_replay_count(&self) -> u32 {
        self.max_replay
    }

    /// Adds the next sample; ids must arrive consecutively.
    pub fn admit(
        &mut self,
        sample: NewSample,
        bucket: Option<BucketIndex>,
        error: f64,
    ) -> Result<(), LedgerError> {
        self.push_untallied(sample, bucket, error)?;
        self.tally.insert(error);
        Ok(())
    }

    fn reserve(&mut self, additional: usize) {
        self.records.reserve(additional);
        self.originals.reserve(additional);
    }

    fn push_untallied(
        &mut self,
        sample: NewSample,
        bucket: Option<BucketIndex>,
        error: f64,
    ) -> Result<(), LedgerError> {
        let expected = self.next_id();
        if sample.id != expected {
            return Err(LedgerError::FreshId {
                expected,
                got: sample.id,
            });
        }
        self.records.push(SampleRecord {
            id: sample.id,
            label: sample.label,
            birth_task: sample.birth_task,
            bucket,
            replay_count: 0,
            retrain_tasks: SmallVec::new(),
            error,
        });
        self.originals.push(sample.payload);
        Ok(())
    }

    pub fn set_error(&mut self, id: SampleId, error: f64) {
        let rec = self.get_mut(id);
        let old = std::mem::replace(&mut rec.error, error);
        if old.to_bits() != error.to_bits() {
            self.tally.remove(old);
            self.tally.insert(error);
        }
    }

    pub fn set_bucket(&mut self, id: SampleId, bucket: Option<BucketIndex>) {
        self.get_mut(id).bucket = bucket;
    }

    /// Marks one replay of `id` at `task`.
    pub fn record_replay(&mut self, id: SampleId, task: u32) {
        let rec = self.get_mut(id);
        rec.replay_count += 1;
        rec.retrain_tasks.push(task);
        let count = rec.replay_count;
        self.max_replay = self.max_replay.max(count);
    }

    pub fn histogram(
        &self,
        extra_zeros: u64,
        edges: &[f64],
    ) -> Result<ErrorHistogram, HistogramError> {
        error_histogram(&self.tally, extra_zeros, edges)
    }
}

/// Work done by one task, before error statistics are attached.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TaskActivity {
    pub retrained_buckets: u64,
    pub replayed_samples: u64,
    pub fresh_samples: u64,
}

/// State of the logarithmic scheduler: layout, trained models per bucket and
/// one record per sample.
///
/// With `unit > 1` the layout counts units of `unit` consecutive samples, so
/// bucket `k` holds `unit * 2^k` samples.
#[derive(Clone, Debug)]
pub struct Ledger<M> {
    unit: u64,
    layout: BucketLayout,
    task: u32,
    book: SampleBook,
    models: BTreeMap<BucketIndex, M>,
    memory: MemoryModel,
}

impl<M: LocalModel> Ledger<M> {
    pub fn new(memory: MemoryModel) -> Self {
        Self::with_unit(memory, 1)
    }

    pub fn with_unit(memory: MemoryModel, unit: u64) -> Self {
        assert!(unit >= 1, "unit size must be positive");
        Ledger {
            unit,
            layout: BucketLayout::empty(),
            task: 0,
            book: SampleBook::default(),
            models: BTreeMap::new(),
            memory,
        }
    }

    pub fn unit(&self) -> u64 {
        self.unit
    }

    /// Layout over units (over samples when `unit == 1`).
    pub fn layout(&self) -> &BucketLayout {
        &self.layout
    }

    pub fn task(&self) -> u32 {
        self.task
    }

    pub fn total_samples(&self) -> u64 {
        self.book.len()
    }

    pub fn book(&self) -> &SampleBook {
        &self.book
    }

    pub fn records(&self) -> &[SampleRecord] {
        self.book.records()
    }

    pub fn memory_model(&self) -> &MemoryModel {
        &self.memory
    }

    pub fn models(&self) -> &BTreeMap<BucketIndex, M> {
        &self.models
    }

    pub fn record(&self, id: SampleId) -> Result<&SampleRecord, LedgerError> {
        self.book.get(id)
    }

    pub fn replay_count(&self, id: SampleId) -> Result<u32, LedgerError> {
        Ok(self.book.get(id)?.replay_count)
    }

    pub fn retrain_gaps(&self, id: SampleId) -> Result<Vec<u32>, LedgerError> {
        Ok(self.book.get(id)?.retrain_gaps())
    }

    pub fn memory_units(&self) -> f64 {
        self.memory.total_memory(&self.layout)
    }

    pub fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        self.book.histogram(0, edges)
    }

    /// Advances the task ordinal without any retraining.
    pub fn idle_task(&mut self) -> u32 {
        self.task += 1;
        self.task
    }

    /// Retrains the buckets named by `plan` and updates every affected record.
    ///
    /// `plan` counts units; `fresh` must hold exactly the samples for the new
    /// units, in id order. The ledger is left unchanged on error.
    pub fn apply_plan<B>(
        &mut self,
        plan: &RepackPlan,
        fresh: Vec<NewSample>,
        backend: &B,
    ) -> Result<MetricsRow, LedgerError>
    where
        B: LocalModelBackend<Model = M>,
    {
        let activity = self.apply_plan_quiet(plan, fresh, backend)?;
        Ok(self.metrics_row(activity))
    }

    /// Like [`Ledger::apply_plan`] without computing error statistics.
    pub fn apply_plan_quiet<B>(
        &mut self,
        plan: &RepackPlan,
        fresh: Vec<NewSample>,
        backend: &B,
    ) -> Result<TaskActivity, LedgerError>
    where
        B: LocalModelBackend<Model = M>,
    {
        if plan.old_total != self.layout.total {
            return Err(LedgerError::TotalMismatch {
                ledger: self.layout.total,
                plan: plan.old_total,
            });
        }
        let expanded;
        let plan = if self.unit == 1 {
            plan
        } else {
            expanded = plan.expand(self.unit);
            &expanded
        };
        let first_fresh = self.book.next_id();
        let expected = plan.new_total - plan.old_total;
        if fresh.len() as u64 != expected {
            return Err(LedgerError::FreshCount {
                expected,
                got: fresh.len() as u64,
            });
        }
        for (i, s) in fresh.iter().enumerate() {
            let want = SampleId(first_fresh.0 + i as u64);
            if s.id != want {
                return Err(LedgerError::FreshId {
                    expected: want,
                    got: s.id,
                });
            }
        }
        let task = self.task + 1;
        let fresh_of = |id: SampleId| &fresh[(id.0 - first_fresh.0) as usize];

        let mut trained = Vec::with_capacity(plan.trainings.len());
        let mut batch = Vec::new();
        for training in &plan.trainings {
            batch.clear();
            batch.reserve(training.target.capacity() as usize);
            for src in &training.replayed {
                let model = self
                    .models
                    .get(&src.source)
                    .ok_or(LedgerError::MissingModel(src.source))?;
                for id in src.range.ids() {
                    let rec = self.book.get(id)?;
                    batch.push(TrainingItem {
                        id,
                        payload: model.payload(id)?,
                        label: rec.label,
                        replay_count: rec.replay_count + 1,
                        original: &self.book.originals[(id.0 - 1) as usize],
                    });
                }
            }
            for id in training.fresh.iter().flat_map(IdRange::ids) {
                let s = fresh_of(id);
                batch.push(TrainingItem {
                    id,
                    payload: &s.payload,
                    label: s.label,
                    replay_count: 0,
                    original: &s.payload,
                });
            }
            let ctx = TrainContext {
                task,
                target: training.target,
            };
            trained.push(backend.train(ctx, &batch)?);
        }

        let mut activity = TaskActivity::default();
        self.book.reserve(fresh.len());
        for sample in fresh {
            self.book.push_untallied(sample, None, 0.0)?;
        }
        let mut removed = Vec::with_capacity(plan.replayed_samples() as usize);
        let mut added = Vec::with_capacity((plan.new_total - plan.prefix()) as usize);
        for (training, model) in plan.trainings.iter().zip(&trained) {
            activity.retrained_buckets += 1;
            for src in &training.replayed {
                activity.replayed_samples += src.range.len();
                for id in src.range.ids() {
                    self.book.record_replay(id, task);
                }
            }
            activity.fresh_samples += training.fresh_len();
            for id in training.target_range().ids() {
                let error = model.error(id)?;
                let rec = self.book.get_mut(id);
                if id < first_fresh {
                    removed.push(rec.error);
                }
                rec.bucket = Some(training.target);
                rec.error = error;
                added.push(error);
            }
        }
        self.book.tally.remove_all(&removed);
        self.book.tally.insert_all(&added);

        self.models.retain(|&k, _| k > plan.pivot);
        for (training, model) in plan.trainings.iter().zip(trained) {
            self.models.insert(training.target, model);
        }
        self.layout = layout_of(plan.new_total / self.unit);
        self.task = task;
        Ok(activity)
    }

    /// Metrics for the current state, attributing `activity` to the last task.
    pub fn metrics_row(&self, activity: TaskActivity) -> MetricsRow {
        let (mean_error, p95_error) = self.book.tally().stats(0);
        MetricsRow {
            task: self.task,
            total_samples: self.book.len(),
            model_count: self.layout.model_count() as u64,
            memory_units: self.memory_units(),
            retrained_buckets: activity.retrained_buckets,
            replayed_samples: activity.replayed_samples,
            fresh_samples: activity.fresh_samples,
            max_replay_count: self.book.max_replay_count(),
            mean_error,
            p95_error,
        }
    }

    /// Full structural check: every sample sits in exactly one bucket, the
    /// bucket matches the layout, the models cover exactly the occupied
    /// buckets, and replay counts match their histories.
    pub fn verify(&self) -> Result<(), LedgerError> {
        let fail = |msg: String| Err(LedgerError::Inconsistent(msg));
        if self.layout != layout_of(self.layout.total) {
            return fail(format!("layout differs from layout_of({})", self.layout.total));
        }
        if self.book.len() != self.layout.total * self.unit {
            return fail(format!(
                "{} samples recorded for {} units of {}",
                self.book.len(),
                self.layout.total,
                self.unit
            ));
        }
        let occupied: Vec<_> = self.layout.buckets().collect();
        let modelled: Vec<_> = self.models.keys().rev().copied().collect();
        if occupied != modelled {
            return fail(format!("models {modelled:?} for buckets {occupied:?}"));
        }
        let mut max_replay = 0;
        for entry in &self.layout.entries {
            let range = entry.range.expand(self.unit);
            let model = &self.models[&entry.bucket];
            if model.len() as u64 != range.len() {
                return fail(format!("bucket {} model size", entry.bucket));
            }
            for id in range.ids() {
                let rec = self.book.get(id)?;
                if rec.bucket != Some(entry.bucket) {
                    return fail(format!("sample {id} recorded in {:?}", rec.bucket));
                }
                if rec.replay_count as usize != rec.retrain_tasks.len() {
                    return fail(format!("sample {id} replay history"));
                }
                if model.error(id)?.to_bits() != rec.error.to_bits() {
                    return fail(format!("sample {id} error"));
                }
                max_replay = max_replay.max(rec.replay_count);
            }
        }
        if max_replay != self.book.max_replay_count() {
            return fail("max replay count".into());
        }
        Ok(())
    }
}
