//! Unit-scaled scheduling: bucket `k` holds `L * 2^k` samples and up to
//! `L - 1` samples wait raw in a side buffer until a full unit is available.
//!
//! Flushing is greedy and oldest-first: each ingest moves every complete unit
//! out of the buffer in one consolidated repack, so with `L = 1` the counter
//! behaves exactly like the base scheduler.

use crate::backend::{LocalModel, LocalModelBackend, MemoryModel};
use crate::ledger::{
    ErrorHistogram, HistogramError, Ledger, LedgerError, MetricsRow, NewSample, TaskActivity,
};
use crate::scheduler::{plan_repack, RepackPlan, SampleId};

#[derive(Clone, Debug)]
pub struct ScaledCounter<M> {
    unit: u64,
    ledger: Ledger<M>,
    side_buffer: Vec<NewSample>,
}

/// Outcome of one ingest.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingest {
    /// Plans over unit counts; at most one per ingest.
    pub plans: Vec<RepackPlan>,
    pub flushed_units: u64,
    pub row: MetricsRow,
}

impl<M: LocalModel> ScaledCounter<M> {
    pub fn new(unit: u64, memory: MemoryModel) -> Self {
        assert!(unit >= 1, "unit size must be positive");
        ScaledCounter {
            unit,
            ledger: Ledger::with_unit(memory, unit),
            side_buffer: Vec::new(),
        }
    }

    pub fn unit(&self) -> u64 {
        self.unit
    }

    pub fn ledger(&self) -> &Ledger<M> {
        &self.ledger
    }

    pub fn side_buffer(&self) -> &[NewSample] {
        &self.side_buffer
    }

    pub fn flushed_units(&self) -> u64 {
        self.ledger.layout().total
    }

    pub fn total_samples(&self) -> u64 {
        self.ledger.total_samples() + self.side_buffer.len() as u64
    }

    pub fn memory_units(&self) -> f64 {
        self.ledger.memory_units()
            + self
                .ledger
                .memory_model()
                .raw_memory(self.side_buffer.len() as u64)
    }

    /// Replay count of any sample, buffered ones included (always 0).
    pub fn replay_count(&self, id: SampleId) -> Result<u32, LedgerError> {
        if id.0 > self.ledger.total_samples() && id.0 <= self.total_samples() {
            return Ok(0);
        }
        self.ledger.replay_count(id)
    }

    pub fn ingest<B>(&mut self, batch: Vec<NewSample>, backend: &B) -> Result<Ingest, LedgerError>
    where
        B: LocalModelBackend<Model = M>,
    {
        if batch.is_empty() {
            return Err(LedgerError::EmptyTask);
        }
        let first = self.total_samples() + 1;
        for (i, s) in batch.iter().enumerate() {
            let want = SampleId(first + i as u64);
            if s.id != want {
                return Err(LedgerError::FreshId {
                    expected: want,
                    got: s.id,
                });
            }
        }

        let pending = self.side_buffer.len() + batch.len();
        let units = pending as u64 / self.unit;
        let flush = (units * self.unit) as usize;
        let mut plans = Vec::new();
        let activity = if units > 0 {
            let plan = plan_repack(self.flushed_units(), units).expect("units is positive");
            let from_buffer = self.side_buffer.len().min(flush);
            let fresh: Vec<NewSample> = self.side_buffer[..from_buffer]
                .iter()
                .chain(&batch[..flush - from_buffer])
                .cloned()
                .collect();
            let activity = self.ledger.apply_plan_quiet(&plan, fresh, backend)?;
            self.side_buffer.drain(..from_buffer);
            self.side_buffer
                .extend(batch.into_iter().skip(flush - from_buffer));
            plans.push(plan);
            activity
        } else {
            self.side_buffer.extend(batch);
            self.ledger.idle_task();
            TaskActivity::default()
        };
        debug_assert!((self.side_buffer.len() as u64) < self.unit);

        Ok(Ingest {
            plans,
            flushed_units: units,
            row: self.metrics_row(activity),
        })
    }

    pub fn metrics_row(&self, activity: TaskActivity) -> MetricsRow {
        let buffered = self.side_buffer.len() as u64;
        let (mean_error, p95_error) = self.ledger.book().tally().stats(buffered);
        MetricsRow {
            task: self.ledger.task(),
            total_samples: self.total_samples(),
            model_count: self.ledger.layout().model_count() as u64,
            memory_units: self.memory_units(),
            retrained_buckets: activity.retrained_buckets,
            replayed_samples: activity.replayed_samples,
            fresh_samples: activity.fresh_samples,
            max_replay_count: self.ledger.book().max_replay_count(),
            mean_error,
            p95_error,
        }
    }

    pub fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        self.ledger
            .book()
            .histogram(self.side_buffer.len() as u64, edges)
    }
}
