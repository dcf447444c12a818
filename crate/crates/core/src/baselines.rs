//! Comparison systems: one generative model that re-learns everything after
//! every task, and a buffer that keeps every raw sample.

use crate::backend::{LocalModel, LocalModelBackend, MemoryModel, TrainContext, TrainingItem};
use crate::ledger::{
    ErrorHistogram, HistogramError, LedgerError, MetricsRow, NewSample, SampleBook, SampleRecord,
};
use crate::scheduler::{BucketIndex, SampleId};

fn check_fresh(book: &SampleBook, fresh: &[NewSample]) -> Result<(), LedgerError> {
    if fresh.is_empty() {
        return Err(LedgerError::EmptyTask);
    }
    let first = book.next_id();
    for (i, s) in fresh.iter().enumerate() {
        let want = SampleId(first.0 + i as u64);
        if s.id != want {
            return Err(LedgerError::FreshId {
                expected: want,
                got: s.id,
            });
        }
    }
    Ok(())
}

/// A single self-rehearsing model of fixed size `s_max`.
#[derive(Clone, Debug)]
pub struct SingleReplaySystem<B: LocalModelBackend> {
    backend: B,
    model: Option<B::Model>,
    book: SampleBook,
    task: u32,
    memory: MemoryModel,
}

impl<B: LocalModelBackend> SingleReplaySystem<B> {
    pub fn new(backend: B, memory: MemoryModel) -> Self {
        SingleReplaySystem {
            backend,
            model: None,
            book: SampleBook::default(),
            task: 0,
            memory,
        }
    }

    pub fn book(&self) -> &SampleBook {
        &self.book
    }

    pub fn model(&self) -> Option<&B::Model> {
        self.model.as_ref()
    }

    pub fn task(&self) -> u32 {
        self.task
    }

    pub fn record(&self, id: SampleId) -> Result<&SampleRecord, LedgerError> {
        self.book.get(id)
    }

    /// Retrains the one model on reconstructions of every past sample plus
    /// the raw fresh batch.
    pub fn single_replay_step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError> {
        check_fresh(&self.book, &fresh)?;
        let task = self.task + 1;
        let old = self.book.len();
        let mut batch = Vec::with_capacity(old as usize + fresh.len());
        if let Some(model) = &self.model {
            for rec in self.book.records() {
                batch.push(TrainingItem {
                    id: rec.id,
                    payload: model.payload(rec.id)?,
                    label: rec.label,
                    replay_count: rec.replay_count + 1,
                    original: self.book.original(rec.id)?,
                });
            }
        }
        for s in &fresh {
            batch.push(TrainingItem {
                id: s.id,
                payload: &s.payload,
                label: s.label,
                replay_count: 0,
                original: &s.payload,
            });
        }
        let ctx = TrainContext {
            task,
            target: BucketIndex(0),
        };
        let model = self.backend.train(ctx, &batch)?;
        drop(batch);

        let fresh_samples = fresh.len() as u64;
        for id in (1..=old).map(SampleId) {
            self.book.record_replay(id, task);
        }
        for s in fresh {
            self.book.admit(s, Some(BucketIndex(0)), 0.0)?;
        }
        for id in (1..=self.book.len()).map(SampleId) {
            self.book.set_error(id, model.error(id)?);
        }
        self.model = Some(model);
        self.task = task;

        let (mean_error, p95_error) = self.book.tally().stats(0);
        Ok(MetricsRow {
            task,
            total_samples: self.book.len(),
            model_count: 1,
            memory_units: self.memory.s_max,
            retrained_buckets: 1,
            replayed_samples: old,
            fresh_samples,
            max_replay_count: self.book.max_replay_count(),
            mean_error,
            p95_error,
        })
    }

    pub fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        self.book.histogram(0, edges)
    }
}

/// Stores every sample verbatim: zero error, linear memory.
#[derive(Clone, Debug, Default)]
pub struct BufferSystem {
    book: SampleBook,
    task: u32,
    memory: MemoryModel,
}

impl BufferSystem {
    pub fn new(memory: MemoryModel) -> Self {
        BufferSystem {
            book: SampleBook::default(),
            task: 0,
            memory,
        }
    }

    pub fn book(&self) -> &SampleBook {
        &self.book
    }

    pub fn record(&self, id: SampleId) -> Result<&SampleRecord, LedgerError> {
        self.book.get(id)
    }

    pub fn reconstruct(&self, id: SampleId) -> Result<&[f64], LedgerError> {
        self.book.original(id)
    }

    pub fn memory_units(&self) -> f64 {
        self.memory.raw_memory(self.book.len())
    }

    pub fn buffer_step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError> {
        check_fresh(&self.book, &fresh)?;
        let fresh_samples = fresh.len() as u64;
        for s in fresh {
            self.book.admit(s, None, 0.0)?;
        }
        self.task += 1;
        let (mean_error, p95_error) = self.book.tally().stats(0);
        Ok(MetricsRow {
            task: self.task,
            total_samples: self.book.len(),
            model_count: 0,
            memory_units: self.memory_units(),
            retrained_buckets: 0,
            replayed_samples: 0,
            fresh_samples,
            max_replay_count: 0,
            mean_error,
            p95_error,
        })
    }

    pub fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        self.book.histogram(0, edges)
    }
}
