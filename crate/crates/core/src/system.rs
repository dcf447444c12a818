//! Common driver interface over the scheduler and the two baselines, so a
//! harness can feed identical task streams to each and compare rows.

use crate::backend::{LocalModelBackend, MemoryModel};
use crate::baselines::{BufferSystem, SingleReplaySystem};
use crate::large_volume::ScaledCounter;
use crate::ledger::{ErrorHistogram, HistogramError, LedgerError, MetricsRow, NewSample, SampleBook};
use crate::rehearsal::{sample_scaled_rehearsal_stream, RehearsalError, RehearsalItem, RehearsalParams};

pub trait ContinualSystem {
    fn name(&self) -> &'static str;
    /// Feeds one task's samples and returns that task's metrics.
    fn step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError>;
    fn total_samples(&self) -> u64;
    fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError>;
}

/// The logarithmic scheduler with a fixed backend; `unit > 1` selects the
/// large-volume variant.
pub struct LogClSystem<B: LocalModelBackend> {
    backend: B,
    counter: ScaledCounter<B::Model>,
}

impl<B: LocalModelBackend> LogClSystem<B> {
    pub fn new(backend: B, memory: MemoryModel, unit: u64) -> Self {
        LogClSystem {
            backend,
            counter: ScaledCounter::new(unit, memory),
        }
    }

    pub fn counter(&self) -> &ScaledCounter<B::Model> {
        &self.counter
    }

    pub fn book(&self) -> &SampleBook {
        self.counter.ledger().book()
    }

    /// Rehearsal draws over the samples currently held in local models.
    pub fn rehearsal_stream(&self, params: RehearsalParams) -> Result<Vec<RehearsalItem>, RehearsalError> {
        let ledger = self.counter.ledger();
        sample_scaled_rehearsal_stream(ledger.layout(), ledger.unit(), ledger.models(), params)
    }
}

impl<B: LocalModelBackend> ContinualSystem for LogClSystem<B> {
    fn name(&self) -> &'static str {
        "logcl"
    }

    fn step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError> {
        Ok(self.counter.ingest(fresh, &self.backend)?.row)
    }

    fn total_samples(&self) -> u64 {
        self.counter.total_samples()
    }

    fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        self.counter.error_histogram(edges)
    }
}

impl<B: LocalModelBackend> ContinualSystem for SingleReplaySystem<B> {
    fn name(&self) -> &'static str {
        "single_replay"
    }

    fn step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError> {
        self.single_replay_step(fresh)
    }

    fn total_samples(&self) -> u64 {
        self.book().len()
    }

    fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        SingleReplaySystem::error_histogram(self, edges)
    }
}

impl ContinualSystem for BufferSystem {
    fn name(&self) -> &'static str {
        "buffer"
    }

    fn step(&mut self, fresh: Vec<NewSample>) -> Result<MetricsRow, LedgerError> {
        self.buffer_step(fresh)
    }

    fn total_samples(&self) -> u64 {
        self.book().len()
    }

    fn error_histogram(&self, edges: &[f64]) -> Result<ErrorHistogram, HistogramError> {
        BufferSystem::error_histogram(self, edges)
    }
}
