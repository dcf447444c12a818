//! Local-model backends and the memory-footprint model.
//!
//! A backend "trains" a local model on a batch of samples and can afterwards
//! reconstruct each of them. Reconstructions carry an error scalar measured
//! against the pristine original, which is how degradation through repeated
//! replay shows up in the metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{BucketIndex, BucketLayout, SampleId};

/// Class label, stored losslessly by every backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("cannot train on an empty batch")]
    EmptyBatch,
    #[error("sample {id} has {got} dimensions, expected {expected}")]
    Dimension {
        id: SampleId,
        got: usize,
        expected: usize,
    },
    #[error("sample {0} was not part of this model's training batch")]
    UnknownSample(SampleId),
    #[error("invalid backend parameter: {0}")]
    Parameter(String),
}

/// One input to a training.
#[derive(Clone, Debug)]
pub struct TrainingItem<'a> {
    pub id: SampleId,
    /// Raw sample for fresh inputs, a reconstruction for replayed ones.
    pub payload: &'a [f64],
    pub label: Label,
    /// Replay count the sample will carry once this training completes.
    pub replay_count: u32,
    /// Pristine sample, used only to measure reconstruction error.
    pub original: &'a [f64],
}

/// Identifies a training so each one draws from its own random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainContext {
    pub task: u32,
    pub target: BucketIndex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub payload: Vec<f64>,
    pub label: Label,
    pub error: f64,
}

pub trait LocalModel {
    fn payload(&self, id: SampleId) -> Result<&[f64], BackendError>;
    fn label(&self, id: SampleId) -> Result<Label, BackendError>;
    fn error(&self, id: SampleId) -> Result<f64, BackendError>;
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn reconstruct(&self, id: SampleId) -> Result<Reconstruction, BackendError> {
        Ok(Reconstruction {
            payload: self.payload(id)?.to_vec(),
            label: self.label(id)?,
            error: self.error(id)?,
        })
    }
}

/// Factory for trained local models. Training never mutates the backend.
pub trait LocalModelBackend {
    type Model: LocalModel;

    fn train(
        &self,
        ctx: TrainContext,
        batch: &[TrainingItem<'_>],
    ) -> Result<Self::Model, BackendError>;
}

/// Per-sample state shared by the concrete models. Ids are kept sorted.
#[derive(Clone, Debug, Default, PartialEq)]
struct Slots {
    ids: Vec<SampleId>,
    labels: Vec<Label>,
    errors: Vec<f64>,
}

impl Slots {
    fn index(&self, id: SampleId) -> Result<usize, BackendError> {
        // batches are usually one contiguous run of ids
        if let Some(first) = self.ids.first() {
            let guess = id.0.wrapping_sub(first.0) as usize;
            if self.ids.get(guess) == Some(&id) {
                return Ok(guess);
            }
        }
        self.ids
            .binary_search(&id)
            .map_err(|_| BackendError::UnknownSample(id))
    }
}

/// Batch positions in ascending id order; `None` when already sorted.
fn sort_permutation(batch: &[TrainingItem<'_>]) -> Option<Vec<usize>> {
    if batch.windows(2).all(|w| w[0].id < w[1].id) {
        return None;
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| batch[i].id);
    Some(order)
}

fn in_id_order<'b, 'a>(
    batch: &'b [TrainingItem<'a>],
) -> impl Iterator<Item = &'b TrainingItem<'a>> + 'b {
    let order = sort_permutation(batch);
    (0..batch.len()).map(move |i| match &order {
        Some(o) => &batch[o[i]],
        None => &batch[i],
    })
}

fn mix_seed(seed: u64, ctx: TrainContext) -> u64 {
    // splitmix64 finalizer over the combined fields
    let mut z = seed
        ^ (u64::from(ctx.task) << 32)
        ^ u64::from(ctx.target.0).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stores every input plus fresh Gaussian noise, so each replay adds another
/// `sigma²` of per-dimension squared error.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyLossyStore {
    sigma: f64,
    seed: u64,
}

impl NoisyLossyStore {
    pub fn new(sigma: f64, seed: u64) -> Result<Self, BackendError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(BackendError::Parameter(format!(
                "noise scale must be a finite nonnegative number, got {sigma}"
            )));
        }
        Ok(NoisyLossyStore { sigma, seed })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyModel {
    slots: Slots,
    dim: usize,
    values: Vec<f64>,
}

impl LocalModel for NoisyModel {
    fn payload(&self, id: SampleId) -> Result<&[f64], BackendError> {
        let i = self.slots.index(id)?;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    fn label(&self, id: SampleId) -> Result<Label, BackendError> {
        Ok(self.slots.labels[self.slots.index(id)?])
    }

    fn error(&self, id: SampleId) -> Result<f64, BackendError> {
        Ok(self.slots.errors[self.slots.index(id)?])
    }

    fn len(&self) -> usize {
        self.slots.ids.len()
    }
}

impl LocalModelBackend for NoisyLossyStore {
    type Model = NoisyModel;

    fn train(
        &self,
        ctx: TrainContext,
        batch: &[TrainingItem<'_>],
    ) -> Result<NoisyModel, BackendError> {
        let dim = batch.first().ok_or(BackendError::EmptyBatch)?.payload.len();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, ctx));
        let mut slots = Slots::default();
        let mut values = Vec::with_capacity(batch.len() * dim);
        for item in in_id_order(batch) {
            for got in [item.payload.len(), item.original.len()] {
                if got != dim {
                    return Err(BackendError::Dimension {
                        id: item.id,
                        got,
                        expected: dim,
                    });
                }
            }
            let mut sq = 0.0;
            for (&x, &orig) in item.payload.iter().zip(item.original) {
                let stored = if self.sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + self.sigma * z
                } else {
                    x
                };
                sq += (stored - orig) * (stored - orig);
                values.push(stored);
            }
            slots.ids.push(item.id);
            slots.labels.push(item.label);
            slots
                .errors
                .push(if dim == 0 { 0.0 } else { (sq / dim as f64).sqrt() });
        }
        Ok(NoisyModel { slots, dim, values })
    }
}

/// Closed-form degradation: a sample replayed `c` times has error
/// `base_error * growth^c`. Payloads are not materialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticErrorModel {
    base_error: f64,
    growth: f64,
}

impl AnalyticErrorModel {
    pub const DEFAULT_BASE_ERROR: f64 = 0.01;
    pub const DEFAULT_GROWTH: f64 = 1.5;

    pub fn new(base_error: f64, growth: f64) -> Result<Self, BackendError> {
        if !(base_error > 0.0 && base_error.is_finite()) {
            return Err(BackendError::Parameter(format!(
                "base error must be positive, got {base_error}"
            )));
        }
        if !(growth >= 1.0 && growth.is_finite()) {
            return Err(BackendError::Parameter(format!(
                "growth factor must be at least 1, got {growth}"
            )));
        }
        Ok(AnalyticErrorModel { base_error, growth })
    }

    pub fn error_for(&self, replay_count: u32) -> f64 {
        (0..replay_count).fold(self.base_error, |e, _| e * self.growth)
    }
}

impl Default for AnalyticErrorModel {
    fn default() -> Self {
        AnalyticErrorModel {
            base_error: Self::DEFAULT_BASE_ERROR,
            growth: Self::DEFAULT_GROWTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticModel {
    slots: Slots,
}

impl LocalModel for AnalyticModel {
    fn payload(&self, id: SampleId) -> Result<&[f64], BackendError> {
        self.slots.index(id).map(|_| &[][..])
    }

    fn label(&self, id: SampleId) -> Result<Label, BackendError> {
        Ok(self.slots.labels[self.slots.index(id)?])
    }

    fn error(&self, id: SampleId) -> Result<f64, BackendError> {
        Ok(self.slots.errors[self.slots.index(id)?])
    }

    fn len(&self) -> usize {
        self.slots.ids.len()
    }
}

impl LocalModelBackend for AnalyticErrorModel {
    type Model = AnalyticModel;

    fn train(
        &self,
        _ctx: TrainContext,
        batch: &[TrainingItem<'_>],
    ) -> Result<AnalyticModel, BackendError> {
        if batch.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        let mut slots = Slots {
            ids: Vec::with_capacity(batch.len()),
            labels: Vec::with_capacity(batch.len()),
            errors: Vec::with_capacity(batch.len()),
        };
        for item in in_id_order(batch) {
            slots.ids.push(item.id);
            slots.labels.push(item.label);
            slots.errors.push(self.error_for(item.replay_count));
        }
        Ok(AnalyticModel { slots })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("bucket {bucket} exceeds the largest index {largest}")]
    AboveLargest {
        bucket: BucketIndex,
        largest: BucketIndex,
    },
    #[error("invalid memory parameter: {0}")]
    Parameter(String),
}

/// Memory footprint in abstract units. The largest local model has size
/// `s_max`; smaller ones shrink geometrically toward `s_max / 8`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub s_max: f64,
    pub per_sample_raw: f64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        MemoryModel {
            s_max: 1.0,
            per_sample_raw: 0.01,
        }
    }
}

impl MemoryModel {
    pub fn new(s_max: f64, per_sample_raw: f64) -> Result<Self, MemoryError> {
        for (name, v) in [("s_max", s_max), ("per_sample_raw", per_sample_raw)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MemoryError::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(MemoryModel {
            s_max,
            per_sample_raw,
        })
    }

    /// `s_max * ((7/8) * 2^(j-K) + 1/8)`
    pub fn bucket_size(&self, j: BucketIndex, largest: BucketIndex) -> Result<f64, MemoryError> {
        if j > largest {
            return Err(MemoryError::AboveLargest { bucket: j, largest });
        }
        let depth = largest.0 - j.0;
        let ratio = if depth > 1100 {
            0.0
        } else {
            2f64.powi(-(depth as i32))
        };
        Ok(self.s_max * (0.875 * ratio + 0.125))
    }

    pub fn total_memory(&self, layout: &BucketLayout) -> f64 {
        let Some(largest) = layout.top() else {
            return 0.0;
        };
        layout
            .buckets()
            .map(|b| self.bucket_size(b, largest).expect("top is the largest"))
            .sum()
    }

    /// Closed-form ceiling on `total_memory` when the largest index is `largest`.
    pub fn memory_bound(&self, largest: BucketIndex) -> f64 {
        self.s_max * (1.75 + f64::from(largest.0 + 1) / 8.0)
    }

    pub fn raw_memory(&self, samples: u64) -> f64 {
        samples as f64 * self.per_sample_raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::layout_of;

    fn item<'a>(id: u64, payload: &'a [f64], original: &'a [f64], c: u32) -> TrainingItem<'a> {
        TrainingItem {
            id: SampleId(id),
            payload,
            label: Label(id as u32 % 3),
            replay_count: c,
            original,
        }
    }

    const CTX: TrainContext = TrainContext {
        task: 1,
        target: BucketIndex(0),
    };

    #[test]
    fn noiseless_store_is_exact() {
        let store = NoisyLossyStore::new(0.0, 9).unwrap();
        let x = [0.25, -1.0, 3.5];
        let model = store.train(CTX, &[item(4, &x, &x, 0)]).unwrap();
        let r = model.reconstruct(SampleId(4)).unwrap();
        assert_eq!(r.payload, x.to_vec());
        assert_eq!(r.error, 0.0);
        assert_eq!(r.label, Label(1));
    }

    #[test]
    fn reconstruct_unknown_id_fails() {
        let store = NoisyLossyStore::new(0.1, 9).unwrap();
        let x = [1.0];
        let model = store.train(CTX, &[item(4, &x, &x, 0)]).unwrap();
        assert_eq!(
            model.reconstruct(SampleId(5)),
            Err(BackendError::UnknownSample(SampleId(5)))
        );
    }

    #[test]
    fn noisy_training_is_deterministic() {
        let store = NoisyLossyStore::new(0.3, 42).unwrap();
        let xs: Vec<[f64; 4]> = (0..16).map(|i| [i as f64; 4]).collect();
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| item(i as u64 + 1, x, x, 0))
            .collect();
        let a = store.train(CTX, &batch).unwrap();
        let b = store.train(CTX, &batch).unwrap();
        assert_eq!(a, b);
        let other = store
            .train(
                TrainContext {
                    task: 2,
                    target: BucketIndex(0),
                },
                &batch,
            )
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn unsorted_batch_is_accepted() {
        let store = AnalyticErrorModel::default();
        let batch = [item(3, &[], &[], 2), item(1, &[], &[], 0)];
        let model = store.train(CTX, &batch).unwrap();
        assert_eq!(model.error(SampleId(1)).unwrap(), 0.01);
        assert!((model.error(SampleId(3)).unwrap() - 0.0225).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let store = NoisyLossyStore::new(0.1, 1).unwrap();
        let a = [1.0, 2.0];
        let b = [1.0];
        let err = store
            .train(CTX, &[item(1, &a, &a, 0), item(2, &b, &b, 0)])
            .unwrap_err();
        assert!(matches!(err, BackendError::Dimension { got: 1, .. }));
        assert_eq!(store.train(CTX, &[]), Err(BackendError::EmptyBatch));
    }

    #[test]
    fn parameters_are_checked() {
        assert!(NoisyLossyStore::new(-1.0, 0).is_err());
        assert!(AnalyticErrorModel::new(0.0, 1.5).is_err());
        assert!(AnalyticErrorModel::new(0.01, 0.5).is_err());
        assert!(MemoryModel::new(0.0, 0.1).is_err());
    }

    #[test]
    fn bucket_size_examples() {
        let unit = MemoryModel::default();
        assert_eq!(unit.bucket_size(BucketIndex(5), BucketIndex(5)), Ok(1.0));
        assert_eq!(unit.bucket_size(BucketIndex(4), BucketIndex(5)), Ok(0.5625));
        let eight = MemoryModel::new(8.0, 0.08).unwrap();
        assert_eq!(eight.bucket_size(BucketIndex(2), BucketIndex(5)), Ok(1.875));
        assert!(unit.bucket_size(BucketIndex(6), BucketIndex(5)).is_err());
    }

    #[test]
    fn total_memory_examples() {
        let m = MemoryModel::default();
        assert_eq!(m.total_memory(&layout_of(0)), 0.0);
        assert_eq!(m.total_memory(&layout_of(1)), 1.0);
        assert_eq!(m.total_memory(&layout_of(3)), 1.5625);
    }
}
