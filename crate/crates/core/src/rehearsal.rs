//! Rehearsal stream for retraining a downstream model: draw a sample index
//! uniformly, find its bucket, reconstruct it, and add white noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Label, LocalModel};
use crate::scheduler::{BucketIndex, BucketLayout, SampleId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RehearsalError {
    #[error("sample {id} is outside 1..={total}")]
    OutOfRange { id: SampleId, total: u64 },
    #[error("no trained model for occupied bucket {0}")]
    MissingBackend(BucketIndex),
    #[error("cannot rehearse from an empty layout")]
    EmptyLayout,
    #[error("rehearsal needs at least one draw")]
    NoDraws,
    #[error("augmentation scale must be finite and nonnegative, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RehearsalItem {
    pub id: SampleId,
    pub bucket: BucketIndex,
    #[serde(skip)]
    pub payload: Vec<f64>,
    pub label: Label,
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RehearsalParams {
    pub draws: u64,
    pub sigma_aug: f64,
    pub seed: u64,
}

impl RehearsalParams {
    pub const DEFAULT_SIGMA_AUG: f64 = 0.05;
}

/// Bucket whose range contains `id`.
pub fn locate_bucket(layout: &BucketLayout, id: SampleId) -> Result<BucketIndex, RehearsalError> {
    if id.0 == 0 || id.0 > layout.total {
        return Err(RehearsalError::OutOfRange {
            id,
            total: layout.total,
        });
    }
    let i = layout.entries.partition_point(|e| e.range.hi < id);
    Ok(layout.entries[i].bucket)
}

/// [`locate_bucket`] for a layout counting units of `unit` samples.
pub fn locate_scaled_bucket(
    layout: &BucketLayout,
    unit: u64,
    id: SampleId,
) -> Result<BucketIndex, RehearsalError> {
    if id.0 == 0 || id.0 > layout.total * unit {
        return Err(RehearsalError::OutOfRange {
            id,
            total: layout.total * unit,
        });
    }
    locate_bucket(layout, SampleId((id.0 - 1) / unit + 1))
}

pub fn sample_rehearsal_stream<M: LocalModel>(
    layout: &BucketLayout,
    models: &BTreeMap<BucketIndex, M>,
    params: RehearsalParams,
) -> Result<Vec<RehearsalItem>, RehearsalError> {
    sample_scaled_rehearsal_stream(layout, 1, models, params)
}

pub fn sample_scaled_rehearsal_stream<M: LocalModel>(
    layout: &BucketLayout,
    unit: u64,
    models: &BTreeMap<BucketIndex, M>,
    params: RehearsalParams,
) -> Result<Vec<RehearsalItem>, RehearsalError> {
    if params.draws == 0 {
        return Err(RehearsalError::NoDraws);
    }
    if !(params.sigma_aug >= 0.0 && params.sigma_aug.is_finite()) {
        return Err(RehearsalError::BadSigma(params.sigma_aug));
    }
    if layout.is_empty() {
        return Err(RehearsalError::EmptyLayout);
    }
    if let Some(b) = layout.buckets().find(|b| !models.contains_key(b)) {
        return Err(RehearsalError::MissingBackend(b));
    }
    let total = layout.total * unit;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut items = Vec::with_capacity(params.draws as usize);
    for _ in 0..params.draws {
        let id = SampleId(rng.random_range(1..=total));
        let bucket = locate_scaled_bucket(layout, unit, id)?;
        let model = &models[&bucket];
        let mut payload = model.payload(id)?.to_vec();
        if params.sigma_aug > 0.0 {
            for x in &mut payload {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += params.sigma_aug * z;
            }
        }
        items.push(RehearsalItem {
            id,
            bucket,
            payload,
            label: model.label(id)?,
            error: model.error(id)?,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MemoryModel, NoisyLossyStore, NoisyModel};
    use crate::ledger::{Ledger, NewSample};
    use crate::scheduler::{layout_of, plan_repack};

    fn ledger(total: u64, sigma: f64) -> Ledger<NoisyModel> {
        let store = NoisyLossyStore::new(sigma, 5).unwrap();
        let mut ledger = Ledger::new(MemoryModel::default());
        let fresh = (1..=total)
            .map(|i| NewSample {
                id: SampleId(i),
                label: crate::backend::Label(i as u32),
                birth_task: 1,
                payload: vec![i as f64; 3],
            })
            .collect();
        ledger
            .apply_plan(&plan_repack(0, total).unwrap(), fresh, &store)
            .unwrap();
        ledger
    }

    #[test]
    fn locate_examples() {
        let l13 = layout_of(13);
        assert_eq!(locate_bucket(&l13, SampleId(10)), Ok(BucketIndex(2)));
        assert_eq!(locate_bucket(&l13, SampleId(13)), Ok(BucketIndex(0)));
        assert_eq!(locate_bucket(&l13, SampleId(8)), Ok(BucketIndex(3)));
        assert_eq!(locate_bucket(&layout_of(1), SampleId(1)), Ok(BucketIndex(0)));
        assert!(locate_bucket(&l13, SampleId(14)).is_err());
        assert!(locate_bucket(&l13, SampleId(0)).is_err());
        assert_eq!(
            locate_scaled_bucket(&layout_of(3), 4, SampleId(9)),
            Ok(BucketIndex(0))
        );
        assert_eq!(
            locate_scaled_bucket(&layout_of(3), 4, SampleId(8)),
            Ok(BucketIndex(1))
        );
    }

    #[test]
    fn zero_augmentation_returns_reconstruction() {
        let ledger = ledger(13, 0.0);
        let params = RehearsalParams {
            draws: 50,
            sigma_aug: 0.0,
            seed: 11,
        };
        let items = sample_rehearsal_stream(ledger.layout(), ledger.models(), params).unwrap();
        assert_eq!(items.len(), 50);
        for item in &items {
            assert_eq!(item.payload, vec![item.id.0 as f64; 3]);
            assert_eq!(item.label.0 as u64, item.id.0);
            assert_eq!(Ok(item.bucket), locate_bucket(ledger.layout(), item.id));
        }
    }

    #[test]
    fn stream_is_seeded() {
        let ledger = ledger(13, 0.1);
        let params = RehearsalParams {
            draws: 100,
            sigma_aug: 0.05,
            seed: 3,
        };
        let a = sample_rehearsal_stream(ledger.layout(), ledger.models(), params).unwrap();
        let b = sample_rehearsal_stream(ledger.layout(), ledger.models(), params).unwrap();
        assert_eq!(a, b);
        let c = sample_rehearsal_stream(
            ledger.layout(),
            ledger.models(),
            RehearsalParams { seed: 4, ..params },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_model_is_reported() {
        let models: BTreeMap<BucketIndex, NoisyModel> = BTreeMap::new();
        let params = RehearsalParams {
            draws: 1,
            sigma_aug: 0.0,
            seed: 0,
        };
        assert_eq!(
            sample_rehearsal_stream(&layout_of(5), &models, params),
            Err(RehearsalError::MissingBackend(BucketIndex(2)))
        );
        assert_eq!(
            sample_rehearsal_stream(&layout_of(0), &models, params),
            Err(RehearsalError::EmptyLayout)
        );
        assert_eq!(
            sample_rehearsal_stream(&layout_of(5), &models, RehearsalParams { draws: 0, ..params }),
            Err(RehearsalError::NoDraws)
        );
    }
}
