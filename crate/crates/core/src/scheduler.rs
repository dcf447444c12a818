//! Binary-counter assignment of samples to local-model buckets.
//!
//! After `n` samples have arrived, bucket `k` is occupied iff bit `k` of `n`
//! is set, and then holds exactly `2^k` consecutive samples. Older samples
//! sit in larger buckets. A new task flips the bits of the total at and below
//! the most significant differing bit (the pivot); only those buckets are
//! retrained, everything above the pivot is left alone.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1-based arrival index of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl SampleId {
    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index `k` of a local model; an occupied bucket holds `2^k` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BucketIndex(pub u32);

impl BucketIndex {
    pub fn get(self) -> u32 {
        self.0
    }

    /// Number of samples (or units) the bucket holds when occupied.
    pub fn capacity(self) -> u64 {
        1u64 << self.0
    }
}

impl fmt::Display for BucketIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Inclusive range of sample ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdRange {
    pub lo: SampleId,
    pub hi: SampleId,
}

impl IdRange {
    pub fn new(lo: u64, hi: u64) -> Self {
        IdRange {
            lo: SampleId(lo),
            hi: SampleId(hi),
        }
    }

    /// Number of ids covered; zero when `hi < lo`.
    pub fn len(&self) -> u64 {
        (self.hi.0 + 1).saturating_sub(self.lo.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.lo <= id && id <= self.hi
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> {
        (self.lo.0..=self.hi.0).map(SampleId)
    }

    /// Expands a range of unit indices into the sample ids those units cover,
    /// unit `u` spanning samples `(u-1)*unit+1 ..= u*unit`.
    pub fn expand(&self, unit: u64) -> IdRange {
        IdRange::new((self.lo.0 - 1) * unit + 1, self.hi.0 * unit)
    }
}

impl fmt::Display for IdRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}-{}]", self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub bucket: BucketIndex,
    pub range: IdRange,
}

/// Occupied buckets for a given total, largest bucket (oldest samples) first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketLayout {
    pub total: u64,
    pub entries: Vec<BucketEntry>,
}

impl BucketLayout {
    pub fn empty() -> Self {
        BucketLayout {
            total: 0,
            entries: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of occupied buckets.
    pub fn model_count(&self) -> usize {
        self.entries.len()
    }

    pub fn buckets(&self) -> impl Iterator<Item = BucketIndex> + '_ {
        self.entries.iter().map(|e| e.bucket)
    }

    pub fn range_of(&self, bucket: BucketIndex) -> Option<IdRange> {
        self.entries
            .iter()
            .find(|e| e.bucket == bucket)
            .map(|e| e.range)
    }

    /// Largest occupied bucket index.
    pub fn top(&self) -> Option<BucketIndex> {
        self.entries.first().map(|e| e.bucket)
    }
}

impl fmt::Display for BucketLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", e.bucket, e.range)?;
        }
        f.write_str("}")
    }
}

/// Samples read back from a source bucket to train a larger one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySource {
    pub source: BucketIndex,
    pub range: IdRange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketTraining {
    pub target: BucketIndex,
    pub replayed: Vec<ReplaySource>,
    pub fresh: Option<IdRange>,
}

impl BucketTraining {
    pub fn replayed_len(&self) -> u64 {
        self.replayed.iter().map(|r| r.range.len()).sum()
    }

    pub fn fresh_len(&self) -> u64 {
        self.fresh.map_or(0, |r| r.len())
    }

    /// Full id range the target bucket holds after training.
    pub fn target_range(&self) -> IdRange {
        let lo = self
            .replayed
            .first()
            .map(|r| r.range.lo)
            .or(self.fresh.map(|r| r.lo))
            .expect("training with no inputs");
        let hi = self
            .fresh
            .map(|r| r.hi)
            .or(self.replayed.last().map(|r| r.range.hi))
            .expect("training with no inputs");
        IdRange { lo, hi }
    }
}

/// Delta between `layout_of(old_total)` and `layout_of(new_total)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepackPlan {
    pub old_total: u64,
    pub new_total: u64,
    pub pivot: BucketIndex,
    /// Descending by target index.
    pub trainings: Vec<BucketTraining>,
    /// Descending; identical ranges before and after.
    pub untouched: Vec<BucketIndex>,
}

impl RepackPlan {
    pub fn replayed_samples(&self) -> u64 {
        self.trainings.iter().map(|t| t.replayed_len()).sum()
    }

    pub fn fresh_samples(&self) -> u64 {
        self.trainings.iter().map(|t| t.fresh_len()).sum()
    }

    /// First id no longer held by an untouched bucket.
    pub fn prefix(&self) -> u64 {
        clear_low_bits(self.old_total, self.pivot.0)
    }

    /// Rewrites a plan over unit counts into sample ids, each unit spanning
    /// `unit` consecutive samples.
    pub fn expand(&self, unit: u64) -> RepackPlan {
        RepackPlan {
            old_total: self.old_total * unit,
            new_total: self.new_total * unit,
            pivot: self.pivot,
            trainings: self
                .trainings
                .iter()
                .map(|t| BucketTraining {
                    target: t.target,
                    replayed: t
                        .replayed
                        .iter()
                        .map(|r| ReplaySource {
                            source: r.source,
                            range: r.range.expand(unit),
                        })
                        .collect(),
                    fresh: t.fresh.map(|r| r.expand(unit)),
                })
                .collect(),
            untouched: self.untouched.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("totals must grow: old total {old} is not below new total {new}")]
    NotGrowing { old: u64, new: u64 },
    #[error("a task must contain at least one sample")]
    EmptyTask,
    #[error("bound is undefined for total {0}; need at least one sample")]
    NoSamples(u64),
    #[error("total overflow adding {task} samples to {old}")]
    Overflow { old: u64, task: u64 },
}

/// First rule a layout breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutViolation {
    #[error("R2: bucket {bucket} holds {held} samples, expected {expected}")]
    R2 {
        bucket: BucketIndex,
        held: u64,
        expected: u64,
    },
    #[error("R3: bucket {next} follows bucket {bucket}; indices must decrease with sample id")]
    R3 {
        bucket: BucketIndex,
        next: BucketIndex,
    },
    #[error("contiguity: range {range} does not start right after id {after}")]
    Contiguity { range: IdRange, after: u64 },
    #[error("coverage: buckets cover [1-{covered}] but total is {total}")]
    Coverage { covered: u64, total: u64 },
}

impl LayoutViolation {
    pub fn rule(&self) -> &'static str {
        match self {
            LayoutViolation::R2 { .. } => "R2",
            LayoutViolation::R3 { .. } => "R3",
            LayoutViolation::Contiguity { .. } => "contiguity",
            LayoutViolation::Coverage { .. } => "coverage",
        }
    }
}

fn clear_low_bits(n: u64, through: u32) -> u64 {
    if through >= 63 {
        0
    } else {
        n & !((1u64 << (through + 1)) - 1)
    }
}

/// `⌈log₂ n⌉` for `n ≥ 1`; zero for `n ≤ 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// `⌊log₂ n⌋` for `n ≥ 1`.
pub fn floor_log2(n: u64) -> u32 {
    debug_assert!(n > 0);
    63 - n.leading_zeros()
}

/// Iterates the set bits of `n` from most to least significant.
fn set_bits_desc(n: u64) -> impl Iterator<Item = u32> {
    (0..64u32).rev().filter(move |k| n >> k & 1 == 1)
}

pub fn layout_of(total: u64) -> BucketLayout {
    let mut entries = Vec::with_capacity(total.count_ones() as usize);
    let mut next = 1u64;
    for k in set_bits_desc(total) {
        let size = 1u64 << k;
        entries.push(BucketEntry {
            bucket: BucketIndex(k),
            range: IdRange::new(next, next + size - 1),
        });
        next += size;
    }
    BucketLayout { total, entries }
}

/// Highest bit where `old_total` and `new_total` differ.
pub fn pivot_bit(old_total: u64, new_total: u64) -> Result<BucketIndex, ScheduleError> {
    if old_total >= new_total {
        return Err(ScheduleError::NotGrowing {
            old: old_total,
            new: new_total,
        });
    }
    Ok(BucketIndex(floor_log2(old_total ^ new_total)))
}

/// Plans the retraining needed when a task of `task_size` samples arrives on
/// top of `old_total` samples.
///
/// The bucket at the pivot absorbs every sample previously held below the
/// pivot plus the first fresh samples; remaining lower bits are filled with
/// fresh samples only.
pub fn plan_repack(old_total: u64, task_size: u64) -> Result<RepackPlan, ScheduleError> {
    if task_size == 0 {
        return Err(ScheduleError::EmptyTask);
    }
    let new_total = old_total
        .checked_add(task_size)
        .ok_or(ScheduleError::Overflow {
            old: old_total,
            task: task_size,
        })?;
    let pivot = pivot_bit(old_total, new_total)?;
    let prefix = clear_low_bits(old_total, pivot.0);
    let old_layout = layout_of(old_total);

    let untouched = old_layout
        .entries
        .iter()
        .filter(|e| e.bucket > pivot)
        .map(|e| e.bucket)
        .collect();
    let mut pending_replay: Vec<ReplaySource> = old_layout
        .entries
        .iter()
        .filter(|e| e.bucket < pivot)
        .map(|e| ReplaySource {
            source: e.bucket,
            range: e.range,
        })
        .collect();

    let mut trainings = Vec::new();
    let mut next = prefix + 1;
    let mut fresh_next = old_total + 1;
    for k in set_bits_desc(new_total).filter(|&k| k <= pivot.0) {
        let hi = next + (1u64 << k) - 1;
        let replayed = std::mem::take(&mut pending_replay);
        let fresh = (fresh_next <= hi).then(|| IdRange::new(fresh_next, hi));
        fresh_next = hi + 1;
        trainings.push(BucketTraining {
            target: BucketIndex(k),
            replayed,
            fresh,
        });
        next = hi + 1;
    }
    debug_assert_eq!(next, new_total + 1);

    Ok(RepackPlan {
        old_total,
        new_total,
        pivot,
        trainings,
        untouched,
    })
}

pub fn validate_layout(layout: &BucketLayout) -> Result<(), LayoutViolation> {
    let mut covered = 0u64;
    let mut prev: Option<BucketIndex> = None;
    for e in &layout.entries {
        let expected = e.bucket.capacity();
        if e.range.len() != expected {
            return Err(LayoutViolation::R2 {
                bucket: e.bucket,
                held: e.range.len(),
                expected,
            });
        }
        if let Some(p) = prev {
            // equal indices would mean one bucket holding 2^(k+1) samples
            if e.bucket == p {
                return Err(LayoutViolation::R2 {
                    bucket: e.bucket,
                    held: 2 * expected,
                    expected,
                });
            }
            if e.bucket > p {
                return Err(LayoutViolation::R3 {
                    bucket: p,
                    next: e.bucket,
                });
            }
        }
        if e.range.lo.0 != covered + 1 {
            return Err(LayoutViolation::Contiguity {
                range: e.range,
                after: covered,
            });
        }
        covered = e.range.hi.0;
        prev = Some(e.bucket);
    }
    if covered != layout.total {
        return Err(LayoutViolation::Coverage {
            covered,
            total: layout.total,
        });
    }
    Ok(())
}

/// Upper bound on occupied buckets for `total` samples: `⌈log₂ total⌉ + 1`.
pub fn max_models_bound(total: u64) -> Result<u32, ScheduleError> {
    if total < 1 {
        return Err(ScheduleError::NoSamples(total));
    }
    Ok(ceil_log2(total) + 1)
}

/// Bucket holding `id` among `total` samples, by direct bit arithmetic.
pub fn bucket_of(total: u64, id: SampleId) -> Option<BucketIndex> {
    if id.0 == 0 || id.0 > total {
        return None;
    }
    let mut end = 0u64;
    for k in set_bits_desc(total) {
        end += 1u64 << k;
        if id.0 <= end {
            return Some(BucketIndex(k));
        }
    }
    unreachable!("id within total always lands in a bucket")
}
