//! Scheduler and ledger checked against oracles that never call the planner:
//! a carry-by-carry bucket simulation and direct bucket-membership arithmetic.

use logcl_core::backend::AnalyticModel;
use logcl_core::scheduler::{bucket_of, ceil_log2};
use logcl_core::*;
use proptest::prelude::*;

/// Adds samples one at a time, merging equal-sized buckets like carries in a
/// binary counter. Returns (k, lo, hi) largest bucket first.
fn carry_layout(total: u64) -> Vec<(u32, u64, u64)> {
    let mut stack: Vec<(u32, u64, u64)> = Vec::new();
    for id in 1..=total {
        let mut cur = (0u32, id, id);
        while let Some(&(k, lo, _)) = stack.last() {
            if k != cur.0 {
                break;
            }
            stack.pop();
            cur = (k + 1, lo, cur.2);
        }
        stack.push(cur);
    }
    stack
}

/// Bucket of `id` among `total` samples: walk buckets from the largest.
fn oracle_bucket(total: u64, id: u64) -> u32 {
    let mut end = 0;
    for k in (0..64).rev() {
        if total >> k & 1 == 1 {
            end += 1u64 << k;
            if id <= end {
                return k;
            }
        }
    }
    panic!("id {id} beyond total {total}");
}

/// Replay histories under consolidated per-task repacks: a sample is replayed
/// at a task iff its bucket differs between the old and new totals.
fn oracle_histories(sizes: &[u64]) -> Vec<Vec<u32>> {
    let mut histories: Vec<Vec<u32>> = Vec::new();
    let mut total = 0u64;
    for (t, &size) in sizes.iter().enumerate() {
        let task = t as u32 + 1;
        let new_total = total + size;
        for id in 1..=total {
            if oracle_bucket(total, id) != oracle_bucket(new_total, id) {
                histories[(id - 1) as usize].push(task);
            }
        }
        histories.extend((0..size).map(|_| Vec::new()));
        total = new_total;
    }
    histories
}

fn fresh(from: u64, n: u64, task: u32) -> Vec<NewSample> {
    (from..from + n)
        .map(|i| NewSample {
            id: SampleId(i),
            label: Label((i % 7) as u32),
            birth_task: task,
            payload: Vec::new(),
        })
        .collect()
}

fn run(sizes: &[u64]) -> Ledger<AnalyticModel> {
    let backend = AnalyticErrorModel::default();
    let mut ledger = Ledger::new(MemoryModel::default());
    for &s in sizes {
        let old = ledger.layout().total;
        let plan = plan_repack(old, s).unwrap();
        let batch = fresh(old + 1, s, ledger.task() + 1);
        ledger.apply_plan(&plan, batch, &backend).unwrap();
        assert_eq!(ledger.layout(), &layout_of(old + s));
    }
    ledger
}

fn triples(layout: &BucketLayout) -> Vec<(u32, u64, u64)> {
    layout
        .entries
        .iter()
        .map(|e| (e.bucket.0, e.range.lo.0, e.range.hi.0))
        .collect()
}

#[test]
fn layout_matches_carry_simulation() {
    for n in 0..=4096 {
        assert_eq!(triples(&layout_of(n)), carry_layout(n), "n = {n}");
    }
}

#[test]
fn replay_histories_match_oracle_for_3_1_4() {
    let sizes = [3, 1, 4];
    let ledger = run(&sizes);
    let expected = oracle_histories(&sizes);
    for rec in ledger.records() {
        assert_eq!(rec.retrain_tasks.as_slice(), expected[(rec.id.0 - 1) as usize], "{}", rec.id);
    }
    // 3 -> 4 moves 1..3 into bucket 2; 4 -> 8 moves 1..4 into bucket 3
    assert_eq!(ledger.record(SampleId(1)).unwrap().retrain_tasks.as_slice(), [2, 3]);
}

#[test]
fn one_sample_tasks_replay_sample_one_six_times() {
    let ledger = run(&[1; 127]);
    assert_eq!(ledger.replay_count(SampleId(1)).unwrap(), 6);
    assert_eq!(oracle_histories(&[1; 127])[0].len(), 6);
}

#[test]
fn occupancy_averages_half_the_bits() {
    for m in [4u32, 10, 16] {
        let n = 1u64 << m;
        let sum: u64 = (1..=n).map(|t| layout_of(t).model_count() as u64).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - f64::from(m) / 2.0).abs() <= 1.0, "m={m}: {mean}");
    }
}

#[test]
fn memory_stays_under_closed_form() {
    let model = MemoryModel::default();
    for n in 1..=1_000_000u64 {
        let layout = layout_of(n);
        let bound = model.memory_bound(layout.top().unwrap());
        assert!(model.total_memory(&layout) <= bound, "n = {n}");
        let k = 63 - n.leading_zeros();
        assert_eq!(layout.top(), Some(BucketIndex(k)));
    }
}

#[test]
fn memory_is_not_monotone_in_sample_count() {
    // collapsing buckets can shrink the footprint
    let model = MemoryModel::default();
    assert_eq!(model.total_memory(&layout_of(3)), 1.5625);
    assert_eq!(model.total_memory(&layout_of(4)), 1.0);
    assert!(model.raw_memory(4) > model.raw_memory(3));
}

#[test]
fn analytic_histogram_matches_replay_distribution() {
    let sizes = vec![37u64; 100];
    let ledger = run(&sizes);
    let histories = oracle_histories(&sizes);
    let model = AnalyticErrorModel::default();
    let max_c = histories.iter().map(Vec::len).max().unwrap() as u32;
    // one bin around each level 0.01 * 1.5^c, edges at geometric midpoints
    let levels: Vec<f64> = (0..=max_c).map(|c| model.error_for(c)).collect();
    let mut edges = vec![levels[0] / 1.5f64.sqrt()];
    edges.extend(levels.iter().map(|l| l * 1.5f64.sqrt()));
    let hist = ledger.error_histogram(&edges).unwrap();
    let n = histories.len() as f64;
    for c in 0..=max_c as usize {
        let expected = histories.iter().filter(|h| h.len() == c).count() as f64 / n;
        assert!((hist.bins[c] - expected).abs() < 1e-12, "c={c}");
    }
    assert_eq!(hist.zero + hist.underflow + hist.overflow, 0.0);
}

#[test]
fn equal_tasks_give_nondecreasing_gaps() {
    for size in [1u64, 3, 5, 16, 64, 100, 333] {
        let ledger = run(&vec![size; 120]);
        for rec in ledger.records() {
            let gaps = rec.retrain_gaps();
            assert!(gaps.windows(2).all(|w| w[0] <= w[1]), "size {size}, {}: {gaps:?}", rec.id);
        }
    }
    let ledger = run(&[1; 64]);
    assert_eq!(ledger.retrain_gaps(SampleId(1)).unwrap(), vec![1, 2, 4, 8, 16, 32]);
}

fn sizes_strategy(max_tasks: usize, max_size: u64) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1..=max_size, 1..=max_tasks)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_keep_upper_buckets_and_feed_upward(old in 0u64..1 << 40, size in 1u64..1 << 20) {
        let plan = plan_repack(old, size).unwrap();
        let before = layout_of(old);
        let after = layout_of(old + size);
        prop_assert_eq!(plan.pivot.0, 63 - (old ^ (old + size)).leading_zeros());
        for &k in &plan.untouched {
            prop_assert!(k > plan.pivot);
            prop_assert_eq!(before.range_of(k), after.range_of(k));
        }
        let above: Vec<_> = before.buckets().filter(|&k| k > plan.pivot).collect();
        prop_assert_eq!(&plan.untouched, &above);
        let mut with_replay = 0;
        let mut next = plan.prefix() + 1;
        for t in &plan.trainings {
            prop_assert!(t.target <= plan.pivot);
            prop_assert_eq!(t.replayed_len() + t.fresh_len(), t.target.capacity());
            prop_assert_eq!(Some(t.target_range()), after.range_of(t.target));
            if !t.replayed.is_empty() {
                with_replay += 1;
                prop_assert_eq!(t.target, plan.pivot);
            }
            for r in &t.replayed {
                prop_assert!(r.source < t.target);
                prop_assert_eq!(r.range.lo.0, next);
                next = r.range.hi.0 + 1;
            }
            if let Some(f) = t.fresh {
                prop_assert_eq!(f.lo.0, next);
                next = f.hi.0 + 1;
            }
        }
        prop_assert_eq!(next, old + size + 1);
        let has_low = old & ((1u64 << plan.pivot.0) - 1) > 0;
        prop_assert_eq!(with_replay, u32::from(has_low));
    }

    #[test]
    fn occupied_buckets_are_the_set_bits(n in 1u64..1 << 62) {
        let layout = layout_of(n);
        prop_assert!(validate_layout(&layout).is_ok());
        prop_assert_eq!(layout.model_count() as u32, n.count_ones());
        prop_assert!(layout.model_count() as u32 <= max_models_bound(n).unwrap());
        for e in &layout.entries {
            prop_assert_eq!(n >> e.bucket.0 & 1, 1);
            prop_assert_eq!(bucket_of(n, e.range.lo), Some(e.bucket));
            prop_assert_eq!(bucket_of(n, e.range.hi), Some(e.bucket));
        }
    }

    #[test]
    fn incremental_ledger_matches_oracle(sizes in sizes_strategy(60, 200)) {
        let ledger = run(&sizes);
        ledger.verify().unwrap();
        let expected = oracle_histories(&sizes);
        let n: u64 = sizes.iter().sum();
        for rec in ledger.records() {
            prop_assert_eq!(rec.retrain_tasks.as_slice(), &expected[(rec.id.0 - 1) as usize]);
            prop_assert!(rec.replay_count <= ceil_log2(n));
            prop_assert_eq!(rec.bucket.map(|b| b.0), Some(oracle_bucket(n, rec.id.0)));
        }
    }

    #[test]
    fn untouched_records_survive_bit_identically(sizes in sizes_strategy(30, 300), last in 1u64..300) {
        let mut ledger = run(&sizes);
        let old = ledger.layout().total;
        let plan = plan_repack(old, last).unwrap();
        let snapshot = ledger.records().to_vec();
        let backend = AnalyticErrorModel::default();
        let batch = fresh(old + 1, last, ledger.task() + 1);
        ledger.apply_plan(&plan, batch, &backend).unwrap();
        let kept = plan.prefix() as usize;
        prop_assert_eq!(&ledger.records()[..kept], &snapshot[..kept]);
        for rec in &ledger.records()[kept..old as usize] {
            prop_assert_eq!(rec.replay_count, snapshot[(rec.id.0 - 1) as usize].replay_count + 1);
        }
    }
}
