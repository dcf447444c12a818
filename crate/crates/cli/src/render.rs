//! Text, JSON and CSV renderings for the inspection subcommands.

use clap::ValueEnum;
use logcl_core::{layout_of, BucketIndex, BucketLayout, IdRange, RepackPlan, SampleId};
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

pub fn layout(layout: &BucketLayout, format: Format) -> String {
    match format {
        Format::Text => layout.to_string(),
        Format::Json => serde_json::to_string(layout).expect("layout serializes"),
        Format::Csv => {
            let mut out = String::from("bucket,lo,hi");
            for e in &layout.entries {
                out.push_str(&format!("\n{},{},{}", e.bucket, e.range.lo, e.range.hi));
            }
            out
        }
    }
}

#[derive(Serialize)]
struct UntouchedView {
    bucket: BucketIndex,
    range: IdRange,
}

#[derive(Serialize)]
struct PlanView<'a> {
    #[serde(flatten)]
    plan: &'a RepackPlan,
    untouched_ranges: Vec<UntouchedView>,
}

pub fn plan(plan: &RepackPlan, format: Format) -> String {
    let before = layout_of(plan.old_total);
    let untouched: Vec<UntouchedView> = plan
        .untouched
        .iter()
        .map(|&bucket| UntouchedView {
            bucket,
            range: before.range_of(bucket).expect("untouched buckets are occupied"),
        })
        .collect();
    match format {
        Format::Text => {
            let mut out = format!(
                "{} -> {}: pivot bit {}",
                plan.old_total, plan.new_total, plan.pivot
            );
            for u in &untouched {
                out.push_str(&format!("\nbucket {}: untouched {}", u.bucket, u.range));
            }
            for t in &plan.trainings {
                out.push_str(&format!("\nbucket {}: train", t.target));
                for r in &t.replayed {
                    out.push_str(&format!(", replayed {} from bucket {}", r.range, r.source));
                }
                if let Some(f) = t.fresh {
                    out.push_str(&format!(", fresh {f}"));
                }
            }
            out
        }
        Format::Json => serde_json::to_string(&PlanView {
            plan,
            untouched_ranges: untouched,
        })
        .expect("plan serializes"),
        Format::Csv => {
            let mut out = String::from("bucket,role,source,lo,hi");
            for u in &untouched {
                out.push_str(&format!("\n{},untouched,,{},{}", u.bucket, u.range.lo, u.range.hi));
            }
            for t in &plan.trainings {
                for r in &t.replayed {
                    out.push_str(&format!(
                        "\n{},replayed,{},{},{}",
                        t.target, r.source, r.range.lo, r.range.hi
                    ));
                }
                if let Some(f) = t.fresh {
                    out.push_str(&format!("\n{},fresh,,{},{}", t.target, f.lo, f.hi));
                }
            }
            out
        }
    }
}

pub fn locate(total: u64, id: SampleId, bucket: BucketIndex, format: Format) -> String {
    match format {
        Format::Text => bucket.to_string(),
        Format::Json => serde_json::json!({ "total": total, "id": id, "bucket": bucket }).to_string(),
        Format::Csv => format!("total,id,bucket\n{total},{id},{bucket}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use logcl_core::plan_repack;

    #[test]
    fn layout_renderings() {
        assert_eq!(layout(&layout_of(10), Format::Text), "{3:[1-8], 1:[9-10]}");
        assert_eq!(layout(&layout_of(0), Format::Text), "{}");
        assert_eq!(layout(&layout_of(3), Format::Csv), "bucket,lo,hi\n1,1,2\n0,3,3");
        let json: serde_json::Value =
            serde_json::from_str(&layout(&layout_of(10), Format::Json)).unwrap();
        assert_eq!(json["total"], 10);
        assert_eq!(json["entries"][1]["range"]["lo"], 9);
    }

    #[test]
    fn worked_plan_text() {
        let p = plan_repack(10, 3).unwrap();
        assert_eq!(
            plan(&p, Format::Text),
            "10 -> 13: pivot bit 2\n\
             bucket 3: untouched [1-8]\n\
             bucket 2: train, replayed [9-10] from bucket 1, fresh [11-12]\n\
             bucket 0: train, fresh [13-13]"
        );
        assert_eq!(
            plan(&p, Format::Csv),
            "bucket,role,source,lo,hi\n3,untouched,,1,8\n2,replayed,1,9,10\n2,fresh,,11,12\n0,fresh,,13,13"
        );
        let json: serde_json::Value = serde_json::from_str(&plan(&p, Format::Json)).unwrap();
        assert_eq!(json["pivot"], 2);
        assert_eq!(json["untouched_ranges"][0]["range"]["hi"], 8);
    }
}
