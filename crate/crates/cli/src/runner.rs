//! Runs a scenario through the selected systems and renders the artifacts.
//!
//! Every artifact is produced in memory first; files are only written once
//! the whole run has succeeded.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use logcl_core::{
    AnalyticErrorModel, BufferSystem, ContinualSystem, ErrorHistogram, Label, LocalModelBackend,
    LogClSystem, MemoryModel, MetricsRow, NewSample, NoisyLossyStore, RehearsalItem,
    RehearsalParams, SampleId, SingleReplaySystem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::scenario::{BackendSpec, Scenario, SystemKind};

/// Everything one system produced.
#[derive(Clone, Debug)]
pub struct SystemRun {
    pub kind: SystemKind,
    pub rows: Vec<MetricsRow>,
    pub histogram: ErrorHistogram,
    /// Final per-sample errors in id order.
    pub errors: Vec<f64>,
    pub max_replay_counts: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub systems: Vec<SystemRun>,
    pub rehearsal: Option<Vec<RehearsalItem>>,
    /// File name to contents, including `manifest.json`.
    pub files: BTreeMap<String, Vec<u8>>,
}

impl RunOutput {
    pub fn system(&self, kind: SystemKind) -> Option<&SystemRun> {
        self.systems.iter().find(|s| s.kind == kind)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            std::fs::rename(&tmp, dir.join(name))
                .with_context(|| format!("moving {name} into place"))?;
        }
        Ok(())
    }
}

/// Synthetic task stream shared by every system: unit-scale payloads and
/// one class per task, cycling through `classes`.
pub fn generate_tasks(scenario: &Scenario, materialize: bool) -> Result<Vec<Vec<NewSample>>> {
    let sizes = scenario.task_sizes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let dim = if materialize { scenario.payload.dim } else { 0 };
    let mut next = 1u64;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(t, &size)| {
            let task = t as u32 + 1;
            let label = Label(t as u32 % scenario.payload.classes);
            (0..size)
                .map(|_| {
                    let id = SampleId(next);
                    next += 1;
                    NewSample {
                        id,
                        label,
                        birth_task: task,
                        payload: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    }
                })
                .collect()
        })
        .collect())
}

fn drive<S: ContinualSystem>(
    kind: SystemKind,
    system: &mut S,
    tasks: &[Vec<NewSample>],
    edges: &[f64],
) -> Result<(Vec<MetricsRow>, ErrorHistogram)> {
    let mut rows = Vec::with_capacity(tasks.len());
    for (t, batch) in tasks.iter().enumerate() {
        let row = system
            .step(batch.clone())
            .with_context(|| format!("{} failed at task {}", kind.as_str(), t + 1))?;
        rows.push(row);
    }
    let histogram = system.error_histogram(edges)?;
    Ok((rows, histogram))
}

fn run_with<B: LocalModelBackend + Clone>(
    scenario: &Scenario,
    backend: B,
    tasks: &[Vec<NewSample>],
) -> Result<(Vec<SystemRun>, Option<Vec<RehearsalItem>>)> {
    let memory = MemoryModel::new(scenario.memory.s_max, scenario.per_sample_raw())?;
    let edges = &scenario.histogram.edges;
    let mut runs = Vec::new();
    let mut rehearsal = None;
    for &kind in &scenario.systems {
        let (rows, histogram, book) = match kind {
            SystemKind::Logcl => {
                let mut sys = LogClSystem::new(backend.clone(), memory, scenario.unit);
                let (rows, hist) = drive(kind, &mut sys, tasks, edges)?;
                if scenario.rehearsal.draws > 0 {
                    let params = RehearsalParams {
                        draws: scenario.rehearsal.draws,
                        sigma_aug: scenario.rehearsal.sigma_aug,
                        seed: scenario.seed ^ 0x5245_4845_4152_5345,
                    };
                    rehearsal = Some(sys.rehearsal_stream(params)?);
                }
                let mut errors: Vec<f64> = sys.book().records().iter().map(|r| r.error).collect();
                errors.extend(sys.counter().side_buffer().iter().map(|_| 0.0));
                (rows, hist, (errors, sys.book().records().iter().map(|r| r.replay_count).collect()))
            }
            SystemKind::SingleReplay => {
                let mut sys = SingleReplaySystem::new(backend.clone(), memory);
                let (rows, hist) = drive(kind, &mut sys, tasks, edges)?;
                let book = sys.book();
                (
                    rows,
                    hist,
                    (
                        book.records().iter().map(|r| r.error).collect(),
                        book.records().iter().map(|r| r.replay_count).collect(),
                    ),
                )
            }
            SystemKind::Buffer => {
                let mut sys = BufferSystem::new(memory);
                let (rows, hist) = drive(kind, &mut sys, tasks, edges)?;
                let n = sys.book().len() as usize;
                (rows, hist, (vec![0.0; n], vec![0; n]))
            }
        };
        runs.push(SystemRun {
            kind,
            rows,
            histogram,
            errors: book.0,
            max_replay_counts: book.1,
        });
    }
    Ok((runs, rehearsal))
}

#[derive(Serialize)]
struct HistogramFile<'a> {
    system: &'a str,
    scenario: &'a str,
    #[serde(flatten)]
    histogram: &'a ErrorHistogram,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a Scenario,
    files: BTreeMap<&'a str, String>,
}

fn csv(rows: &[MetricsRow]) -> Vec<u8> {
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out.into_bytes()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let (systems, rehearsal) = match scenario.backend {
        BackendSpec::Analytic { base_error, growth } => {
            let tasks = generate_tasks(scenario, false)?;
            run_with(scenario, AnalyticErrorModel::new(base_error, growth)?, &tasks)?
        }
        BackendSpec::Noisy { sigma } => {
            let tasks = generate_tasks(scenario, true)?;
            run_with(scenario, NoisyLossyStore::new(sigma, scenario.seed)?, &tasks)?
        }
    };

    let mut files = BTreeMap::new();
    for sys in &systems {
        let name = sys.kind.as_str();
        files.insert(format!("metrics_{name}.csv"), csv(&sys.rows));
        let hist = HistogramFile {
            system: name,
            scenario: &scenario.name,
            histogram: &sys.histogram,
        };
        let mut json = serde_json::to_vec_pretty(&hist)?;
        json.push(b'\n');
        files.insert(format!("histogram_{name}.json"), json);
    }
    if let Some(items) = &rehearsal {
        let mut out = Vec::new();
        for item in items {
            serde_json::to_writer(&mut out, item)?;
            out.push(b'\n');
        }
        files.insert("rehearsal_logcl.ndjson".to_string(), out);
    }
    let manifest = Manifest {
        scenario,
        files: files
            .iter()
            .map(|(name, bytes)| (name.as_str(), sha256_hex(bytes)))
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    files.insert("manifest.json".to_string(), json);

    Ok(RunOutput {
        systems,
        rehearsal,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TaskSpec;

    fn small(backend: BackendSpec) -> Scenario {
        Scenario {
            tasks: TaskSpec {
                sizes: Some(vec![3, 5, 8, 1]),
                count: None,
                size: None,
            },
            backend,
            ..Scenario::builtin("extreme100").unwrap()
        }
    }

    #[test]
    fn produces_all_files() {
        let out = run(&small(BackendSpec::default())).unwrap();
        let names: Vec<_> = out.files.keys().cloned().collect();
        assert_eq!(
            names,
            vec![
                "histogram_buffer.json",
                "histogram_logcl.json",
                "histogram_single_replay.json",
                "manifest.json",
                "metrics_buffer.csv",
                "metrics_logcl.csv",
                "metrics_single_replay.csv",
                "rehearsal_logcl.ndjson",
            ]
        );
        let csv = String::from_utf8(out.files["metrics_logcl.csv"].clone()).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().next(), Some(MetricsRow::CSV_HEADER));
        assert_eq!(out.rehearsal.as_ref().unwrap().len(), 6400);
    }

    #[test]
    fn noisy_runs_are_reproducible() {
        let s = small(BackendSpec::Noisy { sigma: 0.05 });
        assert_eq!(run(&s).unwrap().files, run(&s).unwrap().files);
        let other = Scenario { seed: 5, ..s.clone() };
        assert_ne!(
            run(&s).unwrap().files["metrics_logcl.csv"],
            run(&other).unwrap().files["metrics_logcl.csv"]
        );
    }

    #[test]
    fn tasks_share_one_stream() {
        let s = small(BackendSpec::Noisy { sigma: 0.05 });
        let tasks = generate_tasks(&s, true).unwrap();
        assert_eq!(tasks.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 5, 8, 1]);
        assert_eq!(tasks[3][0].id, SampleId(17));
        assert_eq!(tasks[1][0].birth_task, 2);
        assert!(tasks.iter().flatten().all(|s| s.payload.len() == 32));
    }
}
