//! Experiment orchestration: the ablation matrix of configurations
//! (FM x mode switching x observation channels x data scale), seeded
//! per cell, run in parallel, resumable, and aggregated into reports.

pub mod report;

pub use report::{report, write_results, ReportFiles};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{collect_calibration, fit, CalibError, CalibrationModel, CalibrationSchedule};
use crate::expert::{collect_demos, DemoScript, ExpertError};
use crate::forcematch::{force_match, replay, FmError, ReplayOptions, ReplayPlan, ReplayRecord};
use crate::policy::{
    dataset_from_records, rollout, train, ObsConfig, PolicyError, StsMode, TrainConfig,
};
use crate::world::Task;

pub const SPEC_SCHEMA: &str = "ablation-spec/1";
pub const RESULTS_SCHEMA: &str = "results/1";

/// Replays generated per raw demo when building a training set: one
/// clean-labelled and the rest with jittered switch labels, all with
/// corrective setpoint noise.
pub const REPLAYS_PER_DEMO: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad schema: expected {expected}, got {got}")]
    BadSchema { expected: String, got: String },
    #[error("empty ablation axis: {0}")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Fm(#[from] FmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn default_schema() -> String {
    SPEC_SCHEMA.to_string()
}

/// The configuration matrix: the cross product of the listed axis values,
/// times tasks, times training seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationSpec {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub fm: Vec<bool>,
    pub sts_mode: Vec<StsMode>,
    pub wrist: Vec<bool>,
    pub rel_pose: Vec<bool>,
    pub demos_per_task: Vec<usize>,
    /// Number of training seeds per configuration.
    pub seeds: usize,
    pub episodes_per_seed: usize,
    pub train: TrainConfig,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            schema: SPEC_SCHEMA.to_string(),
            seed: 0,
            tasks: Task::ALL.to_vec(),
            fm: vec![true, false],
            sts_mode: vec![
                StsMode::Switching,
                StsMode::VisualOnly,
                StsMode::TactileOnly,
                StsMode::Excluded,
            ],
            wrist: vec![true],
            rel_pose: vec![true],
            demos_per_task: vec![20],
            seeds: 3,
            episodes_per_seed: 10,
            train: TrainConfig::default(),
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema != SPEC_SCHEMA {
            return Err(HarnessError::BadSchema {
                expected: SPEC_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        for (name, empty) in [
            ("tasks", self.tasks.is_empty()),
            ("fm", self.fm.is_empty()),
            ("sts_mode", self.sts_mode.is_empty()),
            ("wrist", self.wrist.is_empty()),
            ("rel_pose", self.rel_pose.is_empty()),
            ("demos_per_task", self.demos_per_task.is_empty()),
            ("seeds", self.seeds == 0),
            ("episodes_per_seed", self.episodes_per_seed == 0),
        ] {
            if empty {
                return Err(HarnessError::EmptyAxis(name));
            }
        }
        Ok(())
    }

    /// All cells in the canonical (task, config, seed) lexicographic order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &task in &self.tasks {
            for &demos in &self.demos_per_task {
                for &fm in &self.fm {
                    for &sts in &self.sts_mode {
                        for &wrist in &self.wrist {
                            for &rel_pose in &self.rel_pose {
                                for seed_index in 0..self.seeds {
                                    out.push(Cell {
                                        task,
                                        config: CellConfig {
                                            fm,
                                            sts,
                                            wrist,
                                            rel_pose,
                                            demos,
                                        },
                                        seed_index,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out.sort_by_key(|c| c.id());
        out
    }
}

/// One point of the ablation matrix, minus the training seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub fm: bool,
    pub sts: StsMode,
    pub wrist: bool,
    pub rel_pose: bool,
    pub demos: usize,
}

impl CellConfig {
    pub fn id(&self) -> String {
        let sts = match self.sts {
            StsMode::Switching => "switching",
            StsMode::VisualOnly => "visual_only",
            StsMode::TactileOnly => "tactile_only",
            StsMode::Excluded => "excluded",
        };
        format!(
            "fm{}-{}-wrist{}-rel{}-d{:02}",
            self.fm as u8, sts, self.wrist as u8, self.rel_pose as u8, self.demos
        )
    }

    pub fn obs_config(&self) -> ObsConfig {
        ObsConfig {
            sts: self.sts,
            wrist: self.wrist,
            rel_pose: self.rel_pose,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub task: Task,
    pub config: CellConfig,
    pub seed_index: usize,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{:?}-{}-s{}", self.task, self.config.id(), self.seed_index)
    }
}

/// FNV-1a, the stated per-cell seed hash: cell seed =
/// fnv1a(spec_seed || cell id), making every cell independently
/// reproducible from the spec alone.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(spec_seed: u64, tag: &str) -> u64 {
    fnv1a(format!("{spec_seed}|{tag}").as_bytes())
}

/// One evaluated cell: a trained policy's 10-episode success count plus
/// the per-episode switch timing used by the Fig.-13-style histogram.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub cell_seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub statuses: Vec<String>,
    /// (switch step - first contact step) for episodes that had both.
    pub switch_timing: Vec<i64>,
    pub final_loss: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultTable {
    #[serde(default)]
    pub schema: String,
    pub spec: AblationSpec,
    /// Sorted by cell id.
    pub cells: Vec<CellResult>,
}

impl ResultTable {
    /// Mean success rate (percent) over the given cells.
    fn mean_pct<'a>(cells: impl Iterator<Item = &'a CellResult>) -> Option<f64> {
        let mut n = 0usize;
        let mut acc = 0.0;
        for c in cells {
            if c.error.is_some() || c.episodes == 0 {
                continue;
            }
            acc += 100.0 * c.successes as f64 / c.episodes as f64;
            n += 1;
        }
        (n > 0).then(|| acc / n as f64)
    }

    /// Per-task mean success rate (percent) for one configuration.
    pub fn task_mean(&self, task: Task, config: &CellConfig) -> Option<f64> {
        Self::mean_pct(
            self.cells
                .iter()
                .filter(|c| c.cell.task == task && c.cell.config == *config),
        )
    }

    /// Across-task mean: mean of per-task means (equal episode counts).
    pub fn across_task_mean(&self, config: &CellConfig) -> Option<f64> {
        let means: Vec<f64> = self
            .spec
            .tasks
            .iter()
            .filter_map(|&t| self.task_mean(t, config))
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    /// Standard deviation of per-seed success rates for one (task, config).
    pub fn seed_std(&self, task: Task, config: &CellConfig) -> Option<f64> {
        let rates: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| {
                c.cell.task == task && c.cell.config == *config && c.error.is_none()
            })
            .map(|c| 100.0 * c.successes as f64 / c.episodes.max(1) as f64)
            .collect();
        if rates.is_empty() {
            return None;
        }
        let m = rates.iter().sum::<f64>() / rates.len() as f64;
        Some((rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rates.len() as f64).sqrt())
    }

    pub fn configs(&self) -> Vec<CellConfig> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.cell.config) {
                seen.push(c.cell.config);
            }
        }
        seen.sort_by_key(|c| c.id());
        seen
    }
}

/// Per-task integer-binned histogram of (switch step - contact step).
pub fn mode_timing_histogram(table: &ResultTable) -> BTreeMap<Task, BTreeMap<i64, usize>> {
    let mut out: BTreeMap<Task, BTreeMap<i64, usize>> = BTreeMap::new();
    for c in &table.cells {
        let hist = out.entry(c.cell.task).or_default();
        for &t in &c.switch_timing {
            *hist.entry(t).or_default() += 1;
        }
    }
    out
}

/// Training episodes for (task, fm, demo count). Demo and replay seeds
/// derive from the spec seed and those coordinates only, so every cell
/// sharing them regenerates identical records.
fn training_records(
    spec: &AblationSpec,
    model: &CalibrationModel,
    task: Task,
    fm: bool,
    demos_n: usize,
) -> Result<Vec<ReplayRecord>, HarnessError> {
    let demo_seed = derive_seed(spec.seed, &format!("demos|{task:?}|{demos_n}"));
    let (demos, _) = collect_demos(&DemoScript::for_task(task), demos_n, demo_seed)?;
    let opts = ReplayOptions::for_training();
    let mut records = Vec::with_capacity(demos.len() * REPLAYS_PER_DEMO);
    for (i, d) in demos.iter().enumerate() {
        let plan = if fm {
            force_match(d, model)?
        } else {
            ReplayPlan::passthrough(d)
        };
        for k in 0..REPLAYS_PER_DEMO {
            let seed = derive_seed(
                spec.seed,
                &format!("replay|{task:?}|fm{}|{demos_n}|{i}|{k}", fm as u8),
            );
            records.push(replay(d, &plan, &opts, seed)?);
        }
    }
    Ok(records)
}

fn run_cell(
    spec: &AblationSpec,
    records: &[ReplayRecord],
    cell: &Cell,
) -> Result<CellResult, HarnessError> {
    let cell_seed = derive_seed(spec.seed, &cell.id());
    let data = dataset_from_records(records, &cell.config.obs_config());
    let policy = train(&data, &spec.train, cell_seed)?;
    let mut result = CellResult {
        cell: *cell,
        cell_seed,
        episodes: spec.episodes_per_seed,
        successes: 0,
        statuses: Vec::new(),
        switch_timing: Vec::new(),
        final_loss: policy.final_loss,
        error: None,
    };
    for ep in 0..spec.episodes_per_seed {
        let seed = derive_seed(spec.seed, &format!("{}|ep{ep}", cell.id()));
        let rec = rollout(&policy, cell.task, seed)?;
        if rec.success {
            result.successes += 1;
        }
        result.statuses.push(format!("{:?}", rec.status));
        if let (Some(s), Some(c)) = (rec.mode_switch_step, rec.first_contact_step) {
            result.switch_timing.push(s as i64 - c as i64);
        }
    }
    Ok(result)
}

/// Runs the matrix with up to `workers` cells in flight. If `out_dir` is
/// given, each finished cell is written to `out_dir/cells/<id>.json` and
/// existing files are loaded instead of recomputed, so an interrupted run
/// resumes to an identical table. Per-cell failures become error cells.
pub fn run_ablation(
    spec: &AblationSpec,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<ResultTable, HarnessError> {
    spec.validate()?;
    let cells_dir = match out_dir {
        Some(d) => {
            let cd = d.join("cells");
            std::fs::create_dir_all(&cd)?;
            Some(cd)
        }
        None => None,
    };

    let calib_seed = derive_seed(spec.seed, "calibration");
    let (samples, _) = collect_calibration(&CalibrationSchedule::default(), calib_seed)?;
    let model = fit(&samples)?;

    let cells = spec.cells();
    let record_cache: Mutex<BTreeMap<String, std::sync::Arc<Vec<ReplayRecord>>>> =
        Mutex::new(BTreeMap::new());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let mut results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                if let Some(dir) = &cells_dir {
                    let path = dir.join(format!("{}.json", cell.id()));
                    if let Ok(text) = std::fs::read_to_string(&path) {
                        if let Ok(prev) = serde_json::from_str::<CellResult>(&text) {
                            return prev;
                        }
                    }
                }
                let result = (|| -> Result<CellResult, HarnessError> {
                    let key = format!(
                        "{:?}|{}|{}",
                        cell.task, cell.config.fm as u8, cell.config.demos
                    );
                    let cached = record_cache.lock().unwrap().get(&key).cloned();
                    let records = match cached {
                        Some(r) => r,
                        None => {
                            let r = std::sync::Arc::new(training_records(
                                spec,
                                &model,
                                cell.task,
                                cell.config.fm,
                                cell.config.demos,
                            )?);
                            record_cache
                                .lock()
                                .unwrap()
                                .entry(key)
                                .or_insert_with(|| r.clone())
                                .clone()
                        }
                    };
                    run_cell(spec, &records, cell)
                })();
                let result = result.unwrap_or_else(|e| CellResult {
                    cell: *cell,
                    cell_seed: derive_seed(spec.seed, &cell.id()),
                    episodes: 0,
                    successes: 0,
                    statuses: Vec::new(),
                    switch_timing: Vec::new(),
                    final_loss: f64::NAN,
                    error: Some(e.to_string()),
                });
                if let Some(dir) = &cells_dir {
                    let path = dir.join(format!("{}.json", result.cell.id()));
                    if let Ok(text) = serde_json::to_string_pretty(&result) {
                        let _ = std::fs::write(path, text);
                    }
                }
                result
            })
            .collect()
    });
    results.sort_by_key(|r| r.cell.id());

    Ok(ResultTable {
        schema: RESULTS_SCHEMA.to_string(),
        spec: spec.clone(),
        cells: results,
    })
}
