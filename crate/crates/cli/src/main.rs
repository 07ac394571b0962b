//! `fmsim`: command-line driver for the force-matched imitation
//! learning pipeline. Episodes are JSON-Lines, one per line; models,
//! policies, specs, and result tables are single JSON documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fmsim_core::calibration::{collect_calibration, fit, CalibrationModel, CalibrationSchedule};
use fmsim_core::expert::{collect_demos, DemoScript};
use fmsim_core::forcematch::{force_match, replay, RawDemo, ReplayOptions, ReplayPlan};
use fmsim_core::harness::{report, run_ablation, write_results, AblationSpec};
use fmsim_core::policy::{dataset_from_records, rollout, train, ObsConfig, Policy, TrainConfig};
use fmsim_core::world::Task;

#[derive(Parser)]
#[command(name = "fmsim", about = "Tactile force-matched imitation learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the calibration schedule and fit the piecewise-linear model.
    Calibrate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record scripted expert demonstrations.
    CollectDemos {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay raw demos (force-matched by default) into training episodes.
    Replay {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Disable force matching (pass-through setpoints).
        #[arg(long)]
        no_fm: bool,
        /// Jitter the mode-switch labels (training-set option).
        #[arg(long)]
        mode_jitter: bool,
        /// Setpoint noise std-dev in metres (training-set option).
        #[arg(long, default_value_t = 0.0)]
        setpoint_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a behavioural-cloning policy on replay episodes.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Optional TrainConfig JSON; defaults used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional ObsConfig JSON (sts/wrist/rel_pose flags).
        #[arg(long)]
        obs_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a trained policy.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation matrix.
    Ablate {
        /// AblationSpec JSON; defaults used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit reports from a results directory.
    Report {
        #[arg(long, name = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_task(name: &str) -> Result<Task> {
    for t in Task::ALL {
        if format!("{t:?}").eq_ignore_ascii_case(name) {
            return Ok(t);
        }
    }
    bail!("unknown task {name:?}; expected one of {:?}", Task::ALL);
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        writeln!(w)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Calibrate { seed, out } => {
            let (samples, _) = collect_calibration(&CalibrationSchedule::default(), seed)?;
            let model = fit(&samples)?;
            write_json(&out, &model)?;
            for d in &model.dims {
                println!(
                    "{}: knee {:.4} mm, R2 {:.5}",
                    d.name,
                    d.knee * 1e3,
                    d.r_squared
                );
            }
        }
        Cmd::CollectDemos { task, n, seed, out } => {
            let task = parse_task(&task)?;
            let (demos, rejected) = collect_demos(&DemoScript::for_task(task), n, seed)?;
            write_jsonl(&out, &demos)?;
            println!("{} demos written ({rejected} seeds rejected)", demos.len());
        }
        Cmd::Replay {
            demos,
            calib,
            no_fm,
            mode_jitter,
            setpoint_noise,
            seed,
            out,
        } => {
            let raw: Vec<RawDemo> = read_jsonl(&demos)?;
            let model: CalibrationModel = read_json(&calib)?;
            model.validate_schema()?;
            let opts = ReplayOptions {
                mode_jitter,
                setpoint_noise,
                embed_frames: false,
            };
            let mut records = Vec::with_capacity(raw.len());
            for (i, d) in raw.iter().enumerate() {
                let plan = if no_fm {
                    ReplayPlan::passthrough(d)
                } else {
                    force_match(d, &model)?
                };
                records.push(replay(d, &plan, &opts, seed.wrapping_add(i as u64))?);
            }
            let ok = records.iter().filter(|r| r.success).count();
            write_jsonl(&out, &records)?;
            println!("{ok}/{} replays succeeded", records.len());
        }
        Cmd::Train {
            data,
            config,
            obs_config,
            seed,
            out,
        } => {
            let records = read_jsonl(&data)?;
            let cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let obs: ObsConfig = match obs_config {
                Some(p) => read_json(&p)?,
                None => ObsConfig::default(),
            };
            let dataset = dataset_from_records(&records, &obs);
            let policy = train(&dataset, &cfg, seed)?;
            println!("final loss {:.6}", policy.final_loss);
            write_json(&out, &policy)?;
        }
        Cmd::Rollout {
            policy,
            task,
            episodes,
            seed,
            out,
        } => {
            let task = parse_task(&task)?;
            let policy: Policy = read_json(&policy)?;
            policy.validate_schema()?;
            let mut records = Vec::with_capacity(episodes);
            for ep in 0..episodes {
                records.push(rollout(&policy, task, seed.wrapping_add(ep as u64))?);
            }
            let ok = records.iter().filter(|r| r.success).count();
            let summary: Vec<serde_json::Value> = records
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "task": r.task,
                        "seed": r.seed,
                        "success": r.success,
                        "status": format!("{:?}", r.status),
                        "steps": r.x.len(),
                        "mode_switch_step": r.mode_switch_step,
                        "first_contact_step": r.first_contact_step,
                    })
                })
                .collect();
            write_json(&out, &summary)?;
            println!("{ok}/{episodes} rollouts succeeded");
        }
        Cmd::Ablate { spec, workers, out } => {
            let spec: AblationSpec = match spec {
                Some(p) => read_json(&p)?,
                None => AblationSpec::default(),
            };
            let table = run_ablation(&spec, workers, Some(&out))?;
            let files = write_results(&table, &out)?;
            println!("wrote {}", files.summary_md.display());
        }
        Cmd::Report { in_dir, out } => {
            let files = report(&in_dir, &out)?;
            println!("wrote {}", files.summary_md.display());
        }
    }
    Ok(())
}
