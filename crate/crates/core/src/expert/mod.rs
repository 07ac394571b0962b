//! Scripted kinesthetic-style demonstrator: drives the end-effector
//! kinematically (full compliance) through approach, press and arc-follow
//! phases, recording raw demos through the tactile pipeline.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::forcematch::{RawDemo, EPISODE_SCHEMA};
use crate::sensor::{scene_from_env, Sensor, SensorMode, SensorParams};
use crate::world::{Env, EnvConfig, Pose6, Status, Task};

/// Half-extent of the initial-pose randomization cube (3 cm sided).
pub const CUBE_HALF: f64 = 0.015;
pub const YAW_HALF: f64 = 0.15;
/// Recording starts once the end-effector has moved this far.
pub const MOVEMENT_THRESHOLD: f64 = 0.5e-3;

/// Salt folding demo seeds into the script rng stream.
const DEMO_SALT: u64 = 0xde_305;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("demo failed (seed {seed}): {why}")]
    DemoFailed { seed: u64, why: String },
    #[error("{task:?}: {failures} failed attempts while collecting {want} demos")]
    TooManyFailures {
        task: Task,
        failures: usize,
        want: usize,
    },
}

/// Waypoint schedule parameters for one task. Step sizes are per control
/// period (0.1 s); jitters inject demonstrator sloppiness.
#[derive(Clone, Debug)]
pub struct DemoScript {
    pub task: Task,
    pub press_depth: f64,
    pub waypoint_jitter: f64,
    pub temporal_jitter: f64,
    pub approach_step: f64,
    pub press_step: f64,
    pub arc_step: f64,
}

impl DemoScript {
    /// Glass knobs carry drag through friction alone, so they get pressed
    /// twice as deep as the hookable flat handle.
    pub fn for_task(task: Task) -> Self {
        let press_depth = match task.handle_kind() {
            crate::world::HandleKind::GlassKnob => 0.003,
            crate::world::HandleKind::FlatHandle => 0.0015,
        };
        Self {
            task,
            press_depth,
            waypoint_jitter: 3e-4,
            temporal_jitter: 0.1,
            approach_step: 0.004,
            press_step: 0.001,
            arc_step: 0.02,
        }
    }

    pub fn noiseless(task: Task) -> Self {
        Self {
            waypoint_jitter: 0.0,
            temporal_jitter: 0.0,
            ..Self::for_task(task)
        }
    }
}

/// Uniform position in the 3 cm cube around the task's nominal hover pose,
/// uniform yaw within +/- 0.15 rad.
pub fn sample_initial_pose(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Pose6 {
    let nominal = Env::nominal_start_pose(cfg);
    let offset = Vector3::new(
        rng.gen_range(-CUBE_HALF..=CUBE_HALF),
        rng.gen_range(-CUBE_HALF..=CUBE_HALF),
        rng.gen_range(-CUBE_HALF..=CUBE_HALF),
    );
    let yaw = rng.gen_range(-YAW_HALF..=YAW_HALF);
    Pose6::from_position_yaw(nominal.position + offset, yaw)
}

#[derive(Clone, Copy)]
enum Phase {
    Approach,
    Press,
    /// Open-loop arc cursor; feedback on the door angle itself would
    /// resonate with the lightly damped stick-spring door mode.
    Drag {
        angle_cmd: f64,
        angle0: f64,
        periods: usize,
    },
}

/// Maximum arc lead (rad) of the drag cursor over the actual door angle,
/// keeping the handle inside the pad while friction catches up.
const MAX_ARC_LEAD: f64 = 0.025;

/// Runs one scripted demonstration. Deterministic in (script, seed); the
/// sensor runs in Tactile mode throughout.
pub fn demonstrate(script: &DemoScript, seed: u64) -> Result<RawDemo, ExpertError> {
    let cfg = EnvConfig::for_task(script.task);
    let fail = |why: String| ExpertError::DemoFailed { seed, why };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DEMO_SALT);
    let initial = sample_initial_pose(&cfg, &mut rng);
    let mut env = Env::new(cfg.clone()).map_err(|e| fail(e.to_string()))?;
    env.reset(initial);
    let mut sensor = Sensor::new(SensorParams::default(), seed ^ 0x7ac_71e);

    let yaw = initial.yaw();
    let press_z = cfg.handle_height - script.press_depth;
    let goal_angle = if cfg.task.is_open_task() {
        cfg.angle_max
    } else {
        0.0
    };

    let mut demo = RawDemo {
        schema: EPISODE_SCHEMA.to_string(),
        task: script.task,
        seed,
        initial_pose: initial,
        timestamps: Vec::new(),
        x_raw: Vec::new(),
        f_raw: Vec::new(),
        contact: Vec::new(),
    };
    let mut phase = Phase::Approach;
    let max_steps = (cfg.time_limit * cfg.control_rate).round() as usize;

    for _ in 0..max_steps {
        let pace = 1.0 + rng.gen_range(-script.temporal_jitter..=script.temporal_jitter);
        let here = env.ee_pose().position;
        let hxy = env.door().handle_xy(&cfg);
        let mut yaw_cmd = yaw;
        let mut target = match phase {
            Phase::Approach => {
                let to_handle = Vector2::new(hxy.x - here.x, hxy.y - here.y);
                let step = script.approach_step * pace;
                let xy = if to_handle.norm() > step {
                    Vector2::new(here.x, here.y) + to_handle.normalize() * step
                } else {
                    to_handle + Vector2::new(here.x, here.y)
                };
                let hover_z = cfg.handle_height + 0.001;
                let z = (here.z - step).max(hover_z);
                if to_handle.norm() < 1e-3 && (z - hover_z).abs() < 1e-4 {
                    phase = Phase::Press;
                }
                Vector3::new(xy.x, xy.y, z)
            }
            Phase::Press => {
                let z = (here.z - script.press_step * pace).max(press_z);
                if z <= press_z + 1e-6 {
                    phase = Phase::Drag {
                        angle_cmd: env.door().angle,
                        angle0: env.door().angle,
                        periods: 0,
                    };
                }
                Vector3::new(hxy.x, hxy.y, z)
            }
            Phase::Drag {
                angle_cmd,
                angle0,
                periods,
            } => {
                let angle = env.door().angle;
                // Ease into the arc over the first periods; a full-size
                // first step spikes the stick-spring force and shears the
                // marker field past the tracker's association radius.
                let ramp = ((periods + 1) as f64 / 10.0).min(1.0);
                let step = script.arc_step * pace * ramp;
                let next = if goal_angle > angle_cmd {
                    (angle_cmd + step)
                        .min(goal_angle)
                        .min(angle + MAX_ARC_LEAD)
                } else {
                    (angle_cmd - step)
                        .max(goal_angle)
                        .max(angle - MAX_ARC_LEAD)
                };
                phase = Phase::Drag {
                    angle_cmd: next,
                    angle0,
                    periods: periods + 1,
                };
                // The wrist rotates with the door, keeping the relative
                // twist at the pad small.
                yaw_cmd = yaw + (next - angle0);
                let (s, c) = next.sin_cos();
                Vector3::new(
                    cfg.hinge_position[0] + cfg.door_radius * s,
                    cfg.hinge_position[1] - cfg.door_radius * c,
                    press_z,
                )
            }
        };
        target.x += rng.gen_range(-script.waypoint_jitter..=script.waypoint_jitter);
        target.y += rng.gen_range(-script.waypoint_jitter..=script.waypoint_jitter);

        env.step_kinematic(Pose6::from_position_yaw(target, yaw_cmd))
            .map_err(|e| fail(e.to_string()))?;
        let contact = *env.contact();
        let scene = scene_from_env(&env, &sensor.params);
        let reading = sensor.sense(&contact, &scene, SensorMode::Tactile, env.time());
        let wrench = reading
            .wrench
            .ok_or_else(|| fail(format!("sensor degraded at t = {:.2} s", env.time())))?;

        if (env.ee_pose().position - initial.position).norm() >= MOVEMENT_THRESHOLD {
            demo.timestamps.push(env.time());
            demo.x_raw.push(env.ee_pose());
            demo.f_raw.push(wrench);
            demo.contact.push(contact.in_contact);
        }

        match env.check_success() {
            Status::Success => return Ok(demo),
            Status::Failure(r) => return Err(fail(format!("{r:?} at t = {:.2} s", env.time()))),
            Status::Running => {}
        }
    }
    Err(fail("script exhausted without success".into()))
}

/// Collects `n` successful demos, resampling failures with fresh seeds.
/// Returns the demos and the number of discarded attempts. Seeds are
/// screened so consecutive demos cycle through the randomization cube's
/// octants; 20 uniform draws miss an octant about half the time.
pub fn collect_demos(
    script: &DemoScript,
    n: usize,
    seed: u64,
) -> Result<(Vec<RawDemo>, usize), ExpertError> {
    let cfg = EnvConfig::for_task(script.task);
    let mut demos = Vec::with_capacity(n);
    let mut failures = 0;
    let mut attempt = 0u64;
    let mut next_seed = |octant: usize| loop {
        let s = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(attempt);
        attempt += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ DEMO_SALT);
        let pose = sample_initial_pose(&cfg, &mut rng);
        if pose_octant(&cfg, &pose) == octant {
            return s;
        }
    };
    while demos.len() < n {
        if failures > 5 * n {
            return Err(ExpertError::TooManyFailures {
                task: script.task,
                failures,
                want: n,
            });
        }
        let demo_seed = next_seed(demos.len() % 8);
        match demonstrate(script, demo_seed) {
            Ok(d) => demos.push(d),
            Err(_) => failures += 1,
        }
    }
    Ok((demos, failures))
}

/// Octant of the randomization cube a pose falls in, for coverage checks.
pub fn pose_octant(cfg: &EnvConfig, pose: &Pose6) -> usize {
    let nominal = Env::nominal_start_pose(cfg);
    let d = pose.position - nominal.position;
    ((d.x > 0.0) as usize) | (((d.y > 0.0) as usize) << 1) | (((d.z > 0.0) as usize) << 2)
}
