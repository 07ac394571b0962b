//! Autonomous closed-loop policy execution at 10 Hz with the one-way
//! Visual -> Tactile mode latch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{encode_parts, relative_pose, ObsParts, Policy, PolicyError, StsMode, OBS_LEN};
use crate::expert::sample_initial_pose;
use crate::forcematch::DIVERGENCE_BOUND;
use crate::sensor::{
    scene_from_env, tactile_features, visual_features, wrist_features, Sensor, SensorMode,
    SensorParams,
};
use crate::world::{Env, EnvConfig, FailureReason, Pose6, Status, Task};

/// Per-step clamps on the commanded pose delta, comfortably above the
/// largest demonstrated step but bounding runaway policies.
pub const POS_CLAMP: f64 = 0.04;
pub const ROT_CLAMP: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub task: Task,
    pub seed: u64,
    pub initial_pose: Pose6,
    pub x: Vec<Pose6>,
    pub x_d: Vec<Pose6>,
    pub modes: Vec<SensorMode>,
    pub contact: Vec<bool>,
    /// First step whose observation used Tactile mode (switching policies).
    pub mode_switch_step: Option<usize>,
    /// First step with ground-truth contact, for switch-timing analysis.
    pub first_contact_step: Option<usize>,
    pub status: Status,
    pub success: bool,
    pub diverged: bool,
}

/// Rolls the policy out from a freshly sampled initial pose (same
/// randomization cube as the demonstrations). The setpoint chain starts at
/// the initial pose and composes clamped local deltas; observations come
/// from the actual end-effector pose, matching the training encoding.
pub fn rollout(policy: &Policy, task: Task, seed: u64) -> Result<RolloutRecord, PolicyError> {
    rollout_traced(policy, task, seed).map(|(rec, _)| rec)
}

/// As [`rollout`] but also returns the per-step (observation, raw action)
/// pairs, for diagnostics.
pub fn rollout_traced(
    policy: &Policy,
    task: Task,
    seed: u64,
) -> Result<(RolloutRecord, Vec<([f64; OBS_LEN], [f64; 7])>), PolicyError> {
    policy.validate_schema()?;
    let cfg = EnvConfig::for_task(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0110_u64);
    let initial = sample_initial_pose(&cfg, &mut rng);
    let mut env = Env::new(cfg.clone())?;
    env.reset(initial);
    let mut sensor = Sensor::new(SensorParams::default(), seed ^ 0x5e25_0e);

    let mut rec = RolloutRecord {
        task,
        seed,
        initial_pose: initial,
        x: Vec::new(),
        x_d: Vec::new(),
        modes: Vec::new(),
        contact: Vec::new(),
        mode_switch_step: None,
        first_contact_step: None,
        status: Status::Running,
        success: false,
        diverged: false,
    };

    let mut trace = Vec::new();
    let mut x_d = initial;
    let mut latched = policy.obs_config.sts == StsMode::TactileOnly;
    let mut rel_prev = Pose6::identity();
    let max_steps = (cfg.time_limit * cfg.control_rate).round() as usize;

    for t in 0..max_steps {
        if env.step_control(x_d).is_err()
            || (env.ee_pose().position - x_d.position).norm() > DIVERGENCE_BOUND
        {
            rec.diverged = true;
            rec.status = Status::Failure(FailureReason::Diverged);
            break;
        }

        let commanded = if latched {
            SensorMode::Tactile
        } else {
            SensorMode::Visual
        };
        let mode = policy.obs_config.effective_mode(commanded);
        let contact = *env.contact();
        let scene = scene_from_env(&env, &sensor.params);
        // Tactile sense first every step keeps the tracker state continuous
        // across the mode switch, exactly as during replay recording.
        let rt = sensor.sense(&contact, &scene, SensorMode::Tactile, env.time());
        let rv = sensor.sense(&contact, &scene, SensorMode::Visual, env.time());
        let tf = tactile_features(&rt.field, rt.wrench, &rt.frame, &sensor.rest);
        let vf = visual_features(&rv.frame);
        let (d, _gap) = env.handle_in_sensor_frame();
        let wf = wrist_features(d, scene.object.is_some(), env.door().angle);

        let rel_now = relative_pose(&initial, &env.ee_pose());
        let obs = encode_parts(
            &ObsParts {
                rel_now,
                rel_prev,
                mode: commanded,
                tactile: &tf,
                visual: &vf,
                wrist: &wf,
            },
            &policy.obs_config,
        );
        rel_prev = rel_now;

        rec.x.push(env.ee_pose());
        rec.x_d.push(x_d);
        rec.modes.push(mode);
        rec.contact.push(contact.in_contact);
        if contact.in_contact && rec.first_contact_step.is_none() {
            rec.first_contact_step = Some(t);
        }
        if mode == SensorMode::Tactile
            && rec.mode_switch_step.is_none()
            && policy.obs_config.sts == StsMode::Switching
        {
            rec.mode_switch_step = Some(t);
        }

        rec.status = env.check_success();
        if rec.status.is_terminal() {
            break;
        }

        let action = policy.act(&obs)?;
        trace.push((
            obs,
            [
                action.delta[0],
                action.delta[1],
                action.delta[2],
                action.delta[3],
                action.delta[4],
                action.delta[5],
                action.mode_cmd,
            ],
        ));
        let mut delta = action.delta;
        let pn = delta.fixed_rows::<3>(0).norm();
        if pn > POS_CLAMP {
            for i in 0..3 {
                delta[i] *= POS_CLAMP / pn;
            }
        }
        let rn = delta.fixed_rows::<3>(3).norm();
        if rn > ROT_CLAMP {
            for i in 3..6 {
                delta[i] *= ROT_CLAMP / rn;
            }
        }
        x_d = env.ee_pose().compose_local(&delta);
        // One-way latch: the mode command applies from the next step on.
        if policy.obs_config.sts == StsMode::Switching && action.mode_cmd >= 0.5 {
            latched = true;
        }
    }

    rec.success = rec.status.is_success();
    Ok((rec, trace))
}
