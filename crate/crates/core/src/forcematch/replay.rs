//! Replay execution: drives the impedance controller through a plan at
//! 10 Hz, switching the sensor Visual -> Tactile at the labelled step.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_chacha::ChaCha8Rng;

use super::{oracle_mode_labeler, FmError, RawDemo, ReplayPlan, ReplayRecord, EPISODE_SCHEMA};
use crate::sensor::{
    scene_from_env, tactile_features, visual_features, wrist_features, Sensor, SensorMode,
    SensorParams,
};
use crate::world::{Env, EnvConfig, FailureReason, Status};

/// Tracking error beyond which a replay is declared diverged and the
/// episode recorded as a failure.
pub const DIVERGENCE_BOUND: f64 = 0.05;

/// Action labels blend the same-step impedance pull with the next
/// setpoint by this weight. A policy re-anchors its commanded delta at
/// the actual pose every period, which forfeits the accumulated lead a
/// recorded setpoint chain carries: cloning the bare pull undershoots
/// the demonstrated speed, cloning the next setpoint overshoots it.
/// The blend is calibrated so closed-loop speed matches the demos.
pub const LEAD_GAIN: f64 = 0.45;

#[derive(Clone, Copy, Debug, Default)]
pub struct ReplayOptions {
    /// Jitter the mode-switch label by {-1, 0, +1} steps.
    pub mode_jitter: bool,
    /// Std-dev (m) of per-step Gaussian position noise added to the
    /// executed setpoint. The recorded setpoints and action labels stay
    /// clean, so the visited states spread off the nominal trajectory
    /// while every label pulls back toward it.
    pub setpoint_noise: f64,
    /// Embed base64 frames in the record (large).
    pub embed_frames: bool,
}

impl ReplayOptions {
    /// Options used when producing training data: jittered switch labels
    /// and corrective state coverage around the nominal trajectory.
    pub fn for_training() -> Self {
        ReplayOptions {
            mode_jitter: true,
            setpoint_noise: 0.003,
            embed_frames: false,
        }
    }
}

/// Executes a replay plan from the demo's initial pose. The plan's last
/// setpoint is held after exhaustion until the episode terminates or times
/// out. Tracking blow-ups are recorded as failures, not errors.
pub fn replay(
    raw: &RawDemo,
    plan: &ReplayPlan,
    opts: &ReplayOptions,
    seed: u64,
) -> Result<ReplayRecord, FmError> {
    if plan.x_d_rep.len() != raw.len() {
        return Err(FmError::LengthMismatch {
            a: plan.x_d_rep.len(),
            b: raw.len(),
        });
    }
    let cfg = EnvConfig::for_task(raw.task);
    let mut env = Env::new(cfg.clone())?;
    env.reset(raw.initial_pose);
    let mut sensor = Sensor::new(SensorParams::default(), seed ^ 0x5e_a50e);

    let label = if opts.mode_jitter {
        use rand::SeedableRng;
        let mut jrng = ChaCha8Rng::seed_from_u64(seed ^ 0x10de);
        match oracle_mode_labeler(&raw.contact, Some(&mut jrng)) {
            Ok(s) => Some(s),
            Err(FmError::NoContact) => None,
            Err(e) => return Err(e),
        }
    } else {
        match oracle_mode_labeler(&raw.contact, None) {
            Ok(s) => Some(s),
            Err(FmError::NoContact) => None,
            Err(e) => return Err(e),
        }
    };

    let n = plan.x_d_rep.len();
    let max_steps = (cfg.time_limit * cfg.control_rate).round() as usize;
    let mut rec = ReplayRecord {
        schema: EPISODE_SCHEMA.to_string(),
        task: raw.task,
        seed,
        fm_enabled: plan.fm_enabled,
        initial_pose: raw.initial_pose,
        timestamps: Vec::new(),
        x_d: Vec::new(),
        x_rep: Vec::new(),
        f_rep: Vec::new(),
        modes: Vec::new(),
        contact: Vec::new(),
        tactile_features: Vec::new(),
        visual_features: Vec::new(),
        wrist_features: Vec::new(),
        actions: Vec::new(),
        mode_switch_step: None,
        status: Status::Running,
        success: false,
        diverged: false,
        frames: opts.embed_frames.then(Vec::new),
    };

    let mut nrng = (opts.setpoint_noise > 0.0).then(|| {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(seed ^ 0xda_27)
    });

    for t in 0..max_steps {
        let x_d = plan.x_d_rep[t.min(n - 1)];
        let x_d_exec = match nrng.as_mut() {
            Some(rng) => {
                use rand_distr::{Distribution, Normal};
                let g = Normal::new(0.0, opts.setpoint_noise).unwrap();
                let mut p = x_d;
                for i in 0..3 {
                    p.position[i] += g.sample(rng);
                }
                p
            }
            None => x_d,
        };
        if env.step_control(x_d_exec).is_err() {
            rec.diverged = true;
            rec.status = Status::Failure(FailureReason::Diverged);
            break;
        }
        if (env.ee_pose().position - x_d_exec.position).norm() > DIVERGENCE_BOUND {
            rec.diverged = true;
            rec.status = Status::Failure(FailureReason::Diverged);
            break;
        }

        let mode = match label {
            Some(s) if t >= s => SensorMode::Tactile,
            _ => SensorMode::Visual,
        };
        let contact = *env.contact();
        let scene = scene_from_env(&env, &sensor.params);
        // Tactile sense first every step so the tracker state stays
        // continuous across the mode switch; the visual render only
        // consumes noise draws.
        let rt = sensor.sense(&contact, &scene, SensorMode::Tactile, env.time());
        let rv = sensor.sense(&contact, &scene, SensorMode::Visual, env.time());

        rec.timestamps.push(env.time());
        rec.x_d.push(x_d);
        rec.x_rep.push(env.ee_pose());
        rec.f_rep.push(if mode == SensorMode::Tactile {
            rt.wrench
        } else {
            None
        });
        rec.modes.push(mode);
        rec.contact.push(contact.in_contact);
        rec.tactile_features
            .push(tactile_features(&rt.field, rt.wrench, &rt.frame, &sensor.rest));
        rec.visual_features.push(visual_features(&rv.frame));
        let (d, _gap) = env.handle_in_sensor_frame();
        rec.wrist_features.push(wrist_features(
            d,
            scene.object.is_some(),
            env.door().angle,
        ));
        if let Some(frames) = rec.frames.as_mut() {
            let frame = if mode == SensorMode::Tactile {
                &rt.frame
            } else {
                &rv.frame
            };
            frames.push(B64.encode(&frame.pixels));
        }

        rec.status = env.check_success();
        if rec.status.is_terminal() {
            break;
        }
    }

    let steps = rec.x_d.len();
    rec.mode_switch_step = label.filter(|&s| s < steps);
    for t in 0..steps {
        let mut a = [0.0; 7];
        // Action label: the end-effector-frame impedance pull K^-1 F at
        // this step, plus LEAD_GAIN of the way toward the next setpoint.
        // Re-applied at the actual pose each period this reproduces the
        // demonstrated contact force and steady-state velocity from
        // wherever the robot actually is.
        let pull = rec.x_rep[t].local_delta(&rec.x_d[t]);
        let delta = if t + 1 < steps {
            let next = rec.x_rep[t].local_delta(&rec.x_d[t + 1]);
            pull + LEAD_GAIN * (next - pull)
        } else {
            pull
        };
        a[..6].copy_from_slice(delta.as_slice());
        let tactile_next = match rec.mode_switch_step {
            Some(s) => t + 1 >= s,
            None => false,
        };
        a[6] = if tactile_next { 1.0 } else { 0.0 };
        rec.actions.push(a);
    }
    rec.success = rec.status.is_success();
    Ok(rec)
}
