//! Autonomous push-schedule execution against the locked-door glass knob.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{measurement_error, CalibError, CalibrationSample, TrajKind};
use crate::sensor::{scene_from_env, MarkerGrid, Sensor, SensorMode, SensorParams, UnscaledWrench};
use crate::world::{Env, EnvConfig, Pose6, Task};

#[derive(Clone, Debug)]
pub struct CalibrationSchedule {
    /// Trajectories pressing straight down in 1 mm increments.
    pub normal_trajectories: usize,
    /// Trajectories per lateral axis, sweeping after an initial press.
    pub lateral_trajectories: usize,
    pub rotational_trajectories: usize,
    /// Increments per normal trajectory and their size (m).
    pub increments: usize,
    pub increment: f64,
    /// Starting gap above the knob, sampled uniformly (m).
    pub start_gap: (f64, f64),
    /// Total lateral travel (m) and rotational travel (rad), centred.
    pub lateral_span: f64,
    pub rotational_span: f64,
    /// Commanded depth below the knob top before lateral/rotational sweeps.
    pub press_command: f64,
    /// Quasi-static gate on the end-effector velocity norm.
    pub settle_velocity: f64,
    pub max_settle_periods: usize,
}

impl Default for CalibrationSchedule {
    fn default() -> Self {
        Self {
            normal_trajectories: 5,
            lateral_trajectories: 5,
            rotational_trajectories: 5,
            increments: 35,
            increment: 0.001,
            start_gap: (0.001, 0.003),
            lateral_span: 0.020,
            rotational_span: 1.0,
            press_command: 0.035,
            settle_velocity: 1e-4,
            max_settle_periods: 40,
        }
    }
}

struct Rig {
    env: Env,
    sensor: Sensor,
    samples: Vec<CalibrationSample>,
}

impl Rig {
    /// Holds the setpoint until quasi-static, sensing every control period.
    fn settle(&mut self, x_d: Pose6, sched: &CalibrationSchedule) -> Result<UnscaledWrench, CalibError> {
        let mut wrench = None;
        for _ in 0..sched.max_settle_periods {
            self.env
                .step_control(x_d)
                .map_err(|e| CalibError::CalibrationAborted(e.to_string()))?;
            let scene = scene_from_env(&self.env, &self.sensor.params);
            let contact = *self.env.contact();
            let reading =
                self.sensor
                    .sense(&contact, &scene, SensorMode::Tactile, self.env.time());
            wrench = reading.wrench;
            if self.env.ee_velocity().norm() < sched.settle_velocity {
                break;
            }
        }
        wrench.ok_or_else(|| {
            CalibError::CalibrationAborted(format!(
                "tracking degraded at t = {:.2} s",
                self.env.time()
            ))
        })
    }

    fn settle_and_record(
        &mut self,
        x_d: Pose6,
        sched: &CalibrationSchedule,
        kind: TrajKind,
    ) -> Result<(), CalibError> {
        let wrench = self.settle(x_d, sched)?;
        let e = measurement_error(&self.env.desired_pose(), &self.env.ee_pose());
        self.samples.push(CalibrationSample {
            e,
            wrench,
            timestamp: self.env.time(),
            kind,
        });
        Ok(())
    }

    fn reset(&mut self, start: Pose6, seed: u64) {
        self.env.reset(start);
        self.sensor.reset(seed);
    }
}

/// Runs the full schedule on a locked-door glass-knob fixture and returns
/// the samples plus the marker layout used by the sensor.
pub fn collect_calibration(
    sched: &CalibrationSchedule,
    seed: u64,
) -> Result<(Vec<CalibrationSample>, MarkerGrid), CalibError> {
    let mut cfg = EnvConfig::for_task(Task::GlassKnobOpen);
    cfg.door_locked = true;
    let env = Env::new(cfg).map_err(|e| CalibError::CalibrationAborted(e.to_string()))?;
    let hover = Env::nominal_start_pose(&env.cfg);
    let surface_z = env.cfg.handle_height;
    let mut rig = Rig {
        env,
        sensor: Sensor::new(SensorParams::default(), seed),
        samples: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1ab1e);
    let mut traj = 0u64;

    // Normal pushes: start 1-3 mm above the knob with a small in-plane
    // perturbation, descend in 1 mm increments.
    for _ in 0..sched.normal_trajectories {
        let gap = rng.gen_range(sched.start_gap.0..=sched.start_gap.1);
        let perturb = Vector2::new(rng.gen_range(-2e-3..=2e-3), rng.gen_range(-2e-3..=2e-3));
        let start = Pose6::from_position(Vector3::new(
            hover.position.x + perturb.x,
            hover.position.y + perturb.y,
            surface_z + gap,
        ));
        traj += 1;
        rig.reset(start, seed.wrapping_add(traj));
        let mut z = start.position.z;
        for _ in 0..sched.increments {
            z -= sched.increment;
            let x_d = Pose6::from_position(Vector3::new(start.position.x, start.position.y, z));
            rig.settle_and_record(x_d, sched, TrajKind::Normal)?;
        }
    }

    // Lateral sweeps after a press, one batch per in-plane axis.
    for axis in 0..2 {
        for _ in 0..sched.lateral_trajectories {
            let perturb = Vector2::new(rng.gen_range(-1e-3..=1e-3), rng.gen_range(-1e-3..=1e-3));
            let start = Pose6::from_position(Vector3::new(
                hover.position.x + perturb.x,
                hover.position.y + perturb.y,
                surface_z + 0.002,
            ));
            traj += 1;
            rig.reset(start, seed.wrapping_add(traj));
            press(&mut rig, &start, surface_z - sched.press_command, sched)?;
            let base = Vector3::new(
                start.position.x,
                start.position.y,
                surface_z - sched.press_command,
            );
            let half = sched.lateral_span / 2.0;
            let kind = if axis == 0 {
                TrajKind::LateralX
            } else {
                TrajKind::LateralY
            };
            for offset in sweep_offsets(half, sched.increment) {
                let mut p = base;
                p[axis] += offset;
                rig.settle_and_record(Pose6::from_position(p), sched, kind)?;
            }
        }
    }

    // Rotational sweeps about the sensor normal after a press.
    for _ in 0..sched.rotational_trajectories {
        let start = Pose6::from_position(Vector3::new(
            hover.position.x,
            hover.position.y,
            surface_z + 0.002,
        ));
        traj += 1;
        rig.reset(start, seed.wrapping_add(traj));
        press(&mut rig, &start, surface_z - sched.press_command, sched)?;
        let base = Vector3::new(
            start.position.x,
            start.position.y,
            surface_z - sched.press_command,
        );
        let half = sched.rotational_span / 2.0;
        for yaw in sweep_offsets(half, half / 10.0) {
            rig.settle_and_record(Pose6::from_position_yaw(base, yaw), sched, TrajKind::Rotational)?;
        }
    }

    let layout = rig.sensor.rest.clone();
    Ok((rig.samples, layout))
}

/// Descends to the press depth in coarse unrecorded steps.
fn press(rig: &mut Rig, start: &Pose6, z_target: f64, sched: &CalibrationSchedule) -> Result<(), CalibError> {
    let mut z = start.position.z;
    while z > z_target {
        z = (z - 0.005).max(z_target);
        let x_d = Pose6::from_position(Vector3::new(start.position.x, start.position.y, z));
        rig.settle(x_d, sched)?;
    }
    Ok(())
}

/// 0 -> +half -> -half -> 0 in steps of `step`.
fn sweep_offsets(half: f64, step: f64) -> Vec<f64> {
    let n = (half / step).round() as i64;
    let mut ks: Vec<i64> = (1..=n).collect();
    ks.extend((-n..n).rev());
    ks.extend(-n + 1..=0);
    ks.into_iter().map(|k| k as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_covers_both_signs_and_returns() {
        let offs = sweep_offsets(0.005, 0.001);
        assert_eq!(offs.first(), Some(&0.001));
        assert!((offs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.005).abs() < 1e-12);
        assert!((offs.iter().cloned().fold(f64::INFINITY, f64::min) + 0.005).abs() < 1e-12);
        assert_eq!(*offs.last().unwrap(), 0.0);
    }
}
