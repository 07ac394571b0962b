//! Environment configuration and the closed-loop simulation step.

use nalgebra::{Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::contact::{contact_loads, contact_model, ContactState};
use super::door::{DoorState, Task};
use super::gains::Gains;
use super::pose::{pose_error, Pose6};

pub const ENVCONFIG_SCHEMA: &str = "envconfig/1";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numeric instability at t = {time:.3} s: {what}")]
    NumericInstability { time: f64, what: String },
    #[error("bad schema: expected {expected}, got {got}")]
    BadSchema { expected: String, got: String },
}

fn default_schema() -> String {
    ENVCONFIG_SCHEMA.to_string()
}

/// Environment parameters. All units SI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub task: Task,
    pub gains: Gains,
    /// Membrane normal stiffness (N/m of penetration).
    pub membrane_stiffness: f64,
    pub friction_mu: f64,
    /// Extra tangential capacity from hooking behind the flat handle (N).
    pub hook_capacity: f64,
    pub knob_radius: f64,
    pub dt_physics: f64,
    pub control_rate: f64,
    pub time_limit: f64,
    pub rng_seed: u64,

    // Membrane shear/torsion model.
    pub tangential_stiffness: f64,
    pub twist_stiffness: f64,
    pub torsion_arm: f64,
    /// Sensor deformation clips beyond this penetration.
    pub saturation_penetration: f64,

    // Door and handle geometry.
    pub hinge_position: [f64; 2],
    pub door_radius: f64,
    pub handle_height: f64,
    pub hinge_stiffness: f64,
    pub hinge_damping: f64,
    pub door_inertia: f64,
    pub spring_engage: f64,
    pub angle_max: f64,
    /// Pad half-extents in the sensor frame (m).
    pub pad_half_x: f64,
    pub pad_half_y: f64,
    pub handle_capture_radius: f64,
    /// When locked (calibration fixture), the door never moves.
    #[serde(default)]
    pub door_locked: bool,

    // Success predicate parameters.
    pub open_threshold: f64,
    pub slam_threshold: f64,
    pub closed_threshold: f64,
    pub close_start_angle: f64,
    pub approach_gap: f64,

    // Instability bounds.
    pub position_bound: f64,
    pub velocity_bound: f64,
}

impl EnvConfig {
    pub fn for_task(task: Task) -> Self {
        let (mu, hook) = match task.handle_kind() {
            super::door::HandleKind::FlatHandle => (0.6, 3.0),
            super::door::HandleKind::GlassKnob => (0.3, 0.0),
        };
        Self {
            schema: default_schema(),
            task,
            gains: Gains::default(),
            membrane_stiffness: 4000.0,
            friction_mu: mu,
            hook_capacity: hook,
            knob_radius: 0.009,
            dt_physics: 1e-3,
            control_rate: 10.0,
            time_limit: 14.0,
            rng_seed: 0,
            tangential_stiffness: 800.0,
            twist_stiffness: 0.04,
            torsion_arm: 0.02,
            saturation_penetration: 0.005,
            hinge_position: [0.35, 0.30],
            door_radius: 0.3,
            handle_height: 0.10,
            hinge_stiffness: 0.6,
            hinge_damping: 0.4,
            door_inertia: 0.1,
            spring_engage: 0.9,
            angle_max: 1.3,
            pad_half_x: 0.016,
            pad_half_y: 0.009,
            handle_capture_radius: 0.03,
            door_locked: false,
            open_threshold: 1.0,
            slam_threshold: 0.1,
            closed_threshold: 0.05,
            close_start_angle: 1.1,
            approach_gap: 0.02,
            position_bound: 5.0,
            velocity_bound: 50.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.schema != ENVCONFIG_SCHEMA {
            return Err(WorldError::BadSchema {
                expected: ENVCONFIG_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        if !self.gains.is_valid() {
            return Err(WorldError::InvalidConfig("gains".into()));
        }
        if self.dt_physics > 1.0 / (10.0 * self.control_rate) {
            return Err(WorldError::InvalidConfig(format!(
                "dt_physics {} too large for control rate {}",
                self.dt_physics, self.control_rate
            )));
        }
        if self.membrane_stiffness <= 0.0 || self.friction_mu < 0.0 || self.time_limit <= 0.0 {
            return Err(WorldError::InvalidConfig("contact parameters".into()));
        }
        Ok(())
    }

    pub fn start_angle(&self) -> f64 {
        if self.task.is_open_task() {
            0.0
        } else {
            self.close_start_angle
        }
    }

    pub fn substeps_per_control(&self) -> usize {
        (1.0 / (self.control_rate * self.dt_physics)).round() as usize
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    Slam,
    Timeout,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    Success,
    Failure(FailureReason),
}

impl Status {
    pub fn is_success(&self) -> bool {
        matches!(self, Status::Success)
    }
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Status::Running)
    }
}

/// The simulated door environment: end-effector, door, contact and clock.
#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: EnvConfig,
    ee_pose: Pose6,
    ee_velocity: Vector6<f64>,
    desired: Pose6,
    door: DoorState,
    contact: ContactState,
    time: f64,
    slammed: bool,
    was_in_contact: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self, WorldError> {
        cfg.validate()?;
        let start = Self::nominal_start_pose(&cfg);
        let door = DoorState::new(&cfg, cfg.start_angle());
        Ok(Self {
            ee_pose: start,
            ee_velocity: Vector6::zeros(),
            desired: start,
            door,
            contact: ContactState::free(),
            time: 0.0,
            slammed: false,
            was_in_contact: false,
            cfg,
        })
    }

    /// Hover pose above the handle at the task's start angle.
    pub fn nominal_start_pose(cfg: &EnvConfig) -> Pose6 {
        let door = DoorState::new(cfg, cfg.start_angle());
        let xy = door.handle_xy(cfg);
        Pose6::from_position(Vector3::new(
            xy.x,
            xy.y,
            cfg.handle_height + cfg.approach_gap,
        ))
    }

    /// Resets the episode with the given initial end-effector pose.
    pub fn reset(&mut self, initial: Pose6) {
        self.ee_pose = initial;
        self.ee_velocity = Vector6::zeros();
        self.desired = initial;
        self.door = DoorState::new(&self.cfg, self.cfg.start_angle());
        self.contact = ContactState::free();
        self.time = 0.0;
        self.slammed = false;
        self.was_in_contact = false;
    }

    pub fn ee_pose(&self) -> Pose6 {
        self.ee_pose
    }
    pub fn ee_velocity(&self) -> Vector6<f64> {
        self.ee_velocity
    }
    pub fn desired_pose(&self) -> Pose6 {
        self.desired
    }
    pub fn door(&self) -> &DoorState {
        &self.door
    }
    pub fn contact(&self) -> &ContactState {
        &self.contact
    }
    pub fn time(&self) -> f64 {
        self.time
    }

    fn update_contact(&mut self) {
        let c = contact_model(&self.ee_pose, &self.door, &self.cfg, &self.contact);
        if self.was_in_contact
            && !c.in_contact
            && !self.cfg.task.is_open_task()
            && self.door.angle > self.cfg.slam_threshold
            && self.door.angle < self.cfg.spring_engage
        {
            self.slammed = true;
        }
        self.was_in_contact = c.in_contact;
        self.contact = c;
    }

    fn advance_door(&mut self, hinge_torque: f64) {
        if !self.cfg.door_locked {
            self.door.step(hinge_torque, &self.cfg, self.cfg.dt_physics);
        }
    }

    fn check_bounds(&self) -> Result<(), WorldError> {
        let p = &self.ee_pose.position;
        let finite = p.iter().all(|x| x.is_finite())
            && self.ee_velocity.iter().all(|x| x.is_finite())
            && self.door.angle.is_finite();
        if !finite
            || p.amax() > self.cfg.position_bound
            || self.ee_velocity.amax() > self.cfg.velocity_bound
        {
            return Err(WorldError::NumericInstability {
                time: self.time,
                what: format!("pose {:?} vel max {:.2}", p, self.ee_velocity.amax()),
            });
        }
        Ok(())
    }

    /// One physics substep of the impedance-controlled dynamics
    /// `Lambda e_dd + D e_d + K e = F_ext` under zero-order-held `x_d`.
    pub fn step_physics(&mut self) -> Result<(), WorldError> {
        let dt = self.cfg.dt_physics;
        self.update_contact();
        let (on_ee, hinge) = contact_loads(&self.contact, &self.ee_pose, &self.door, &self.cfg);

        let e = pose_error(&self.desired, &self.ee_pose);
        let g = &self.cfg.gains;
        let wrench = g.stiffness.component_mul(&e) - g.damping.component_mul(&self.ee_velocity)
            + on_ee.as_vector();
        let accel = wrench.component_div(&g.inertia);
        self.ee_velocity += accel * dt;
        self.ee_pose = self.ee_pose.integrate(&(self.ee_velocity * dt));

        self.advance_door(hinge);
        self.time += dt;
        self.check_bounds()
    }

    /// Runs one control period (zero-order hold on `x_d`).
    pub fn step_control(&mut self, x_d: Pose6) -> Result<(), WorldError> {
        self.desired = x_d;
        for _ in 0..self.cfg.substeps_per_control() {
            self.step_physics()?;
        }
        Ok(())
    }

    /// Kinematic drive for kinesthetic-style demonstration: the end-effector
    /// pose is imposed directly (full compliance), interpolated over one
    /// control period, while the door and contact respond.
    pub fn step_kinematic(&mut self, target: Pose6) -> Result<(), WorldError> {
        let n = self.cfg.substeps_per_control();
        let delta = pose_error(&target, &self.ee_pose);
        let per = delta / n as f64;
        self.ee_velocity = delta / self.cfg.control_dt();
        for _ in 0..n {
            self.ee_pose = self.ee_pose.integrate(&per);
            self.desired = self.ee_pose;
            self.update_contact();
            let (_, hinge) = contact_loads(&self.contact, &self.ee_pose, &self.door, &self.cfg);
            self.advance_door(hinge);
            self.time += self.cfg.dt_physics;
        }
        self.check_bounds()
    }

    /// Success predicate for the configured task.
    pub fn check_success(&self) -> Status {
        if self.cfg.task.is_open_task() {
            if self.door.angle >= self.cfg.open_threshold {
                return Status::Success;
            }
        } else {
            if self.slammed {
                return Status::Failure(FailureReason::Slam);
            }
            if self.door.angle <= self.cfg.closed_threshold {
                return Status::Success;
            }
        }
        if self.time >= self.cfg.time_limit {
            return Status::Failure(FailureReason::Timeout);
        }
        Status::Running
    }

    /// Handle centre expressed in the sensor frame's in-plane coordinates,
    /// plus the vertical gap (positive when above the membrane). Ground
    /// truth used by the scripted expert and the sensor's scene projection.
    pub fn handle_in_sensor_frame(&self) -> (Vector2<f64>, f64) {
        let yaw = self.ee_pose.yaw();
        let xy = self.door.handle_xy(&self.cfg);
        let d = nalgebra::Rotation2::new(-yaw) * (xy - self.ee_pose.position.xy());
        let gap = self.ee_pose.position.z - self.cfg.handle_height;
        (d, gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn converges_to_setpoint_in_free_space() {
        let cfg = EnvConfig::for_task(Task::FlatHandleOpen);
        let mut env = Env::new(cfg).unwrap();
        let start = env.ee_pose();
        let target = Pose6::from_position_yaw(
            start.position + Vector3::new(0.02, -0.01, 0.05),
            0.1,
        );
        for _ in 0..30 {
            env.step_control(target).unwrap();
        }
        let e = pose_error(&target, &env.ee_pose());
        assert!(e.norm() < 1e-6, "residual {}", e.norm());
    }

    #[test]
    fn series_spring_equilibrium_against_membrane() {
        // Closed-form oracle: pressing x_d below the handle top by s settles at
        // penetration delta = K s / (K + k_m), so K e = k_m delta exactly.
        let cfg = EnvConfig::for_task(Task::GlassKnobOpen);
        let k = cfg.gains.stiffness[2];
        let km = cfg.membrane_stiffness;
        let mut env = Env::new(cfg.clone()).unwrap();
        let door = DoorState::new(&cfg, 0.0);
        let xy = door.handle_xy(&cfg);
        let s = 0.010;
        let target = Pose6::from_position(Vector3::new(xy.x, xy.y, cfg.handle_height - s));
        for _ in 0..60 {
            env.step_control(target).unwrap();
        }
        let delta_oracle = k * s / (k + km);
        assert_relative_eq!(env.contact().penetration, delta_oracle, max_relative = 1e-6);
        // At rest the impedance spring balances the contact force: K e = -F_ext.
        let e = pose_error(&target, &env.ee_pose());
        let spring = cfg.gains.k_times(&e);
        assert_relative_eq!(spring[2], -km * delta_oracle, max_relative = 1e-6);
    }

    #[test]
    fn free_velocity_decay_matches_ode() {
        // With zero stiffness the velocity decays as exp(-D/Lambda t).
        let mut cfg = EnvConfig::for_task(Task::FlatHandleOpen);
        cfg.dt_physics = 1e-4; // keep Euler discretization error below tolerance
        cfg.gains.stiffness = Vector6::zeros();
        cfg.gains.damping = Vector6::repeat(10.0);
        let mut env = Env::new(cfg.clone()).unwrap();
        env.ee_velocity = Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0);
        let v0 = env.ee_velocity[0];
        let t = 0.5;
        for _ in 0..((t / cfg.dt_physics).round() as usize) {
            env.step_physics().unwrap();
        }
        let expected = v0 * (-cfg.gains.damping[0] / cfg.gains.inertia[0] * t).exp();
        assert_relative_eq!(env.ee_velocity()[0], expected, max_relative = 5e-3);
    }

    #[test]
    fn passivity_energy_non_increasing() {
        let cfg = EnvConfig::for_task(Task::FlatHandleOpen);
        let mut env = Env::new(cfg.clone()).unwrap();
        // Free space, fixed setpoint away from start.
        let target = Pose6::from_position(env.ee_pose().position + Vector3::new(0.03, 0.0, 0.01));
        env.desired = target;
        let energy = |env: &Env| {
            let e = pose_error(&env.desired, &env.ee_pose());
            0.5 * env.ee_velocity().dot(&cfg.gains.inertia.component_mul(&env.ee_velocity()))
                + 0.5 * e.dot(&cfg.gains.stiffness.component_mul(&e))
        };
        let mut prev = energy(&env);
        for _ in 0..2000 {
            env.step_physics().unwrap();
            let now = energy(&env);
            assert!(now <= prev + 1e-12, "energy rose: {prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn success_predicates() {
        let cfg = EnvConfig::for_task(Task::GlassKnobOpen);
        let mut env = Env::new(cfg).unwrap();
        env.door.angle = 1.05;
        assert_eq!(env.check_success(), Status::Success);

        let cfg = EnvConfig::for_task(Task::GlassKnobClose);
        let mut env = Env::new(cfg).unwrap();
        env.door.angle = 0.4;
        env.was_in_contact = true;
        env.slammed = false;
        // Simulate contact loss mid-range.
        env.update_contact();
        assert_eq!(env.check_success(), Status::Failure(FailureReason::Slam));

        let cfg = EnvConfig::for_task(Task::FlatHandleOpen);
        let mut env = Env::new(cfg).unwrap();
        env.time = env.cfg.time_limit;
        assert_eq!(env.check_success(), Status::Failure(FailureReason::Timeout));
    }

    #[test]
    fn instability_detected_for_bad_dt() {
        let mut cfg = EnvConfig::for_task(Task::FlatHandleOpen);
        cfg.dt_physics = 9e-3; // passes the 10x-rate bound, unstable on contact
        cfg.control_rate = 10.0;
        cfg.gains.inertia = Vector6::repeat(1e-4);
        cfg.gains.stiffness = Vector6::repeat(5e4);
        cfg.gains.damping = Vector6::repeat(1e3);
        let mut env = Env::new(cfg).unwrap();
        let target = Pose6::from_position(env.ee_pose().position + Vector3::new(1.0, 0.0, 0.0));
        let mut failed = false;
        for _ in 0..100 {
            if env.step_control(target).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }

    #[test]
    fn deterministic_trajectories_bitwise() {
        let run = || {
            let cfg = EnvConfig::for_task(Task::GlassKnobOpen);
            let mut env = Env::new(cfg).unwrap();
            let base = env.ee_pose();
            let mut out = Vec::new();
            for i in 0..40 {
                let t = i as f64 * 0.1;
                let target = Pose6::from_position(
                    base.position + Vector3::new(0.01 * t.sin(), 0.0, -0.004 * t),
                );
                env.step_control(target).unwrap();
                out.push(env.ee_pose());
                out.push(Pose6::from_position(Vector3::new(
                    env.door().angle,
                    env.door().angular_velocity,
                    env.contact().penetration,
                )));
            }
            out
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.orientation, y.orientation);
        }
    }
}
