//! Spring-hinged door, handle kinematics and task definitions.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::env::EnvConfig;
use super::pose::Pose6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandleKind {
    FlatHandle,
    GlassKnob,
}

/// The four door tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    FlatHandleOpen,
    FlatHandleClose,
    GlassKnobOpen,
    GlassKnobClose,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::FlatHandleOpen,
        Task::FlatHandleClose,
        Task::GlassKnobOpen,
        Task::GlassKnobClose,
    ];

    pub fn handle_kind(&self) -> HandleKind {
        match self {
            Task::FlatHandleOpen | Task::FlatHandleClose => HandleKind::FlatHandle,
            Task::GlassKnobOpen | Task::GlassKnobClose => HandleKind::GlassKnob,
        }
    }

    pub fn is_open_task(&self) -> bool {
        matches!(self, Task::FlatHandleOpen | Task::GlassKnobOpen)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::FlatHandleOpen => "FlatHandleOpen",
            Task::FlatHandleClose => "FlatHandleClose",
            Task::GlassKnobOpen => "GlassKnobOpen",
            Task::GlassKnobClose => "GlassKnobClose",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FlatHandleOpen" => Ok(Task::FlatHandleOpen),
            "FlatHandleClose" => Ok(Task::FlatHandleClose),
            "GlassKnobOpen" => Ok(Task::GlassKnobOpen),
            "GlassKnobClose" => Ok(Task::GlassKnobClose),
            other => Err(format!("unknown task: {other}")),
        }
    }
}

/// Door hinge state. The handle pose is a deterministic function of the
/// angle; the hinge spring engages only below `spring_engage` so an open
/// door stays put until the finger pulls it into the sprung range.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DoorState {
    pub angle: f64,
    pub angular_velocity: f64,
    pub hinge_stiffness: f64,
    pub hinge_damping: f64,
    pub inertia: f64,
    pub handle_kind: HandleKind,
}

impl DoorState {
    pub fn new(cfg: &EnvConfig, angle: f64) -> Self {
        Self {
            angle,
            angular_velocity: 0.0,
            hinge_stiffness: cfg.hinge_stiffness,
            hinge_damping: cfg.hinge_damping,
            inertia: cfg.door_inertia,
            handle_kind: cfg.task.handle_kind(),
        }
    }

    /// Handle centre in the world xy-plane.
    pub fn handle_xy(&self, cfg: &EnvConfig) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(
            cfg.hinge_position[0] + cfg.door_radius * s,
            cfg.hinge_position[1] - cfg.door_radius * c,
        )
    }

    /// Derivative of the handle position with respect to the door angle;
    /// dotting a world-frame force with this gives the hinge torque.
    pub fn handle_jacobian(&self, cfg: &EnvConfig) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(cfg.door_radius * c, cfg.door_radius * s)
    }

    /// Full handle pose: position at the handle height, yaw following the door.
    pub fn handle_pose(&self, cfg: &EnvConfig) -> Pose6 {
        let xy = self.handle_xy(cfg);
        Pose6::from_position_yaw(Vector3::new(xy.x, xy.y, cfg.handle_height), self.angle)
    }

    /// Hinge torque from the spring and damper. The spring pulls toward
    /// closed and engages below `spring_engage`, tapering in over a band
    /// so the resistive torque has no step discontinuity.
    pub fn passive_torque(&self, cfg: &EnvConfig) -> f64 {
        const TAPER: f64 = 0.15;
        let engage = ((cfg.spring_engage - self.angle) / TAPER).clamp(0.0, 1.0);
        let spring = -self.hinge_stiffness * self.angle * engage;
        spring - self.hinge_damping * self.angular_velocity
    }

    /// Semi-implicit Euler step under the given contact torque, with hard
    /// stops at 0 and `angle_max`.
    pub fn step(&mut self, contact_torque: f64, cfg: &EnvConfig, dt: f64) {
        let torque = self.passive_torque(cfg) + contact_torque;
        self.angular_velocity += torque / self.inertia * dt;
        self.angle += self.angular_velocity * dt;
        if self.angle < 0.0 {
            self.angle = 0.0;
            self.angular_velocity = self.angular_velocity.max(0.0);
        }
        if self.angle > cfg.angle_max {
            self.angle = cfg.angle_max;
            self.angular_velocity = self.angular_velocity.min(0.0);
        }
    }
}
