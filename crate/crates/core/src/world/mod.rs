//! Task-space impedance-controlled end-effector coupled to a spring-hinged
//! door through a frictional membrane contact.

pub mod contact;
pub mod door;
pub mod env;
pub mod gains;
pub mod pose;

pub use contact::{contact_loads, contact_model, ContactState};
pub use door::{DoorState, HandleKind, Task};
pub use env::{Env, EnvConfig, FailureReason, Status, WorldError};
pub use gains::{control_wrench, Gains};
pub use pose::{pose_error, Pose6};

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Task-space wrench: force (N) and torque (N*m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench6 {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench6 {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: Vector3::new(v[0], v[1], v[2]),
            torque: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.as_vector().iter().all(|x| x.is_finite())
    }
}
