//! Diagonal task-space impedance gains.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::pose::{pose_error, Pose6};
use crate::world::Wrench6;

/// Diagonal stiffness, damping and virtual inertia for the 6-DOF
/// task-space mass-spring-damper.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Gains {
    /// Stiffness diagonal (N/m translational, N*m/rad rotational).
    pub stiffness: Vector6<f64>,
    /// Damping diagonal (N*s/m, N*m*s/rad).
    pub damping: Vector6<f64>,
    /// Virtual inertia diagonal (kg, kg*m^2).
    pub inertia: Vector6<f64>,
}

impl Gains {
    /// Gains with the given stiffness/inertia and damping set to a fraction
    /// `zeta` of critical damping per axis.
    pub fn with_damping_ratio(stiffness: Vector6<f64>, inertia: Vector6<f64>, zeta: f64) -> Self {
        let damping = Vector6::from_fn(|i, _| 2.0 * zeta * (stiffness[i] * inertia[i]).sqrt());
        Self {
            stiffness,
            damping,
            inertia,
        }
    }

    /// All diagonals non-negative, damping at least 0.7 of critical.
    pub fn is_valid(&self) -> bool {
        (0..6).all(|i| {
            self.stiffness[i] >= 0.0
                && self.damping[i] >= 0.0
                && self.inertia[i] > 0.0
                && self.damping[i] + 1e-12 >= 2.0 * 0.7 * (self.stiffness[i] * self.inertia[i]).sqrt()
        })
    }

    pub fn k_times(&self, e: &Vector6<f64>) -> Vector6<f64> {
        self.stiffness.component_mul(e)
    }
}

impl Default for Gains {
    /// K = diag(600 N/m, 30 N*m/rad), zeta = 0.9, inertia 2 kg / 0.05 kg*m^2.
    /// A 1 cm desired-pose offset then commands ~6 N.
    fn default() -> Self {
        let stiffness = Vector6::new(600.0, 600.0, 600.0, 30.0, 30.0, 30.0);
        let inertia = Vector6::new(2.0, 2.0, 2.0, 0.05, 0.05, 0.05);
        Gains::with_damping_ratio(stiffness, inertia, 0.9)
    }
}

/// Impedance command `K e + D (-v)` for desired pose `x_d`, current pose `x`
/// and task-space velocity `v`. With `v = 0` this is the static spring law.
pub fn control_wrench(x_d: &Pose6, x: &Pose6, v: &Vector6<f64>, gains: &Gains) -> Wrench6 {
    let e = pose_error(x_d, x);
    let w = gains.stiffness.component_mul(&e) - gains.damping.component_mul(v);
    Wrench6 {
        force: Vector3::new(w[0], w[1], w[2]),
        torque: Vector3::new(w[3], w[4], w[5]),
    }
}
