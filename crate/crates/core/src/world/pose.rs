//! End-effector poses and 6-vector pose errors.
//!
//! Rotational parts of error vectors are rotation vectors (axis * angle),
//! with magnitude below pi.

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// SE(3) pose: position in metres plus a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose6 {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Pose with the given position and a yaw rotation about world z.
    pub fn from_position_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    /// Yaw angle about world z, assuming the orientation is (close to) a pure
    /// z rotation, as it is everywhere in this simulator.
    pub fn yaw(&self) -> f64 {
        self.orientation.scaled_axis().z
    }

    /// Applies a 6-vector increment: translation added in world frame,
    /// rotational part composed as a rotation vector on the left.
    pub fn integrate(&self, delta: &Vector6<f64>) -> Pose6 {
        let dp = Vector3::new(delta[0], delta[1], delta[2]);
        let dr = Vector3::new(delta[3], delta[4], delta[5]);
        Pose6 {
            position: self.position + dp,
            orientation: UnitQuaternion::from_scaled_axis(dr) * self.orientation,
        }
    }

    /// Applies a 6-vector increment expressed in this pose's own frame:
    /// translation rotated into the world, rotation composed on the right.
    pub fn compose_local(&self, delta: &Vector6<f64>) -> Pose6 {
        let dp = Vector3::new(delta[0], delta[1], delta[2]);
        let dr = Vector3::new(delta[3], delta[4], delta[5]);
        Pose6 {
            position: self.position + self.orientation * dp,
            orientation: self.orientation * UnitQuaternion::from_scaled_axis(dr),
        }
    }

    /// The local-frame increment taking this pose to `other`, the inverse
    /// of [`Pose6::compose_local`].
    pub fn local_delta(&self, other: &Pose6) -> Vector6<f64> {
        let dp = self.orientation.inverse() * (other.position - self.position);
        let dr = (self.orientation.inverse() * other.orientation).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    /// True when the quaternion is unit-norm within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.orientation.as_ref().norm() - 1.0).abs() <= tol
    }
}

/// Task-space error `e = x_d - x`: translational difference plus the rotation
/// vector of the relative rotation `q_d * q^-1`.
pub fn pose_error(x_d: &Pose6, x: &Pose6) -> Vector6<f64> {
    let dp = x_d.position - x.position;
    let dq = x_d.orientation * x.orientation.inverse();
    let rv = dq.scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, rv.x, rv.y, rv.z)
}
