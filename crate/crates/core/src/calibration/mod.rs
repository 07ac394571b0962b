//! Piecewise-linear calibration between control error and unscaled wrench
//! (Eq. 11): autonomous push-schedule collection, per-dimension fitting,
//! and the inverse map used by force matching.

pub mod collect;
pub mod fit;

pub use collect::{collect_calibration, CalibrationSchedule};
pub use fit::{fit, forward, invert, CalibrationModel, DimFit};

use nalgebra::{Rotation2, Vector2, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::UnscaledWrench;
use crate::world::{pose_error, Pose6};

pub const CALIB_SCHEMA: &str = "calib/1";

/// Calibrated dimensions, indexing into [`CalibrationModel::dims`].
pub const DIM_NAMES: [&str; 4] = ["x", "y", "z", "theta_z"];

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration aborted: {0}")]
    CalibrationAborted(String),
    #[error("degenerate fit for dimension {dim}: {why}")]
    FitDegenerate { dim: &'static str, why: String },
    #[error("wrench out of calibrated range in {dim}: {value}")]
    OutOfRange { dim: &'static str, value: f64 },
    #[error("insufficient samples: {got} < {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("bad schema: expected {expected}, got {got}")]
    BadSchema { expected: String, got: String },
}

/// Which schedule segment produced a sample. Each dimension is fitted
/// from the trajectories designed to excite it; off-centre presses during
/// lateral sweeps shift the deformation footprint off the marker field and
/// would bias the normal (z) fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajKind {
    #[default]
    Normal,
    LateralX,
    LateralY,
    Rotational,
}

/// One quasi-static (e, f̃) pair. The error is stored in the measurement
/// frame: the sensor frame seen from the environment side, so pressing the
/// handle into the pad gives positive e_z and dragging it along +x gives
/// positive e_x, matching the sign of the wrench it produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub e: Vector6<f64>,
    pub wrench: UnscaledWrench,
    pub timestamp: f64,
    #[serde(default)]
    pub kind: TrajKind,
}

impl CalibrationSample {
    /// The scalar error for calibrated dimension `d` in 0..4.
    pub fn e_dim(&self, d: usize) -> f64 {
        match d {
            0 => self.e[0],
            1 => self.e[1],
            2 => self.e[2],
            3 => self.e[5],
            _ => unreachable!("calibrated dims are 0..4"),
        }
    }

    pub fn f_dim(&self, d: usize) -> f64 {
        self.wrench.as_array()[d]
    }
}

/// Control error mapped into the measurement frame: in-plane components
/// rotated into the sensor frame and the sign flipped, so the error reads
/// as the environment's displacement into the sensor. Rotational x/y are
/// unmeasured and zeroed.
pub fn measurement_error(desired: &Pose6, actual: &Pose6) -> Vector6<f64> {
    let e = pose_error(desired, actual);
    let exy = Rotation2::new(-actual.yaw()) * Vector2::new(e[0], e[1]);
    Vector6::new(-exy.x, -exy.y, -e[2], 0.0, 0.0, -e[5])
}

/// Inverse of [`measurement_error`]'s frame mapping: a measurement-frame
/// offset expressed as a world-frame control error (what to add to the
/// desired pose so the impedance controller reproduces the offset).
pub fn world_offset(e_meas: &Vector6<f64>, yaw: f64) -> Vector6<f64> {
    let exy = Rotation2::new(yaw) * Vector2::new(-e_meas[0], -e_meas[1]);
    Vector6::new(exy.x, exy.y, -e_meas[2], 0.0, 0.0, -e_meas[5])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn measurement_error_round_trips_through_world_offset() {
        let actual = Pose6::from_position_yaw(Vector3::new(0.3, 0.2, 0.1), 0.7);
        let desired = Pose6::from_position_yaw(Vector3::new(0.31, 0.19, 0.095), 0.74);
        let m = measurement_error(&desired, &actual);
        let w = world_offset(&m, actual.yaw());
        let e = pose_error(&desired, &actual);
        assert_relative_eq!(w[0], e[0], epsilon = 1e-12);
        assert_relative_eq!(w[1], e[1], epsilon = 1e-12);
        assert_relative_eq!(w[2], e[2], epsilon = 1e-12);
        assert_relative_eq!(w[5], e[5], epsilon = 1e-9);
    }

    #[test]
    fn pressing_gives_positive_meas_z() {
        // Desired below actual: the controller pushes down, the handle
        // presses up into the pad; measurement-frame z must be positive.
        let actual = Pose6::from_position(Vector3::new(0.0, 0.0, 0.1));
        let desired = Pose6::from_position(Vector3::new(0.0, 0.0, 0.09));
        let m = measurement_error(&desired, &actual);
        assert!(m[2] > 0.0);
    }
}
