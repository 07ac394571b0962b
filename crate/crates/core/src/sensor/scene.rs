//! Projection of the environment's handle into the sensor's image plane.

use nalgebra::{Rotation2, Vector2};

use super::deform::sensor_to_px;
use super::render::{SceneObject, SceneView};
use super::SensorParams;
use crate::world::{Env, HandleKind};

/// How far (m) beyond the membrane the camera still resolves the handle.
const VIEW_DEPTH: f64 = 0.06;
/// Apparent-size falloff length (m): the projected object grows as the
/// gap closes, pinhole-style.
const PERSPECTIVE_SCALE: f64 = 0.02;
const BAR_HALF_LEN: f64 = 0.025;
const BAR_HALF_WIDTH: f64 = 0.006;

/// Builds the scene the sensor camera sees for the current env state.
pub fn scene_from_env(env: &Env, params: &SensorParams) -> SceneView {
    let (d, gap) = env.handle_in_sensor_frame();
    let gap = gap.max(0.0);
    let in_plane_limit = 2.0 * env.cfg.handle_capture_radius;
    if gap > VIEW_DEPTH || d.norm() > in_plane_limit {
        return SceneView {
            object: None,
            penetration: 0.0,
        };
    }
    let scale = 1.0 / (1.0 + gap / PERSPECTIVE_SCALE);
    let center_px = sensor_to_px(d, params);
    let object = match env.cfg.task.handle_kind() {
        HandleKind::GlassKnob => SceneObject::Knob {
            center_px,
            radius_px: env.cfg.knob_radius * params.px_per_m * scale,
        },
        HandleKind::FlatHandle => {
            let jac = env.door().handle_jacobian(&env.cfg);
            let axis_world = jac / jac.norm();
            let axis = Rotation2::new(-env.ee_pose().yaw()) * axis_world;
            SceneObject::Bar {
                center_px,
                axis: Vector2::new(axis.x, axis.y),
                half_len_px: BAR_HALF_LEN * params.px_per_m * scale,
                half_width_px: BAR_HALF_WIDTH * params.px_per_m * scale,
            }
        }
    };
    SceneView {
        object: Some(object),
        penetration: env.contact().penetration,
    }
}
