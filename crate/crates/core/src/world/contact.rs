//! Frictional contact between the downward-facing sensor pad and the
//! door handle.
//!
//! The pad is a plane at the end-effector position, normal pointing down
//! (world -z). The handle presses into the membrane from below; normal
//! force is a linear spring on penetration. Tangential and torsional
//! forces follow an anchored-stick-point model capped by a Coulomb cone
//! (plus a hook term for the flat handle), transitioning to kinetic slip
//! at the cap.

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::door::{DoorState, HandleKind};
use super::env::EnvConfig;
use super::pose::Pose6;
use super::Wrench6;

/// Ground-truth contact state in the sensor frame.
///
/// Sensor frame: x/y are the end-effector body axes (yaw-rotated world x/y),
/// z points up into the pad so compression is positive.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContactState {
    pub in_contact: bool,
    /// Membrane penetration (m), >= 0, positive iff in contact.
    pub penetration: f64,
    /// Contact point in the sensor frame (m), clamped to the pad extent.
    pub contact_point: Vector3<f64>,
    /// False once the tangential force saturates the friction cone.
    pub tangential_stick: bool,
    /// Wrench exerted on the sensor by the handle, sensor frame.
    pub contact_wrench_sensor: Wrench6,
    /// Torsion-spring part of tau_z, i.e. what twists the marker field
    /// (excludes the moment of the tangential force about the pad centre).
    pub twist_torque: f64,
    /// Stick anchor: handle position in the sensor frame at (re-)attachment.
    anchor: Option<Vector2<f64>>,
    /// Stick anchor for the relative twist coordinate (door yaw - ee yaw).
    anchor_twist: Option<f64>,
}

impl ContactState {
    pub fn free() -> Self {
        Self {
            in_contact: false,
            penetration: 0.0,
            contact_point: Vector3::zeros(),
            tangential_stick: false,
            contact_wrench_sensor: Wrench6::zero(),
            twist_torque: 0.0,
            anchor: None,
            anchor_twist: None,
        }
    }

    /// Tangential (in-plane) force magnitude on the sensor.
    pub fn tangential_force(&self) -> f64 {
        self.contact_wrench_sensor.force.xy().norm()
    }

    /// Normal force magnitude (compression positive).
    pub fn normal_force(&self) -> f64 {
        self.contact_wrench_sensor.force.z
    }
}

/// Friction cone capacity for the given normal force and handle kind.
fn tangential_cap(normal: f64, cfg: &EnvConfig) -> f64 {
    let hook = match cfg.task.handle_kind() {
        HandleKind::FlatHandle => cfg.hook_capacity,
        HandleKind::GlassKnob => 0.0,
    };
    cfg.friction_mu * normal + hook
}

/// One quasi-static contact evaluation.
pub fn contact_model(
    ee: &Pose6,
    door: &DoorState,
    cfg: &EnvConfig,
    prev: &ContactState,
) -> ContactState {
    let yaw = ee.yaw();
    let world_to_sensor = Rotation2::new(-yaw);

    let handle_xy = door.handle_xy(cfg);
    let offset_world = handle_xy - ee.position.xy();
    // Handle centre in the sensor frame (in-plane).
    let d = world_to_sensor * offset_world;

    // Vertical overlap between the handle top and the pad face.
    let penetration = cfg.handle_height - ee.position.z;

    let within = match cfg.task.handle_kind() {
        HandleKind::GlassKnob => d.x.abs() < cfg.pad_half_x && d.y.abs() < cfg.pad_half_y,
        HandleKind::FlatHandle => d.norm() < cfg.handle_capture_radius,
    };

    if penetration <= 0.0 || !within {
        return ContactState::free();
    }

    let normal = cfg.membrane_stiffness * penetration;
    let cap = tangential_cap(normal, cfg);

    // Tangential stick spring against the anchored handle position.
    let mut anchor = prev.anchor.unwrap_or(d);
    let mut stick = true;
    let mut u = d - anchor;
    let mut f_t = cfg.tangential_stiffness * u.norm();
    if f_t > cap {
        // Kinetic slip: drag the anchor so the spring sits exactly on the cone.
        stick = false;
        let keep = cap / f_t;
        anchor = d - u * keep;
        u = d - anchor;
        f_t = cap;
    }
    let force_t = cfg.tangential_stiffness * u; // on the sensor, sensor frame
    debug_assert!((force_t.norm() - f_t.min(cap)).abs() < 1e-9);

    // Torsional stick on the relative twist coordinate.
    let twist = door.angle - yaw;
    let mut anchor_twist = prev.anchor_twist.unwrap_or(twist);
    let torsion_cap = cfg.friction_mu * normal * cfg.torsion_arm;
    let mut u_w = twist - anchor_twist;
    let mut tau = cfg.twist_stiffness * u_w;
    if tau.abs() > torsion_cap {
        anchor_twist = twist - torsion_cap / cfg.twist_stiffness * u_w.signum();
        u_w = twist - anchor_twist;
        tau = cfg.twist_stiffness * u_w;
    }

    let contact_point = Vector3::new(
        d.x.clamp(-cfg.pad_half_x, cfg.pad_half_x),
        d.y.clamp(-cfg.pad_half_y, cfg.pad_half_y),
        0.0,
    );

    // Moment of the tangential force about the pad centre adds to tau_z.
    let moment = contact_point.x * force_t.y - contact_point.y * force_t.x;

    ContactState {
        in_contact: true,
        penetration,
        contact_point,
        tangential_stick: stick,
        contact_wrench_sensor: Wrench6 {
            force: Vector3::new(force_t.x, force_t.y, normal),
            torque: Vector3::new(0.0, 0.0, tau + moment),
        },
        twist_torque: tau,
        anchor: Some(anchor),
        anchor_twist: Some(anchor_twist),
    }
}

/// Maps the sensor-frame contact wrench to the world-frame wrench on the
/// end-effector and the generalized torque on the door hinge.
pub fn contact_loads(
    contact: &ContactState,
    ee: &Pose6,
    door: &DoorState,
    cfg: &EnvConfig,
) -> (Wrench6, f64) {
    if !contact.in_contact {
        return (Wrench6::zero(), 0.0);
    }
    let yaw = ee.yaw();
    let sensor_to_world = Rotation2::new(yaw);
    let f_t_world = sensor_to_world * contact.contact_wrench_sensor.force.xy();
    // The handle pushes the sensor up (+z) while the sensor presses down.
    let on_ee = Wrench6 {
        force: Vector3::new(f_t_world.x, f_t_world.y, contact.normal_force()),
        torque: Vector3::new(0.0, 0.0, contact.contact_wrench_sensor.torque.z),
    };
    // Equal and opposite in-plane force on the handle drives the hinge.
    let jac = door.handle_jacobian(cfg);
    let hinge = -(f_t_world.x * jac.x + f_t_world.y * jac.y) - contact.twist_torque;
    (on_ee, hinge)
}
