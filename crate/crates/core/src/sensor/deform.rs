//! Forward membrane model: ground-truth contact to marker displacements.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{MarkerGrid, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::SensorParams;
use crate::world::ContactState;

/// Image-pixel coordinates of a sensor-frame in-plane point (m).
pub fn sensor_to_px(p: Vector2<f64>, params: &SensorParams) -> Vector2<f64> {
    Vector2::new(
        IMAGE_WIDTH as f64 / 2.0 + p.x * params.px_per_m,
        IMAGE_HEIGHT as f64 / 2.0 + p.y * params.px_per_m,
    )
}

/// Deforms the rest grid under the given contact.
///
/// Normal load expands marker separation radially inside a Gaussian
/// footprint around the contact point (the membrane nears the camera and
/// spacing magnifies); shear translates all markers with the tangential
/// force; torsion rotates them about the contact point. Deformation clips
/// beyond the saturation penetration.
pub fn deform<R: Rng>(
    rest: &MarkerGrid,
    contact: &ContactState,
    params: &SensorParams,
    rng: &mut R,
) -> MarkerGrid {
    let mut grid = rest.clone();
    if contact.in_contact {
        let c = sensor_to_px(contact.contact_point.xy(), params);
        let pen = contact.penetration.min(params.saturation_penetration);
        let expansion = params.depth_gain * pen;
        let shear = contact.contact_wrench_sensor.force.xy() * params.shear_gain;
        let rot = contact.twist_torque * params.torque_gain;
        let (sin_r, cos_r) = rot.sin_cos();
        for (i, p) in rest.rest_positions.iter().enumerate() {
            let r = p - c;
            let g = (-r.norm_squared() / (2.0 * params.footprint_sigma.powi(2))).exp();
            let mut q = c + r * (1.0 + expansion * g);
            // Rotate about the contact point.
            let rr = q - c;
            q = c + Vector2::new(cos_r * rr.x - sin_r * rr.y, sin_r * rr.x + cos_r * rr.y);
            q += shear;
            grid.current_positions[i] = q;
        }
    }
    if params.position_noise > 0.0 {
        let dist = Normal::new(0.0, params.position_noise).unwrap();
        for q in grid.current_positions.iter_mut() {
            q.x += dist.sample(rng);
            q.y += dist.sample(rng);
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Wrench6;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn contact_with(pen: f64, fx: f64, fy: f64, tau: f64) -> ContactState {
        let mut c = ContactState::free();
        c.in_contact = true;
        c.penetration = pen;
        c.contact_point = Vector3::zeros();
        c.contact_wrench_sensor = Wrench6 {
            force: Vector3::new(fx, fy, 1.0),
            torque: Vector3::new(0.0, 0.0, tau),
        };
        c.twist_torque = tau;
        c
    }

    fn noiseless_params() -> SensorParams {
        let mut p = SensorParams::default();
        p.position_noise = 0.0;
        p
    }

    #[test]
    fn no_contact_no_noise_identity() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = deform(&rest, &ContactState::free(), &noiseless_params(), &mut rng);
        assert_eq!(g.current_positions, rest.rest_positions);
    }

    #[test]
    fn pure_shear_uniform_translation() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = noiseless_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = contact_with(0.0005, 2.0, -1.0, 0.0);
        // Zero out the normal expansion via zero depth gain for this check.
        let mut p = params.clone();
        p.depth_gain = 0.0;
        let g = deform(&rest, &c, &p, &mut rng);
        let expect = Vector2::new(2.0 * p.shear_gain, -1.0 * p.shear_gain);
        for (q, r) in g.current_positions.iter().zip(&rest.rest_positions) {
            let d = q - r;
            approx::assert_relative_eq!(d, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_press_increases_neighbor_separation_in_footprint() {
        // Geometry oracle: nearest-neighbour distances before/after.
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = noiseless_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = contact_with(0.003, 0.0, 0.0, 0.0);
        let g = deform(&rest, &c, &params, &mut rng);
        let centre = sensor_to_px(Vector2::zeros(), &params);
        let adj = rest.neighbor_graph();
        let mut grew = 0;
        let mut pairs = 0;
        for i in 0..rest.len() {
            if (rest.rest_positions[i] - centre).norm() > params.footprint_sigma {
                continue;
            }
            for &j in &adj[i] {
                if (rest.rest_positions[j] - centre).norm() > params.footprint_sigma {
                    continue;
                }
                let before = (rest.rest_positions[i] - rest.rest_positions[j]).norm();
                let after = (g.current_positions[i] - g.current_positions[j]).norm();
                pairs += 1;
                if after > before {
                    grew += 1;
                }
            }
        }
        assert!(pairs > 0);
        assert_eq!(grew, pairs, "all footprint separations must grow");
    }

    #[test]
    fn saturation_clips_deformation() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = noiseless_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at_sat = deform(
            &rest,
            &contact_with(params.saturation_penetration, 0.0, 0.0, 0.0),
            &params,
            &mut rng,
        );
        let beyond = deform(
            &rest,
            &contact_with(params.saturation_penetration * 2.0, 0.0, 0.0, 0.0),
            &params,
            &mut rng,
        );
        assert_eq!(at_sat.current_positions, beyond.current_positions);
    }
}
