//! Unscaled wrench aggregation over a tracked displacement field.

use nalgebra::Vector2;

use super::grid::{DisplacementField, MarkerGrid};
use super::{SensorError, UnscaledWrench};

/// Aggregates the field into (f̃x, f̃y, f̃z, τ̃z): mean planar displacement,
/// mean depth, and the mean perpendicular displacement component about the
/// depth-weighted centroid (right-handed about sensor z).
pub fn estimate_wrench(
    field: &DisplacementField,
    rest: &MarkerGrid,
) -> Result<UnscaledWrench, SensorError> {
    let total = field.valid.len();
    let valid = field.valid_count();
    if valid * 2 < total || valid == 0 {
        return Err(SensorError::InsufficientMarkers { valid, total });
    }

    let mut mean_d = Vector2::zeros();
    let mut mean_depth = 0.0;
    for i in 0..total {
        if field.valid[i] {
            mean_d += field.displacement[i];
            mean_depth += field.depth[i];
        }
    }
    mean_d /= valid as f64;
    mean_depth /= valid as f64;

    // Depth-weighted centroid approximates the centre of maximal normal
    // force; fall back to the plain centroid when nothing is pressed.
    let mut centroid = Vector2::zeros();
    let mut wsum = 0.0;
    for i in 0..total {
        if field.valid[i] {
            centroid += field.depth[i] * rest.rest_positions[i];
            wsum += field.depth[i];
        }
    }
    if wsum > 1e-12 {
        centroid /= wsum;
    } else {
        let mut c = Vector2::zeros();
        for i in 0..total {
            if field.valid[i] {
                c += rest.rest_positions[i];
            }
        }
        centroid = c / valid as f64;
    }

    let mut tz = 0.0;
    for i in 0..total {
        if !field.valid[i] {
            continue;
        }
        let r = rest.rest_positions[i] - centroid;
        let rn = r.norm();
        if rn < 1e-9 {
            continue;
        }
        // Component of displacement perpendicular to the radius, signed
        // right-handed about z: (r x d) / |r|.
        tz += (r.x * field.displacement[i].y - r.y * field.displacement[i].x) / rn;
    }
    tz /= valid as f64;

    let w = UnscaledWrench {
        fx: mean_d.x,
        fy: mean_d.y,
        fz: mean_depth,
        tz,
    };
    debug_assert!(w.is_finite());
    Ok(w)
}
