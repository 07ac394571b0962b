//! Per-marker depth from neighbour separation growth.

use super::grid::{DisplacementField, MarkerGrid};

/// Fills in depths: for each valid marker, the mean over Voronoi-adjacent
/// valid neighbours of (current separation / rest separation) - 1, clamped
/// at zero. Markers nearer the camera appear further from their neighbours.
pub fn estimate_depth(
    mut field: DisplacementField,
    rest: &MarkerGrid,
    neighbors: &[Vec<usize>],
) -> DisplacementField {
    for i in 0..rest.len() {
        field.depth[i] = 0.0;
        if !field.valid[i] {
            continue;
        }
        let mut sum = 0.0;
        let mut n = 0.0;
        for &j in &neighbors[i] {
            if !field.valid[j] {
                continue;
            }
            let rest_sep = (rest.rest_positions[i] - rest.rest_positions[j]).norm();
            let cur_sep = ((rest.rest_positions[i] + field.displacement[i])
                - (rest.rest_positions[j] + field.displacement[j]))
                .norm();
            sum += cur_sep / rest_sep - 1.0;
            n += 1.0;
        }
        if n > 0.0 {
            field.depth[i] = (sum / n).max(0.0);
        }
    }
    field
}
