//! Low-dimensional feature summaries of frames and displacement fields,
//! standing in for the image encoder: block-pooled displacement/depth plus
//! silhouette statistics (centroid approximates a spatial soft-argmax).

use nalgebra::Vector2;

use super::grid::{DisplacementField, MarkerGrid, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::render::{SensorMode, TactileFrame};
use super::UnscaledWrench;

pub const TACTILE_FEATURE_LEN: usize = 24;
pub const WRIST_FEATURE_LEN: usize = 4;

const BLOCK_COLS: usize = 3;
const BLOCK_ROWS: usize = 2;

/// Visual-mode silhouette: pixels this far below the mid background count
/// as scene. Contact washout pushes the silhouette above this and it fades.
const VISUAL_SILHOUETTE_THRESH: u8 = 110;
/// Tactile-mode faint glass-knob glow band (above background, below discs).
const TACTILE_GLOW_LO: u8 = 28;
const TACTILE_GLOW_HI: u8 = 70;

fn silhouette_stats(frame: &TactileFrame, lo: u8, hi: u8) -> (Vector2<f64>, f64) {
    let mut sum = Vector2::zeros();
    let mut n = 0.0;
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let p = frame.get(x, y);
            if p >= lo && p <= hi {
                sum += Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                n += 1.0;
            }
        }
    }
    let centre = Vector2::new(IMAGE_WIDTH as f64 / 2.0, IMAGE_HEIGHT as f64 / 2.0);
    let centroid = if n > 0.0 { sum / n - centre } else { Vector2::zeros() };
    // Normalized offset and area fraction.
    (
        Vector2::new(
            centroid.x / (IMAGE_WIDTH as f64 / 2.0),
            centroid.y / (IMAGE_HEIGHT as f64 / 2.0),
        ),
        n / (IMAGE_WIDTH * IMAGE_HEIGHT) as f64,
    )
}

/// Tactile-mode summary: 3x2 block-pooled (dx, dy, depth), the 4-dim
/// unscaled wrench, valid fraction, and the faint-glow knob visibility
/// channel from the frame.
pub fn tactile_features(
    field: &DisplacementField,
    wrench: Option<UnscaledWrench>,
    frame: &TactileFrame,
    rest: &MarkerGrid,
) -> [f64; TACTILE_FEATURE_LEN] {
    let mut out = [0.0; TACTILE_FEATURE_LEN];
    let mut sums = [[0.0f64; 3]; BLOCK_COLS * BLOCK_ROWS];
    let mut counts = [0.0f64; BLOCK_COLS * BLOCK_ROWS];
    for i in 0..rest.len() {
        if !field.valid[i] {
            continue;
        }
        let c = i % rest.cols;
        let r = i / rest.cols;
        let bc = (c * BLOCK_COLS / rest.cols).min(BLOCK_COLS - 1);
        let br = (r * BLOCK_ROWS / rest.rows).min(BLOCK_ROWS - 1);
        let b = br * BLOCK_COLS + bc;
        sums[b][0] += field.displacement[i].x;
        sums[b][1] += field.displacement[i].y;
        sums[b][2] += field.depth[i];
        counts[b] += 1.0;
    }
    for b in 0..BLOCK_COLS * BLOCK_ROWS {
        if counts[b] > 0.0 {
            out[3 * b] = sums[b][0] / counts[b];
            out[3 * b + 1] = sums[b][1] / counts[b];
            out[3 * b + 2] = sums[b][2] / counts[b] * 10.0;
        }
    }
    if let Some(w) = wrench {
        out[18] = w.fx;
        out[19] = w.fy;
        out[20] = w.fz * 10.0;
        out[21] = w.tz;
    }
    out[22] = field.valid_fraction();
    if frame.mode == SensorMode::Tactile {
        // Presence only: the faint glow says a knob is near, not where.
        let (_, area) = silhouette_stats(frame, TACTILE_GLOW_LO, TACTILE_GLOW_HI);
        out[23] = if area > 1e-4 { 1.0 } else { 0.0 };
    }
    out
}

/// Visual-mode summary occupying the same block as tactile features:
/// silhouette centroid, area and darkness; remaining slots zero.
pub fn visual_features(frame: &TactileFrame) -> [f64; TACTILE_FEATURE_LEN] {
    let mut out = [0.0; TACTILE_FEATURE_LEN];
    let (centroid, area) = silhouette_stats(frame, 0, VISUAL_SILHOUETTE_THRESH);
    let mut dark = 0.0;
    let mut n = 0.0;
    for p in &frame.pixels {
        if *p <= VISUAL_SILHOUETTE_THRESH {
            dark += (128.0 - *p as f64) / 60.0;
            n += 1.0;
        }
    }
    out[0] = centroid.x;
    out[1] = centroid.y;
    // Unsaturated size channel: the projected silhouette grows pinhole-
    // style as the gap closes, so this is the approach-height cue.
    out[2] = (area * 100.0).sqrt();
    out[3] = if n > 0.0 { dark / n } else { 0.0 };
    out
}

/// Synthetic wrist-camera vector: coarsely quantized in-plane handle offset
/// from the pad centre (m), a visibility flag, and a quantized door-angle
/// proxy. The 3 cm offset quantization leaves the wrist view too blunt to
/// align with the 9 mm knob capture radius on its own; fine alignment has
/// to come from the sensor channels.
pub fn wrist_features(
    handle_offset: Vector2<f64>,
    visible: bool,
    door_angle: f64,
) -> [f64; WRIST_FEATURE_LEN] {
    let q = 0.03;
    if !visible {
        return [0.0, 0.0, 0.0, (door_angle / 0.02).round() * 0.02];
    }
    [
        (handle_offset.x / q).round() * q * 20.0,
        (handle_offset.y / q).round() * q * 20.0,
        1.0,
        (door_angle / 0.02).round() * 0.02,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::render::{render, SceneObject, SceneView};
    use crate::sensor::SensorParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_params() -> SensorParams {
        let mut p = SensorParams::default();
        p.intensity_noise = 0.0;
        p.position_noise = 0.0;
        p
    }

    #[test]
    fn visual_features_track_knob_position() {
        let grid = MarkerGrid::regular(12, 7, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scene = SceneView {
            object: Some(SceneObject::Knob {
                center_px: Vector2::new(140.0, 60.0),
                radius_px: 25.0,
            }),
            penetration: 0.0,
        };
        let f = render(&grid, SensorMode::Visual, &scene, &quiet_params(), 0.0, &mut rng);
        let v = visual_features(&f);
        // Knob is right of centre: positive normalized x offset, no y offset.
        assert!(v[0] > 0.2);
        assert!(v[1].abs() < 0.1);
        assert!(v[2] > 0.0);
    }

    #[test]
    fn visual_silhouette_fades_with_penetration() {
        let grid = MarkerGrid::regular(12, 7, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let knob = SceneObject::Knob {
            center_px: Vector2::new(106.0, 60.0),
            radius_px: 25.0,
        };
        let shallow = render(
            &grid,
            SensorMode::Visual,
            &SceneView { object: Some(knob), penetration: 0.0 },
            &quiet_params(),
            0.0,
            &mut rng,
        );
        let deep = render(
            &grid,
            SensorMode::Visual,
            &SceneView { object: Some(knob), penetration: 0.004 },
            &quiet_params(),
            0.0,
            &mut rng,
        );
        assert!(visual_features(&shallow)[2] > 0.0);
        assert_eq!(visual_features(&deep)[2], 0.0);
    }

    #[test]
    fn tactile_glow_flags_glass_knob() {
        let grid = MarkerGrid::regular(12, 7, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field = DisplacementField::invalid(grid.len());
        let scene = SceneView {
            object: Some(SceneObject::Knob {
                center_px: Vector2::new(106.0, 60.0),
                radius_px: 20.0,
            }),
            penetration: 0.0,
        };
        let with = render(&grid, SensorMode::Tactile, &scene, &quiet_params(), 0.0, &mut rng);
        let without = render(
            &grid,
            SensorMode::Tactile,
            &SceneView::default(),
            &quiet_params(),
            0.0,
            &mut rng,
        );
        assert!(tactile_features(&field, None, &with, &grid)[23] > 0.0);
        assert_eq!(tactile_features(&field, None, &without, &grid)[23], 0.0);
    }

    #[test]
    fn wrist_features_quantized() {
        // Offsets well inside half a quantization step collapse to zero.
        let a = wrist_features(Vector2::new(0.0101, -0.0024), true, 0.431);
        let b = wrist_features(Vector2::new(0.0118, -0.0019), true, 0.438);
        assert_eq!(a, b);
        assert_eq!(a[0], 0.0);
        // A 2 cm offset rounds up to one 3 cm step.
        let big = wrist_features(Vector2::new(0.02, 0.0), true, 0.43);
        assert_eq!(big[0], 0.6);
        let c = wrist_features(Vector2::new(0.02, 0.0), false, 0.43);
        assert_eq!(c[2], 0.0);
        assert_eq!(c[0], 0.0);
    }
}
