//! Marker tracking: adaptive mean threshold, connected-component
//! centroiding, nearest-neighbour association against the rest grid,
//! low-pass filtering and MAD-based outlier rejection.

use nalgebra::Vector2;

use super::grid::{DisplacementField, MarkerGrid, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::render::{SensorMode, TactileFrame};
use super::{SensorError, SensorParams};

/// Minimum blob area (px) and peak intensity; rejects speckle and the faint
/// glass-knob glow.
const MIN_BLOB_AREA: usize = 4;
const MIN_BLOB_PEAK: u8 = 100;
/// Floor on the MAD scale (px). Most of the grid is undeformed, so the MAD
/// itself is near zero; the floor keeps genuine footprint deformation
/// (neighbour differences up to ~4 px at saturation) below the cut while
/// still rejecting mid-range association jumps.
const MAD_FLOOR: f64 = 1.25;

#[derive(Clone, Debug)]
pub struct TrackerState {
    /// Low-pass filtered displacement per marker, used both as the output
    /// smoother and as the association prediction for the next frame.
    pub filtered: Vec<Vector2<f64>>,
    pub initialized: Vec<bool>,
}

impl TrackerState {
    pub fn new(n: usize) -> Self {
        Self {
            filtered: vec![Vector2::zeros(); n],
            initialized: vec![false; n],
        }
    }
}

/// Local-mean threshold over a square window via integral image.
fn adaptive_mask(frame: &TactileFrame, window: usize, offset: f64) -> Vec<bool> {
    let (w, h) = (IMAGE_WIDTH, IMAGE_HEIGHT);
    let mut integral = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += frame.pixels[y * w + x] as u64;
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] + row;
        }
    }
    let half = window / 2;
    let mut mask = vec![false; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(w);
            let sum = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            let mean = sum as f64 / ((y1 - y0) * (x1 - x0)) as f64;
            mask[y * w + x] = frame.pixels[y * w + x] as f64 > mean + offset;
        }
    }
    mask
}

struct Blob {
    centroid: Vector2<f64>,
}

fn find_blobs(frame: &TactileFrame, mask: &[bool]) -> Vec<Blob> {
    let (w, h) = (IMAGE_WIDTH, IMAGE_HEIGHT);
    let mut seen = vec![false; w * h];
    let mut blobs = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let peak = pixels.iter().map(|&i| frame.pixels[i]).max().unwrap();
        if pixels.len() < MIN_BLOB_AREA || peak < MIN_BLOB_PEAK {
            continue;
        }
        let mut sum = Vector2::zeros();
        let mut wsum = 0.0;
        for &i in &pixels {
            let weight = frame.pixels[i] as f64;
            sum += weight
                * Vector2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            wsum += weight;
        }
        blobs.push(Blob {
            centroid: sum / wsum,
        });
    }
    blobs
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn track(
    frame: &TactileFrame,
    rest: &MarkerGrid,
    neighbors: &[Vec<usize>],
    params: &SensorParams,
    state: &mut TrackerState,
) -> Result<DisplacementField, SensorError> {
    let n = rest.len();
    if frame.mode == SensorMode::Visual {
        return Ok(DisplacementField::invalid(n));
    }

    let mask = adaptive_mask(frame, params.threshold_window, params.threshold_offset);
    let blobs = find_blobs(frame, &mask);
    let max_dist = rest.pitch() / 2.0;

    // Associate each marker to the nearest blob around its predicted
    // position (rest + previous filtered displacement).
    let mut raw = vec![Vector2::zeros(); n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let predicted = rest.rest_positions[i] + state.filtered[i];
        let mut best: Option<(f64, &Blob)> = None;
        for b in &blobs {
            let d = (b.centroid - predicted).norm();
            if d < best.map_or(f64::INFINITY, |(bd, _)| bd) {
                best = Some((d, b));
            }
        }
        if let Some((d, b)) = best {
            if d <= max_dist {
                raw[i] = b.centroid - rest.rest_positions[i];
                valid[i] = true;
            }
        }
    }

    // Outlier rejection on neighbour displacement differences.
    let mut score = vec![0.0f64; n];
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let mut diffs: Vec<f64> = neighbors[i]
            .iter()
            .filter(|&&j| valid[j])
            .map(|&j| (raw[i] - raw[j]).norm())
            .collect();
        if !diffs.is_empty() {
            score[i] = median(&mut diffs);
        }
    }
    let mut scores: Vec<f64> = (0..n).filter(|&i| valid[i]).map(|i| score[i]).collect();
    if !scores.is_empty() {
        let med = median(&mut scores.clone());
        let mut devs: Vec<f64> = scores.iter_mut().map(|s| (*s - med).abs()).collect();
        let mad = median(&mut devs).max(MAD_FLOOR);
        for i in 0..n {
            if valid[i] && score[i] > med + params.mad_factor * mad {
                valid[i] = false;
            }
        }
    }

    // Low-pass; invalid markers keep their previous filtered state.
    let mut out = vec![Vector2::zeros(); n];
    for i in 0..n {
        if valid[i] {
            let a = params.lowpass_alpha;
            state.filtered[i] = if state.initialized[i] {
                raw[i] * a + state.filtered[i] * (1.0 - a)
            } else {
                raw[i]
            };
            state.initialized[i] = true;
            out[i] = state.filtered[i];
        }
    }

    let field = DisplacementField::from_displacements(out, valid);
    if field.valid_fraction() < 0.5 {
        return Err(SensorError::TrackingDegraded {
            invalid_fraction: 1.0 - field.valid_fraction(),
        });
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::render::{render, SceneView};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_params() -> SensorParams {
        let mut p = SensorParams::default();
        p.intensity_noise = 0.0;
        p.position_noise = 0.0;
        p
    }

    fn render_grid(grid: &MarkerGrid, params: &SensorParams) -> TactileFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        render(
            grid,
            SensorMode::Tactile,
            &SceneView::default(),
            params,
            0.0,
            &mut rng,
        )
    }

    #[test]
    fn rest_grid_tracks_to_zero() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = quiet_params();
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let frame = render_grid(&rest, &params);
        let field = track(&frame, &rest, &nbrs, &params, &mut state).unwrap();
        assert_eq!(field.valid_count(), rest.len());
        for d in &field.displacement {
            assert!(d.norm() < 0.1, "residual {}", d.norm());
        }
    }

    #[test]
    fn uniform_shift_recovered() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = quiet_params();
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let mut shifted = rest.clone();
        for p in shifted.current_positions.iter_mut() {
            p.x += 3.0;
            p.y += 1.5;
        }
        let frame = render_grid(&shifted, &params);
        let field = track(&frame, &rest, &nbrs, &params, &mut state).unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for (d, v) in field.displacement.iter().zip(&field.valid) {
            if *v {
                sq += (d - Vector2::new(3.0, 1.5)).norm_squared();
                n += 1.0;
            }
        }
        assert!(n > 0.0);
        assert!((sq / n).sqrt() < 0.5, "rms {}", (sq / n).sqrt());
    }

    #[test]
    fn tracking_within_tolerance_under_noise() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let mut params = quiet_params();
        params.intensity_noise = 2.0;
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let mut shifted = rest.clone();
        for p in shifted.current_positions.iter_mut() {
            p.x += 2.0;
            p.y -= 1.0;
        }
        let frame = render_grid(&shifted, &params);
        let field = track(&frame, &rest, &nbrs, &params, &mut state).unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for (d, v) in field.displacement.iter().zip(&field.valid) {
            if *v {
                sq += (d - Vector2::new(2.0, -1.0)).norm_squared();
                n += 1.0;
            }
        }
        assert!((sq / n).sqrt() < 1.0, "rms {}", (sq / n).sqrt());
    }

    #[test]
    fn teleported_marker_flagged_invalid() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = quiet_params();
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let mut moved = rest.clone();
        // Interior marker jumps off the grid lattice, far from any rest site.
        let victim = 3 * moved.cols + 5;
        moved.current_positions[victim] += Vector2::new(8.0, 8.0);
        let frame = render_grid(&moved, &params);
        let field = track(&frame, &rest, &nbrs, &params, &mut state).unwrap();
        assert!(!field.valid[victim]);
        let invalid: Vec<usize> = (0..rest.len()).filter(|&i| !field.valid[i]).collect();
        assert!(invalid.len() <= 2, "collateral invalidations: {:?}", invalid);
        for (i, d) in field.displacement.iter().enumerate() {
            if field.valid[i] {
                assert!(d.norm() < 0.5);
            }
        }
    }

    #[test]
    fn visual_frame_yields_all_invalid() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = quiet_params();
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = render(
            &rest,
            SensorMode::Visual,
            &SceneView::default(),
            &params,
            0.0,
            &mut rng,
        );
        let field = track(&frame, &rest, &nbrs, &params, &mut state).unwrap();
        assert_eq!(field.valid_count(), 0);
    }

    #[test]
    fn blank_frame_degraded() {
        let rest = MarkerGrid::regular(12, 7, 3.0);
        let params = quiet_params();
        let nbrs = rest.neighbor_graph();
        let mut state = TrackerState::new(rest.len());
        let frame = TactileFrame {
            pixels: vec![20; IMAGE_WIDTH * IMAGE_HEIGHT],
            mode: SensorMode::Tactile,
            timestamp: 0.0,
        };
        let err = track(&frame, &rest, &nbrs, &params, &mut state).unwrap_err();
        assert!(matches!(err, SensorError::TrackingDegraded { .. }));
    }
}
