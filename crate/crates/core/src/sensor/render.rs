//! Frame rendering for the two sensor modes.
//!
//! Tactile mode: LEDs on, dark background with bright marker discs; a glass
//! knob additionally shows up faintly through the gel. Visual mode: LEDs
//! off, the camera sees the scene through the membrane with the markers at
//! reduced contrast; pressing an object into the gel washes the scene out.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::{MarkerGrid, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::SensorParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorMode {
    Visual,
    Tactile,
}

/// 8-bit grayscale frame, 212 x 120, row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TactileFrame {
    pub pixels: Vec<u8>,
    pub mode: SensorMode,
    pub timestamp: f64,
}

impl TactileFrame {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * IMAGE_WIDTH + x]
    }

    /// Binary PGM (P5) encoding for debugging dumps.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", IMAGE_WIDTH, IMAGE_HEIGHT).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// What the camera can see of the scene behind the membrane.
#[derive(Clone, Copy, Debug)]
pub enum SceneObject {
    /// Spherical glass knob: visible in visual mode, faint in tactile mode.
    Knob { center_px: Vector2<f64>, radius_px: f64 },
    /// Flat metal handle bar: visible in visual mode only.
    Bar {
        center_px: Vector2<f64>,
        axis: Vector2<f64>,
        half_len_px: f64,
        half_width_px: f64,
    },
}

impl SceneObject {
    fn contains(&self, p: Vector2<f64>) -> bool {
        match self {
            SceneObject::Knob { center_px, radius_px } => (p - center_px).norm() < *radius_px,
            SceneObject::Bar {
                center_px,
                axis,
                half_len_px,
                half_width_px,
            } => {
                let d = p - center_px;
                let along = d.dot(axis);
                let across = d.x * axis.y - d.y * axis.x;
                along.abs() < *half_len_px && across.abs() < *half_width_px
            }
        }
    }
}

/// Scene description handed to the renderer: the projected handle (if any)
/// plus the contact depth that degrades visual contrast.
#[derive(Clone, Copy, Debug, Default)]
pub struct SceneView {
    pub object: Option<SceneObject>,
    /// Penetration of the object into the membrane (m), 0 in free space.
    pub penetration: f64,
}

const TACTILE_BG: f64 = 20.0;
const TACTILE_MARKER: f64 = 230.0;
const TACTILE_KNOB_DELTA: f64 = 15.0;
const VISUAL_BG: f64 = 128.0;
const VISUAL_MARKER_DELTA: f64 = 40.0;
const VISUAL_SCENE_CONTRAST: f64 = 60.0;
/// Penetration scale (m) over which visual scene contrast decays.
const CONTACT_WASHOUT: f64 = 0.0015;

pub fn render<R: Rng>(
    grid: &MarkerGrid,
    mode: SensorMode,
    scene: &SceneView,
    params: &SensorParams,
    timestamp: f64,
    rng: &mut R,
) -> TactileFrame {
    let mut img = vec![0.0f64; IMAGE_WIDTH * IMAGE_HEIGHT];

    let (bg, silhouette_delta) = match mode {
        SensorMode::Tactile => {
            let delta = match scene.object {
                Some(SceneObject::Knob { .. }) => -TACTILE_KNOB_DELTA,
                _ => 0.0,
            };
            (TACTILE_BG, delta)
        }
        SensorMode::Visual => {
            let contrast = VISUAL_SCENE_CONTRAST * (-scene.penetration / CONTACT_WASHOUT).exp();
            (VISUAL_BG, contrast)
        }
    };

    for (i, v) in img.iter_mut().enumerate() {
        let x = (i % IMAGE_WIDTH) as f64 + 0.5;
        let y = (i / IMAGE_WIDTH) as f64 + 0.5;
        let mut val = bg;
        if silhouette_delta != 0.0 {
            if let Some(obj) = &scene.object {
                if obj.contains(Vector2::new(x, y)) {
                    // Tactile: faint bright glow; visual: dark silhouette.
                    val = match mode {
                        SensorMode::Tactile => bg - silhouette_delta,
                        SensorMode::Visual => bg - silhouette_delta,
                    };
                }
            }
        }
        *v = val;
    }

    // Anti-aliased marker discs.
    let marker_target = match mode {
        SensorMode::Tactile => TACTILE_MARKER,
        SensorMode::Visual => VISUAL_BG + VISUAL_MARKER_DELTA,
    };
    let r = grid.marker_radius;
    for c in &grid.current_positions {
        let x0 = (c.x - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((c.x + r + 1.0).ceil() as usize).min(IMAGE_WIDTH - 1);
        let y0 = (c.y - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((c.y + r + 1.0).ceil() as usize).min(IMAGE_HEIGHT - 1);
        if c.x < -r || c.y < -r || x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - c).norm();
                let cov = (r + 0.5 - d).clamp(0.0, 1.0);
                let idx = y * IMAGE_WIDTH + x;
                img[idx] += (marker_target - img[idx]) * cov;
            }
        }
    }

    let mut pixels = Vec::with_capacity(img.len());
    if params.intensity_noise > 0.0 {
        let dist = Normal::new(0.0, params.intensity_noise).unwrap();
        for v in img {
            pixels.push((v + dist.sample(rng)).round().clamp(0.0, 255.0) as u8);
        }
    } else {
        for v in img {
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }

    TactileFrame {
        pixels,
        mode,
        timestamp,
    }
}
