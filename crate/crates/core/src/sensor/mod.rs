//! Simulated STS membrane sensor: forward membrane model, frame rendering,
//! marker tracking, depth estimation and 4-dim unscaled wrench estimation.

pub mod deform;
pub mod depth;
pub mod features;
pub mod grid;
pub mod render;
pub mod scene;
pub mod track;
pub mod wrench;

pub use deform::{deform, sensor_to_px};
pub use features::{
    tactile_features, visual_features, wrist_features, TACTILE_FEATURE_LEN, WRIST_FEATURE_LEN,
};
pub use depth::estimate_depth;
pub use grid::{DisplacementField, MarkerGrid, IMAGE_HEIGHT, IMAGE_WIDTH};
pub use render::{render, SceneObject, SceneView, SensorMode, TactileFrame};
pub use scene::scene_from_env;
pub use track::{track, TrackerState};
pub use wrench::estimate_wrench;

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::ContactState;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("tracking degraded: {invalid_fraction:.2} of markers invalid")]
    TrackingDegraded { invalid_fraction: f64 },
    #[error("insufficient markers: {valid} of {total} valid")]
    InsufficientMarkers { valid: usize, total: usize },
}

/// Four dimensions of the unscaled wrench T-tilde-F. Planar components and
/// torsion are in pixels, depth is the unitless mean separation increase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnscaledWrench {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tz: f64,
}

impl UnscaledWrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.fz, self.tz]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            fx: a[0],
            fy: a[1],
            fz: a[2],
            tz: a[3],
        }
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensorParams {
    /// In-plane metres to pixels.
    pub px_per_m: f64,
    /// Separation expansion per metre of penetration at the footprint centre.
    pub depth_gain: f64,
    /// Gaussian footprint radius of the normal deformation (px).
    pub footprint_sigma: f64,
    /// Marker translation per Newton of tangential force (px/N).
    pub shear_gain: f64,
    /// Grid rotation per N*m of torsion (rad per N*m).
    pub torque_gain: f64,
    /// Marker position jitter sigma (px).
    pub position_noise: f64,
    /// Pixel intensity noise sigma (8-bit levels).
    pub intensity_noise: f64,
    /// First-order low-pass coefficient on tracked displacements.
    pub lowpass_alpha: f64,
    /// Outlier rejection threshold, multiples of the neighbour-difference MAD.
    pub mad_factor: f64,
    /// Adaptive mean threshold window (px) and offset (levels).
    pub threshold_window: usize,
    pub threshold_offset: f64,
    /// Penetration beyond which deformation clips (m).
    pub saturation_penetration: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub marker_radius: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            px_per_m: 6625.0,
            depth_gain: 50.0,
            footprint_sigma: 25.0,
            shear_gain: 2.0,
            torque_gain: 2.0,
            position_noise: 0.05,
            intensity_noise: 0.5,
            lowpass_alpha: 0.5,
            mad_factor: 4.0,
            threshold_window: 15,
            threshold_offset: 10.0,
            saturation_penetration: 0.005,
            grid_cols: 12,
            grid_rows: 7,
            marker_radius: 3.0,
        }
    }
}

/// Everything the sensor produced for one control tick.
#[derive(Clone, Debug)]
pub struct SensorReading {
    pub frame: TactileFrame,
    pub field: DisplacementField,
    pub wrench: Option<UnscaledWrench>,
}

/// One sensor instance: owns the marker grid, tracker state and noise RNG.
/// Single-threaded; use separate instances for concurrent environments.
pub struct Sensor {
    pub params: SensorParams,
    pub rest: MarkerGrid,
    neighbors: Vec<Vec<usize>>,
    tracker: TrackerState,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(params: SensorParams, seed: u64) -> Self {
        let rest = MarkerGrid::regular(params.grid_cols, params.grid_rows, params.marker_radius);
        let neighbors = rest.neighbor_graph();
        let n = rest.len();
        Self {
            params,
            rest,
            neighbors,
            tracker: TrackerState::new(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn reset(&mut self, seed: u64) {
        self.tracker = TrackerState::new(self.rest.len());
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Deform, render, track and estimate in one pass. The wrench is `None`
    /// in Visual mode or when tracking degrades below the validity floor.
    pub fn sense(
        &mut self,
        contact: &ContactState,
        scene: &SceneView,
        mode: SensorMode,
        timestamp: f64,
    ) -> SensorReading {
        let deformed = deform(&self.rest, contact, &self.params, &mut self.rng);
        let frame = render(&deformed, mode, scene, &self.params, timestamp, &mut self.rng);
        let field = match track(&frame, &self.rest, &self.neighbors, &self.params, &mut self.tracker)
        {
            Ok(f) => f,
            Err(_) => DisplacementField::invalid(self.rest.len()),
        };
        let field = estimate_depth(field, &self.rest, &self.neighbors);
        let wrench = estimate_wrench(&field, &self.rest).ok();
        SensorReading { frame, field, wrench }
    }
}
