//! Force matching (Eq. 12): turns raw demonstration trajectories into
//! replay plans whose impedance tracking errors reproduce the recorded
//! wrench profile, plus replay execution and wrench-recovery analysis.

pub mod replay;

pub use replay::{replay, ReplayOptions, DIVERGENCE_BOUND, LEAD_GAIN};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::calibration::{invert, world_offset, CalibError, CalibrationModel};
use crate::sensor::{SensorMode, UnscaledWrench, TACTILE_FEATURE_LEN, WRIST_FEATURE_LEN};
use crate::world::{Pose6, Status, Task};

pub const EPISODE_SCHEMA: &str = "episode/1";

fn episode_schema() -> String {
    EPISODE_SCHEMA.to_string()
}

#[derive(Debug, Error)]
pub enum FmError {
    #[error("episode never makes contact")]
    NoContact,
    #[error("stream length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("bad schema: expected {expected}, got {got}")]
    BadSchema { expected: String, got: String },
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
}

/// A raw kinesthetic-style demonstration at 10 Hz, recorded with the sensor
/// in Tactile mode throughout. `contact` is the ground-truth contact stream
/// used by the oracle mode labeler.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawDemo {
    #[serde(default = "episode_schema")]
    pub schema: String,
    pub task: Task,
    pub seed: u64,
    pub initial_pose: Pose6,
    pub timestamps: Vec<f64>,
    pub x_raw: Vec<Pose6>,
    pub f_raw: Vec<UnscaledWrench>,
    pub contact: Vec<bool>,
}

impl RawDemo {
    pub fn len(&self) -> usize {
        self.x_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_raw.is_empty()
    }
}

/// Desired-pose trajectory for replay. With force matching disabled the
/// plan is the raw pose list, elementwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub x_d_rep: Vec<Pose6>,
    pub fm_enabled: bool,
    pub calib_ref: String,
}

impl ReplayPlan {
    /// Pass-through plan: replays the recorded poses unchanged.
    pub fn passthrough(raw: &RawDemo) -> Self {
        Self {
            x_d_rep: raw.x_raw.clone(),
            fm_enabled: false,
            calib_ref: String::new(),
        }
    }
}

/// One executed replay episode: the training unit of the expert dataset.
/// Tactile and visual feature streams are both recorded at every step so
/// sensor-mode ablations can re-encode the same episodes; `modes` holds the
/// mode actually commanded (Visual until the labelled switch step).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayRecord {
    #[serde(default = "episode_schema")]
    pub schema: String,
    pub task: Task,
    pub seed: u64,
    pub fm_enabled: bool,
    pub initial_pose: Pose6,
    pub timestamps: Vec<f64>,
    pub x_d: Vec<Pose6>,
    pub x_rep: Vec<Pose6>,
    /// Measured wrench per step; `None` while the sensor is in Visual mode.
    pub f_rep: Vec<Option<UnscaledWrench>>,
    pub modes: Vec<SensorMode>,
    pub contact: Vec<bool>,
    pub tactile_features: Vec<[f64; TACTILE_FEATURE_LEN]>,
    pub visual_features: Vec<[f64; TACTILE_FEATURE_LEN]>,
    pub wrist_features: Vec<[f64; WRIST_FEATURE_LEN]>,
    /// Per-step actions: EE-frame pose delta (6) + mode command (1).
    /// Integrating action t onto `x_d[t]` reproduces `x_d[t + 1]`.
    pub actions: Vec<[f64; 7]>,
    pub mode_switch_step: Option<usize>,
    pub status: Status,
    pub success: bool,
    pub diverged: bool,
    /// Base64-encoded rendered frames, populated on request only.
    pub frames: Option<Vec<String>>,
}

/// Applies Eq. 12: each in-contact pose is offset by the inverted
/// calibration error so the impedance controller reproduces the recorded
/// wrench. Non-contact steps pass through unchanged.
pub fn force_match(raw: &RawDemo, model: &CalibrationModel) -> Result<ReplayPlan, CalibError> {
    let mut x_d_rep = Vec::with_capacity(raw.len());
    for t in 0..raw.len() {
        let x = raw.x_raw[t];
        if !raw.contact[t] {
            x_d_rep.push(x);
            continue;
        }
        let e_meas = invert(model, &raw.f_raw[t])?;
        let offset = world_offset(&e_meas, x.yaw());
        x_d_rep.push(x.integrate(&offset));
    }
    Ok(ReplayPlan {
        x_d_rep,
        fm_enabled: true,
        calib_ref: model_ref(model),
    })
}

/// Short fingerprint of the model used to build a plan.
pub fn model_ref(model: &CalibrationModel) -> String {
    let slopes: Vec<String> = model
        .dims
        .iter()
        .map(|d| format!("{}:{:.4}", d.name, d.slope_post))
        .collect();
    format!("{}[{}]", model.schema, slopes.join(","))
}

/// First ground-truth contact step, with optional seeded jitter of
/// {-1, 0, +1} steps at weights (0.15, 0.5, 0.35), clamped to range.
/// The late side is weighted up on purpose: a switch one step after
/// contact records Visual-mode contact observations labelled "switch
/// now", the states a policy visits when it grazes the handle without
/// having latched yet.
pub fn oracle_mode_labeler(
    contact: &[bool],
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<usize, FmError> {
    let first = contact
        .iter()
        .position(|&c| c)
        .ok_or(FmError::NoContact)?;
    let mut step = first as i64;
    if let Some(rng) = jitter {
        let u: f64 = rng.gen();
        step += if u < 0.15 {
            -1
        } else if u < 0.65 {
            0
        } else {
            1
        };
    }
    Ok(step.clamp(0, contact.len() as i64 - 1) as usize)
}

/// Per-dimension replay fidelity: wrench RMS error normalized by the peak
/// raw magnitude, and absolute pose RMS error. Streams are compared over
/// their common prefix; Visual-mode steps count as zero measured wrench.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WrenchMatchReport {
    /// RMS(f_rep - f_raw) per dim (x, y, z, theta_z), absolute units.
    pub f_rms: [f64; 4],
    /// Peak |f_raw| per dim.
    pub f_peak: [f64; 4],
    /// f_rms / f_peak, zero where the raw stream is silent.
    pub f_rms_norm: [f64; 4],
    pub pos_rms: [f64; 3],
    pub yaw_rms: f64,
}

pub fn wrench_match_report(raw: &RawDemo, rec: &ReplayRecord) -> WrenchMatchReport {
    let n = raw.len().min(rec.x_rep.len());
    let mut f_sq = [0.0f64; 4];
    let mut f_peak = [0.0f64; 4];
    let mut p_sq = [0.0f64; 3];
    let mut yaw_sq = 0.0f64;
    for t in 0..n {
        let fr = raw.f_raw[t].as_array();
        let fe = rec.f_rep[t].map_or([0.0; 4], |w| w.as_array());
        for d in 0..4 {
            f_sq[d] += (fe[d] - fr[d]).powi(2);
            f_peak[d] = f_peak[d].max(fr[d].abs());
        }
        let dp = rec.x_rep[t].position - raw.x_raw[t].position;
        for d in 0..3 {
            p_sq[d] += dp[d].powi(2);
        }
        yaw_sq += (rec.x_rep[t].yaw() - raw.x_raw[t].yaw()).powi(2);
    }
    let m = n.max(1) as f64;
    let mut f_rms = [0.0; 4];
    let mut f_rms_norm = [0.0; 4];
    let mut pos_rms = [0.0; 3];
    for d in 0..4 {
        f_rms[d] = (f_sq[d] / m).sqrt();
        f_rms_norm[d] = if f_peak[d] > 0.0 {
            f_rms[d] / f_peak[d]
        } else {
            0.0
        };
    }
    for d in 0..3 {
        pos_rms[d] = (p_sq[d] / m).sqrt();
    }
    WrenchMatchReport {
        f_rms,
        f_peak,
        f_rms_norm,
        pos_rms,
        yaw_rms: (yaw_sq / m).sqrt(),
    }
}
