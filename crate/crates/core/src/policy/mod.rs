//! Behavioural cloning on replayed episodes: observation encoding with
//! ablation flags, a hand-rolled fully connected policy over the summary
//! features, MSE training, and autonomous closed-loop rollout.

pub mod mlp;
pub mod rollout;

pub use mlp::{train_mlp, AdamW, Grads, Mlp};
pub use rollout::{rollout, rollout_traced, RolloutRecord, POS_CLAMP, ROT_CLAMP};

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcematch::ReplayRecord;
use crate::sensor::{SensorMode, TACTILE_FEATURE_LEN, WRIST_FEATURE_LEN};
use crate::world::{Pose6, WorldError};

pub const POLICY_SCHEMA: &str = "policy/1";

/// Observation layout: two relative poses (position + quaternion), the
/// 24-dim sensor block, the 4-dim wrist block and the mode flag.
pub const OBS_LEN: usize = 14 + TACTILE_FEATURE_LEN + WRIST_FEATURE_LEN + 1;

/// Fixed unit scale applied to the six pose-delta action dims for training
/// (metres and radians are ~5e-3 per step, the mode dim is ~1; a shared
/// MSE would drown the pose dims in the optimizer's noise floor). `act`
/// divides it back out, so the public action stays in SI units.
pub const ACTION_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("observation length {got}, policy expects {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("bad schema: expected {expected}, got {got}")]
    BadSchema { expected: String, got: String },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// How the STS channel enters the observation and which sensor mode the
/// environment executes with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StsMode {
    /// Visual features before the commanded switch, tactile after.
    #[default]
    Switching,
    VisualOnly,
    TactileOnly,
    /// Sensor block zeroed; the sensor itself runs visual-only.
    Excluded,
}

/// Ablation flags selecting which observation channels carry signal.
/// Disabled channels stay in the layout as exact zeros so every policy
/// shares one input shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsConfig {
    pub sts: StsMode,
    pub wrist: bool,
    pub rel_pose: bool,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            sts: StsMode::Switching,
            wrist: true,
            rel_pose: true,
        }
    }
}

impl ObsConfig {
    /// The sensor mode the observation uses at a step whose commanded
    /// (switching) mode is `commanded`.
    pub fn effective_mode(&self, commanded: SensorMode) -> SensorMode {
        match self.sts {
            StsMode::Switching => commanded,
            StsMode::TactileOnly => SensorMode::Tactile,
            StsMode::VisualOnly | StsMode::Excluded => SensorMode::Visual,
        }
    }
}

/// Seven-dimensional action: local-frame pose delta plus the sensor-mode
/// command in [0, 1].
#[derive(Clone, Copy, Debug)]
pub struct Action {
    pub delta: Vector6<f64>,
    pub mode_cmd: f64,
}

/// `pose` expressed in the frame of `initial`, so the episode starts at
/// the identity.
pub fn relative_pose(initial: &Pose6, pose: &Pose6) -> Pose6 {
    let qi = initial.orientation.inverse();
    Pose6 {
        position: qi * (pose.position - initial.position),
        orientation: qi * pose.orientation,
    }
}

/// Raw inputs for one observation.
pub struct ObsParts<'a> {
    pub rel_now: Pose6,
    pub rel_prev: Pose6,
    /// Commanded switching mode at this step.
    pub mode: SensorMode,
    pub tactile: &'a [f64; TACTILE_FEATURE_LEN],
    pub visual: &'a [f64; TACTILE_FEATURE_LEN],
    pub wrist: &'a [f64; WRIST_FEATURE_LEN],
}

fn pack_pose(out: &mut [f64], pose: &Pose6) {
    out[..3].copy_from_slice(pose.position.as_slice());
    let q = pose.orientation.as_ref();
    out[3] = q.w;
    out[4] = q.i;
    out[5] = q.j;
    out[6] = q.k;
}

/// Deterministic fixed-length encoding with ablation flags applied.
pub fn encode_parts(parts: &ObsParts, cfg: &ObsConfig) -> [f64; OBS_LEN] {
    let mut obs = [0.0; OBS_LEN];
    if cfg.rel_pose {
        pack_pose(&mut obs[0..7], &parts.rel_now);
        pack_pose(&mut obs[7..14], &parts.rel_prev);
    }
    let mode = cfg.effective_mode(parts.mode);
    let block = &mut obs[14..14 + TACTILE_FEATURE_LEN];
    match (cfg.sts, mode) {
        (StsMode::Excluded, _) => {}
        (_, SensorMode::Tactile) => block.copy_from_slice(parts.tactile),
        (_, SensorMode::Visual) => block.copy_from_slice(parts.visual),
    }
    if cfg.wrist {
        obs[14 + TACTILE_FEATURE_LEN..OBS_LEN - 1].copy_from_slice(parts.wrist);
    }
    obs[OBS_LEN - 1] = match mode {
        SensorMode::Tactile => 1.0,
        SensorMode::Visual => 0.0,
    };
    obs
}

/// Encodes step `t` of a replay record under the given flags.
pub fn encode_observation(rec: &ReplayRecord, t: usize, cfg: &ObsConfig) -> [f64; OBS_LEN] {
    let rel_now = relative_pose(&rec.initial_pose, &rec.x_rep[t]);
    let rel_prev = if t == 0 {
        Pose6::identity()
    } else {
        relative_pose(&rec.initial_pose, &rec.x_rep[t - 1])
    };
    encode_parts(
        &ObsParts {
            rel_now,
            rel_prev,
            mode: rec.modes[t],
            tactile: &rec.tactile_features[t],
            visual: &rec.visual_features[t],
            wrist: &rec.wrist_features[t],
        },
        cfg,
    )
}

/// Flat (observation, action) training set.
#[derive(Clone)]
pub struct Dataset {
    pub xs: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
    pub obs_config: ObsConfig,
}

/// Steps this close to the labelled mode switch are oversampled.
const SWITCH_WINDOW: usize = 2;
/// Copies of each switch-window sample: the transition is one step per
/// episode, and without reweighting the MSE fit flattens the mode head
/// into an unusable soft ramp.
const SWITCH_OVERSAMPLE: usize = 10;

/// Every step of every record becomes one sample; failed replays are kept,
/// so policies trained on bad replays honestly inherit their behaviour.
pub fn dataset_from_records(records: &[ReplayRecord], cfg: &ObsConfig) -> Dataset {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in records {
        for t in 0..rec.actions.len() {
            let x = DVector::from_row_slice(&encode_observation(rec, t, cfg));
            let mut a = rec.actions[t];
            for v in &mut a[..6] {
                *v *= ACTION_SCALE;
            }
            let y = DVector::from_row_slice(&a);
            let copies = match rec.mode_switch_step {
                Some(s) if t.abs_diff(s) <= SWITCH_WINDOW => SWITCH_OVERSAMPLE,
                _ => 1,
            };
            for _ in 0..copies {
                xs.push(x.clone());
                ys.push(y.clone());
            }
        }
    }
    Dataset {
        xs,
        ys,
        obs_config: *cfg,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Halved at the midpoint of training.
    pub learning_rate: f64,
    pub steps: usize,
    /// Decoupled decay on weight matrices.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            steps: 5000,
            weight_decay: 0.1,
            batch_size: 64,
            hidden: vec![128, 128],
        }
    }
}

/// Serializable trained policy: network parameters plus the observation
/// normalization statistics frozen from the training set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Policy {
    pub schema: String,
    pub obs_config: ObsConfig,
    pub sizes: Vec<usize>,
    /// Row-major weight matrices, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub config_fingerprint: String,
    pub final_loss: f64,
}

impl Policy {
    pub fn validate_schema(&self) -> Result<(), PolicyError> {
        if self.schema != POLICY_SCHEMA {
            return Err(PolicyError::BadSchema {
                expected: POLICY_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        Ok(())
    }

    fn net(&self) -> Mlp {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            w.push(nalgebra::DMatrix::from_row_slice(
                self.sizes[l + 1],
                self.sizes[l],
                &self.weights[l],
            ));
            b.push(DVector::from_row_slice(&self.biases[l]));
        }
        Mlp {
            sizes: self.sizes.clone(),
            w,
            b,
        }
    }

    /// Forward pass on a raw observation. The caller applies the one-way
    /// Tactile latch; `mode_cmd >= 0.5` commands Tactile.
    pub fn act(&self, obs: &[f64]) -> Result<Action, PolicyError> {
        if obs.len() != self.sizes[0] {
            return Err(PolicyError::ShapeMismatch {
                got: obs.len(),
                want: self.sizes[0],
            });
        }
        let x = DVector::from_fn(obs.len(), |i, _| {
            (obs[i] - self.norm_mean[i]) / self.norm_std[i]
        });
        let out = self.net().forward(&x);
        let mut delta = Vector6::zeros();
        delta.copy_from_slice(&out.as_slice()[..6]);
        delta /= ACTION_SCALE;
        Ok(Action {
            delta,
            mode_cmd: out[6].clamp(0.0, 1.0),
        })
    }
}

/// Behavioural cloning: normalizes observations by training-set statistics,
/// then minimizes MSE over all 7 action dimensions jointly.
pub fn train(data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Policy, PolicyError> {
    if data.xs.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let dim = data.xs[0].len();
    let n = data.xs.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for x in &data.xs {
        for i in 0..dim {
            mean[i] += x[i] / n;
        }
    }
    for x in &data.xs {
        for i in 0..dim {
            std[i] += (x[i] - mean[i]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
        // Channels that are (near-)constant in training, like ablated-to-
        // zero blocks or an always-on visibility flag, pass through
        // unscaled: flooring the divisor instead would amplify any
        // execution-time deviation by orders of magnitude.
        if *s < 1e-4 {
            *s = 1.0;
        }
    }
    let xs: Vec<DVector<f64>> = data
        .xs
        .iter()
        .map(|x| DVector::from_fn(dim, |i, _| (x[i] - mean[i]) / std[i]))
        .collect();

    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    sizes.push(7);
    let (net, final_loss) = train_mlp(&xs, &data.ys, &sizes, cfg, seed)?;
    let fingerprint = format!(
        "{POLICY_SCHEMA}[obs:{:?},sizes:{sizes:?},lr:{},steps:{},wd:{},batch:{},n:{}]",
        data.obs_config,
        cfg.learning_rate,
        cfg.steps,
        cfg.weight_decay,
        cfg.batch_size,
        data.xs.len(),
    );
    Ok(Policy {
        schema: POLICY_SCHEMA.into(),
        obs_config: data.obs_config,
        sizes,
        weights: net.w.iter().map(|m| m.transpose().as_slice().to_vec()).collect(),
        biases: net.b.iter().map(|v| v.as_slice().to_vec()).collect(),
        norm_mean: mean,
        norm_std: std,
        config_fingerprint: fingerprint,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn parts<'a>(
        tactile: &'a [f64; TACTILE_FEATURE_LEN],
        visual: &'a [f64; TACTILE_FEATURE_LEN],
        wrist: &'a [f64; WRIST_FEATURE_LEN],
        mode: SensorMode,
    ) -> ObsParts<'a> {
        ObsParts {
            rel_now: Pose6::from_position_yaw(Vector3::new(0.01, -0.02, 0.003), 0.1),
            rel_prev: Pose6::identity(),
            mode,
            tactile,
            visual,
            wrist,
        }
    }

    #[test]
    fn disabled_channels_are_exact_zeros() {
        let t = [1.0; TACTILE_FEATURE_LEN];
        let v = [2.0; TACTILE_FEATURE_LEN];
        let w = [3.0; WRIST_FEATURE_LEN];
        let cfg = ObsConfig {
            sts: StsMode::Excluded,
            wrist: false,
            rel_pose: false,
        };
        let obs = encode_parts(&parts(&t, &v, &w, SensorMode::Tactile), &cfg);
        // Everything but the mode flag is zero, and Excluded forces Visual.
        assert!(obs.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn switching_selects_block_by_mode() {
        let t = [1.0; TACTILE_FEATURE_LEN];
        let v = [2.0; TACTILE_FEATURE_LEN];
        let w = [3.0; WRIST_FEATURE_LEN];
        let cfg = ObsConfig::default();
        let ot = encode_parts(&parts(&t, &v, &w, SensorMode::Tactile), &cfg);
        let ov = encode_parts(&parts(&t, &v, &w, SensorMode::Visual), &cfg);
        assert_eq!(ot[14], 1.0);
        assert_eq!(ov[14], 2.0);
        assert_eq!(ot[OBS_LEN - 1], 1.0);
        assert_eq!(ov[OBS_LEN - 1], 0.0);
        // Single-mode configs pin the block and the flag regardless of the
        // commanded mode.
        let cfg_t = ObsConfig {
            sts: StsMode::TactileOnly,
            ..cfg
        };
        let o = encode_parts(&parts(&t, &v, &w, SensorMode::Visual), &cfg_t);
        assert_eq!(o[14], 1.0);
        assert_eq!(o[OBS_LEN - 1], 1.0);
    }

    #[test]
    fn relative_pose_of_initial_is_identity() {
        let p = Pose6::from_position_yaw(Vector3::new(0.4, 0.1, 0.2), 0.3);
        let r = relative_pose(&p, &p);
        assert!(r.position.norm() < 1e-12);
        assert!((r.orientation.angle()).abs() < 1e-12);
    }

    #[test]
    fn relative_pose_rotates_world_offsets_into_start_frame() {
        let start =
            Pose6::from_position_yaw(Vector3::zeros(), std::f64::consts::FRAC_PI_2);
        let moved = Pose6::from_position_yaw(Vector3::new(0.0, 0.1, 0.0), std::f64::consts::FRAC_PI_2);
        let r = relative_pose(&start, &moved);
        // World +y is the start frame's +x under a 90 degree yaw.
        assert!((r.position.x - 0.1).abs() < 1e-12);
        assert!(r.position.y.abs() < 1e-12);
    }

    #[test]
    fn policy_roundtrips_serde_and_checks_shape() {
        let data = Dataset {
            xs: vec![DVector::from_element(OBS_LEN, 0.5); 4],
            ys: vec![DVector::from_element(7, 0.1); 4],
            obs_config: ObsConfig::default(),
        };
        let cfg = TrainConfig {
            steps: 10,
            hidden: vec![8],
            ..TrainConfig::default()
        };
        let p = train(&data, &cfg, 0).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: Policy = serde_json::from_str(&json).unwrap();
        q.validate_schema().unwrap();
        let obs = [0.5; OBS_LEN];
        let a = p.act(&obs).unwrap();
        let b = q.act(&obs).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.mode_cmd, b.mode_cmd);
        assert!(matches!(
            p.act(&[0.0; 5]),
            Err(PolicyError::ShapeMismatch { got: 5, .. })
        ));
    }
}
