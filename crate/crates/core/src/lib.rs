//! Desk-scale simulation of tactile force-matched imitation learning.
//!
//! The pipeline: kinesthetic-style scripted demonstrations are recorded with
//! a simulated visuotactile sensor, an autonomous push schedule calibrates a
//! piecewise-linear map from control error to unscaled wrench, demonstrations
//! are replayed with force matching through an impedance-controlled door
//! environment, and behavioural-cloning policies with a learned sensor-mode
//! switch are trained and evaluated over an ablation matrix.

pub mod calibration;
pub mod expert;
pub mod forcematch;
pub mod harness;
pub mod policy;
pub mod sensor;
pub mod world;
