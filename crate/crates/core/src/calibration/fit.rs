//! Per-dimension continuous 2-segment piecewise-linear least squares with
//! knee grid search, plus the forward and inverse evaluations.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{CalibError, CalibrationSample, TrajKind, CALIB_SCHEMA, DIM_NAMES};
use crate::sensor::{MarkerGrid, UnscaledWrench};

const KNEE_CANDIDATES: usize = 50;
const MIN_SAMPLES_PER_DIM: usize = 30;
const MIN_R_SQUARED: f64 = 0.8;
/// Pre-segment rise below this fraction of the total f̃ range counts as a
/// flat (pre-contact) segment, whose inverse maps to zero error.
const FLAT_FRACTION: f64 = 0.05;
/// Linear extrapolation allowance beyond the fitted f̃ range.
const EXTRAPOLATION: f64 = 0.2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimFit {
    pub name: String,
    /// Contact knee e* and the model value at it.
    pub knee: f64,
    pub value_at_knee: f64,
    pub slope_pre: f64,
    pub slope_post: f64,
    /// Whether the pre-knee segment is flat (no contact information).
    pub pre_flat: bool,
    pub e_min: f64,
    pub e_max: f64,
    pub residual_rms: f64,
    pub r_squared: f64,
}

impl DimFit {
    pub fn forward(&self, e: f64) -> f64 {
        let d = e - self.knee;
        if d < 0.0 {
            self.value_at_knee + self.slope_pre * d
        } else {
            self.value_at_knee + self.slope_post * d
        }
    }

    fn f_range(&self) -> (f64, f64) {
        let ends = [self.forward(self.e_min), self.forward(self.e_max), self.value_at_knee];
        (
            ends.iter().cloned().fold(f64::INFINITY, f64::min),
            ends.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    fn invert(&self, f: f64) -> Result<f64, CalibError> {
        let (lo, hi) = self.f_range();
        let span = (hi - lo).max(1e-12);
        if f > hi + EXTRAPOLATION * span || (!self.pre_flat && f < lo - EXTRAPOLATION * span) {
            return Err(CalibError::OutOfRange {
                dim: DIM_NAMES.iter().find(|n| **n == self.name).copied().unwrap_or("?"),
                value: f,
            });
        }
        let d = f - self.value_at_knee;
        if d >= 0.0 {
            Ok(self.knee + d / self.slope_post)
        } else if self.pre_flat {
            // Below the contact knee: no contact, no offset.
            Ok(0.0)
        } else {
            Ok(self.knee + d / self.slope_pre)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub schema: String,
    pub dims: Vec<DimFit>,
    /// Raw samples retained for audit.
    pub samples: Vec<CalibrationSample>,
    pub marker_layout: Option<MarkerGrid>,
}

impl CalibrationModel {
    pub fn validate_schema(&self) -> Result<(), CalibError> {
        if self.schema != CALIB_SCHEMA {
            return Err(CalibError::BadSchema {
                expected: CALIB_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        Ok(())
    }
}

struct SegmentFit {
    knee: f64,
    value: f64,
    slope_pre: f64,
    slope_post: f64,
    sse: f64,
}

/// Least squares of f on the hinge basis {1, (e-t)_-, (e-t)_+} for a fixed
/// knee t. Coordinates are pre-scaled by the caller for conditioning.
fn hinge_ls(es: &[f64], fs: &[f64], t: f64) -> Option<(Vector3<f64>, f64)> {
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for (&e, &f) in es.iter().zip(fs) {
        let row = Vector3::new(1.0, (e - t).min(0.0), (e - t).max(0.0));
        xtx += row * row.transpose();
        xty += row * f;
    }
    // Tiny ridge keeps the system solvable when one side of the knee is
    // empty; the affected slope then stays at zero.
    xtx += Matrix3::identity() * 1e-9;
    let c = xtx.lu().solve(&xty)?;
    let sse: f64 = es
        .iter()
        .zip(fs)
        .map(|(&e, &f)| {
            let pred = c[0] + c[1] * (e - t).min(0.0) + c[2] * (e - t).max(0.0);
            (f - pred).powi(2)
        })
        .sum();
    Some((c, sse))
}

/// Whether a sample informs dimension `d`: centred presses feed every
/// dimension, each sweep only its own.
fn relevant(kind: TrajKind, d: usize) -> bool {
    match kind {
        TrajKind::Normal => true,
        TrajKind::LateralX => d == 0,
        TrajKind::LateralY => d == 1,
        TrajKind::Rotational => d == 3,
    }
}

fn fit_dim(samples: &[CalibrationSample], d: usize) -> Result<DimFit, CalibError> {
    let samples: Vec<&CalibrationSample> =
        samples.iter().filter(|s| relevant(s.kind, d)).collect();
    let es_raw: Vec<f64> = samples.iter().map(|s| s.e_dim(d)).collect();
    let fs: Vec<f64> = samples.iter().map(|s| s.f_dim(d)).collect();
    if es_raw.len() < MIN_SAMPLES_PER_DIM {
        return Err(CalibError::InsufficientSamples {
            got: es_raw.len(),
            need: MIN_SAMPLES_PER_DIM,
        });
    }
    let e_min = es_raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let e_max = es_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = e_max - e_min;
    if range < 1e-6 {
        return Err(CalibError::FitDegenerate {
            dim: DIM_NAMES[d],
            why: format!("error spread {range:.2e} carries no contact information"),
        });
    }
    // Scale errors to [0, 1] so the grid search and normal equations are
    // conditioned identically across dimensions (metres vs radians).
    let es: Vec<f64> = es_raw.iter().map(|&e| (e - e_min) / range).collect();

    // Plain linear baseline: a knee is only kept when the 2-segment fit
    // beats it decisively, otherwise a noisy edge cluster can buy a tiny
    // SSE win with a wild boundary segment.
    let linear = {
        let n = es.len() as f64;
        let se: f64 = es.iter().sum();
        let sf: f64 = fs.iter().sum();
        let see: f64 = es.iter().map(|e| e * e).sum();
        let sef: f64 = es.iter().zip(&fs).map(|(e, f)| e * f).sum();
        let det = n * see - se * se;
        let a = (n * sef - se * sf) / det;
        let c = (sf - a * se) / n;
        let sse: f64 = es
            .iter()
            .zip(&fs)
            .map(|(&e, &f)| (f - (c + a * e)).powi(2))
            .sum();
        SegmentFit {
            knee: 0.0,
            value: c,
            slope_pre: a,
            slope_post: a,
            sse,
        }
    };

    let mut best: Option<SegmentFit> = None;
    for i in 0..KNEE_CANDIDATES {
        let t = (i as f64 + 0.5) / KNEE_CANDIDATES as f64;
        if let Some((c, sse)) = hinge_ls(&es, &fs, t) {
            if best.as_ref().map_or(true, |b| sse < b.sse) {
                best = Some(SegmentFit {
                    knee: t,
                    value: c[0],
                    slope_pre: c[1],
                    slope_post: c[2],
                    sse,
                });
            }
        }
    }
    let mut b = best.ok_or_else(|| CalibError::FitDegenerate {
        dim: DIM_NAMES[d],
        why: "no solvable knee candidate".into(),
    })?;

    // Refine the knee between the neighbouring grid candidates; SSE(t) has
    // a single sharp minimum at the true breakpoint on clean data.
    let dt = 1.0 / KNEE_CANDIDATES as f64;
    let (mut lo, mut hi) = (b.knee - dt, b.knee + dt);
    for _ in 0..100 {
        let t1 = lo + (hi - lo) / 3.0;
        let t2 = hi - (hi - lo) / 3.0;
        let s1 = hinge_ls(&es, &fs, t1).map(|(_, s)| s).unwrap_or(f64::INFINITY);
        let s2 = hinge_ls(&es, &fs, t2).map(|(_, s)| s).unwrap_or(f64::INFINITY);
        if s1 < s2 {
            hi = t2;
        } else {
            lo = t1;
        }
    }
    let t = 0.5 * (lo + hi);
    if let Some((c, sse)) = hinge_ls(&es, &fs, t) {
        if sse <= b.sse {
            b = SegmentFit {
                knee: t,
                value: c[0],
                slope_pre: c[1],
                slope_post: c[2],
                sse,
            };
        }
    }
    // A genuine breakpoint cuts the SSE by orders of magnitude; a few
    // percent is just the boundary segment chasing noise.
    if b.sse >= 0.5 * linear.sse {
        b = linear;
    }

    let mean_f = fs.iter().sum::<f64>() / fs.len() as f64;
    let tss: f64 = fs.iter().map(|f| (f - mean_f).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - b.sse / tss } else { 0.0 };
    let residual_rms = (b.sse / fs.len() as f64).sqrt();

    // Unscale.
    let slope_pre = b.slope_pre / range;
    let slope_post = b.slope_post / range;
    let knee = e_min + b.knee * range;

    if slope_post <= 0.0 {
        return Err(CalibError::FitDegenerate {
            dim: DIM_NAMES[d],
            why: format!("post-contact slope {slope_post:.3e} not positive"),
        });
    }
    if r_squared < MIN_R_SQUARED {
        return Err(CalibError::FitDegenerate {
            dim: DIM_NAMES[d],
            why: format!("r_squared {r_squared:.3}"),
        });
    }

    let f_lo = fs.iter().cloned().fold(f64::INFINITY, f64::min);
    let f_hi = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pre_rise = (slope_pre * (knee - e_min)).abs();
    // A flat pre-contact segment needs actual width; the linear fallback
    // (knee at the range edge) has none and stays invertible throughout.
    let pre_flat =
        pre_rise < FLAT_FRACTION * (f_hi - f_lo) && knee - e_min > 1e-3 * range;

    Ok(DimFit {
        name: DIM_NAMES[d].to_string(),
        knee,
        value_at_knee: b.value,
        slope_pre,
        slope_post,
        pre_flat,
        e_min,
        e_max,
        residual_rms,
        r_squared,
    })
}

pub fn fit(samples: &[CalibrationSample]) -> Result<CalibrationModel, CalibError> {
    let dims = (0..4).map(|d| fit_dim(samples, d)).collect::<Result<Vec<_>, _>>()?;
    Ok(CalibrationModel {
        schema: CALIB_SCHEMA.into(),
        dims,
        samples: samples.to_vec(),
        marker_layout: None,
    })
}

/// Forward evaluation of the fitted diagonal map, f̃ = A(e)e + b.
pub fn forward(model: &CalibrationModel, e: &Vector6<f64>) -> UnscaledWrench {
    let es = [e[0], e[1], e[2], e[5]];
    let mut out = [0.0; 4];
    for d in 0..4 {
        out[d] = model.dims[d].forward(es[d]);
    }
    UnscaledWrench::from_array(out)
}

/// Inverse map (the A⁻¹(f̃ − b) term of Eq. 12), in the measurement frame.
/// Unmeasured rotational dimensions are zero.
pub fn invert(model: &CalibrationModel, w: &UnscaledWrench) -> Result<Vector6<f64>, CalibError> {
    let fs = w.as_array();
    let mut es = [0.0; 4];
    for d in 0..4 {
        es[d] = model.dims[d].invert(fs[d])?;
    }
    Ok(Vector6::new(es[0], es[1], es[2], 0.0, 0.0, es[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic samples from an exact 2-segment model in every dimension.
    fn synthetic(n: usize, noise: f64, seed: u64) -> Vec<CalibrationSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n {
            let u = i as f64 / (n - 1) as f64;
            let mut e = Vector6::zeros();
            // z: flat below 0.01, slope 300 above; x/y: linear through
            // range; theta_z: small range, steep slope.
            e[2] = 0.03 * u;
            e[0] = -0.005 + 0.01 * u;
            e[1] = -0.004 + 0.008 * u;
            e[5] = -4e-4 + 8e-4 * u;
            let fz = if e[2] < 0.01 { 0.05 } else { 0.05 + 300.0 * (e[2] - 0.01) };
            let w = UnscaledWrench {
                fx: 1.2 + 900.0 * e[0] + rng.gen_range(-noise..=noise),
                fy: -0.3 + 1100.0 * e[1] + rng.gen_range(-noise..=noise),
                fz: fz + rng.gen_range(-noise..=noise),
                tz: 0.1 + 4000.0 * e[5] + rng.gen_range(-noise..=noise),
            };
            out.push(CalibrationSample {
                e,
                wrench: w,
                timestamp: i as f64 * 0.1,
                kind: TrajKind::Normal,
            });
        }
        out
    }

    #[test]
    fn exact_two_segment_model_recovered() {
        let model = fit(&synthetic(200, 0.0, 1)).unwrap();
        let z = &model.dims[2];
        assert!((z.slope_post - 300.0).abs() < 1e-4, "slope {}", z.slope_post);
        assert!((z.knee - 0.01).abs() < 1e-6, "knee {}", z.knee);
        assert!(z.pre_flat);
        assert!(z.r_squared > 0.999999);
        let x = &model.dims[0];
        assert!((x.slope_post - 900.0).abs() < 1e-2);
        assert!(!x.pre_flat);
        for d in &model.dims {
            assert!(d.r_squared > 0.999999, "{}: {}", d.name, d.r_squared);
        }
    }

    #[test]
    fn all_pre_contact_degenerate() {
        // Constant wrench, no error spread in z beyond noise.
        let mut samples = synthetic(60, 0.0, 2);
        for s in &mut samples {
            s.e[2] = 0.0;
            s.wrench.fz = 0.05;
        }
        assert!(matches!(
            fit(&samples),
            Err(CalibError::FitDegenerate { dim: "z", .. })
        ));
    }

    #[test]
    fn round_trip_identity_on_segment_interiors() {
        let model = fit(&synthetic(200, 0.0, 3)).unwrap();
        for i in 0..40 {
            let u = 0.05 + 0.9 * i as f64 / 39.0;
            let mut e = Vector6::zeros();
            e[0] = -0.005 + 0.01 * u;
            e[1] = -0.004 + 0.008 * u;
            e[2] = 0.011 + 0.018 * u;
            e[5] = -4e-4 + 8e-4 * u;
            let w = forward(&model, &e);
            let back = invert(&model, &w).unwrap();
            for (a, b) in [(e[0], back[0]), (e[1], back[1]), (e[2], back[2]), (e[5], back[5])] {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn below_knee_maps_to_zero_for_flat_dim() {
        let model = fit(&synthetic(200, 0.0, 4)).unwrap();
        let w = UnscaledWrench {
            fx: 1.2,
            fy: -0.3,
            fz: 0.02,
            tz: 0.1,
        };
        let e = invert(&model, &w).unwrap();
        assert_eq!(e[2], 0.0);
    }

    #[test]
    fn extrapolation_bounded_at_twenty_percent() {
        let model = fit(&synthetic(200, 0.0, 5)).unwrap();
        let z = &model.dims[2];
        let f_max = z.forward(z.e_max);
        let f_min = z.value_at_knee.min(z.forward(z.e_min));
        let span = f_max - f_min;
        // 15% beyond: linear extrapolation continues the last segment.
        let ok = z.invert(f_max + 0.15 * span).unwrap();
        assert!((z.forward(ok) - (f_max + 0.15 * span)).abs() < 1e-9);
        assert!(ok > z.e_max);
        // 25% beyond: errors.
        assert!(z.invert(f_max + 0.25 * span).is_err());
    }

    #[test]
    fn monotone_inverse_above_knee() {
        let model = fit(&synthetic(200, 1e-3, 6)).unwrap();
        for d in 0..4 {
            let dim = &model.dims[d];
            let (lo, hi) = (dim.value_at_knee, dim.forward(dim.e_max));
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=20 {
                let f = lo + (hi - lo) * k as f64 / 20.0;
                let e = dim.invert(f).unwrap();
                assert!(e >= prev - 1e-12);
                prev = e;
            }
        }
    }

    #[test]
    fn schema_round_trip_json() {
        let model = fit(&synthetic(60, 0.0, 7)).unwrap();
        let s = serde_json::to_string(&model).unwrap();
        let back: CalibrationModel = serde_json::from_str(&s).unwrap();
        back.validate_schema().unwrap();
        assert_eq!(back.dims.len(), 4);
        assert_eq!(back.samples.len(), model.samples.len());
    }
}
