//! Full simulated calibration: push schedule -> samples -> fit -> inverse.

use fmsim_core::calibration::{collect_calibration, fit, forward, invert, CalibrationSchedule};
use nalgebra::Vector6;

#[test]
fn full_collection_fits_cleanly() {
    let sched = CalibrationSchedule::default();
    let (samples, layout) = collect_calibration(&sched, 42).expect("collection");
    assert_eq!(layout.len(), 84);

    // 5 normal x 35, 2 axes x 5 x 40 sweep, 5 x 40 rotational.
    assert_eq!(samples.len(), 775);

    // Quasi-static pre-contact samples carry no wrench signal.
    let first = &samples[0];
    assert!(first.wrench.norm() < 0.3, "pre-contact f norm {}", first.wrench.norm());

    let model = fit(&samples).expect("fit");
    for d in &model.dims {
        assert!(d.r_squared >= 0.99, "{}: r2 {}", d.name, d.r_squared);
        assert!(d.slope_post > 0.0);
    }

    // The z knee sits at the contact onset (e = 0) within 0.5 mm.
    let z = &model.dims[2];
    assert!(z.knee.abs() < 5e-4, "z knee {}", z.knee);

    // Round trip through forward/invert on segment interiors.
    let mut e = Vector6::zeros();
    e[0] = 0.001;
    e[1] = -0.001;
    e[2] = 0.5 * (z.knee + z.e_max).max(0.002);
    e[5] = 2e-4;
    let w = forward(&model, &e);
    let back = invert(&model, &w).unwrap();
    for (a, b) in [(e[0], back[0]), (e[1], back[1]), (e[2], back[2]), (e[5], back[5])] {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}
