//! Optimizer correctness against independent oracles (finite differences,
//! closed-form least squares), training determinism, and closed-loop
//! rollout semantics.

use fmsim_core::calibration::{collect_calibration, fit, CalibrationSchedule};
use fmsim_core::expert::{collect_demos, DemoScript};
use fmsim_core::forcematch::{force_match, replay, ReplayOptions};
use fmsim_core::policy::{
    dataset_from_records, rollout, train, train_mlp, Dataset, Mlp, ObsConfig, Policy, StsMode,
    TrainConfig,
};
use fmsim_core::sensor::SensorMode;
use fmsim_core::world::Task;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    // Oracle: central finite differences of the scalar loss, independent
    // of the backprop code path.
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..20 {
        let sizes = [3 + (trial % 3), 5 + (trial % 4), 2 + (trial % 2)];
        let mut net = Mlp::init(&sizes, &mut rng);
        let n = 6;
        let xs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(sizes[0], |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let ys: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(sizes[2], |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let (_, grads) = net.loss_and_grads(&xs, &ys);
        let h = 1e-6;
        for l in 0..net.w.len() {
            for idx in [(0usize, 0usize), (net.w[l].nrows() - 1, net.w[l].ncols() - 1)] {
                let orig = net.w[l][idx];
                net.w[l][idx] = orig + h;
                let (lp, _) = net.loss_and_grads(&xs, &ys);
                net.w[l][idx] = orig - h;
                let (lm, _) = net.loss_and_grads(&xs, &ys);
                net.w[l][idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.w[l][idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "trial {trial} layer {l} w{idx:?}: {an} vs {fd}");
            }
            let i = net.b[l].len() / 2;
            let orig = net.b[l][i];
            net.b[l][i] = orig + h;
            let (lp, _) = net.loss_and_grads(&xs, &ys);
            net.b[l][i] = orig - h;
            let (lm, _) = net.loss_and_grads(&xs, &ys);
            net.b[l][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grads.b[l][i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "trial {trial} layer {l} b[{i}]");
        }
    }
}

#[test]
fn linear_task_training_matches_least_squares() {
    // Oracle: the normal equations. A no-hidden-layer net trained without
    // weight decay must converge to the closed-form LS solution.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (din, dout, n) = (4, 2, 200);
    let w_true = DMatrix::<f64>::from_fn(dout, din, |_, _| rng.gen_range(-1.0..1.0));
    let xs: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(din, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let ys: Vec<DVector<f64>> = xs.iter().map(|x| &w_true * x).collect();

    let cfg = TrainConfig {
        learning_rate: 3e-2,
        steps: 8000,
        weight_decay: 0.0,
        batch_size: 64,
        hidden: vec![],
    };
    let (net, loss) = train_mlp(&xs, &ys, &[din, dout], &cfg, 3).unwrap();
    assert!(loss < 1e-6, "final loss {loss}");

    // Closed form: W = Y Xᵀ (X Xᵀ)⁻¹ (bias-free targets, zero-mean inputs
    // handled implicitly by the exact linear generative model).
    let x_mat = DMatrix::from_fn(din, n, |i, j| xs[j][i]);
    let y_mat = DMatrix::from_fn(dout, n, |i, j| ys[j][i]);
    let gram = &x_mat * x_mat.transpose();
    let w_ls = &y_mat * x_mat.transpose() * gram.try_inverse().unwrap();
    let err = (&net.w[0] - &w_ls).norm() / w_ls.norm();
    assert!(err < 1e-3, "LS mismatch {err}");
    assert!(net.b[0].norm() < 1e-2);
}

#[test]
fn training_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<DVector<f64>> = (0..50)
        .map(|_| DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let ys: Vec<DVector<f64>> = (0..50)
        .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let cfg = TrainConfig {
        steps: 300,
        hidden: vec![16],
        ..TrainConfig::default()
    };
    let (a, la) = train_mlp(&xs, &ys, &[6, 16, 3], &cfg, 42).unwrap();
    let (b, lb) = train_mlp(&xs, &ys, &[6, 16, 3], &cfg, 42).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    for (wa, wb) in a.w.iter().zip(&b.w) {
        assert_eq!(wa.as_slice(), wb.as_slice());
    }
    for (ba, bb) in a.b.iter().zip(&b.b) {
        assert_eq!(ba.as_slice(), bb.as_slice());
    }
}

fn tiny_dataset() -> Dataset {
    let (samples, _) = collect_calibration(&CalibrationSchedule::default(), 42).unwrap();
    let model = fit(&samples).unwrap();
    let (demos, _) = collect_demos(&DemoScript::for_task(Task::GlassKnobOpen), 3, 11).unwrap();
    let opts = ReplayOptions::for_training();
    let mut records = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        let plan = force_match(d, &model).unwrap();
        records.push(replay(d, &plan, &opts, 600 + i as u64).unwrap());
    }
    dataset_from_records(&records, &ObsConfig::default())
}

#[test]
fn policy_training_and_rollout_deterministic() {
    let data = tiny_dataset();
    let cfg = TrainConfig {
        steps: 400,
        hidden: vec![32],
        ..TrainConfig::default()
    };
    let pa = train(&data, &cfg, 0).unwrap();
    let pb = train(&data, &cfg, 0).unwrap();
    assert_eq!(
        serde_json::to_string(&pa).unwrap(),
        serde_json::to_string(&pb).unwrap()
    );
    let ra = rollout(&pa, Task::GlassKnobOpen, 77).unwrap();
    let rb = rollout(&pb, Task::GlassKnobOpen, 77).unwrap();
    assert_eq!(ra.x.len(), rb.x.len());
    for (a, b) in ra.x.iter().zip(&rb.x) {
        assert_eq!(a.position, b.position);
    }
    assert_eq!(ra.status, rb.status);
    assert_eq!(ra.mode_switch_step, rb.mode_switch_step);
}

#[test]
fn memorization_on_small_dataset() {
    // A net with capacity far above the sample count must drive the
    // (weight-decay-free) training loss to near zero.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<DVector<f64>> = (0..8)
        .map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let ys: Vec<DVector<f64>> = (0..8)
        .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        steps: 20000,
        weight_decay: 0.0,
        batch_size: 8,
        hidden: vec![64, 64],
    };
    let (_, loss) = train_mlp(&xs, &ys, &[4, 64, 64, 2], &cfg, 1).unwrap();
    assert!(loss < 1e-6, "memorization loss {loss}");
}

#[test]
fn rollout_mode_latch_is_one_way() {
    let data = tiny_dataset();
    let cfg = TrainConfig {
        steps: 1500,
        ..TrainConfig::default()
    };
    let policy = train(&data, &cfg, 0).unwrap();
    let rec = rollout(&policy, Task::GlassKnobOpen, 3).unwrap();
    // Modes are monotone: once Tactile, never back to Visual.
    let mut seen_tactile = false;
    for m in &rec.modes {
        if *m == SensorMode::Tactile {
            seen_tactile = true;
        } else {
            assert!(!seen_tactile, "mode flipped back to Visual");
        }
    }
}

#[test]
fn single_mode_policies_never_switch() {
    let data = tiny_dataset();
    let cfg = TrainConfig {
        steps: 200,
        hidden: vec![16],
        ..TrainConfig::default()
    };
    for (sts, want) in [
        (StsMode::VisualOnly, SensorMode::Visual),
        (StsMode::TactileOnly, SensorMode::Tactile),
    ] {
        let obs_cfg = ObsConfig {
            sts,
            ..ObsConfig::default()
        };
        let data_m = Dataset {
            obs_config: obs_cfg,
            ..data.clone()
        };
        let policy = train(&data_m, &cfg, 0).unwrap();
        let rec = rollout(&policy, Task::GlassKnobOpen, 5).unwrap();
        assert!(rec.modes.iter().all(|m| *m == want));
        assert!(rec.mode_switch_step.is_none());
    }
}

#[test]
fn policy_schema_enforced() {
    let data = tiny_dataset();
    let cfg = TrainConfig {
        steps: 50,
        hidden: vec![8],
        ..TrainConfig::default()
    };
    let policy = train(&data, &cfg, 0).unwrap();
    let mut json: serde_json::Value = serde_json::to_value(&policy).unwrap();
    json["schema"] = "policy/0".into();
    let bad: Policy = serde_json::from_value(json).unwrap();
    assert!(bad.validate_schema().is_err());
}
