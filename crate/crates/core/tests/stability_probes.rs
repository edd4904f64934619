mod common;

use common::*;
use nnarx::cli::probe_traces;
use nnarx::config::ProbeConfig;
use nnarx::stability::{contraction_probe, explosive_demo_model, lyapunov_decrease_probe};
use nnarx::Activation;

#[test]
fn incremental_lyapunov_identity_holds_for_any_model() {
    // the decrease identity is structural, so it also holds for uncertified models
    for seed in 0..40u64 {
        let mut r = rng(seed);
        let horizon = 1 + (seed as usize % 4);
        let mut model = random_model(&mut r, horizon, 1 + seed as usize % 2, 1, &[6], Activation::Tanh, 1.0);
        rescale_to_nu(&mut model, if seed % 2 == 0 { -0.1 } else { 0.3 });
        let xa = model.state_from_vec(random_seq(&mut r, 1, model.state_dim(), 1.0).remove(0)).unwrap();
        let xb = model.state_from_vec(random_seq(&mut r, 1, model.state_dim(), 1.0).remove(0)).unwrap();
        let ua = random_seq(&mut r, 1, model.input_dim, 1.0).remove(0);
        let ub = random_seq(&mut r, 1, model.input_dim, 1.0).remove(0);
        let rec = lyapunov_decrease_probe(&model, &xa, &xb, &ua, &ub).unwrap();
        assert!(rec.slack.abs() <= 1e-12 * rec.v_before.max(1.0), "slack {}", rec.slack);
        assert!(rec.delta_v <= rec.lipschitz_bound + 1e-12);
    }
}

#[test]
fn certified_models_decrease_the_incremental_lyapunov_function() {
    for seed in 0..40u64 {
        let mut r = rng(100 + seed);
        let mut model = random_model(&mut r, 3, 1, 1, &[5, 4], Activation::Tanh, 1.0);
        rescale_to_nu(&mut model, -0.05);
        let xa = model.state_from_vec(random_seq(&mut r, 1, 6, 1.0).remove(0)).unwrap();
        let xb = model.state_from_vec(random_seq(&mut r, 1, 6, 1.0).remove(0)).unwrap();
        let u = random_seq(&mut r, 1, 1, 1.0).remove(0);
        let rec = lyapunov_decrease_probe(&model, &xa, &xb, &u, &u).unwrap();
        assert!(rec.delta_v < 0.0);
    }
}

#[test]
fn identical_starts_stay_identical() {
    let mut r = rng(5);
    let model = random_model(&mut r, 2, 1, 1, &[4], Activation::Tanh, 1.0);
    let x = model.state_from_vec(random_seq(&mut r, 1, 4, 1.0).remove(0)).unwrap();
    let u = random_seq(&mut r, 30, 1, 1.0);
    let trace = contraction_probe(&model, &x, &x, &u, 30).unwrap();
    assert!(trace.distances.iter().all(|d| *d == 0.0));
    assert_eq!(trace.max_growth(), 0.0);
}

#[test]
fn probe_rejects_short_inputs() {
    let model = explosive_demo_model(2.0).unwrap();
    let x = model.zero_state();
    assert!(contraction_probe(&model, &x, &x, &vec![vec![0.0]; 3], 5).is_err());
    assert!(contraction_probe(&model, &x, &x, &vec![vec![0.0]; 3], 0).is_err());
}

#[test]
fn explosive_demo_eventually_diverges() {
    let model = explosive_demo_model(2.0).unwrap();
    let cfg = ProbeConfig {
        horizon: 1200,
        pairs: 2,
        ..Default::default()
    };
    let (csv, worst, diverged) = probe_traces(&model, &cfg, 0, false).unwrap();
    assert!(csv.starts_with("pair,k,distance,delta_v,bound\n"));
    assert_eq!(diverged, 2);
    assert!(worst.is_infinite());
}

#[test]
fn probe_traces_are_deterministic() {
    let mut r = rng(8);
    let mut model = random_model(&mut r, 4, 1, 1, &[10], Activation::Tanh, 1.0);
    rescale_to_nu(&mut model, -0.1);
    let cfg = ProbeConfig::default();
    let a = probe_traces(&model, &cfg, 3, false).unwrap();
    let b = probe_traces(&model, &cfg, 3, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.2, 0);
    assert!(a.1 < 1e-6);
}
