//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line
//! straight to stdout (bypassing the capture of the test harness) and then
//! asserts the same condition.

mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use nnarx::config::ExperimentConfig;
use nnarx::eval::{evaluate, fit_index};
use nnarx::linalg::{spectral_norm, Matrix, SPECTRAL_TOL};
use nnarx::plant::{build_dataset, mprs::mprs_with_rng, ExcitationSpec, Split};
use nnarx::stability::{certify, contraction_probe, explosive_demo_model, lyapunov_matrix};
use nnarx::training::{loss_and_gradients, train, PenaltyConfig, SeqRef};
use nnarx::{build_canonical_matrices, Activation, FfnnParams, NnarxModel, StackedState};
use rand::Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

#[test]
fn c1_lyapunov_identity() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for horizon in 1..=6 {
        for m in 1..=3 {
            for p in 1..=3 {
                let s = m + p;
                let n = s * horizon;
                // shift matrix: block i of x+ is block i+1 of x, last block is fed
                let a_ref = Matrix::from_fn(n, n, |r, c| if r < n - s && c == r + s { 1.0 } else { 0.0 });
                let canon = build_canonical_matrices(horizon, m, p).unwrap();
                assert_eq!(canon.a, a_ref, "A differs for N={horizon} m={m} p={p}");
                let lyap = lyapunov_matrix(horizon, m, p).unwrap();
                for r in 0..n {
                    for c in 0..n {
                        let expected = if r == c { (r / s + 1) as f64 } else { 0.0 };
                        assert_eq!(lyap.p[(r, c)], expected);
                    }
                }
                // A'PA - P + I with plain loops
                for r in 0..n {
                    for c in 0..n {
                        let mut apa = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                apa += a_ref[(i, r)] * lyap.p[(i, j)] * a_ref[(j, c)];
                            }
                        }
                        let e = apa - lyap.p[(r, c)] + if r == c { 1.0 } else { 0.0 };
                        worst = worst.max(e.abs());
                    }
                }
                cases += 1;
            }
        }
    }
    let pass = worst == 0.0;
    report(
        1,
        "Lyapunov identity",
        pass,
        &format!(
            "{cases} shapes, max |A'PA - P + I| = {worst:e}, {:.2}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c2_certificate_arithmetic() {
    let (u0, u1) = (0.453, 0.985);
    let mut ffnn = FfnnParams::zeros(8, 1, 1, &[10], Activation::Tanh);
    let mut r = rng(2);
    ffnn.out_u = random_matrix(&mut r, 1, 10, 1.0);
    let k0 = u0 / svd_norm(&ffnn.out_u);
    ffnn.out_u.scale(k0);
    ffnn.layers[0].u = random_matrix(&mut r, 10, 8, 1.0);
    let k1 = u1 / svd_norm(&ffnn.layers[0].u);
    ffnn.layers[0].u.scale(k1);
    ffnn.layers[0].w = random_matrix(&mut r, 10, 1, 1.0);
    let model = NnarxModel::new(ffnn, 4, 1, 1).unwrap();
    let rep = certify(&model).unwrap();
    let hand = u0 * u1 - 1.0 / 4f64.sqrt();
    let pass = (rep.nu - (-0.05380)).abs() <= 1e-4 && (rep.nu - hand).abs() < 1e-9 && rep.verdict.is_certified();
    report(
        2,
        "certificate arithmetic",
        pass,
        &format!("nu = {:.6}, hand arithmetic {hand:.6}, verdict {}", rep.nu, rep.verdict),
    );
    assert!(pass);
}

/// Batch loss recomputed without the library's simulation code.
fn oracle_loss(
    model: &NnarxModel,
    seqs: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)],
    inits: &[StackedState],
    washout: usize,
    penalty: &PenaltyConfig,
) -> f64 {
    let (m, p) = (model.input_dim, model.output_dim);
    let s = m + p;
    let mut total = 0.0;
    for ((u, y), init) in seqs.iter().zip(inits) {
        let mut x = init.as_slice().to_vec();
        let n = x.len();
        let mut acc = 0.0;
        for k in 0..u.len() {
            if k >= washout {
                for j in 0..p {
                    acc += (x[n - s + j] - y[k][j]).powi(2);
                }
            }
            let f = model.ffnn.forward(&x, &u[k]).unwrap();
            let mut next = x[s..].to_vec();
            next.extend_from_slice(&f);
            next.extend_from_slice(&u[k]);
            x = next;
        }
        total += acc / (u.len() - washout) as f64;
    }
    let nu = svd_nu(model);
    let pen = if nu > -penalty.margin {
        penalty.weight * (nu + penalty.margin)
    } else {
        0.0
    };
    total / seqs.len() as f64 + pen
}

#[test]
fn c3_gradient_matches_finite_differences() {
    let started = Instant::now();
    // (N, widths, m, p, nu of the constructed model)
    let configs: [(usize, &[usize], usize, usize, f64); 5] = [
        (2, &[5], 1, 1, -0.2),
        (4, &[8], 1, 1, 0.05),
        (2, &[6, 4], 2, 1, -0.1),
        (4, &[3, 7], 1, 2, 0.1),
        (4, &[8, 8], 2, 2, -0.3),
    ];
    let penalty = PenaltyConfig {
        weight: 10.0,
        margin: 0.01,
    };
    let washout = 3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (idx, (horizon, widths, m, p, nu)) in configs.iter().enumerate() {
        let mut r = rng(300 + idx as u64);
        let mut model = random_model(&mut r, *horizon, *m, *p, widths, Activation::Tanh, 0.7);
        rescale_to_nu(&mut model, *nu);
        let seqs: Vec<_> = (0..2)
            .map(|_| (random_seq(&mut r, 20, *m, 1.0), random_seq(&mut r, 20, *p, 1.0)))
            .collect();
        let inits: Vec<StackedState> = (0..2)
            .map(|_| {
                let x = (0..model.state_dim()).map(|_| r.random_range(-0.5..0.5)).collect();
                model.state_from_vec(x).unwrap()
            })
            .collect();
        let refs: Vec<SeqRef> = seqs.iter().map(|(u, y)| SeqRef::new(u, y)).collect();
        let res = loss_and_gradients(&model, &refs, &inits, washout, &penalty).unwrap();
        let base = oracle_loss(&model, &seqs, &inits, washout, &penalty);
        assert!(rel_err(res.loss, base, 1e-12) < 1e-10, "loss value {} vs {base}", res.loss);

        let grad = res.grad.to_flat();
        let theta = model.ffnn.to_flat();
        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let mut probe = model.clone();
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.ffnn.set_flat(&t).unwrap();
            let lp = oracle_loss(&probe, &seqs, &inits, washout, &penalty);
            t[i] = theta[i] - h;
            probe.ffnn.set_flat(&t).unwrap();
            let lm = oracle_loss(&probe, &seqs, &inits, washout, &penalty);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], fd, 1e-6));
            checked += 1;
        }
    }
    let pass = worst <= 1e-4;
    report(
        3,
        "gradient vs finite differences",
        pass,
        &format!(
            "{checked} parameters over 5 models, worst relative error {worst:.2e}, {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c4_incremental_stability_contraction() {
    let started = Instant::now();
    let steps = 200;
    let excitation = ExcitationSpec {
        levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        hold_min: 5,
        hold_max: 30,
    };
    let (mut total, mut contracted, mut bounded) = (0, 0, 0);
    let mut worst_ratio = 0.0f64;
    let mut slowest = 0;
    for seed in 0..100u64 {
        let mut r = rng(4000 + seed);
        let horizon = r.random_range(1..=4);
        let m = r.random_range(1..=2);
        let p = r.random_range(1..=2);
        let depth = r.random_range(1..=2);
        let widths: Vec<usize> = (0..depth).map(|_| r.random_range(2..=8)).collect();
        let mut model = random_model(&mut r, horizon, m, p, &widths, Activation::Tanh, 1.0);
        let nu = r.random_range(-0.25..=-0.05);
        rescale_to_nu(&mut model, nu);
        assert!(svd_nu(&model) <= -0.05 + 1e-12);
        assert!(certify(&model).unwrap().nu <= -0.05 + 1e-9);

        let channels: Vec<Vec<f64>> = (0..m)
            .map(|_| mprs_with_rng(&excitation, steps, &mut r).unwrap())
            .collect();
        let u: Vec<Vec<f64>> = (0..steps).map(|k| channels.iter().map(|c| c[k]).collect()).collect();
        for _ in 0..10 {
            let mut draw = || {
                let x = (0..model.state_dim()).map(|_| r.random_range(-1.0..=1.0)).collect();
                model.state_from_vec(x).unwrap()
            };
            let (xa, xb) = (draw(), draw());
            let trace = contraction_probe(&model, &xa, &xb, &u, steps).unwrap();
            total += 1;
            let ratio = trace.last() / trace.initial();
            worst_ratio = worst_ratio.max(ratio);
            if let Some(k) = trace.distances.iter().position(|d| *d <= 1e-6 * trace.initial()) {
                slowest = slowest.max(k);
            }
            if trace.diverged_at.is_none() && ratio <= 1e-6 {
                contracted += 1;
            }
            // the incremental Lyapunov function bounds any transient growth by sqrt(N)
            if trace.max_growth() <= (horizon as f64).sqrt() * (1.0 + 1e-9) {
                bounded += 1;
            }
        }
    }
    let frac = contracted as f64 / total as f64;
    let pass = frac >= 0.99 && bounded == total;
    report(
        4,
        "incremental stability on certified models",
        pass,
        &format!(
            "{contracted}/{total} pairs below 1e-6 at step {steps}, {bounded}/{total} bounded, worst ratio {worst_ratio:.2e}, slowest pair reached 1e-6 at step {slowest}, {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c5_explosive_model_is_detected() {
    let model = explosive_demo_model(2.0).unwrap();
    assert!(!certify(&model).unwrap().verdict.is_certified());
    let xa = model.state_from_vec(vec![0.3, 0.0]).unwrap();
    let xb = model.state_from_vec(vec![0.1, 0.0]).unwrap();
    let u = vec![vec![0.0]; 50];
    let trace = contraction_probe(&model, &xa, &xb, &u, 50).unwrap();
    let first = trace
        .distances
        .iter()
        .position(|d| *d > 1e6 * trace.initial() || !d.is_finite());
    let pass = first.is_some() || trace.diverged_at.is_some_and(|s| s <= 50);
    report(
        5,
        "instability detectability",
        pass,
        &format!("distance exceeds 1e6 x initial at step {first:?}"),
    );
    assert!(pass);
}

#[test]
fn c6_end_to_end_identification() {
    let mut lines = Vec::new();
    let mut good = 0;
    for seed in 0..5u64 {
        let started = Instant::now();
        let cfg = ExperimentConfig {
            seed,
            ..Default::default()
        };
        assert_eq!(cfg.model.horizon, 4);
        assert_eq!(cfg.model.widths, vec![10]);
        assert_eq!(cfg.model.activation, Activation::Tanh);
        let plant = cfg.build_plant().unwrap();
        let ds = build_dataset(plant.as_ref(), &cfg.dataset.to_spec(seed)).unwrap();
        assert_eq!((ds.count(Split::Train), ds.count(Split::Val), ds.count(Split::Test)), (10, 3, 1));
        assert!(ds.trajectories.iter().all(|t| t.len() == 1250));
        let (model, history) = train(&ds, &cfg.model, &cfg.train_config()).unwrap();
        let (summary, _) = evaluate(&model, &ds, Split::Test, cfg.train.washout).unwrap();
        let ok = summary.nu < 0.0 && summary.aggregate_fit >= 85.0;
        good += usize::from(ok);
        lines.push(format!(
            "seed {seed}: nu {:.4} FIT {:.2} epochs {} {:.0}s",
            summary.nu,
            summary.aggregate_fit,
            history.records.len(),
            started.elapsed().as_secs_f64()
        ));
    }
    let pass = good >= 4;
    report(
        6,
        "end-to-end identification",
        pass,
        &format!("{good}/5 seeds with nu < 0 and FIT >= 85; {}", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn c7_fit_identities() {
    let mut r = rng(7);
    let mut worst_zero = 0.0f64;
    let mut all_hundred = true;
    for _ in 0..100 {
        let len = r.random_range(2..200);
        let y: Vec<f64> = (0..len).map(|_| r.random_range(-10.0..10.0)).collect();
        all_hundred &= fit_index(&y, &y).unwrap() == 100.0;
        let mean = y.iter().sum::<f64>() / len as f64;
        worst_zero = worst_zero.max(fit_index(&vec![mean; len], &y).unwrap().abs());
    }
    let pass = all_hundred && worst_zero <= 1e-10;
    report(
        7,
        "FIT identities",
        pass,
        &format!("fit(y, y) == 100: {all_hundred}, max |fit(mean, y)| = {worst_zero:.1e}"),
    );
    assert!(pass);
}

#[test]
fn c8_determinism_replay() {
    let started = Instant::now();
    let run = |dir: &std::path::Path| -> (String, String) {
        let ds = dir.join("ds");
        let tr = dir.join("train");
        let ev = dir.join("eval");
        let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
        assert_eq!(nnarx::cli::run_from(["nnarx", "generate", "--seed", "11", "--out", &s(&ds)]), 0);
        let code = nnarx::cli::run_from([
            "nnarx",
            "train",
            "--seed",
            "11",
            "--dataset",
            &s(&ds),
            "--out",
            &s(&tr),
            "--max-epochs",
            "50",
        ]);
        assert_eq!(code, 0);
        let code = nnarx::cli::run_from([
            "nnarx",
            "evaluate",
            "--model",
            &s(&tr.join("model.json")),
            "--dataset",
            &s(&ds),
            "--split",
            "test",
            "--out",
            &s(&ev),
        ]);
        assert_eq!(code, 0);
        (
            std::fs::read_to_string(tr.join("history.csv")).unwrap(),
            std::fs::read_to_string(ev.join("report.csv")).unwrap(),
        )
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ha, ra) = run(a.path());
    let (hb, rb) = run(b.path());
    let epochs = ha.lines().count() - 1;
    let pass = ha == hb && ra == rb && epochs == 50;
    report(
        8,
        "determinism replay",
        pass,
        &format!(
            "{epochs} epochs, history identical: {}, report identical: {}, {:.1}s",
            ha == hb,
            ra == rb,
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c9_spectral_norm_vs_svd() {
    let started = Instant::now();
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let rows = r.random_range(1..=20);
        let cols = r.random_range(1..=20);
        let scale = 10f64.powi(r.random_range(-3..=3));
        let mut m = random_matrix(&mut r, rows, cols, scale);
        if i % 10 == 0 {
            // rank-one matrices have an exactly isolated top singular value
            let a = random_seq(&mut r, 1, rows, 1.0).remove(0);
            let b = random_seq(&mut r, 1, cols, 1.0).remove(0);
            m = Matrix::from_fn(rows, cols, |i, j| a[i] * b[j]);
        }
        let ours = spectral_norm(&m, SPECTRAL_TOL).unwrap();
        let oracle = svd_norm(&m);
        worst = worst.max(rel_err(ours, oracle, f64::MIN_POSITIVE));
    }
    let pass = worst <= 1e-8;
    report(
        9,
        "spectral norm vs SVD",
        pass,
        &format!(
            "100 matrices up to 20x20, worst relative error {worst:.2e}, {:.2}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}
