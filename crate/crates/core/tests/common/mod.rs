//! Helpers shared by the integration tests. Oracles here are written
//! independently of the library code they check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use nnarx::linalg::Matrix;
use nnarx::{Activation, FfnnParams, NnarxModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest singular value through nalgebra's SVD.
pub fn svd_norm(m: &Matrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    d.singular_values().iter().fold(0.0f64, |a, s| a.max(*s))
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Network with every entry uniform in `[-scale, scale]`.
pub fn random_model(
    rng: &mut impl Rng,
    horizon: usize,
    m: usize,
    p: usize,
    widths: &[usize],
    activation: Activation,
    scale: f64,
) -> NnarxModel {
    let n = (m + p) * horizon;
    let mut ffnn = FfnnParams::zeros(n, m, p, widths, activation);
    let flat: Vec<f64> = (0..ffnn.num_params()).map(|_| rng.random_range(-scale..=scale)).collect();
    ffnn.set_flat(&flat).unwrap();
    NnarxModel::new(ffnn, horizon, m, p).unwrap()
}

/// Rescales all state-path matrices by a common factor so that
/// `prod ||U_i|| - 1/(prod L_i sqrt(N))` equals `nu`. Norms come from SVD.
pub fn rescale_to_nu(model: &mut NnarxModel, nu: f64) {
    let lip: f64 = model.ffnn.layers.iter().map(|l| l.activation.lipschitz()).product();
    let thr = 1.0 / (lip * (model.horizon as f64).sqrt());
    let target = thr + nu;
    assert!(target > 0.0, "nu below -threshold is unreachable");
    let mut prod = svd_norm(&model.ffnn.out_u);
    for l in &model.ffnn.layers {
        prod *= svd_norm(&l.u);
    }
    let k = (target / prod).powf(1.0 / (model.ffnn.layers.len() + 1) as f64);
    model.ffnn.out_u.scale(k);
    for l in model.ffnn.layers.iter_mut() {
        l.u.scale(k);
    }
}

/// `nu` recomputed with SVD norms.
pub fn svd_nu(model: &NnarxModel) -> f64 {
    let lip: f64 = model.ffnn.layers.iter().map(|l| l.activation.lipschitz()).product();
    let mut prod = svd_norm(&model.ffnn.out_u);
    for l in &model.ffnn.layers {
        prod *= svd_norm(&l.u);
    }
    prod - 1.0 / (lip * (model.horizon as f64).sqrt())
}

/// Random sequence of `len` vectors of dimension `dim`.
pub fn random_seq(rng: &mut impl Rng, len: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
