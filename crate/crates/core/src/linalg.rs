//! Small dense row-major matrices and the power-iteration spectral norm.
//!
//! The networks handled here are tiny (tens of units), so a plain `Vec<f64>`
//! backed matrix is enough and keeps every arithmetic path explicit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Hard cap on power iterations.
pub const SPECTRAL_MAX_ITER: usize = 10_000;
const SPECTRAL_SEED: u64 = 0x5eed_f05e_ed00;
/// Block size of the power iteration.
pub const SPECTRAL_BLOCK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "matrix payload has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `out += self * x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += self' * y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.matvec_t_acc(y, &mut out);
        out
    }

    /// `self += k * a * b'`
    pub fn add_outer(&mut self, k: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = k * ar;
            if s == 0.0 {
                continue;
            }
            let cols = self.cols;
            for (v, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *v += s * bc;
            }
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::arg(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::arg("shape mismatch in subtraction"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::arg("shape mismatch in addition"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Top singular triplet `(sigma, u, v)` with `M v = sigma u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

/// Largest singular value of `m` within relative tolerance `tol`.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    spectral_pair(m, tol, SPECTRAL_MAX_ITER).map(|p| p.sigma)
}

/// Block power iteration on `M'M` from fixed-seed start vectors.
///
/// A block of up to [`SPECTRAL_BLOCK`] vectors is iterated and re-orthonormalized,
/// with a Rayleigh-Ritz step on the block. The stop test is the eigen-residual
/// of the top Ritz pair, `|M'M v - s^2 v| / s^2 <= tol`, which bounds the
/// relative error of `s^2`. The block makes clustered top singular values
/// converge at the rate of the first well-separated one. Hitting `max_iter`
/// returns [`Error::ConvergenceFailure`] carrying the last estimate.
pub fn spectral_pair(m: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralPair> {
    if !(tol > 0.0) {
        return Err(Error::arg("spectral norm tolerance must be positive"));
    }
    if !m.is_finite() {
        return Err(Error::arg("spectral norm of a matrix with non-finite entries"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.max_abs() == 0.0 {
        return Ok(SpectralPair {
            sigma: 0.0,
            u: vec![0.0; rows],
            v: vec![0.0; cols],
            iterations: 0,
        });
    }

    // Pre-scaling keeps M'M away from overflow and underflow.
    let scale = m.max_abs();
    let gram = |v: &[f64]| -> Vec<f64> {
        let mv: Vec<f64> = m.matvec(v).iter().map(|x| x / scale).collect();
        m.matvec_t(&mv).iter().map(|x| x / scale).collect()
    };
    let k = SPECTRAL_BLOCK.min(rows).min(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(SPECTRAL_SEED);
    let mut q: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut q);

    let mut top = q[0].clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let z: Vec<Vec<f64>> = q.iter().map(|v| gram(v)).collect();
        // Rayleigh-Ritz on span(q)
        let h = Matrix::from_fn(k, k, |i, j| 0.5 * (dot(&q[i], &z[j]) + dot(&q[j], &z[i])));
        let (theta, s) = top_eigenpair(&h);
        if theta <= 0.0 {
            // block inside the null space of M; restart from coordinate vectors
            q = (0..k).map(|i| unit(cols, (i + iter) % cols)).collect();
            orthonormalize(&mut q);
            continue;
        }
        let mut v = vec![0.0; cols];
        let mut gv = vec![0.0; cols];
        for (i, si) in s.iter().enumerate() {
            v.iter_mut().zip(&q[i]).for_each(|(a, b)| *a += si * b);
            gv.iter_mut().zip(&z[i]).for_each(|(a, b)| *a += si * b);
        }
        residual = gv.iter().zip(&v).map(|(a, b)| (a - theta * b).powi(2)).sum::<f64>().sqrt() / theta;
        top = v;
        if residual <= tol {
            normalize(&mut top);
            return Ok(finish_pair(m, top, iter));
        }
        q = z;
        orthonormalize(&mut q);
    }
    normalize(&mut top);
    let best = norm2(&m.matvec(&top));
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        best_estimate: best,
        residual,
    })
}

/// Like [`spectral_pair`], but on iteration-cap failure returns the best pair
/// found. Used where any top singular pair is an acceptable subgradient.
pub fn spectral_pair_or_best(m: &Matrix) -> Result<SpectralPair> {
    match spectral_pair(m, SPECTRAL_TOL, SPECTRAL_MAX_ITER) {
        Err(Error::ConvergenceFailure { .. }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(SPECTRAL_SEED);
            let mut v: Vec<f64> = (0..m.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut v);
            for _ in 0..SPECTRAL_MAX_ITER {
                let mut w = m.matvec_t(&m.matvec(&v));
                if norm2(&w) == 0.0 {
                    break;
                }
                normalize(&mut w);
                v = w;
            }
            Ok(finish_pair(m, v, SPECTRAL_MAX_ITER))
        }
        other => other,
    }
}

fn finish_pair(m: &Matrix, v: Vec<f64>, iterations: usize) -> SpectralPair {
    let mut u = m.matvec(&v);
    let sigma = norm2(&u);
    if sigma > 0.0 {
        u.iter_mut().for_each(|x| *x /= sigma);
    }
    SpectralPair {
        sigma,
        u,
        v,
        iterations,
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Modified Gram-Schmidt (two passes). Columns that collapse are replaced by
/// the first coordinate vector not yet in the span.
fn orthonormalize(q: &mut [Vec<f64>]) {
    let n = q.first().map_or(0, Vec::len);
    let mut next_unit = 0;
    for i in 0..q.len() {
        let original = norm2(&q[i]);
        loop {
            for _ in 0..2 {
                for j in 0..i {
                    let (done, rest) = q.split_at_mut(i);
                    let c = dot(&done[j], &rest[0]);
                    rest[0].iter_mut().zip(&done[j]).for_each(|(a, b)| *a -= c * b);
                }
            }
            let nrm = norm2(&q[i]);
            if nrm > 1e-10 * original.max(f64::MIN_POSITIVE) && nrm > 0.0 {
                q[i].iter_mut().for_each(|x| *x /= nrm);
                break;
            }
            if next_unit >= n {
                q[i].iter_mut().for_each(|x| *x = 0.0);
                break;
            }
            q[i] = unit(n, next_unit);
            next_unit += 1;
        }
    }
}

/// Largest eigenvalue and its unit eigenvector of a small symmetric matrix
/// (cyclic Jacobi).
fn top_eigenpair(h: &Matrix) -> (f64, Vec<f64>) {
    let k = h.rows();
    let mut a = h.clone();
    let mut v = Matrix::identity(k);
    for _ in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off <= 1e-30 * a.as_slice().iter().map(|x| x * x).sum::<f64>() {
            break;
        }
        for p in 0..k {
            for r in p + 1..k {
                if a[(p, r)] == 0.0 {
                    continue;
                }
                let tau = (a[(r, r)] - a[(p, p)]) / (2.0 * a[(p, r)]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..k {
                    let (aip, air) = (a[(i, p)], a[(i, r)]);
                    a[(i, p)] = c * aip - s * air;
                    a[(i, r)] = s * aip + c * air;
                }
                for i in 0..k {
                    let (api, ari) = (a[(p, i)], a[(r, i)]);
                    a[(p, i)] = c * api - s * ari;
                    a[(r, i)] = s * api + c * ari;
                }
                for i in 0..k {
                    let (vip, vir) = (v[(i, p)], v[(i, r)]);
                    v[(i, p)] = c * vip - s * vir;
                    v[(i, r)] = s * vip + c * vir;
                }
            }
        }
    }
    let best = (0..k).max_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)])).unwrap_or(0);
    (a[(best, best)], (0..k).map(|i| v[(i, best)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_norm() {
        let s = spectral_norm(&Matrix::identity(3), SPECTRAL_TOL).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_norm_is_largest_entry() {
        let m = Matrix::from_row_major(2, 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        let s = spectral_norm(&m, SPECTRAL_TOL).unwrap();
        assert!((s - 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_and_empty_matrix() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 4), 1e-10).unwrap(), 0.0);
        assert_eq!(spectral_norm(&Matrix::zeros(0, 4), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn row_vector_norm_is_euclidean() {
        let m = Matrix::from_row_major(1, 3, vec![1.0, 2.0, 2.0]).unwrap();
        assert!((spectral_norm(&m, 1e-10).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pair_satisfies_singular_equations() {
        let m = Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64).sin());
        let p = spectral_pair(&m, SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap();
        let mv = m.matvec(&p.v);
        for (a, b) in mv.iter().zip(&p.u) {
            assert!((a - p.sigma * b).abs() < 1e-9);
        }
        let mtu = m.matvec_t(&p.u);
        for (a, b) in mtu.iter().zip(&p.v) {
            assert!((a - p.sigma * b).abs() < 1e-6);
        }
    }

    #[test]
    fn cap_reached_reports_best_estimate() {
        // A cluster wider than the block converges slowly.
        let d = [1.0, 0.999, 0.998, 0.997, 0.996, 0.5, 0.1];
        let m = Matrix::from_fn(7, 7, |i, j| if i == j { d[i] } else { 0.01 * ((i * 7 + j) as f64).sin() });
        match spectral_pair(&m, 1e-14, 3) {
            Err(Error::ConvergenceFailure {
                iterations,
                best_estimate,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(best_estimate > 0.9 && best_estimate < 1.1);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_entries_rejected() {
        let m = Matrix::from_row_major(1, 2, vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(spectral_norm(&m, 1e-10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matmul_and_transpose_agree() {
        let a = Matrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64);
        let b = Matrix::from_fn(3, 2, |r, c| (r as f64) - (c as f64));
        let ab = a.matmul(&b).unwrap();
        let bt_at = b.transpose().matmul(&a.transpose()).unwrap();
        assert_eq!(ab.transpose(), bt_at);
        assert!(a.matmul(&a).is_err());
    }
}
