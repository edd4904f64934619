//! Plant simulators used to generate identification data.

pub mod dataset;
pub mod mprs;
pub mod ph;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use dataset::{build_dataset, Dataset, DatasetSpec, NoiseSpec, Split, Trajectory};
pub use mprs::{mprs_generate, ExcitationSpec, MprsConfig};
pub use ph::{ph_plant_simulate, PhParams, PhPlant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDomain {
    /// `transition` returns `dx/dt`.
    Continuous,
    /// `transition` returns `x+` for one sampling period.
    Discrete,
}

/// Behavioral contract of a simulated plant.
///
/// Outputs are measured before the input of the same sample is applied:
/// `y_k = output(x_k)`, then `x_{k+1}` follows from `(x_k, u_k)`.
pub trait Plant: Sync {
    fn name(&self) -> &str;
    fn domain(&self) -> TimeDomain;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Admissible `(min, max)` for every input channel.
    fn input_range(&self) -> (f64, f64);
    fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn output(&self, x: &[f64]) -> Vec<f64>;
    /// Random initial condition for a new trajectory.
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Starting guess for equilibrium searches.
    fn nominal_state(&self) -> Vec<f64>;
    /// Parameters for provenance records.
    fn describe(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Fixed-step fourth-order Runge-Kutta step of `dx/dt = f(x)`.
pub fn rk4_step(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = f(x);
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = f(&x2);
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = f(&x3);
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = f(&x4);
    x.iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// How a plant is advanced by one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub sampling_time: f64,
    /// RK4 sub-steps per sample; ignored for discrete plants.
    pub inner_steps: usize,
}

impl Sampling {
    pub fn new(sampling_time: f64, inner_steps: usize) -> Result<Self> {
        if !(sampling_time > 0.0 && sampling_time.is_finite()) || inner_steps == 0 {
            return Err(Error::config("sampling time must be positive and inner steps at least 1"));
        }
        Ok(Self {
            sampling_time,
            inner_steps,
        })
    }
}

/// Advances `x` by one sampling period under constant `u`.
pub fn advance(plant: &dyn Plant, x: &[f64], u: &[f64], sampling: Sampling) -> Vec<f64> {
    match plant.domain() {
        TimeDomain::Discrete => plant.transition(x, u),
        TimeDomain::Continuous => {
            let h = sampling.sampling_time / sampling.inner_steps as f64;
            let mut s = x.to_vec();
            for _ in 0..sampling.inner_steps {
                s = rk4_step(|z| plant.transition(z, u), &s, h);
            }
            s
        }
    }
}

/// Runs the plant from `x0`; `y[k]` is measured at sample `k`, before `u[k]` acts.
pub fn simulate(plant: &dyn Plant, x0: &[f64], u_seq: &[Vec<f64>], sampling: Sampling) -> Result<Vec<Vec<f64>>> {
    let mut x = x0.to_vec();
    let mut ys = Vec::with_capacity(u_seq.len());
    for (k, u) in u_seq.iter().enumerate() {
        if u.len() != plant.input_dim() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("bad input at sample {k}")));
        }
        let y = plant.output(&x);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence {
                step: k,
                detail: format!("non-finite output from plant {}", plant.name()),
            });
        }
        ys.push(y);
        x = advance(plant, &x, u, sampling);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence {
                step: k,
                detail: format!("non-finite state in plant {}", plant.name()),
            });
        }
    }
    Ok(ys)
}

/// Equilibrium-search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumOptions {
    pub initial_guess: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            initial_guess: None,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

fn equilibrium_residual(plant: &dyn Plant, x: &[f64], u: &[f64]) -> Vec<f64> {
    let t = plant.transition(x, u);
    match plant.domain() {
        TimeDomain::Continuous => t,
        TimeDomain::Discrete => t.iter().zip(x).map(|(a, b)| a - b).collect(),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Solves `dx/dt = 0` (or `x+ = x`) by damped Newton with a central-difference
/// Jacobian and backtracking on the residual norm.
pub fn find_equilibrium(plant: &dyn Plant, u: &[f64], opts: &EquilibriumOptions) -> Result<Vec<f64>> {
    let n = plant.state_dim();
    let mut x = opts.initial_guess.clone().unwrap_or_else(|| plant.nominal_state());
    if x.len() != n || u.len() != plant.input_dim() {
        return Err(Error::arg("equilibrium guess or input has the wrong dimension"));
    }
    let mut r = equilibrium_residual(plant, &x, u);
    for _ in 0..opts.max_iter {
        let rn = max_abs(&r);
        if rn < opts.tol {
            return Ok(x);
        }
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1e-6);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let rp = equilibrium_residual(plant, &xp, u);
            let rm = equilibrium_residual(plant, &xm, u);
            for i in 0..n {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(dx) = solve_linear(jac, neg_r) else {
            return Err(Error::ConvergenceFailure {
                iterations: 0,
                best_estimate: rn,
                residual: rn,
            });
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            let rc = equilibrium_residual(plant, &cand, u);
            if rc.iter().all(|v| v.is_finite()) && max_abs(&rc) < rn {
                x = cand;
                r = rc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let rn = max_abs(&r);
    if rn < opts.tol {
        return Ok(x);
    }
    Err(Error::ConvergenceFailure {
        iterations: opts.max_iter,
        best_estimate: rn,
        residual: rn,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let k = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= k * a[col][c];
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// One step of the benchmark surrogate:
/// `s1+ = s2`, `s2+ = s1 s2 (s2 + 2.5) / (1 + s1^2 + s2^2) + u`, `y = s2+`.
pub fn surrogate_plant_step(state: [f64; 2], u: f64) -> Result<([f64; 2], f64)> {
    if !u.is_finite() || !state.iter().all(|s| s.is_finite()) {
        return Err(Error::arg("surrogate plant needs finite state and input"));
    }
    let [s1, s2] = state;
    let next = s1 * s2 * (s2 + 2.5) / (1.0 + s1 * s1 + s2 * s2) + u;
    Ok(([s2, next], next))
}

/// Second-order rational SISO benchmark, discrete time.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogatePlant;

impl SurrogatePlant {
    pub const NAME: &'static str = "surrogate";
}

impl Plant for SurrogatePlant {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn domain(&self) -> TimeDomain {
        TimeDomain::Discrete
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn input_range(&self) -> (f64, f64) {
        (-2.0, 2.0)
    }

    fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let [s1, s2] = [x[0], x[1]];
        vec![s2, s1 * s2 * (s2 + 2.5) / (1.0 + s1 * s1 + s2 * s2) + u[0]]
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        vec![x[1]]
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    }

    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }
}

/// Continuous-time linear plant `dx/dt = A x + B u`, `y = C x`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: crate::linalg::Matrix,
    pub b: crate::linalg::Matrix,
    pub c: crate::linalg::Matrix,
}

impl Plant for LinearPlant {
    fn name(&self) -> &str {
        "linear"
    }

    fn domain(&self) -> TimeDomain {
        TimeDomain::Continuous
    }

    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn input_dim(&self) -> usize {
        self.b.cols()
    }

    fn output_dim(&self) -> usize {
        self.c.rows()
    }

    fn input_range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut d = self.a.matvec(x);
        self.b.matvec_acc(u, &mut d);
        d
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        self.c.matvec(x)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.state_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }
}
