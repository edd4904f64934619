//! Weight-based ISS / incremental ISS certificate for NNARX models, plus
//! numerical probes that corroborate it on concrete trajectories.
//!
//! The certificate is the inequality
//!
//! ```text
//! prod_{i=0..M} ||U_i||  <  1 / (prod_{i=1..M} L_i * sqrt(N))
//! ```
//!
//! with the residual `nu` defined as the left side minus the right side. It is
//! sufficient, not necessary: a model failing it may still be stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, spectral_norm, Matrix, SPECTRAL_TOL};
use crate::model::{build_canonical_matrices, NnarxModel, StackedState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedIssAndDeltaIss,
    NotCertified,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        matches!(self, Verdict::CertifiedIssAndDeltaIss)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::CertifiedIssAndDeltaIss => write!(f, "certified ISS and delta-ISS"),
            Verdict::NotCertified => write!(f, "not certified (condition is sufficient, not necessary)"),
        }
    }
}

/// Lipschitz-type constants of the network w.r.t. state, input and biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub k_x: f64,
    pub k_u: f64,
    pub k_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub horizon: usize,
    /// `||U_0||, ||U_1||, ..., ||U_M||`
    pub u_norms: Vec<f64>,
    /// `||W_1||, ..., ||W_M||`
    pub w_norms: Vec<f64>,
    pub layer_lipschitz: Vec<f64>,
    pub lipschitz_product: f64,
    pub weight_product: f64,
    pub threshold: f64,
    pub nu: f64,
    pub margin: f64,
    pub verdict: Verdict,
    pub constants: LipschitzConstants,
}

impl CertificateReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<24}{}\n", "look-back N", self.horizon));
        for (i, n) in self.u_norms.iter().enumerate() {
            s.push_str(&format!("{:<24}{:.6}\n", format!("||U{i}||"), n));
        }
        for (i, n) in self.w_norms.iter().enumerate() {
            s.push_str(&format!("{:<24}{:.6}\n", format!("||W{}||", i + 1), n));
        }
        s.push_str(&format!("{:<24}{:.6}\n", "prod L_sigma", self.lipschitz_product));
        s.push_str(&format!("{:<24}{:.6}\n", "prod ||U_i||", self.weight_product));
        s.push_str(&format!("{:<24}{:.6}\n", "threshold", self.threshold));
        s.push_str(&format!("{:<24}{:.6}\n", "nu", self.nu));
        if self.margin > 0.0 {
            s.push_str(&format!("{:<24}{:.6}\n", "required margin", self.margin));
        }
        s.push_str(&format!("{:<24}{:.6}\n", "K_x", self.constants.k_x));
        s.push_str(&format!("{:<24}{:.6}\n", "K_u", self.constants.k_u));
        s.push_str(&format!("{:<24}{:.6}\n", "K_b", self.constants.k_b));
        s.push_str(&format!("{:<24}{}\n", "verdict", self.verdict));
        s
    }
}

struct Norms {
    u: Vec<f64>,
    w: Vec<f64>,
    lip: Vec<f64>,
}

fn layer_norms(model_params: &crate::model::FfnnParams) -> Result<Norms> {
    let u = model_params
        .recurrent_mats()
        .into_iter()
        .map(|m| spectral_norm(m, SPECTRAL_TOL))
        .collect::<Result<Vec<_>>>()?;
    let w = model_params
        .layers
        .iter()
        .map(|l| spectral_norm(&l.w, SPECTRAL_TOL))
        .collect::<Result<Vec<_>>>()?;
    let lip = model_params.layers.iter().map(|l| l.activation.lipschitz()).collect();
    Ok(Norms { u, w, lip })
}

/// Combines per-layer norms into `(K_x, K_u, K_b)`.
///
/// `u_norms[0]` is the output layer; `u_norms[i]`, `w_norms[i-1]` and
/// `lipschitz[i-1]` belong to hidden layer `i`.
pub fn constants_from_norms(u_norms: &[f64], w_norms: &[f64], lipschitz: &[f64]) -> LipschitzConstants {
    let depth = lipschitz.len();
    let out = u_norms[0];
    let k_x = out * (1..=depth).map(|i| lipschitz[i - 1] * u_norms[i]).product::<f64>();
    let mut k_u = 0.0;
    let mut k_b = 0.0;
    // tail = prod_{j>i} L_j ||U_j||, built from the last layer backwards
    let mut tail = 1.0;
    for i in (1..=depth).rev() {
        k_u += tail * lipschitz[i - 1] * w_norms[i - 1];
        k_b += tail * lipschitz[i - 1];
        tail *= lipschitz[i - 1] * u_norms[i];
    }
    LipschitzConstants {
        k_x,
        k_u: out * k_u,
        k_b: out * k_b,
    }
}

pub fn compute_constants(params: &crate::model::FfnnParams) -> Result<LipschitzConstants> {
    params.validate()?;
    let norms = layer_norms(params)?;
    Ok(constants_from_norms(&norms.u, &norms.w, &norms.lip))
}

/// `nu` from already-computed norms.
pub fn residual_from_norms(u_norms: &[f64], lipschitz: &[f64], horizon: usize) -> f64 {
    let weight_product: f64 = u_norms.iter().product();
    weight_product - threshold(lipschitz, horizon)
}

pub fn threshold(lipschitz: &[f64], horizon: usize) -> f64 {
    let lip: f64 = lipschitz.iter().product();
    1.0 / (lip * (horizon as f64).sqrt())
}

pub fn stability_residual(model: &NnarxModel) -> Result<f64> {
    model.validate()?;
    let norms = layer_norms(&model.ffnn)?;
    Ok(residual_from_norms(&norms.u, &norms.lip, model.horizon))
}

pub fn certify(model: &NnarxModel) -> Result<CertificateReport> {
    certify_with_margin(model, 0.0)
}

/// Certificate requiring `nu < -margin`; `margin = 0` is the plain strict test.
pub fn certify_with_margin(model: &NnarxModel, margin: f64) -> Result<CertificateReport> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::arg("certificate margin must be a finite nonnegative number"));
    }
    model.validate()?;
    let norms = layer_norms(&model.ffnn)?;
    let lipschitz_product: f64 = norms.lip.iter().product();
    let weight_product: f64 = norms.u.iter().product();
    let thr = threshold(&norms.lip, model.horizon);
    let nu = weight_product - thr;
    let verdict = if nu < -margin {
        Verdict::CertifiedIssAndDeltaIss
    } else {
        Verdict::NotCertified
    };
    let constants = constants_from_norms(&norms.u, &norms.w, &norms.lip);
    Ok(CertificateReport {
        horizon: model.horizon,
        u_norms: norms.u,
        w_norms: norms.w,
        layer_lipschitz: norms.lip,
        lipschitz_product,
        weight_product,
        threshold: thr,
        nu,
        margin,
        verdict,
        constants,
    })
}

/// `P = diag(I, 2I, ..., N I)` with blocks of size `m + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovMatrix {
    pub p: Matrix,
    pub horizon: usize,
    pub block_size: usize,
}

impl LyapunovMatrix {
    /// `v' P v` without forming `P`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        v.chunks(self.block_size)
            .enumerate()
            .map(|(i, blk)| (i + 1) as f64 * blk.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

pub fn lyapunov_matrix(horizon: usize, m: usize, p: usize) -> Result<LyapunovMatrix> {
    let canon = build_canonical_matrices(horizon, m, p)?;
    let s = m + p;
    let n = s * horizon;
    let pm = Matrix::from_fn(n, n, |r, c| if r == c { (r / s + 1) as f64 } else { 0.0 });
    let residual = lyapunov_residual(&canon.a, &pm)?;
    if residual != 0.0 {
        return Err(Error::Internal(format!(
            "A'PA - P + I has max entry {residual} for N={horizon}, m={m}, p={p}"
        )));
    }
    Ok(LyapunovMatrix {
        p: pm,
        horizon,
        block_size: s,
    })
}

/// `max |A'PA - P + I|` by dense arithmetic.
pub fn lyapunov_residual(a: &Matrix, p: &Matrix) -> Result<f64> {
    let at_p_a = a.transpose().matmul(p)?.matmul(a)?;
    let r = at_p_a.sub(p)?.add(&Matrix::identity(a.rows()))?;
    Ok(r.max_abs())
}

/// One evaluation of the incremental Lyapunov function along a step pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub v_before: f64,
    pub v_after: f64,
    /// `V(x_a+, x_b+) - V(x_a, x_b)`
    pub delta_v: f64,
    /// `-|dx|^2 + N |du|^2 + N |df|^2`
    pub bound: f64,
    /// Same bound with `|df|` replaced by `K_x |dx| + K_u |du|`.
    pub lipschitz_bound: f64,
    pub slack: f64,
}

pub fn lyapunov_decrease_probe(
    model: &NnarxModel,
    x_a: &StackedState,
    x_b: &StackedState,
    u_a: &[f64],
    u_b: &[f64],
) -> Result<ProbeRecord> {
    let lyap = lyapunov_matrix(model.horizon, model.input_dim, model.output_dim)?;
    let k = compute_constants(&model.ffnn)?;
    let f_a = model.ffnn_forward(x_a, u_a)?;
    let f_b = model.ffnn_forward(x_b, u_b)?;
    let (xa1, _) = model.step(x_a, u_a)?;
    let (xb1, _) = model.step(x_b, u_b)?;

    let dx = diff(x_a.as_slice(), x_b.as_slice());
    let dx1 = diff(xa1.as_slice(), xb1.as_slice());
    let du = norm2(&diff(u_a, u_b));
    let df = norm2(&diff(&f_a, &f_b));
    let dxn = norm2(&dx);
    let n = model.horizon as f64;

    let v_before = lyap.quad_form(&dx);
    let v_after = lyap.quad_form(&dx1);
    let delta_v = v_after - v_before;
    let bound = -dxn * dxn + n * du * du + n * df * df;
    let lip_df = k.k_x * dxn + k.k_u * du;
    let lipschitz_bound = -dxn * dxn + n * du * du + n * lip_df * lip_df;
    Ok(ProbeRecord {
        v_before,
        v_after,
        delta_v,
        bound,
        lipschitz_bound,
        slack: bound - delta_v,
    })
}

/// Distance between two lockstep trajectories driven by the same input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    /// `distances[k] = |x_a,k - x_b,k|`, starting with the initial pair.
    pub distances: Vec<f64>,
    /// Step at which a state became non-finite, if any.
    pub diverged_at: Option<usize>,
}

impl ContractionTrace {
    pub fn initial(&self) -> f64 {
        self.distances[0]
    }

    pub fn last(&self) -> f64 {
        *self.distances.last().expect("trace always holds the initial distance")
    }

    /// Largest `distances[k] / distances[0]`; infinite after a divergence.
    pub fn max_growth(&self) -> f64 {
        if self.diverged_at.is_some() {
            return f64::INFINITY;
        }
        let d0 = self.initial();
        if d0 == 0.0 {
            return if self.distances.iter().all(|d| *d == 0.0) { 0.0 } else { f64::INFINITY };
        }
        self.distances.iter().fold(0.0f64, |acc, d| acc.max(d / d0))
    }
}

pub fn contraction_probe(
    model: &NnarxModel,
    x_a0: &StackedState,
    x_b0: &StackedState,
    u_seq: &[Vec<f64>],
    horizon: usize,
) -> Result<ContractionTrace> {
    if horizon == 0 {
        return Err(Error::arg("probe horizon must be at least 1"));
    }
    if u_seq.len() < horizon {
        return Err(Error::arg(format!(
            "input sequence has {} samples, probe horizon is {horizon}",
            u_seq.len()
        )));
    }
    let mut xa = x_a0.clone();
    let mut xb = x_b0.clone();
    let mut distances = Vec::with_capacity(horizon + 1);
    distances.push(norm2(&diff(xa.as_slice(), xb.as_slice())));
    for (k, u) in u_seq.iter().take(horizon).enumerate() {
        xa = model.step(&xa, u)?.0;
        xb = model.step(&xb, u)?.0;
        let d = norm2(&diff(xa.as_slice(), xb.as_slice()));
        if !d.is_finite() || !xa.as_slice().iter().chain(xb.as_slice()).all(|v| v.is_finite()) {
            return Ok(ContractionTrace {
                distances,
                diverged_at: Some(k + 1),
            });
        }
        distances.push(d);
    }
    Ok(ContractionTrace {
        distances,
        diverged_at: None,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Scalar (`m = p = 1`, `N = 1`) model with `y_{k+1} = gain * y_k`, built from
/// identity activations. With `|gain| > 1` it is the textbook unstable case.
pub fn explosive_demo_model(gain: f64) -> Result<NnarxModel> {
    use crate::model::{Activation, FfnnParams};
    let mut ffnn = FfnnParams::zeros(2, 1, 1, &[1], Activation::Identity);
    ffnn.layers[0].u[(0, 0)] = gain;
    ffnn.out_u[(0, 0)] = 1.0;
    NnarxModel::new(ffnn, 1, 1, 1)
}
