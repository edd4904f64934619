//! NNARX models in normal canonical state-space form.
//!
//! The state stacks the last `N` input/output pairs as blocks
//! `z_i = [y_{k-N+i}; u_{k-N-1+i}]`, `i = 1..N`, oldest first. One step shifts
//! every block up by one and writes `[f(x, u); u]` into the newest block:
//!
//! ```text
//! x+ = A x + B_u u + B_x f(x, u)
//! y  = C x
//! ```
//!
//! `f` is a feed-forward network whose every layer also sees the current
//! input `u` directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Zero-centered, Lipschitz activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    /// `clamp(x, -1, 1)`
    HardTanh,
    /// `x / (1 + |x|)`
    Softsign,
    /// `tanh(scale * x)`; Lipschitz constant `|scale|`.
    ScaledTanh { scale: f64 },
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Tanh | Activation::Identity | Activation::HardTanh | Activation::Softsign => 1.0,
            Activation::ScaledTanh { scale } => scale.abs(),
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::HardTanh => "hard_tanh",
            Activation::Softsign => "softsign",
            Activation::ScaledTanh { .. } => "scaled_tanh",
            Activation::LeakyRelu { .. } => "leaky_relu",
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::HardTanh => x.clamp(-1.0, 1.0),
            Activation::Softsign => x / (1.0 + x.abs()),
            Activation::ScaledTanh { scale } => (scale * x).tanh(),
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative at pre-activation `x`, given `y = apply(x)`.
    #[inline]
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::HardTanh => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Activation::ScaledTanh { scale } => scale * (1.0 - y * y),
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Activation::ScaledTanh { scale } => scale.is_finite() && scale != 0.0,
            Activation::LeakyRelu { slope } => slope.is_finite(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad parameter for activation {}", self.tag())))
        }
    }
}

/// One hidden layer: `h_i = act(W_i u + U_i h_{i-1} + b_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.u.rows()
    }
}

/// Weights of the regression network, hidden layers `1..M` plus the linear
/// output layer `(U_0, b_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnnParams {
    pub layers: Vec<Layer>,
    pub out_u: Matrix,
    pub out_b: Vec<f64>,
}

/// Pre-activations and activations of one forward pass, kept for backprop.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl FfnnParams {
    /// All-zero network with the given hidden widths.
    pub fn zeros(n: usize, m: usize, p: usize, widths: &[usize], activation: Activation) -> Self {
        let mut prev = n;
        let layers = widths
            .iter()
            .map(|&h| {
                let layer = Layer {
                    w: Matrix::zeros(h, m),
                    u: Matrix::zeros(h, prev),
                    b: vec![0.0; h],
                    activation,
                };
                prev = h;
                layer
            })
            .collect();
        Self {
            layers,
            out_u: Matrix::zeros(p, prev),
            out_b: vec![0.0; p],
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn state_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.u.cols())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.out_u.rows()
    }

    /// Checks the dimension chain, activations and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("network needs at least one hidden layer".into()));
        }
        let m = self.input_dim();
        let mut prev = self.state_dim();
        for (i, l) in self.layers.iter().enumerate() {
            let h = l.u.rows();
            let idx = i + 1;
            if h == 0 {
                return Err(Error::InvalidModel(format!("layer {idx} has zero width")));
            }
            if l.u.cols() != prev {
                return Err(Error::InvalidModel(format!(
                    "U{idx} has {} columns, expected {prev}",
                    l.u.cols()
                )));
            }
            if l.w.rows() != h || l.w.cols() != m {
                return Err(Error::InvalidModel(format!(
                    "W{idx} is {}x{}, expected {h}x{m}",
                    l.w.rows(),
                    l.w.cols()
                )));
            }
            if l.b.len() != h {
                return Err(Error::InvalidModel(format!("b{idx} has length {}, expected {h}", l.b.len())));
            }
            l.activation.validate()?;
            prev = h;
        }
        if self.out_u.cols() != prev {
            return Err(Error::InvalidModel(format!(
                "U0 has {} columns, expected {prev}",
                self.out_u.cols()
            )));
        }
        if self.out_b.len() != self.out_u.rows() {
            return Err(Error::InvalidModel("b0 length does not match rows of U0".into()));
        }
        if let Some(name) = self.first_non_finite() {
            return Err(Error::InvalidModel(format!("non-finite entry in {name}")));
        }
        Ok(())
    }

    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    /// Named parameter tensors in canonical order: `W1, U1, b1, ..., U0, b0`.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("W{}", i + 1), l.w.as_slice()));
            out.push((format!("U{}", i + 1), l.u.as_slice()));
            out.push((format!("b{}", i + 1), l.b.as_slice()));
        }
        out.push(("U0".into(), self.out_u.as_slice()));
        out.push(("b0".into(), self.out_b.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in self.layers.iter_mut() {
            out.push(l.w.as_mut_slice());
            out.push(l.u.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out.push(self.out_u.as_mut_slice());
        out.push(self.out_b.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::arg(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// The "U" matrices `[U_0, U_1, ..., U_M]` whose norms enter the certificate.
    pub fn recurrent_mats(&self) -> Vec<&Matrix> {
        std::iter::once(&self.out_u).chain(self.layers.iter().map(|l| &l.u)).collect()
    }

    /// `U_0 f_M + b_0`, with `f_1 = act(W_1 u + U_1 x + b_1)` and so on.
    pub fn forward(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_io(x, u)?;
        let mut cache = ForwardCache::default();
        Ok(self.forward_cached(x, u, &mut cache))
    }

    pub(crate) fn check_io(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::arg(format!(
                "state has length {}, network expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        if u.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has length {}, network expects {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Unchecked forward pass that records every layer in `cache`.
    pub fn forward_cached(&self, x: &[f64], u: &[f64], cache: &mut ForwardCache) -> Vec<f64> {
        let depth = self.layers.len();
        cache.pre.resize(depth, Vec::new());
        cache.post.resize(depth, Vec::new());
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = l.b.clone();
            l.w.matvec_acc(u, &mut a);
            if i == 0 {
                l.u.matvec_acc(x, &mut a);
            } else {
                l.u.matvec_acc(&cache.post[i - 1], &mut a);
            }
            let h: Vec<f64> = a.iter().map(|&v| l.activation.apply(v)).collect();
            cache.pre[i] = a;
            cache.post[i] = h;
        }
        let mut out = self.out_b.clone();
        self.out_u.matvec_acc(&cache.post[depth - 1], &mut out);
        out
    }
}

/// Per-channel affine normalization `(v - mean) / dev`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub u_mean: Vec<f64>,
    pub u_dev: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_dev: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(m: usize, p: usize) -> Self {
        Self {
            u_mean: vec![0.0; m],
            u_dev: vec![1.0; m],
            y_mean: vec![0.0; p],
            y_dev: vec![1.0; p],
        }
    }

    /// Mean and maximum absolute deviation per channel over all samples.
    pub fn from_samples<'a>(
        u: impl IntoIterator<Item = &'a [f64]>,
        y: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        let (u_mean, u_dev) = channel_stats(u, "input")?;
        let (y_mean, y_dev) = channel_stats(y, "output")?;
        Ok(Self {
            u_mean,
            u_dev,
            y_mean,
            y_dev,
        })
    }

    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        if self.u_mean.len() != m || self.u_dev.len() != m || self.y_mean.len() != p || self.y_dev.len() != p {
            return Err(Error::InvalidModel("normalization statistics have wrong channel counts".into()));
        }
        let all = self.u_dev.iter().chain(&self.y_dev);
        if all.clone().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Normalization("deviations must be finite and strictly positive".into()));
        }
        if self.u_mean.iter().chain(&self.y_mean).any(|v| !v.is_finite()) {
            return Err(Error::Normalization("means must be finite".into()));
        }
        Ok(())
    }

    pub fn normalize_u(&self, u: &[f64]) -> Vec<f64> {
        affine(u, &self.u_mean, &self.u_dev, false)
    }

    pub fn denormalize_u(&self, u: &[f64]) -> Vec<f64> {
        affine(u, &self.u_mean, &self.u_dev, true)
    }

    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        affine(y, &self.y_mean, &self.y_dev, false)
    }

    pub fn denormalize_y(&self, y: &[f64]) -> Vec<f64> {
        affine(y, &self.y_mean, &self.y_dev, true)
    }
}

fn affine(v: &[f64], mean: &[f64], dev: &[f64], inverse: bool) -> Vec<f64> {
    v.iter()
        .zip(mean.iter().zip(dev))
        .map(|(&x, (&mu, &d))| if inverse { x * d + mu } else { (x - mu) / d })
        .collect()
}

fn channel_stats<'a>(samples: impl IntoIterator<Item = &'a [f64]>, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let samples: Vec<&[f64]> = samples.into_iter().collect();
    let Some(first) = samples.first() else {
        return Err(Error::Normalization(format!("no {what} samples")));
    };
    let width = first.len();
    if samples.iter().any(|s| s.len() != width) {
        return Err(Error::Normalization(format!("ragged {what} samples")));
    }
    let count = samples.len() as f64;
    let mut mean = vec![0.0; width];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut dev = vec![0.0f64; width];
    for s in &samples {
        for ((d, v), m) in dev.iter_mut().zip(s.iter()).zip(&mean) {
            *d = d.max((v - m).abs());
        }
    }
    if let Some(ch) = dev.iter().position(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::Normalization(format!("{what} channel {} has zero variance", ch + 1)));
    }
    Ok((mean, dev))
}

/// `A`, `B_u`, `B_x`, `C` of the canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalMatrices {
    pub a: Matrix,
    pub b_u: Matrix,
    pub b_x: Matrix,
    pub c: Matrix,
}

pub fn build_canonical_matrices(horizon: usize, m: usize, p: usize) -> Result<CanonicalMatrices> {
    if horizon == 0 || m == 0 || p == 0 {
        return Err(Error::arg(format!(
            "dimensions must be positive (N={horizon}, m={m}, p={p})"
        )));
    }
    let s = m + p;
    let n = s * horizon;
    let mut a = Matrix::zeros(n, n);
    for blk in 0..horizon - 1 {
        for j in 0..s {
            a[(blk * s + j, (blk + 1) * s + j)] = 1.0;
        }
    }
    let last = (horizon - 1) * s;
    let mut b_u = Matrix::zeros(n, m);
    for j in 0..m {
        b_u[(last + p + j, j)] = 1.0;
    }
    let mut b_x = Matrix::zeros(n, p);
    let mut c = Matrix::zeros(p, n);
    for j in 0..p {
        b_x[(last + j, j)] = 1.0;
        c[(j, last + j)] = 1.0;
    }
    Ok(CanonicalMatrices { a, b_u, b_x, c })
}

/// Canonical state: `N` blocks of `[y (p); u (m)]`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    horizon: usize,
    m: usize,
    p: usize,
    x: Vec<f64>,
}

impl StackedState {
    pub fn zeros(horizon: usize, m: usize, p: usize) -> Self {
        Self {
            horizon,
            m,
            p,
            x: vec![0.0; (m + p) * horizon],
        }
    }

    pub fn from_vec(horizon: usize, m: usize, p: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != (m + p) * horizon {
            return Err(Error::arg(format!(
                "state vector has length {}, expected {}",
                x.len(),
                (m + p) * horizon
            )));
        }
        Ok(Self { horizon, m, p, x })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn block_size(&self) -> usize {
        self.m + self.p
    }

    /// Block `i` (0-based, `0` oldest).
    pub fn block(&self, i: usize) -> &[f64] {
        let s = self.block_size();
        &self.x[i * s..(i + 1) * s]
    }

    pub fn block_y(&self, i: usize) -> &[f64] {
        &self.block(i)[..self.p]
    }

    pub fn block_u(&self, i: usize) -> &[f64] {
        &self.block(i)[self.p..]
    }

    /// `C x`: the output stored in the newest block.
    pub fn newest_output(&self) -> &[f64] {
        self.block_y(self.horizon - 1)
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.horizon, self.m, self.p)
    }
}

/// Stacks `N` past outputs and inputs (oldest first) so that block `i`
/// holds `[past_y[i]; past_u[i]]`.
pub fn stack_state(past_y: &[Vec<f64>], past_u: &[Vec<f64>]) -> Result<StackedState> {
    let horizon = past_y.len();
    if horizon == 0 || past_u.len() != horizon {
        return Err(Error::arg(format!(
            "need equally many past outputs and inputs (got {} and {})",
            past_y.len(),
            past_u.len()
        )));
    }
    let p = past_y[0].len();
    let m = past_u[0].len();
    if p == 0 || m == 0 {
        return Err(Error::arg("channel width must be positive"));
    }
    let mut x = Vec::with_capacity((m + p) * horizon);
    for (y, u) in past_y.iter().zip(past_u) {
        if y.len() != p || u.len() != m {
            return Err(Error::arg("inconsistent channel width in history"));
        }
        x.extend_from_slice(y);
        x.extend_from_slice(u);
    }
    Ok(StackedState { horizon, m, p, x })
}

/// An NNARX model: regression network plus canonical-form dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnarxModel {
    pub ffnn: FfnnParams,
    pub horizon: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub norm: NormalizationStats,
}

impl NnarxModel {
    pub fn new(ffnn: FfnnParams, horizon: usize, input_dim: usize, output_dim: usize) -> Result<Self> {
        let model = Self {
            ffnn,
            horizon,
            input_dim,
            output_dim,
            norm: NormalizationStats::identity(input_dim, output_dim),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_norm(mut self, norm: NormalizationStats) -> Result<Self> {
        norm.validate(self.input_dim, self.output_dim)?;
        self.norm = norm;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        (self.input_dim + self.output_dim) * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidModel("N, m and p must be positive".into()));
        }
        self.ffnn.validate()?;
        if self.ffnn.state_dim() != self.state_dim() {
            return Err(Error::InvalidModel(format!(
                "first layer takes {} state entries, (m+p)N = {}",
                self.ffnn.state_dim(),
                self.state_dim()
            )));
        }
        if self.ffnn.input_dim() != self.input_dim {
            return Err(Error::InvalidModel("W matrices do not have m columns".into()));
        }
        if self.ffnn.output_dim() != self.output_dim {
            return Err(Error::InvalidModel("rows of U0 differ from p".into()));
        }
        self.norm.validate(self.input_dim, self.output_dim)
    }

    pub fn zero_state(&self) -> StackedState {
        StackedState::zeros(self.horizon, self.input_dim, self.output_dim)
    }

    pub fn state_from_vec(&self, x: Vec<f64>) -> Result<StackedState> {
        StackedState::from_vec(self.horizon, self.input_dim, self.output_dim, x)
    }

    fn check_state(&self, x: &StackedState) -> Result<()> {
        if x.dims() != (self.horizon, self.input_dim, self.output_dim) {
            return Err(Error::arg("state dimensions do not match the model"));
        }
        Ok(())
    }

    pub fn ffnn_forward(&self, x: &StackedState, u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        self.ffnn.forward(x.as_slice(), u)
    }

    /// One step: returns `(x+, C x)`.
    pub fn step(&self, x: &StackedState, u: &[f64]) -> Result<(StackedState, Vec<f64>)> {
        self.check_state(x)?;
        self.ffnn.check_io(x.as_slice(), u)?;
        let mut cache = ForwardCache::default();
        let f = self.ffnn.forward_cached(x.as_slice(), u, &mut cache);
        let y = x.newest_output().to_vec();
        let mut next = x.clone();
        shift_in(&mut next.x, self.input_dim + self.output_dim, &f, u);
        Ok((next, y))
    }

    /// Free-run simulation; element `k` is the output after step `k`,
    /// i.e. the prediction of `y_{k+1}`.
    pub fn simulate_open_loop(&self, x0: &StackedState, u_seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if u_seq.is_empty() {
            return Err(Error::arg("input sequence is empty"));
        }
        self.check_state(x0)?;
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(u_seq.len());
        for (k, u) in u_seq.iter().enumerate() {
            let (next, _) = self.step(&x, u)?;
            let y = next.newest_output().to_vec();
            if next.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDivergence {
                    step: k,
                    detail: "non-finite state in open-loop simulation".into(),
                });
            }
            out.push(y);
            x = next;
        }
        Ok(out)
    }
}

/// In-place `x <- A x + B_u u + B_x f` for block size `s`.
pub(crate) fn shift_in(x: &mut [f64], s: usize, f: &[f64], u: &[f64]) {
    let n = x.len();
    x.copy_within(s..n, 0);
    let last = n - s;
    x[last..last + f.len()].copy_from_slice(f);
    x[last + f.len()..].copy_from_slice(u);
}
