//! Output-error loss and its exact gradient by backpropagation through the
//! unrolled open-loop simulation.
//!
//! For a trajectory of `T` samples the model is run from `x_0`, with
//! `x_{k+1} = step(x_k, u_k)` and prediction `yhat_k = C x_k`. The data term
//! averages `|yhat_k - y_k|^2` over `k = T_w .. T-1`, i.e. exactly `T - T_w`
//! samples, and the hinge penalty on `nu` is added once per batch.

use crate::error::{Error, Result};
use crate::linalg::{spectral_pair_or_best, Matrix};
use crate::model::{shift_in, FfnnParams, ForwardCache, NnarxModel, StackedState};
use crate::stability::residual_from_norms;

use super::penalty::{penalty_rho, penalty_slope, PenaltyConfig};

/// Borrowed view of one (normalized) input/output trajectory.
#[derive(Debug, Clone, Copy)]
pub struct SeqRef<'a> {
    pub u: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
}

impl<'a> SeqRef<'a> {
    pub fn new(u: &'a [Vec<f64>], y: &'a [Vec<f64>]) -> Self {
        Self { u, y }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Gradient with the same layout as [`FfnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub FfnnParams);

impl Gradients {
    pub fn zeros_like(params: &FfnnParams) -> Self {
        let mut g = params.clone();
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        Gradients(g)
    }

    pub fn params(&self) -> &FfnnParams {
        &self.0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.to_flat()
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scale(&mut self, k: f64) {
        for t in self.0.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.iter_mut().zip(b.1) {
                *x += y;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (name, t) in self.0.tensors() {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    parameter: format!("{name}[{i}]"),
                });
            }
        }
        Ok(())
    }
}

fn check_sequence(model: &NnarxModel, seq: SeqRef<'_>, washout: usize) -> Result<()> {
    if seq.u.len() != seq.y.len() {
        return Err(Error::arg(format!(
            "input and output sequences differ in length ({} vs {})",
            seq.u.len(),
            seq.y.len()
        )));
    }
    if seq.len() <= washout {
        return Err(Error::arg(format!(
            "trajectory of length {} is not longer than the washout {washout}",
            seq.len()
        )));
    }
    if seq.u.iter().any(|u| u.len() != model.input_dim) || seq.y.iter().any(|y| y.len() != model.output_dim) {
        return Err(Error::arg("trajectory channel widths do not match the model"));
    }
    Ok(())
}

/// Data term only: mean squared simulation error over the post-washout window.
pub fn simulation_error(model: &NnarxModel, seq: SeqRef<'_>, washout: usize, init: &StackedState) -> Result<f64> {
    check_sequence(model, seq, washout)?;
    let s = model.input_dim + model.output_dim;
    let mut x = init.as_slice().to_vec();
    if x.len() != model.state_dim() {
        return Err(Error::arg("initial state does not match the model"));
    }
    let mut cache = ForwardCache::default();
    let mut acc = 0.0;
    let last = seq.len() - 1;
    for k in 0..seq.len() {
        if k >= washout {
            let yhat = &x[x.len() - s..x.len() - s + model.output_dim];
            acc += yhat.iter().zip(&seq.y[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        if k < last {
            let f = model.ffnn.forward_cached(&x, &seq.u[k], &mut cache);
            shift_in(&mut x, s, &f, &seq.u[k]);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDivergence {
                    step: k,
                    detail: "non-finite state while evaluating the loss".into(),
                });
            }
        }
    }
    let value = acc / (seq.len() - washout) as f64;
    if !value.is_finite() {
        return Err(Error::NumericDivergence {
            step: last,
            detail: "non-finite loss".into(),
        });
    }
    Ok(value)
}

/// `nu` for the current weights, via the same power iteration as the gradient.
pub fn residual(model: &NnarxModel) -> Result<f64> {
    crate::stability::stability_residual(model)
}

/// Loss `L` = simulation error + `rho(nu)`.
pub fn loss(
    model: &NnarxModel,
    seq: SeqRef<'_>,
    washout: usize,
    penalty: &PenaltyConfig,
    init: &StackedState,
) -> Result<f64> {
    let data = simulation_error(model, seq, washout, init)?;
    let pen = if penalty.weight > 0.0 {
        penalty_rho(residual(model)?, penalty)
    } else {
        0.0
    };
    Ok(data + pen)
}

/// Data-term gradient for one trajectory; returns the data loss as well.
fn trajectory_gradient(
    model: &NnarxModel,
    seq: SeqRef<'_>,
    washout: usize,
    init: &StackedState,
    grad: &mut Gradients,
) -> Result<f64> {
    check_sequence(model, seq, washout)?;
    let n = model.state_dim();
    if init.as_slice().len() != n {
        return Err(Error::arg("initial state does not match the model"));
    }
    let p = model.output_dim;
    let s = model.input_dim + p;
    let len = seq.len();
    let denom = (len - washout) as f64;

    // Forward pass, keeping every state and layer activation.
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(len);
    let mut caches: Vec<ForwardCache> = Vec::with_capacity(len.saturating_sub(1));
    states.push(init.as_slice().to_vec());
    for k in 0..len - 1 {
        let mut cache = ForwardCache::default();
        let f = model.ffnn.forward_cached(&states[k], &seq.u[k], &mut cache);
        let mut next = states[k].clone();
        shift_in(&mut next, s, &f, &seq.u[k]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence {
                step: k,
                detail: "non-finite state in training simulation".into(),
            });
        }
        states.push(next);
        caches.push(cache);
    }

    let mut data_loss = 0.0;
    let mut g_x = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    for k in (0..len).rev() {
        if k >= washout {
            let yhat = &states[k][n - s..n - s + p];
            for (j, (a, b)) in yhat.iter().zip(&seq.y[k]).enumerate() {
                let e = a - b;
                data_loss += e * e;
                g_x[n - s + j] += 2.0 * e / denom;
            }
        }
        if k == 0 {
            break;
        }
        // x_k = A x_{k-1} + B_u u + B_x f(x_{k-1}, u)
        g_prev.iter_mut().for_each(|v| *v = 0.0);
        g_prev[s..].copy_from_slice(&g_x[..n - s]);
        let g_f = &g_x[n - s..n - s + p];
        backprop_network(
            &model.ffnn,
            &states[k - 1],
            &seq.u[k - 1],
            &caches[k - 1],
            g_f,
            grad,
            &mut g_prev,
        );
        std::mem::swap(&mut g_x, &mut g_prev);
    }
    Ok(data_loss / denom)
}

/// Accumulates parameter gradients for `g_out = dL/df` and adds `dL/dx` into `g_x`.
fn backprop_network(
    params: &FfnnParams,
    x: &[f64],
    u: &[f64],
    cache: &ForwardCache,
    g_out: &[f64],
    grad: &mut Gradients,
    g_x: &mut [f64],
) {
    let depth = params.layers.len();
    if g_out.iter().all(|v| *v == 0.0) {
        return;
    }
    let g = &mut grad.0;
    g.out_u.add_outer(1.0, g_out, &cache.post[depth - 1]);
    for (gb, go) in g.out_b.iter_mut().zip(g_out) {
        *gb += go;
    }
    let mut delta = params.out_u.matvec_t(g_out);
    for i in (0..depth).rev() {
        let layer = &params.layers[i];
        let da: Vec<f64> = delta
            .iter()
            .zip(cache.pre[i].iter().zip(&cache.post[i]))
            .map(|(d, (&a, &h))| d * layer.activation.derivative(a, h))
            .collect();
        let gl = &mut g.layers[i];
        gl.w.add_outer(1.0, &da, u);
        for (gb, d) in gl.b.iter_mut().zip(&da) {
            *gb += d;
        }
        if i == 0 {
            gl.u.add_outer(1.0, &da, x);
            layer.u.matvec_t_acc(&da, g_x);
        } else {
            gl.u.add_outer(1.0, &da, &cache.post[i - 1]);
            delta = layer.u.matvec_t(&da);
        }
    }
}

/// Adds the hinge subgradient `rho'(nu) * d nu / dU_j` and returns `rho(nu)`.
fn add_penalty_gradient(model: &NnarxModel, penalty: &PenaltyConfig, grad: &mut Gradients) -> Result<(f64, f64)> {
    let mats: Vec<&Matrix> = model.ffnn.recurrent_mats();
    let pairs = mats
        .iter()
        .map(|m| spectral_pair_or_best(m))
        .collect::<Result<Vec<_>>>()?;
    let sigmas: Vec<f64> = pairs.iter().map(|p| p.sigma).collect();
    let lip: Vec<f64> = model.ffnn.layers.iter().map(|l| l.activation.lipschitz()).collect();
    let nu = residual_from_norms(&sigmas, &lip, model.horizon);
    let slope = penalty_slope(nu, penalty);
    if slope != 0.0 {
        for (j, pair) in pairs.iter().enumerate() {
            // d(prod sigma)/d sigma_j, without dividing by a possibly zero sigma_j
            let others: f64 = sigmas
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, s)| s)
                .product();
            let k = slope * others;
            if j == 0 {
                grad.0.out_u.add_outer(k, &pair.u, &pair.v);
            } else {
                grad.0.layers[j - 1].u.add_outer(k, &pair.u, &pair.v);
            }
        }
    }
    Ok((penalty_rho(nu, penalty), nu))
}

/// Value and gradient of the batch loss.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub nu: f64,
    pub grad: Gradients,
}

/// Batch-mean simulation error plus penalty, with its exact gradient.
///
/// `inits[i]` is the initial state used for `batch[i]`.
pub fn loss_and_gradients(
    model: &NnarxModel,
    batch: &[SeqRef<'_>],
    inits: &[StackedState],
    washout: usize,
    penalty: &PenaltyConfig,
) -> Result<LossAndGrad> {
    if batch.len() != inits.len() {
        return Err(Error::arg("need one initial state per trajectory"));
    }
    let mut grad = Gradients::zeros_like(&model.ffnn);
    let mut data_loss = 0.0;
    if !batch.is_empty() {
        let mut one = Gradients::zeros_like(&model.ffnn);
        for (seq, init) in batch.iter().zip(inits) {
            data_loss += trajectory_gradient(model, *seq, washout, init, &mut one)?;
        }
        let k = 1.0 / batch.len() as f64;
        one.scale(k);
        grad.add_assign(&one);
        data_loss *= k;
    }
    let (pen, nu) = if penalty.weight > 0.0 {
        add_penalty_gradient(model, penalty, &mut grad)?
    } else {
        (0.0, f64::NAN)
    };
    grad.check_finite()?;
    Ok(LossAndGrad {
        loss: data_loss + pen,
        data_loss,
        penalty: pen,
        nu,
        grad,
    })
}

/// Gradient of the batch loss with respect to every network parameter.
pub fn gradients(
    model: &NnarxModel,
    batch: &[SeqRef<'_>],
    inits: &[StackedState],
    washout: usize,
    penalty: &PenaltyConfig,
) -> Result<Gradients> {
    loss_and_gradients(model, batch, inits, washout, penalty).map(|r| r.grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn tiny_model() -> NnarxModel {
        let mut ffnn = FfnnParams::zeros(4, 1, 1, &[2], Activation::Tanh);
        ffnn.layers[0].w[(0, 0)] = 0.5;
        ffnn.layers[0].w[(1, 0)] = -0.3;
        ffnn.layers[0].u[(0, 2)] = 0.4;
        ffnn.layers[0].u[(1, 0)] = 0.2;
        ffnn.out_u[(0, 0)] = 0.6;
        ffnn.out_u[(0, 1)] = 0.1;
        ffnn.out_b[0] = 0.05;
        NnarxModel::new(ffnn, 2, 1, 1).unwrap()
    }

    #[test]
    fn zero_model_loss_is_mean_square_of_window() {
        let model = NnarxModel::new(FfnnParams::zeros(4, 1, 1, &[3], Activation::Tanh), 2, 1, 1).unwrap();
        let u: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64]).collect();
        let y: Vec<Vec<f64>> = [1.0, -1.0, 2.0, 0.5, -0.5, 1.5].iter().map(|v| vec![*v]).collect();
        // yhat_k = C x_k is the input-free part of the state: zero for k >= 1
        let l = loss(&model, SeqRef::new(&u, &y), 2, &PenaltyConfig::disabled(), &model.zero_state()).unwrap();
        let expect = (4.0 + 0.25 + 0.25 + 2.25) / 4.0;
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn washout_must_leave_samples() {
        let model = tiny_model();
        let u = vec![vec![0.0]; 3];
        let y = vec![vec![0.0]; 3];
        let r = loss(&model, SeqRef::new(&u, &y), 3, &PenaltyConfig::disabled(), &model.zero_state());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn exact_model_has_zero_loss() {
        let model = tiny_model();
        let u: Vec<Vec<f64>> = (0..12).map(|k| vec![(k as f64 * 0.9).sin()]).collect();
        let x0 = model.zero_state();
        let mut y = vec![x0.newest_output().to_vec()];
        y.extend(model.simulate_open_loop(&x0, &u[..11]).unwrap());
        let pen = PenaltyConfig::default();
        let l = loss(&model, SeqRef::new(&u, &y), 3, &pen, &x0).unwrap();
        assert_eq!(l, 0.0);
        let g = gradients(&model, &[SeqRef::new(&u, &y)], &[x0], 3, &pen).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gradient_value_matches_loss() {
        let model = tiny_model();
        let u: Vec<Vec<f64>> = (0..10).map(|k| vec![(k as f64).cos()]).collect();
        let y: Vec<Vec<f64>> = (0..10).map(|k| vec![(k as f64 * 0.3).sin()]).collect();
        let pen = PenaltyConfig { weight: 3.0, margin: 0.8 };
        let x0 = model.state_from_vec(vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let seq = SeqRef::new(&u, &y);
        let r = loss_and_gradients(&model, &[seq], std::slice::from_ref(&x0), 2, &pen).unwrap();
        let l = loss(&model, seq, 2, &pen, &x0).unwrap();
        assert!((r.loss - l).abs() < 1e-14);
        assert!(r.penalty > 0.0);
    }
}
