use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FfnnParams;

use super::objective::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Running mean of squared gradients, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub mean_square: Vec<f64>,
}

impl RmsPropState {
    pub fn new(num_params: usize) -> Self {
        Self {
            mean_square: vec![0.0; num_params],
        }
    }
}

/// Applies one update to a flat parameter vector.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], state: &mut RmsPropState, cfg: &RmsPropConfig) -> Result<()> {
    if theta.len() != grad.len() || state.mean_square.len() != grad.len() {
        return Err(Error::arg(format!(
            "shape mismatch: {} parameters, {} gradients, {} accumulator entries",
            theta.len(),
            grad.len(),
            state.mean_square.len()
        )));
    }
    let scale = match cfg.clip_norm {
        Some(c) => {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(state.mean_square.iter_mut()) {
        let g = g * scale;
        *v = cfg.decay * *v + (1.0 - cfg.decay) * g * g;
        *t -= cfg.learning_rate * g / (v.sqrt() + cfg.epsilon);
    }
    Ok(())
}

pub fn rmsprop_step(
    params: &mut FfnnParams,
    grads: &Gradients,
    state: &mut RmsPropState,
    cfg: &RmsPropConfig,
) -> Result<()> {
    let mut theta = params.to_flat();
    rmsprop_update(&mut theta, &grads.to_flat(), state, cfg)?;
    params.set_flat(&theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: 0.01,
            decay: 0.9,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }

    #[test]
    fn zero_gradient_only_decays_accumulator() {
        let mut theta = vec![1.0, -2.0];
        let mut st = RmsPropState { mean_square: vec![0.5, 1.0] };
        rmsprop_update(&mut theta, &[0.0, 0.0], &mut st, &cfg()).unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);
        assert!((st.mean_square[0] - 0.45).abs() < 1e-15);
        assert!((st.mean_square[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let c = cfg();
        let g = 0.3;
        let mut theta = vec![2.0];
        let mut st = RmsPropState::new(1);
        rmsprop_update(&mut theta, &[g], &mut st, &c).unwrap();
        let expect = 2.0 - c.learning_rate * g / (((1.0 - c.decay) * g * g).sqrt() + c.epsilon);
        assert!((theta[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_hand_recursion() {
        let c = cfg();
        let grads = [0.5, -0.2, 0.1];
        let mut theta = vec![1.0];
        let mut st = RmsPropState::new(1);
        for g in grads {
            rmsprop_update(&mut theta, &[g], &mut st, &c).unwrap();
        }
        // v1 = 0.025, v2 = 0.0265, v3 = 0.02485
        let v = [0.1 * 0.25, 0.9 * 0.025 + 0.1 * 0.04, 0.9 * (0.9 * 0.025 + 0.1 * 0.04) + 0.1 * 0.01];
        let mut t = 1.0;
        for (g, vk) in grads.iter().zip(v) {
            t -= 0.01 * g / (f64::sqrt(vk) + 1e-8);
        }
        assert!((theta[0] - t).abs() < 1e-12);
        assert!((st.mean_square[0] - v[2]).abs() < 1e-15);
    }

    #[test]
    fn clipping_rescales_gradient() {
        let mut c = cfg();
        c.clip_norm = Some(1.0);
        let mut a = vec![0.0, 0.0];
        let mut sa = RmsPropState::new(2);
        rmsprop_update(&mut a, &[30.0, 40.0], &mut sa, &c).unwrap();
        let mut b = vec![0.0, 0.0];
        let mut sb = RmsPropState::new(2);
        c.clip_norm = None;
        rmsprop_update(&mut b, &[0.6, 0.8], &mut sb, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut theta = vec![0.0; 2];
        let mut st = RmsPropState::new(2);
        assert!(rmsprop_update(&mut theta, &[1.0], &mut st, &cfg()).is_err());
    }
}
