//! Third-order pH neutralization tank in reaction-invariant form.
//!
//! State `[Wa, Wb, h]`: the two reaction invariants of the effluent and the
//! liquid level. An acid stream `q1`, a buffer stream `q2` and the
//! manipulated base stream `q3 = u` enter a tank of area `A`; the outflow is
//! `Cv (h + z)^n`. The pH is the root of the charge balance
//!
//! ```text
//! Wa + 10^(pH-14) - 10^(-pH) + Wb (1 + 2 10^(pH-pK2)) / (1 + 10^(pK1-pH) + 10^(pH-pK2)) = 0
//! ```
//!
//! No parameter values ship with the crate; they come from a TOML file filled
//! in from the published process description.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate, Plant, Sampling, TimeDomain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhParams {
    /// Tank cross-section area.
    pub area: f64,
    /// Outlet elevation offset added to the level in the valve law.
    pub outlet_offset: f64,
    pub valve_coefficient: f64,
    pub valve_exponent: f64,
    /// Acid stream flow `q1`.
    pub acid_flow: f64,
    /// Buffer stream flow `q2`.
    pub buffer_flow: f64,
    /// Reaction invariants `Wa` of the acid, buffer and base streams.
    pub wa: [f64; 3],
    /// Reaction invariants `Wb` of the acid, buffer and base streams.
    pub wb: [f64; 3],
    pub pk1: f64,
    pub pk2: f64,
    /// Admissible range of the base flow.
    pub base_flow_min: f64,
    pub base_flow_max: f64,
    /// Operating point used as equilibrium-search guess.
    pub nominal_state: [f64; 3],
    /// Half-width of the random initial-state box around the nominal state,
    /// relative to each component.
    #[serde(default = "default_init_spread")]
    pub initial_spread: f64,
}

fn default_init_spread() -> f64 {
    0.05
}

impl PhParams {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: PhParams = toml::from_str(s).map_err(|e| Error::config(format!("pH parameter file: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!(
                "cannot read pH parameter file {}: {e}. Populate it with the tank, stream and \
                 equilibrium constants of the neutralization process from the literature \
                 (Hall & Seborg, 1989); see README for the key list",
                path.display()
            ))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area", self.area),
            ("valve_coefficient", self.valve_coefficient),
            ("valve_exponent", self.valve_exponent),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("pH parameter {name} must be positive")));
            }
        }
        if !(self.base_flow_min < self.base_flow_max) {
            return Err(Error::config("pH base flow range is empty"));
        }
        if self.nominal_state[2] <= 0.0 {
            return Err(Error::config("nominal level must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhPlant {
    pub params: PhParams,
}

impl PhPlant {
    pub const NAME: &'static str = "ph";

    pub fn new(params: PhParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Solves the charge balance for pH by bisection (the left side is
    /// increasing in pH for `Wb >= 0`).
    pub fn ph_from_invariants(&self, wa: f64, wb: f64) -> f64 {
        let p = &self.params;
        let g = |ph: f64| {
            let r1 = 10f64.powf(p.pk1 - ph);
            let r2 = 10f64.powf(ph - p.pk2);
            wa + 10f64.powf(ph - 14.0) - 10f64.powf(-ph) + wb * (1.0 + 2.0 * r2) / (1.0 + r1 + r2)
        };
        let (mut lo, mut hi) = (-2.0, 16.0);
        if g(lo) > 0.0 {
            return lo;
        }
        if g(hi) < 0.0 {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Plant for PhPlant {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn domain(&self) -> TimeDomain {
        TimeDomain::Continuous
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn input_range(&self) -> (f64, f64) {
        (self.params.base_flow_min, self.params.base_flow_max)
    }

    fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let (wa, wb, h) = (x[0], x[1], x[2]);
        let q = [p.acid_flow, p.buffer_flow, u[0]];
        let head = (h + p.outlet_offset).max(0.0);
        let outflow = p.valve_coefficient * head.powf(p.valve_exponent);
        let dh = (q.iter().sum::<f64>() - outflow) / p.area;
        let hold = p.area * h;
        let dwa = (0..3).map(|i| q[i] * (p.wa[i] - wa)).sum::<f64>() / hold;
        let dwb = (0..3).map(|i| q[i] * (p.wb[i] - wb)).sum::<f64>() / hold;
        vec![dwa, dwb, dh]
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        vec![self.ph_from_invariants(x[0], x[1])]
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.params.initial_spread;
        self.params
            .nominal_state
            .iter()
            .map(|v| v * (1.0 + rng.random_range(-s..=s)))
            .collect()
    }

    fn nominal_state(&self) -> Vec<f64> {
        self.params.nominal_state.to_vec()
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).unwrap_or(serde_json::Value::Null)
    }
}

/// Simulates the tank from `x0` under the base-flow sequence `u_seq`,
/// returning the pH at each sample (before that sample's input acts).
pub fn ph_plant_simulate(
    params: &PhParams,
    x0: &[f64],
    u_seq: &[f64],
    sampling_time: f64,
    inner_steps: usize,
) -> Result<Vec<f64>> {
    let plant = PhPlant::new(params.clone())?;
    if x0.len() != 3 {
        return Err(Error::arg("pH plant state has three components"));
    }
    let sampling = Sampling::new(sampling_time, inner_steps)?;
    let u: Vec<Vec<f64>> = u_seq.iter().map(|v| vec![*v]).collect();
    Ok(simulate(&plant, x0, &u, sampling)?.into_iter().map(|y| y[0]).collect())
}
