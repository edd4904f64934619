use serde::{Deserialize, Serialize};

/// Piecewise-linear hinge on the stability residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Slope `lambda` of the active branch.
    pub weight: f64,
    /// The hinge switches on once `nu > -margin`.
    pub margin: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            weight: 10.0,
            margin: 0.01,
        }
    }
}

impl PenaltyConfig {
    pub fn disabled() -> Self {
        Self {
            weight: 0.0,
            margin: 0.0,
        }
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite() && self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(crate::Error::config("penalty weight and margin must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `rho(nu) = 0` for `nu <= -margin`, `weight * (nu + margin)` above.
pub fn penalty_rho(nu: f64, cfg: &PenaltyConfig) -> f64 {
    if nu > -cfg.margin {
        cfg.weight * (nu + cfg.margin)
    } else {
        0.0
    }
}

/// `d rho / d nu`; at the kink the subgradient `weight` is used.
pub fn penalty_slope(nu: f64, cfg: &PenaltyConfig) -> f64 {
    if nu >= -cfg.margin {
        cfg.weight
    } else {
        0.0
    }
}
