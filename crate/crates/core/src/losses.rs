//! Focal loss and its `p_t` reparameterization as plain scalar functions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    alpha: f64,
    gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("focal alpha {alpha} must lie in (0, 1]")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("focal gamma {gamma} must be non-negative")));
        }
        Ok(FocalParams { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Probability assigned to the ground-truth outcome: `p` for a positive, `1 − p` otherwise.
pub fn p_t(p: f64, positive: bool) -> f64 {
    if positive {
        p
    } else {
        1.0 - p
    }
}

/// `−α (1 − p_t)^γ ln(p_t)`.
pub fn focal_loss(pt: f64, params: FocalParams) -> Result<f64> {
    if !(pt > 0.0 && pt <= 1.0) {
        return Err(Error::Domain(format!("focal loss is undefined at p_t = {pt}")));
    }
    let modulating = if params.gamma == 0.0 {
        1.0
    } else {
        (1.0 - pt).powf(params.gamma)
    };
    Ok(-params.alpha * modulating * pt.ln())
}

/// Mean focal loss over `(p, is_positive)` samples.
pub fn mean_focal_loss(samples: &[(f64, bool)], params: FocalParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("mean focal loss needs at least one sample"));
    }
    let mut total = 0.0;
    for &(p, y) in samples {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("probability {p} is outside [0, 1]")));
        }
        total += focal_loss(p_t(p, y), params)?;
    }
    Ok(total / samples.len() as f64)
}
